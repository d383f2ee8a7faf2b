// phonmap/inventory.cpp
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "phonmap/inventory.hpp"

#include <fstream>
#include <unordered_set>

#include "phonmap/digest.hpp"

namespace phonmap {

SymbolInventory::SymbolInventory(std::vector<std::string> symbols)
    : symbols_(std::move(symbols)) {
  std::unordered_set<std::string_view> seen;
  std::string joined;
  for (const std::string& s : symbols_) {
    if (s.empty()) {
      throw InvalidArgumentError("inventory: symbols must be non-empty strings");
    }
    if (s.find('\n') != std::string::npos || s.find('\t') != std::string::npos) {
      throw InvalidArgumentError("inventory: symbol '" + s +
                                 "' contains tab or newline");
    }
    if (!seen.insert(s).second) {
      throw InvalidArgumentError("inventory: duplicate symbol '" + s + "'");
    }
    joined += s;
    joined += '\n';
  }
  digest_ = sha256_hex(joined);
}

const std::string& SymbolInventory::symbol(Index i) const {
  if (i < 0 || i >= size()) {
    throw InvalidArgumentError("inventory: index " + std::to_string(i) +
                               " out of range for " + std::to_string(size()) +
                               " symbols");
  }
  return symbols_[static_cast<std::size_t>(i)];
}

std::optional<Index> SymbolInventory::find(std::string_view name) const {
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (symbols_[i] == name) return static_cast<Index>(i);
  }
  return std::nullopt;
}

SymbolInventory load_inventory_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in.good()) throw IoError("inventory: cannot open: " + path.string());
  std::vector<std::string> symbols;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      throw IntegrityError("inventory: empty line " + std::to_string(symbols.size() + 1) +
                           " in " + path.string());
    }
    symbols.push_back(line);
  }
  if (symbols.empty()) throw IntegrityError("inventory: no symbols in " + path.string());
  try {
    return SymbolInventory(std::move(symbols));
  } catch (const InvalidArgumentError& e) {
    throw IntegrityError("inventory: " + path.string() + ": " + e.what());
  }
}

}  // namespace phonmap
