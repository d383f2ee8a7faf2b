// phonmap/inventory.hpp
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

#ifndef PHONMAP_INVENTORY_HPP
#define PHONMAP_INVENTORY_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "phonmap/common.hpp"

namespace phonmap {

// An ordered set of linguistic symbols. The CTC blank is implicit: it is
// not listed among the symbols and always occupies index size().
class SymbolInventory {
 public:
  SymbolInventory() = default;
  explicit SymbolInventory(std::vector<std::string> symbols);

  // Number of linguistic symbols (blank excluded).
  Index size() const { return static_cast<Index>(symbols_.size()); }
  // Model width: symbols plus the blank.
  Index width() const { return size() + 1; }
  Index blank_index() const { return size(); }

  const std::string& symbol(Index i) const;
  const std::vector<std::string>& symbols() const { return symbols_; }
  std::optional<Index> find(std::string_view name) const;

  // SHA-256 over the newline-joined symbol list; identifies the inventory
  // across artifacts.
  const std::string& digest() const { return digest_; }

  friend bool operator==(const SymbolInventory& a, const SymbolInventory& b) {
    return a.symbols_ == b.symbols_;
  }

 private:
  std::vector<std::string> symbols_;
  std::string digest_;
};

// Reads a one-symbol-per-line inventory file (the corpus `inventory.txt`
// format). The digest of the loaded inventory equals the SHA-256 of the
// file's bytes when the file ends in a newline.
SymbolInventory load_inventory_file(const std::filesystem::path& path);

}  // namespace phonmap

#endif  // PHONMAP_INVENTORY_HPP
