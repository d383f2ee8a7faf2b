// phonmap/mapping.cpp
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

#include "phonmap/mapping.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace phonmap {

namespace {

// Shortest-round-trip rendering so saved confidences reload bit-exactly.
std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void check_table_against(const MappingTable& table, const SymbolInventory& source,
                         const SymbolInventory& target, const char* op) {
  if (static_cast<Index>(table.entries.size()) != source.size()) {
    throw IntegrityError(std::string(op) + ": table covers " +
                         std::to_string(table.entries.size()) + " source symbols, inventory has " +
                         std::to_string(source.size()));
  }
  if (table.source_digest != source.digest()) {
    throw IntegrityError(std::string(op) + ": source inventory digest mismatch");
  }
  if (table.target_digest != target.digest()) {
    throw IntegrityError(std::string(op) + ": target inventory digest mismatch");
  }
}

void check_embeddings_against(const EmbeddingMatrix& embeddings, const SymbolInventory& inv,
                              const char* op, const char* which) {
  if (embeddings.rows.rows() != inv.size()) {
    throw IntegrityError(std::string(op) + ": " + which + " embedding rows " +
                         std::to_string(embeddings.rows.rows()) + " != inventory size " +
                         std::to_string(inv.size()));
  }
  if (embeddings.inventory_digest != inv.digest()) {
    throw IntegrityError(std::string(op) + ": " + which + " embedding inventory digest mismatch");
  }
}

}  // namespace

RowVector probe(const Ptn& ptn, Index i, double smoothing) {
  const Index n_src = ptn.source_inventory().size();
  if (i < 0 || i >= n_src) {
    throw InvalidArgumentError("probe: source symbol index " + std::to_string(i) +
                               " outside [0, " + std::to_string(n_src) +
                               ") (the blank is never probed)");
  }
  if (smoothing < 0.0 || smoothing > 1.0) {
    throw InvalidArgumentError("probe: smoothing must lie in [0, 1]");
  }
  const Index width = ptn.input_width();
  Matrix input = Matrix::Constant(1, width, smoothing / static_cast<double>(width));
  input(0, i) += 1.0 - smoothing;
  return ptn.forward(input).row(0);
}

Index MappingTable::mapped_count() const {
  Index count = 0;
  for (const auto& e : entries) {
    if (e.has_value()) ++count;
  }
  return count;
}

MappingTable discover_mapping(const Ptn& ptn, const SymbolInventory& source,
                              const SymbolInventory& target, double xi, double smoothing) {
  if (!(source == ptn.source_inventory())) {
    throw InvalidArgumentError("discover_mapping: source inventory does not match the model");
  }
  if (!(target == ptn.target_inventory())) {
    throw InvalidArgumentError("discover_mapping: target inventory does not match the model");
  }
  if (xi < 0.0 || xi >= 1.0) {
    throw InvalidArgumentError("discover_mapping: xi must lie in [0, 1)");
  }
  MappingTable table;
  table.source_digest = source.digest();
  table.target_digest = target.digest();
  table.xi = xi;
  table.entries.resize(static_cast<std::size_t>(source.size()));
  for (Index i = 0; i < source.size(); ++i) {
    RowVector h = probe(ptn, i, smoothing);
    // Argmax over linguistic targets only; the blank column is a CTC
    // artifact, not a mappable symbol. First hit wins ties.
    Index best = 0;
    for (Index j = 1; j < target.size(); ++j) {
      if (h(j) > h(best)) best = j;
    }
    if (h(best) > xi) {
      table.entries[static_cast<std::size_t>(i)] = MappingEntry{best, h(best)};
    }
  }
  return table;
}

void save_mapping(const MappingTable& table, const SymbolInventory& source,
                  const SymbolInventory& target, const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, std::string>>& extra_headers) {
  check_table_against(table, source, target, "save_mapping");
  std::ofstream out(path, std::ios::trunc);
  if (!out.good()) throw IoError("mapping: cannot open for writing: " + path.string());
  out << "# symbol mapping table\n";
  out << "# source_inventory_sha256: " << table.source_digest << "\n";
  out << "# target_inventory_sha256: " << table.target_digest << "\n";
  out << "# xi: " << format_double(table.xi) << "\n";
  for (const auto& [key, value] : extra_headers) {
    if (key.find('\n') != std::string::npos || value.find('\n') != std::string::npos) {
      throw InvalidArgumentError("save_mapping: header '" + key + "' contains a newline");
    }
    out << "# " << key << ": " << value << "\n";
  }
  for (Index i = 0; i < source.size(); ++i) {
    const auto& e = table.entries[static_cast<std::size_t>(i)];
    out << source.symbol(i) << "\t";
    if (e.has_value()) {
      out << target.symbol(e->target) << "\t" << format_double(e->confidence) << "\n";
    } else {
      out << "NONE\n";
    }
  }
  if (!out.good()) throw IoError("mapping: write failed: " + path.string());
}

MappingTable load_mapping(const std::filesystem::path& path, const SymbolInventory& source,
                          const SymbolInventory& target) {
  std::ifstream in(path);
  if (!in.good()) throw IoError("mapping: cannot open: " + path.string());
  MappingTable table;
  table.entries.resize(static_cast<std::size_t>(source.size()));
  std::vector<bool> seen(static_cast<std::size_t>(source.size()), false);
  std::string line;
  int line_no = 0;
  bool have_xi = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string src_tag = "# source_inventory_sha256: ";
      const std::string tgt_tag = "# target_inventory_sha256: ";
      const std::string xi_tag = "# xi: ";
      if (line.rfind(src_tag, 0) == 0) table.source_digest = line.substr(src_tag.size());
      if (line.rfind(tgt_tag, 0) == 0) table.target_digest = line.substr(tgt_tag.size());
      if (line.rfind(xi_tag, 0) == 0) {
        table.xi = std::stod(line.substr(xi_tag.size()));
        have_xi = true;
      }
      continue;
    }
    std::istringstream fields(line);
    std::string src_name, tgt_name, conf_text;
    if (!std::getline(fields, src_name, '\t') || !std::getline(fields, tgt_name, '\t')) {
      throw IntegrityError("mapping: malformed line " + std::to_string(line_no) + " in " +
                           path.string());
    }
    auto si = source.find(src_name);
    if (!si) {
      throw IntegrityError("mapping: unknown source symbol '" + src_name + "' at line " +
                           std::to_string(line_no));
    }
    if (seen[static_cast<std::size_t>(*si)]) {
      throw IntegrityError("mapping: duplicate source symbol '" + src_name + "' at line " +
                           std::to_string(line_no));
    }
    seen[static_cast<std::size_t>(*si)] = true;
    if (tgt_name == "NONE") continue;
    if (!std::getline(fields, conf_text, '\t')) {
      throw IntegrityError("mapping: missing confidence at line " + std::to_string(line_no) +
                           " in " + path.string());
    }
    auto ti = target.find(tgt_name);
    if (!ti) {
      throw IntegrityError("mapping: unknown target symbol '" + tgt_name + "' at line " +
                           std::to_string(line_no));
    }
    double conf = std::stod(conf_text);
    if (!(conf > 0.0) || conf > 1.0) {
      throw IntegrityError("mapping: confidence out of (0, 1] at line " +
                           std::to_string(line_no));
    }
    table.entries[static_cast<std::size_t>(*si)] = MappingEntry{*ti, conf};
  }
  if (table.source_digest.empty() || table.target_digest.empty() || !have_xi) {
    throw IntegrityError("mapping: missing header lines in " + path.string());
  }
  check_table_against(table, source, target, "load_mapping");
  for (const auto& e : table.entries) {
    if (e.has_value() && !(e->confidence > table.xi)) {
      throw IntegrityError("mapping: confidence " + format_double(e->confidence) +
                           " does not exceed xi " + format_double(table.xi) + " in " +
                           path.string());
    }
  }
  return table;
}

EmbeddingMatrix separate_init(const SymbolInventory& inventory, Index dim, Rng& rng) {
  if (dim < 1) throw InvalidArgumentError("separate_init: dim must be >= 1");
  EmbeddingMatrix out;
  out.rows = rng.normal_matrix(inventory.size(), dim, 0.0, kEmbeddingInitStddev);
  out.inventory_digest = inventory.digest();
  return out;
}

namespace {

// Copy rows for resolved targets, draw the rest in increasing target order.
TransferResult run_transfer(const EmbeddingMatrix& source_embeddings,
                            const std::vector<std::optional<std::pair<Index, double>>>& pick,
                            const SymbolInventory& target, Rng& rng) {
  const Index dim = source_embeddings.rows.cols();
  TransferResult result;
  result.embeddings.rows = Matrix::Zero(target.size(), dim);
  result.embeddings.inventory_digest = target.digest();
  result.report.targets.resize(static_cast<std::size_t>(target.size()));
  for (Index j = 0; j < target.size(); ++j) {
    auto& entry = result.report.targets[static_cast<std::size_t>(j)];
    if (pick[static_cast<std::size_t>(j)].has_value()) {
      auto [src, conf] = *pick[static_cast<std::size_t>(j)];
      result.embeddings.rows.row(j) = source_embeddings.rows.row(src);
      entry.copied_from = src;
      entry.confidence = conf;
      ++result.report.copied;
    } else {
      result.embeddings.rows.row(j) =
          rng.normal_matrix(1, dim, 0.0, kEmbeddingInitStddev).row(0);
      ++result.report.random;
    }
  }
  return result;
}

}  // namespace

TransferResult transfer_embeddings(const EmbeddingMatrix& source_embeddings,
                                   const MappingTable& table, const SymbolInventory& source,
                                   const SymbolInventory& target, Rng& rng) {
  check_table_against(table, source, target, "transfer_embeddings");
  check_embeddings_against(source_embeddings, source, "transfer_embeddings", "source");
  // Resolve conflicts: highest confidence wins, ties to the lowest source
  // index. Scanning sources in increasing order makes "strictly greater"
  // exactly that rule.
  std::vector<std::optional<std::pair<Index, double>>> pick(
      static_cast<std::size_t>(target.size()));
  for (Index i = 0; i < source.size(); ++i) {
    const auto& e = table.entries[static_cast<std::size_t>(i)];
    if (!e.has_value()) continue;
    if (e->target < 0 || e->target >= target.size()) {
      throw IntegrityError("transfer_embeddings: entry for source " + std::to_string(i) +
                           " names target index " + std::to_string(e->target) +
                           " outside the inventory");
    }
    auto& slot = pick[static_cast<std::size_t>(e->target)];
    if (!slot.has_value() || e->confidence > slot->second) {
      slot = std::make_pair(i, e->confidence);
    }
  }
  return run_transfer(source_embeddings, pick, target, rng);
}

UnifiedTable load_unified_table(const std::filesystem::path& path,
                                const SymbolInventory& source, const SymbolInventory& target) {
  std::ifstream in(path);
  if (!in.good()) throw IoError("unified table: cannot open: " + path.string());
  UnifiedTable table;
  std::set<Index> seen_src, seen_tgt;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw InvalidArgumentError("unified table: malformed line " + std::to_string(line_no) +
                                 " in " + path.string() + " (expected <src>\\t<tgt>)");
    }
    std::string src_name = line.substr(0, tab);
    std::string tgt_name = line.substr(tab + 1);
    auto si = source.find(src_name);
    if (!si) {
      throw InvalidArgumentError("unified table: unknown source symbol '" + src_name +
                                 "' at line " + std::to_string(line_no));
    }
    auto ti = target.find(tgt_name);
    if (!ti) {
      throw InvalidArgumentError("unified table: unknown target symbol '" + tgt_name +
                                 "' at line " + std::to_string(line_no));
    }
    if (!seen_src.insert(*si).second) {
      throw InvalidArgumentError("unified table: source symbol '" + src_name +
                                 "' mapped twice (line " + std::to_string(line_no) + ")");
    }
    if (!seen_tgt.insert(*ti).second) {
      throw InvalidArgumentError("unified table: target symbol '" + tgt_name +
                                 "' mapped twice (line " + std::to_string(line_no) + ")");
    }
    table.emplace_back(*si, *ti);
  }
  return table;
}

TransferResult unified_transfer(const EmbeddingMatrix& source_embeddings,
                                const UnifiedTable& table, const SymbolInventory& source,
                                const SymbolInventory& target, Rng& rng) {
  check_embeddings_against(source_embeddings, source, "unified_transfer", "source");
  std::vector<std::optional<std::pair<Index, double>>> pick(
      static_cast<std::size_t>(target.size()));
  std::set<Index> seen_src;
  for (const auto& [si, ti] : table) {
    if (si < 0 || si >= source.size() || ti < 0 || ti >= target.size()) {
      throw InvalidArgumentError("unified_transfer: pair (" + std::to_string(si) + ", " +
                                 std::to_string(ti) + ") outside the inventories");
    }
    if (!seen_src.insert(si).second) {
      throw InvalidArgumentError("unified_transfer: source symbol '" + source.symbol(si) +
                                 "' mapped twice");
    }
    if (pick[static_cast<std::size_t>(ti)].has_value()) {
      throw InvalidArgumentError("unified_transfer: target symbol '" + target.symbol(ti) +
                                 "' mapped twice");
    }
    pick[static_cast<std::size_t>(ti)] = std::make_pair(si, 1.0);
  }
  return run_transfer(source_embeddings, pick, target, rng);
}

Checkpoint embedding_to_checkpoint(const EmbeddingMatrix& embeddings,
                                   const SymbolInventory& inventory,
                                   nlohmann::json extra_meta) {
  if (embeddings.inventory_digest != inventory.digest()) {
    throw IntegrityError("embedding checkpoint: inventory digest mismatch");
  }
  if (embeddings.rows.rows() != inventory.size()) {
    throw IntegrityError("embedding checkpoint: row count does not match inventory");
  }
  Checkpoint ckpt;
  ckpt.kind = "embedding";
  ckpt.meta["inventory"] = inventory.symbols();
  ckpt.meta["inventory_sha256"] = embeddings.inventory_digest;
  ckpt.meta["dim"] = embeddings.rows.cols();
  for (auto& [key, value] : extra_meta.items()) ckpt.meta[key] = value;
  ckpt.add_matrix("embeddings", embeddings.rows);
  return ckpt;
}

EmbeddingMatrix embedding_from_checkpoint(const Checkpoint& ckpt) {
  expect_kind(ckpt, "embedding");
  EmbeddingMatrix out;
  out.rows = ckpt.at("embeddings").data;
  try {
    out.inventory_digest = ckpt.meta.at("inventory_sha256").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("embedding checkpoint: bad metadata: ") + e.what());
  }
  if (out.rows.rows() < 1) {
    throw IntegrityError("embedding checkpoint: empty embedding matrix");
  }
  return out;
}

}  // namespace phonmap
