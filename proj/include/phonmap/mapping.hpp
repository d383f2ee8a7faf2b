// phonmap/mapping.hpp
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
//
// Symbol-mapping discovery by one-hot probing of a trained transformation
// network, and the three target-embedding initialization strategies
// (separate random init, handcrafted unified tables, learned transfer).

#ifndef PHONMAP_MAPPING_HPP
#define PHONMAP_MAPPING_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "phonmap/inventory.hpp"
#include "phonmap/models.hpp"
#include "phonmap/rng.hpp"

namespace phonmap {

// Target-embedding rows drawn from scratch follow N(0, 0.3^2).
inline constexpr double kEmbeddingInitStddev = 0.3;

// Feeds the network a single-row distribution concentrated on source symbol
// i and returns the induced distribution over the target inventory (+ blank).
// `smoothing` in [0, 1] mixes the one-hot with the uniform distribution;
// 0 is the pure one-hot probe. The blank is never probed.
RowVector probe(const Ptn& ptn, Index i, double smoothing = 0.0);

struct MappingEntry {
  Index target = 0;      // target symbol index, never the blank
  double confidence = 0.0;  // probe probability at `target`, > xi

  friend bool operator==(const MappingEntry&, const MappingEntry&) = default;
};

// Result of mapping discovery: per source symbol either a target entry or
// nothing. Inventory digests tie the table to the models that produced it.
struct MappingTable {
  std::vector<std::optional<MappingEntry>> entries;
  std::string source_digest;
  std::string target_digest;
  double xi = 0.0;

  Index mapped_count() const;
};

// For every source symbol i: j = argmax over non-blank targets of
// probe(ptn, i); the entry is (j, p_j) when p_j > xi, absent otherwise.
// Argmax ties resolve to the lowest target index. The inventories must be
// the ones the network was built with.
MappingTable discover_mapping(const Ptn& ptn, const SymbolInventory& source,
                              const SymbolInventory& target, double xi,
                              double smoothing = 0.0);

// Text form: one line per source symbol, either "<src>\t<tgt>\t<confidence>"
// or "<src>\tNONE"; '#' header lines carry the inventory digests and xi.
// `extra_headers` adds "# key: value" provenance lines; the loader ignores
// headers it does not recognize.
void save_mapping(const MappingTable& table, const SymbolInventory& source,
                  const SymbolInventory& target, const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, std::string>>& extra_headers = {});

MappingTable load_mapping(const std::filesystem::path& path, const SymbolInventory& source,
                          const SymbolInventory& target);

struct EmbeddingMatrix {
  Matrix rows;  // inventory size x d, no blank row
  std::string inventory_digest;
};

// All rows i.i.d. N(0, kEmbeddingInitStddev^2).
EmbeddingMatrix separate_init(const SymbolInventory& inventory, Index dim, Rng& rng);

// Per-target provenance of a transfer: which source row was copied (and at
// what confidence), or nothing for a freshly drawn row.
struct TransferReport {
  struct Entry {
    std::optional<Index> copied_from;
    double confidence = 0.0;  // meaningful only for copied rows
  };
  std::vector<Entry> targets;
  Index copied = 0;
  Index random = 0;
};

struct TransferResult {
  EmbeddingMatrix embeddings;
  TransferReport report;
};

// Learned strategy: each target symbol mapped by at least one source symbol
// receives a bit-exact copy of the source row with the highest confidence
// (ties to the lowest source index); every other target row is drawn from
// N(0, 0.3^2) in increasing target order. Digest mismatches between the
// table, the embeddings, and the inventories raise IntegrityError.
TransferResult transfer_embeddings(const EmbeddingMatrix& source_embeddings,
                                   const MappingTable& table, const SymbolInventory& source,
                                   const SymbolInventory& target, Rng& rng);

// Handcrafted correspondence for the unified strategy: (source, target)
// index pairs, functional and injective.
using UnifiedTable = std::vector<std::pair<Index, Index>>;

// Text form: "<src>\t<tgt>" per line, '#' comments and blank lines ignored.
// Unknown symbols and duplicated source or target symbols are input errors
// naming the offending symbol and line.
UnifiedTable load_unified_table(const std::filesystem::path& path,
                                const SymbolInventory& source, const SymbolInventory& target);

// Unified strategy: same copy/draw semantics as transfer_embeddings, with
// conflicts impossible by construction of the validated table.
TransferResult unified_transfer(const EmbeddingMatrix& source_embeddings,
                                const UnifiedTable& table, const SymbolInventory& source,
                                const SymbolInventory& target, Rng& rng);

// Embedding container round-trip ("embedding" checkpoint kind).
Checkpoint embedding_to_checkpoint(const EmbeddingMatrix& embeddings,
                                   const SymbolInventory& inventory,
                                   nlohmann::json extra_meta = nlohmann::json::object());
EmbeddingMatrix embedding_from_checkpoint(const Checkpoint& ckpt);

}  // namespace phonmap

#endif  // PHONMAP_MAPPING_HPP
