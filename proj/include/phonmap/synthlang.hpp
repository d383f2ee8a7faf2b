// phonmap/synthlang.hpp
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
// Synthetic language pairs with a controllable fraction of shared phonetic
// symbols and a known ground-truth correspondence, standing in for real
// speech when measuring mapping discovery.

#ifndef PHONMAP_SYNTHLANG_HPP
#define PHONMAP_SYNTHLANG_HPP

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "phonmap/corpus.hpp"
#include "phonmap/inventory.hpp"
#include "phonmap/rng.hpp"

namespace phonmap {

// A language: an inventory where each symbol emits frames around its own
// mean vector with isotropic Gaussian noise and a uniform integer duration.
struct LanguageSpec {
  SymbolInventory inventory;
  Matrix emission_means;  // N x D, row i belongs to symbol i
  double sigma = 0.25;
  Index duration_min = 2;
  Index duration_max = 6;
};

// Known correspondence between source and target symbols that share an
// emission model; injective in both coordinates.
struct GroundTruthMapping {
  std::vector<std::pair<Index, Index>> pairs;  // (source index, target index)

  bool contains(Index src, Index tgt) const;
};

struct SynthConfig {
  Index feature_dim = 8;
  Index n_src = 20;
  Index n_tgt = 20;
  double overlap_fraction = 0.7;
  double sigma = 0.25;
  Index duration_min = 2;
  Index duration_max = 6;
  double mean_box = 2.0;  // emission means drawn from [-mean_box, mean_box]^D
  std::uint64_t seed = 7;
};

struct LanguagePair {
  LanguageSpec source;
  LanguageSpec target;
  GroundTruthMapping truth;
};

// Draws both inventories. floor(overlap_fraction * min(N_src, N_tgt)) symbol
// pairs share a bit-identical emission mean at independently permuted index
// positions; every distinct pair of means (within and across languages) is
// at least 4*sigma apart. Deterministic per config. Throws GenerationError
// when separability cannot be met after bounded resampling.
LanguagePair generate_language_pair(const SynthConfig& config);

// Emits sum-of-durations frames: each symbol holds for a uniform duration
// from [duration_min, duration_max] and every frame is mean + N(0, sigma^2 I).
Matrix synthesize_utterance(const LanguageSpec& lang, const LabelSequence& symbols, Rng& rng);

// Uniform symbol sequences (no language model), uniform lengths in
// [len_min, len_max]. Utterance ids are "<prefix>0000", "<prefix>0001", ...
Corpus generate_corpus(const LanguageSpec& lang, Index n_utts, Index len_min, Index len_max,
                       const std::string& id_prefix, Rng& rng);

// Ground truth on disk: a tab-separated table of symbol-name pairs plus the
// two inventory digests, so downstream scoring can verify provenance.
// `extra_headers` adds "# key: value" lines the loader ignores.
void save_ground_truth(const GroundTruthMapping& truth, const LanguageSpec& source,
                       const LanguageSpec& target, const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, std::string>>& extra_headers = {});

struct LoadedGroundTruth {
  GroundTruthMapping truth;
  std::string source_digest;
  std::string target_digest;
};

LoadedGroundTruth load_ground_truth(const std::filesystem::path& path,
                                    const SymbolInventory& source,
                                    const SymbolInventory& target);

}  // namespace phonmap

#endif  // PHONMAP_SYNTHLANG_HPP
