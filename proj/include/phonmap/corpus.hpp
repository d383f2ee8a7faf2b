// phonmap/corpus.hpp
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

#ifndef PHONMAP_CORPUS_HPP
#define PHONMAP_CORPUS_HPP

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phonmap/ctc.hpp"
#include "phonmap/inventory.hpp"

namespace phonmap {

// Synthetic frames are nominally 100 per second, so data budgets can be
// stated in "synthetic minutes".
inline constexpr double kFramesPerSecond = 100.0;

inline double frames_to_minutes(std::int64_t frames) {
  return static_cast<double>(frames) / (kFramesPerSecond * 60.0);
}

inline std::int64_t minutes_to_frames(double minutes) {
  return static_cast<std::int64_t>(minutes * kFramesPerSecond * 60.0);
}

struct Utterance {
  std::string id;
  LabelSequence labels;
  Matrix features;  // T x D
};

struct Corpus {
  SymbolInventory inventory;
  std::vector<Utterance> utts;

  std::int64_t total_frames() const;
};

// On-disk layout under `dir`:
//   inventory.txt   one symbol per line, index = line number
//   manifest.json   utterance ids, frame counts, label sequences, totals
//   feats/<id>.tensor   per-utterance features in the checkpoint container
// `extra_meta` is merged into manifest.json (config digests and the like).
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir,
                 const nlohmann::json& extra_meta = nlohmann::json::object());

Corpus load_corpus(const std::filesystem::path& dir);

// Reads just the manifest (no feature payloads).
nlohmann::json load_corpus_manifest(const std::filesystem::path& dir);

}  // namespace phonmap

#endif  // PHONMAP_CORPUS_HPP
