// phonmap/evaluation.hpp
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
// Scoring of discovered symbol mappings against a reference correspondence,
// the random-assignment recall baseline, and posteriorgram diagnostics.

#ifndef PHONMAP_EVALUATION_HPP
#define PHONMAP_EVALUATION_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phonmap/corpus.hpp"
#include "phonmap/mapping.hpp"
#include "phonmap/models.hpp"
#include "phonmap/synthlang.hpp"

namespace phonmap {

struct MappingScore {
  double precision = 0.0;
  double recall = 0.0;
  Index n_predicted = 0;
  Index n_correct = 0;
  Index overlap_size = 0;
  // No predictions: precision is 1.0 by convention and this flag is set.
  bool vacuous_precision = false;

  struct Verdict {
    Index source = 0;
    Index predicted_target = -1;  // -1 when the entry is absent
    double confidence = 0.0;
    bool correct = false;
  };
  std::vector<Verdict> verdicts;
};

// n_predicted = present entries; an entry (i -> j) is correct iff (i, j) is
// a reference pair; recall divides by |reference|. The table is validated
// against the inventories before scoring.
MappingScore evaluate_mapping(const MappingTable& predicted, const GroundTruthMapping& reference,
                              const SymbolInventory& source, const SymbolInventory& target);

// Expected recall of mapping each of the overlap_size shared source symbols
// to a uniformly random target in the overlap: 1/overlap_size.
double random_baseline_recall(Index overlap_size);

// Monte Carlo companion for the analytic baseline: draws `trials` uniform
// assignments and returns the fraction of correct pairings.
double random_baseline_recall_mc(Index overlap_size, std::int64_t trials, std::uint64_t seed);

// JSON with exactly the MappingScore field names (verdicts keyed by symbol
// names when inventories are supplied).
nlohmann::json score_to_json(const MappingScore& score, const SymbolInventory& source,
                             const SymbolInventory& target);

struct PosteriorgramReport {
  double mean_entropy = 0.0;
  double min_entropy = 0.0;
  double max_entropy = 0.0;
  double blank_fraction = 0.0;        // fraction of frames whose argmax is the blank
  double max_row_sum_deviation = 0.0;  // max |row sum - 1|
  std::int64_t frames = 0;
};

// Diagnostics over one posteriorgram (rows: frames, cols: symbols + blank).
PosteriorgramReport posteriorgram_report(const Matrix& posteriorgram);

// Diagnostics pooled over a corpus pushed through the frozen model stack
// (source posteriorgrams through `asr`, target posteriorgrams through `ptn`
// when non-null).
PosteriorgramReport stack_report(const CnnAsr& asr, const Ptn* ptn, const Corpus& corpus);

nlohmann::json report_to_json(const PosteriorgramReport& report);

}  // namespace phonmap

#endif  // PHONMAP_EVALUATION_HPP
