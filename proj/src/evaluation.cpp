// phonmap/evaluation.cpp
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

#include "phonmap/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "phonmap/nn.hpp"

namespace phonmap {

MappingScore evaluate_mapping(const MappingTable& predicted, const GroundTruthMapping& reference,
                              const SymbolInventory& source, const SymbolInventory& target) {
  if (static_cast<Index>(predicted.entries.size()) != source.size()) {
    throw IntegrityError("evaluate_mapping: table size does not match source inventory");
  }
  if (predicted.source_digest != source.digest() ||
      predicted.target_digest != target.digest()) {
    throw IntegrityError("evaluate_mapping: inventory digest mismatch");
  }
  for (const auto& [s, t] : reference.pairs) {
    if (s < 0 || s >= source.size() || t < 0 || t >= target.size()) {
      throw IntegrityError("evaluate_mapping: reference pair (" + std::to_string(s) + ", " +
                           std::to_string(t) + ") outside the inventories");
    }
  }

  MappingScore score;
  score.overlap_size = static_cast<Index>(reference.pairs.size());
  for (Index i = 0; i < source.size(); ++i) {
    const auto& e = predicted.entries[static_cast<std::size_t>(i)];
    MappingScore::Verdict v;
    v.source = i;
    if (e.has_value()) {
      v.predicted_target = e->target;
      v.confidence = e->confidence;
      v.correct = reference.contains(i, e->target);
      ++score.n_predicted;
      if (v.correct) ++score.n_correct;
    }
    score.verdicts.push_back(v);
  }
  if (score.n_predicted == 0) {
    score.precision = 1.0;
    score.vacuous_precision = true;
  } else {
    score.precision =
        static_cast<double>(score.n_correct) / static_cast<double>(score.n_predicted);
  }
  score.recall = score.overlap_size == 0
                     ? 0.0
                     : static_cast<double>(score.n_correct) /
                           static_cast<double>(score.overlap_size);
  return score;
}

double random_baseline_recall(Index overlap_size) {
  if (overlap_size < 1) {
    throw InvalidArgumentError("random_baseline_recall: overlap_size must be >= 1");
  }
  return 1.0 / static_cast<double>(overlap_size);
}

double random_baseline_recall_mc(Index overlap_size, std::int64_t trials, std::uint64_t seed) {
  if (overlap_size < 1) {
    throw InvalidArgumentError("random_baseline_recall: overlap_size must be >= 1");
  }
  if (trials < 1) {
    throw InvalidArgumentError("random_baseline_recall: trials must be >= 1");
  }
  Rng rng(seed);
  std::int64_t correct = 0;
  for (std::int64_t t = 0; t < trials; ++t) {
    // One trial assigns every shared source symbol a uniform target from
    // the overlap and counts exact hits.
    for (Index i = 0; i < overlap_size; ++i) {
      if (rng.uniform_int(0, overlap_size - 1) == i) ++correct;
    }
  }
  return static_cast<double>(correct) /
         (static_cast<double>(trials) * static_cast<double>(overlap_size));
}

nlohmann::json score_to_json(const MappingScore& score, const SymbolInventory& source,
                             const SymbolInventory& target) {
  nlohmann::json verdicts = nlohmann::json::array();
  for (const auto& v : score.verdicts) {
    nlohmann::json entry;
    entry["source"] = source.symbol(v.source);
    if (v.predicted_target >= 0) {
      entry["predicted_target"] = target.symbol(v.predicted_target);
      entry["confidence"] = v.confidence;
      entry["correct"] = v.correct;
    } else {
      entry["predicted_target"] = nullptr;
    }
    verdicts.push_back(entry);
  }
  return nlohmann::json{{"precision", score.precision},
                        {"recall", score.recall},
                        {"n_predicted", score.n_predicted},
                        {"n_correct", score.n_correct},
                        {"overlap_size", score.overlap_size},
                        {"vacuous_precision", score.vacuous_precision},
                        {"verdicts", verdicts}};
}

PosteriorgramReport posteriorgram_report(const Matrix& posteriorgram) {
  if (posteriorgram.rows() < 1 || posteriorgram.cols() < 1) {
    throw InvalidArgumentError("posteriorgram_report: empty posteriorgram");
  }
  PosteriorgramReport report;
  report.frames = posteriorgram.rows();
  report.min_entropy = std::numeric_limits<double>::infinity();
  report.max_entropy = 0.0;
  double entropy_sum = 0.0;
  std::int64_t blank_frames = 0;
  const Index blank = posteriorgram.cols() - 1;
  for (Index t = 0; t < posteriorgram.rows(); ++t) {
    double h = 0.0;
    for (Index c = 0; c < posteriorgram.cols(); ++c) {
      double p = posteriorgram(t, c);
      if (p > 0.0) h -= p * std::log(p);
    }
    entropy_sum += h;
    report.min_entropy = std::min(report.min_entropy, h);
    report.max_entropy = std::max(report.max_entropy, h);
    Index argmax = 0;
    posteriorgram.row(t).maxCoeff(&argmax);
    if (argmax == blank) ++blank_frames;
    report.max_row_sum_deviation =
        std::max(report.max_row_sum_deviation, std::abs(posteriorgram.row(t).sum() - 1.0));
  }
  report.mean_entropy = entropy_sum / static_cast<double>(posteriorgram.rows());
  report.blank_fraction =
      static_cast<double>(blank_frames) / static_cast<double>(posteriorgram.rows());
  return report;
}

PosteriorgramReport stack_report(const CnnAsr& asr, const Ptn* ptn, const Corpus& corpus) {
  if (corpus.utts.empty()) {
    throw InvalidArgumentError("stack_report: empty corpus");
  }
  PosteriorgramReport pooled;
  pooled.min_entropy = std::numeric_limits<double>::infinity();
  double entropy_weighted = 0.0;
  double blank_weighted = 0.0;
  for (const Utterance& u : corpus.utts) {
    Matrix p = softmax_rows(asr.forward(u.features));
    if (ptn != nullptr) p = ptn->forward(p);
    PosteriorgramReport r = posteriorgram_report(p);
    entropy_weighted += r.mean_entropy * static_cast<double>(r.frames);
    blank_weighted += r.blank_fraction * static_cast<double>(r.frames);
    pooled.min_entropy = std::min(pooled.min_entropy, r.min_entropy);
    pooled.max_entropy = std::max(pooled.max_entropy, r.max_entropy);
    pooled.max_row_sum_deviation =
        std::max(pooled.max_row_sum_deviation, r.max_row_sum_deviation);
    pooled.frames += r.frames;
  }
  pooled.mean_entropy = entropy_weighted / static_cast<double>(pooled.frames);
  pooled.blank_fraction = blank_weighted / static_cast<double>(pooled.frames);
  return pooled;
}

nlohmann::json report_to_json(const PosteriorgramReport& report) {
  return nlohmann::json{{"mean_entropy", report.mean_entropy},
                        {"min_entropy", report.min_entropy},
                        {"max_entropy", report.max_entropy},
                        {"blank_fraction", report.blank_fraction},
                        {"max_row_sum_deviation", report.max_row_sum_deviation},
                        {"frames", report.frames}};
}

}  // namespace phonmap
