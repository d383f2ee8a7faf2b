// phonmap/ctc.hpp
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
// Connectionist temporal classification. The blank symbol always occupies
// the last column (index N for an inventory of N linguistic symbols); all
// recursions run in log space.

#ifndef PHONMAP_CTC_HPP
#define PHONMAP_CTC_HPP

#include <cstdint>
#include <vector>

#include "phonmap/common.hpp"

namespace phonmap {

// Label-side symbol ids; never contains the blank.
struct LabelSequence {
  std::vector<std::int32_t> ids;

  bool empty() const { return ids.empty(); }
  std::size_t size() const { return ids.size(); }

  friend bool operator==(const LabelSequence&, const LabelSequence&) = default;
};

struct CtcResult {
  double loss = 0.0;  // negative log likelihood
  Matrix grad;        // d loss / d logits, same shape as the input logits
};

// Minimum number of frames that admits an alignment: one frame per label
// plus one separating blank per adjacent repeat.
Index ctc_min_frames(const LabelSequence& labels);

// Forward-backward CTC loss over pre-softmax logits of shape T x (N+1).
// Throws InvalidArgumentError for malformed labels and
// AlignmentInfeasibleError when T < ctc_min_frames(labels).
CtcResult ctc_loss(const Matrix& logits, const LabelSequence& labels);

// Exhaustive oracle: enumerates every length-T path over the N+1 symbols,
// keeps those whose repeat-collapse + blank-removal equals `labels`, and
// returns the negative log of their summed probability. `probs` holds
// per-frame distributions (not logits). Guarded: throws ResourceLimitError
// when (N+1)^T exceeds 10^7 paths.
double ctc_brute_force(const Matrix& probs, const LabelSequence& labels);

// Per-frame argmax, collapse adjacent repeats, drop blanks. May return an
// empty sequence when every frame decodes to blank.
LabelSequence greedy_decode(const Matrix& posteriorgram);

// Repeat-collapse + blank-removal of an arbitrary frame-level path.
LabelSequence collapse_path(const std::vector<std::int32_t>& path, std::int32_t blank);

}  // namespace phonmap

#endif  // PHONMAP_CTC_HPP
