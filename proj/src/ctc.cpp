// phonmap/ctc.cpp
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

#include "phonmap/ctc.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "phonmap/nn.hpp"

namespace phonmap {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  const double lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

void validate_labels(const LabelSequence& labels, Index blank) {
  if (labels.empty()) {
    throw InvalidArgumentError("ctc: label sequence must be nonempty");
  }
  for (const std::int32_t id : labels.ids) {
    if (id < 0 || id >= blank) {
      throw InvalidArgumentError("ctc: label id " + std::to_string(id) +
                                 " outside inventory of size " + std::to_string(blank) +
                                 " (blank is excluded from labels)");
    }
  }
}

// Expanded state sequence: blank, l1, blank, l2, ..., blank.
std::vector<std::int32_t> expand_labels(const LabelSequence& labels, std::int32_t blank) {
  std::vector<std::int32_t> ext(2 * labels.size() + 1, blank);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ext[2 * i + 1] = labels.ids[i];
  }
  return ext;
}

}  // namespace

Index ctc_min_frames(const LabelSequence& labels) {
  Index repeats = 0;
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels.ids[i] == labels.ids[i - 1]) ++repeats;
  }
  return static_cast<Index>(labels.size()) + repeats;
}

CtcResult ctc_loss(const Matrix& logits, const LabelSequence& labels) {
  const Index t_len = logits.rows();
  const Index width = logits.cols();
  if (width < 2) {
    throw InvalidArgumentError("ctc_loss: logits need at least 2 columns, got " +
                               shape_str(logits));
  }
  const std::int32_t blank = static_cast<std::int32_t>(width - 1);
  validate_labels(labels, blank);
  if (t_len < ctc_min_frames(labels)) {
    throw AlignmentInfeasibleError(
        "ctc_loss: " + std::to_string(t_len) + " frames cannot align " +
        std::to_string(labels.size()) + " labels (need at least " +
        std::to_string(ctc_min_frames(labels)) + ")");
  }

  const Matrix logp = log_softmax_rows(logits);
  const std::vector<std::int32_t> ext = expand_labels(labels, blank);
  const Index S = static_cast<Index>(ext.size());

  const auto can_skip = [&](Index s) {
    return s >= 2 && ext[static_cast<std::size_t>(s)] != blank &&
           ext[static_cast<std::size_t>(s)] != ext[static_cast<std::size_t>(s - 2)];
  };

  Matrix alpha = Matrix::Constant(t_len, S, kNegInf);
  alpha(0, 0) = logp(0, ext[0]);
  if (S > 1) alpha(0, 1) = logp(0, ext[1]);
  for (Index t = 1; t < t_len; ++t) {
    for (Index s = 0; s < S; ++s) {
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(t - 1, s - 1));
      if (can_skip(s)) acc = log_add(acc, alpha(t - 1, s - 2));
      if (acc != kNegInf) {
        alpha(t, s) = acc + logp(t, ext[static_cast<std::size_t>(s)]);
      }
    }
  }
  double log_lik = alpha(t_len - 1, S - 1);
  if (S > 1) log_lik = log_add(log_lik, alpha(t_len - 1, S - 2));
  if (log_lik == kNegInf) {
    throw AlignmentInfeasibleError("ctc_loss: no alignment has nonzero probability");
  }

  Matrix beta = Matrix::Constant(t_len, S, kNegInf);
  beta(t_len - 1, S - 1) = 0.0;
  if (S > 1) beta(t_len - 1, S - 2) = 0.0;
  for (Index t = t_len - 2; t >= 0; --t) {
    for (Index s = 0; s < S; ++s) {
      double acc = beta(t + 1, s) + logp(t + 1, ext[static_cast<std::size_t>(s)]);
      if (s + 1 < S) {
        acc = log_add(acc, beta(t + 1, s + 1) + logp(t + 1, ext[static_cast<std::size_t>(s + 1)]));
      }
      if (s + 2 < S && can_skip(s + 2)) {
        acc = log_add(acc, beta(t + 1, s + 2) + logp(t + 1, ext[static_cast<std::size_t>(s + 2)]));
      }
      beta(t, s) = acc;
    }
  }

  // State posteriors folded per symbol: G[t][k] = sum over states with
  // label k of exp(alpha + beta - log_lik). Gradient of the NLL w.r.t.
  // logits is then softmax(logits) - G.
  Matrix occupancy = Matrix::Zero(t_len, width);
  for (Index t = 0; t < t_len; ++t) {
    for (Index s = 0; s < S; ++s) {
      const double g = alpha(t, s) + beta(t, s) - log_lik;
      if (g != kNegInf) {
        occupancy(t, ext[static_cast<std::size_t>(s)]) += std::exp(g);
      }
    }
  }

  CtcResult result;
  result.loss = -log_lik;
  result.grad = softmax_rows(logits) - occupancy;
  return result;
}

double ctc_brute_force(const Matrix& probs, const LabelSequence& labels) {
  const Index t_len = probs.rows();
  const Index width = probs.cols();
  if (width < 2 || t_len < 1) {
    throw InvalidArgumentError("ctc_brute_force: probs must be T x (N+1) with T >= 1");
  }
  const std::int32_t blank = static_cast<std::int32_t>(width - 1);
  validate_labels(labels, blank);

  double n_paths = 1.0;
  for (Index t = 0; t < t_len; ++t) n_paths *= static_cast<double>(width);
  if (n_paths > 1e7) {
    throw ResourceLimitError("ctc_brute_force: " + std::to_string(width) + "^" +
                             std::to_string(t_len) + " paths exceed the 10^7 budget");
  }

  std::vector<std::int32_t> path(static_cast<std::size_t>(t_len), 0);
  double total = 0.0;
  while (true) {
    if (collapse_path(path, blank) == labels) {
      double p = 1.0;
      for (Index t = 0; t < t_len; ++t) {
        p *= probs(t, path[static_cast<std::size_t>(t)]);
      }
      total += p;
    }
    // Odometer increment over the (N+1)-ary path space.
    Index pos = t_len - 1;
    while (pos >= 0) {
      if (++path[static_cast<std::size_t>(pos)] < width) break;
      path[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  return -std::log(total);
}

LabelSequence greedy_decode(const Matrix& posteriorgram) {
  const std::int32_t blank = static_cast<std::int32_t>(posteriorgram.cols() - 1);
  std::vector<std::int32_t> path(static_cast<std::size_t>(posteriorgram.rows()));
  for (Index t = 0; t < posteriorgram.rows(); ++t) {
    Index argmax = 0;
    posteriorgram.row(t).maxCoeff(&argmax);
    path[static_cast<std::size_t>(t)] = static_cast<std::int32_t>(argmax);
  }
  return collapse_path(path, blank);
}

LabelSequence collapse_path(const std::vector<std::int32_t>& path, std::int32_t blank) {
  LabelSequence out;
  std::int32_t prev = blank;
  for (const std::int32_t id : path) {
    if (id != blank && id != prev) {
      out.ids.push_back(id);
    }
    prev = id;
  }
  return out;
}

}  // namespace phonmap
