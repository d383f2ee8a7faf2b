// phonmap/gradcheck.cpp
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

#include "phonmap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "phonmap/rng.hpp"

namespace phonmap {

double grad_check(const std::function<double(bool)>& loss_fn,
                  const std::vector<Param*>& params,
                  const GradCheckOptions& options) {
  if (!(options.epsilon > 0.0)) {
    throw InvalidArgumentError("grad_check: epsilon must be positive");
  }

  // Two evaluations at the same point must agree bit-for-bit; otherwise the
  // model is stochastic (dropout still enabled) and finite differences are
  // meaningless.
  const double probe_a = loss_fn(false);
  const double probe_b = loss_fn(false);
  if (!(probe_a == probe_b)) {
    throw InvalidStateError(
        "grad_check: loss is not deterministic (is dropout still enabled?)");
  }

  zero_grads(params);
  loss_fn(true);
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  std::int64_t total = 0;
  for (const Param* p : params) {
    analytic.push_back(p->grad);
    total += p->size();
  }

  // Global element indices to probe, in deterministic order.
  std::vector<std::int64_t> selected(static_cast<std::size_t>(total));
  std::iota(selected.begin(), selected.end(), std::int64_t{0});
  if (total > options.max_elements) {
    Rng rng(options.seed);
    rng.shuffle(selected);
    selected.resize(static_cast<std::size_t>(options.max_elements));
    std::sort(selected.begin(), selected.end());
  }

  double max_rel = 0.0;
  std::size_t param_idx = 0;
  std::int64_t param_base = 0;
  for (const std::int64_t global : selected) {
    while (global >= param_base + params[param_idx]->size()) {
      param_base += params[param_idx]->size();
      ++param_idx;
    }
    Param& p = *params[param_idx];
    const std::int64_t local = global - param_base;
    double* slot = p.value.data() + local;

    const double saved = *slot;
    *slot = saved + options.epsilon;
    const double loss_plus = loss_fn(false);
    *slot = saved - options.epsilon;
    const double loss_minus = loss_fn(false);
    *slot = saved;

    const double numeric = (loss_plus - loss_minus) / (2.0 * options.epsilon);
    const double a = analytic[param_idx].data()[local];
    const double rel =
        std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace phonmap
