// phonmap/gradcheck.hpp
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

#ifndef PHONMAP_GRADCHECK_HPP
#define PHONMAP_GRADCHECK_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "phonmap/params.hpp"

namespace phonmap {

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Above this many total parameter elements, a deterministic random
  // subsample of exactly this size is checked instead of every element.
  std::int64_t max_elements = 10000;
  std::uint64_t seed = 0x5eedULL;
};

// Compares analytic gradients against central finite differences and
// returns the maximum relative error over the checked elements, where
// rel = |analytic - numeric| / max(1, |analytic|, |numeric|).
//
// `loss_fn(true)` must evaluate the scalar loss at the current parameter
// values and leave analytic gradients in each param's `grad`;
// `loss_fn(false)` must only evaluate the loss. The loss must be
// deterministic: a model with active dropout (or any other stochastic
// behavior) is rejected with InvalidStateError.
double grad_check(const std::function<double(bool)>& loss_fn,
                  const std::vector<Param*>& params,
                  const GradCheckOptions& options = {});

}  // namespace phonmap

#endif  // PHONMAP_GRADCHECK_HPP
