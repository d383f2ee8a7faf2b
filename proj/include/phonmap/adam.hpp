// phonmap/adam.hpp
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

#ifndef PHONMAP_ADAM_HPP
#define PHONMAP_ADAM_HPP

#include <cstdint>
#include <vector>

#include "phonmap/params.hpp"

namespace phonmap {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment estimates, one pair per parameter, in the order the
// parameters were registered with init().
struct AdamState {
  std::int64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  void init(const std::vector<Param*>& params);
};

// One bias-corrected update over params[i].grad. The step counter is
// incremented before bias correction. Throws TrainingError naming the
// offending parameter if any gradient element is non-finite.
void adam_step(const std::vector<Param*>& params, AdamState& state, const AdamConfig& config);

}  // namespace phonmap

#endif  // PHONMAP_ADAM_HPP
