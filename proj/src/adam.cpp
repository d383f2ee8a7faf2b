// phonmap/adam.cpp
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

#include "phonmap/adam.hpp"

#include <cmath>

namespace phonmap {

void AdamState::init(const std::vector<Param*>& params) {
  step = 0;
  m.clear();
  v.clear();
  m.reserve(params.size());
  v.reserve(params.size());
  for (const Param* p : params) {
    m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void adam_step(const std::vector<Param*>& params, AdamState& state, const AdamConfig& config) {
  if (state.m.size() != params.size()) {
    throw InvalidArgumentError("adam_step: state holds " + std::to_string(state.m.size()) +
                               " moment pairs for " + std::to_string(params.size()) +
                               " parameters");
  }
  for (const Param* p : params) {
    if (!p->grad.allFinite()) {
      throw TrainingError("adam_step: non-finite gradient in parameter '" + p->name + "'");
    }
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) {
      throw InvalidArgumentError("adam_step: gradient shape " + shape_str(p->grad) +
                                 " does not match parameter '" + p->name + "' " +
                                 shape_str(p->value));
    }
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    m = config.beta1 * m + (1.0 - config.beta1) * p.grad;
    v = config.beta2 * v + (1.0 - config.beta2) * p.grad.cwiseProduct(p.grad);
    const Matrix m_hat = m / bc1;
    const Matrix v_hat = v / bc2;
    p.value.array() -=
        config.learning_rate * m_hat.array() / (v_hat.array().sqrt() + config.epsilon);
  }
}

}  // namespace phonmap
