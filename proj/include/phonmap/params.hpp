// phonmap/params.hpp
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

#ifndef PHONMAP_PARAMS_HPP
#define PHONMAP_PARAMS_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "phonmap/common.hpp"

namespace phonmap {

// One named parameter tensor with its gradient. The value is carried as a
// 2-D row-major matrix; `shape` records the logical tensor shape (e.g.
// [K, C_in, C_out] for convolution kernels, flattened to (K*C_in) x C_out).
struct Param {
  std::string name;
  std::vector<std::int64_t> shape;
  Matrix value;
  Matrix grad;

  Param() = default;

  Param(std::string name_, std::vector<std::int64_t> shape_, Matrix value_)
      : name(std::move(name_)), shape(std::move(shape_)), value(std::move(value_)) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }

  static Param matrix(std::string name, Matrix value) {
    std::vector<std::int64_t> shape{value.rows(), value.cols()};
    return Param(std::move(name), std::move(shape), std::move(value));
  }

  static Param row(std::string name, RowVector value) {
    std::vector<std::int64_t> shape{value.cols()};
    Matrix m(1, value.cols());
    m.row(0) = value;
    return Param(std::move(name), std::move(shape), std::move(m));
  }

  void zero_grad() { grad.setZero(); }

  std::int64_t size() const { return value.size(); }
};

inline void zero_grads(const std::vector<Param*>& params) {
  for (Param* p : params) p->zero_grad();
}

}  // namespace phonmap

#endif  // PHONMAP_PARAMS_HPP
