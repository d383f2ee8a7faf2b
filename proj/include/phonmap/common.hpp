// phonmap/common.hpp
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

#ifndef PHONMAP_COMMON_HPP
#define PHONMAP_COMMON_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace phonmap {

// All numerics are double precision. Matrices are row-major so that a
// tensor's in-memory layout matches the row-major checkpoint payload.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

// Error taxonomy. Each class corresponds to one failure category surfaced
// by the public API; callers can catch the base Error for blanket handling.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed values violating a precondition (bad shape, bad range, ...).
class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

// Operation invoked on an object in the wrong state (e.g. gradient check
// on a stochastic model).
class InvalidStateError : public Error {
 public:
  using Error::Error;
};

// The utterance is too short to admit any CTC alignment of its labels.
// Deliberately distinct from InvalidArgumentError: training loops skip
// these while genuine argument errors must propagate.
class AlignmentInfeasibleError : public Error {
 public:
  using Error::Error;
};

// An enumeration or search would exceed its configured budget.
class ResourceLimitError : public Error {
 public:
  using Error::Error;
};

// Persisted data failed validation: bad magic, version, digest, shape,
// truncation, or cross-artifact digest mismatch.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Training cannot proceed (non-finite gradients, no feasible utterances).
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Synthetic language generation could not satisfy its constraints.
class GenerationError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage is missing a required upstream artifact.
class DependencyError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failure (unreadable/unwritable paths).
class IoError : public Error {
 public:
  using Error::Error;
};

// Short human-readable rendering of a matrix shape, used in error messages.
inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace phonmap

#endif  // PHONMAP_COMMON_HPP
