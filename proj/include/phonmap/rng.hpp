// phonmap/rng.hpp
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

#ifndef PHONMAP_RNG_HPP
#define PHONMAP_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "phonmap/common.hpp"

namespace phonmap {

// Deterministic random source. The engine is std::mt19937_64 (whose output
// sequence is fixed by the standard); the floating-point samplers are
// implemented here rather than with std::*_distribution so that the exact
// draw sequence does not depend on the standard library in use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive. Rejection sampling keeps the
  // draw unbiased for any range width.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Standard normal via Box-Muller. Draws come in pairs; the second of
  // each pair is cached so consecutive calls consume the engine evenly.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Matrix normal_matrix(Index rows, Index cols, double mean, double stddev);

  // Deterministic in-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      const std::int64_t j = uniform_int(0, i);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

  friend bool operator==(const Rng& a, const Rng& b) {
    return a.gen_ == b.gen_ && a.has_spare_ == b.has_spare_ &&
           (!a.has_spare_ || a.spare_ == b.spare_);
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent stream seed from a base seed and a textual tag,
// so pipeline stages draw from non-overlapping deterministic streams.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

}  // namespace phonmap

#endif  // PHONMAP_RNG_HPP
