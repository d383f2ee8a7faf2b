// phonmap/checkpoint.hpp
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
// Versioned named-tensor container. On disk:
//
//   bytes 0..7   magic "PHONMAP1"
//   u64 (LE)     manifest length in bytes
//   manifest     UTF-8 JSON: format_version, kind, meta, tensor table
//                (name/shape/offset/bytes), payload size and SHA-256
//   payload      raw IEEE-754 binary64, little-endian, row-major
//
// Saving is canonical (sorted manifest keys, tensors in insertion order),
// so save -> load -> save reproduces the file byte for byte.

#ifndef PHONMAP_CHECKPOINT_HPP
#define PHONMAP_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phonmap/common.hpp"

namespace phonmap {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr char kCheckpointMagic[9] = "PHONMAP1";

struct Checkpoint {
  struct Entry {
    std::string name;
    std::vector<std::int64_t> shape;  // logical shape; data is its row-major carrier
    Matrix data;                      // rows = prod(shape[:-1]), cols = shape.back()
  };

  int format_version = kCheckpointFormatVersion;
  std::string kind;        // "asr", "ptn", "embedding", "features", ...
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Entry> tensors;

  void add(std::string name, std::vector<std::int64_t> shape, Matrix data);
  void add_matrix(std::string name, Matrix data);

  bool has(const std::string& name) const;
  // Throws IntegrityError when the tensor is absent.
  const Entry& at(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// Parses and fully validates a container; every defect (bad magic, version
// mismatch, malformed manifest, overlapping or out-of-range tensor entries,
// truncated payload, payload digest mismatch) raises IntegrityError with a
// message naming the defect.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Kind guard used by model loaders.
void expect_kind(const Checkpoint& ckpt, const std::string& kind);

}  // namespace phonmap

#endif  // PHONMAP_CHECKPOINT_HPP
