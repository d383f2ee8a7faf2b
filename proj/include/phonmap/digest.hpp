// phonmap/digest.hpp
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

#ifndef PHONMAP_DIGEST_HPP
#define PHONMAP_DIGEST_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

namespace phonmap {

// SHA-256 as lowercase hex. Content digests are used to stamp artifacts
// and to detect cross-stage mixing, not for security.
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& data);
std::string sha256_file_hex(const std::filesystem::path& path);

}  // namespace phonmap

#endif  // PHONMAP_DIGEST_HPP
