// phonmap/checkpoint.cpp
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

#include "phonmap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "phonmap/digest.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload I/O assumes a little-endian host");
static_assert(sizeof(double) == 8);

namespace phonmap {

namespace {

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (const std::int64_t d : shape) n *= d;
  return n;
}

// Carrier dims for a logical shape: all leading dims fold into rows.
std::pair<Index, Index> carrier_dims(const std::vector<std::int64_t>& shape) {
  if (shape.empty()) {
    throw InvalidArgumentError("checkpoint: tensor shape must be non-empty");
  }
  std::int64_t rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  return {static_cast<Index>(rows), static_cast<Index>(shape.back())};
}

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

void Checkpoint::add(std::string name, std::vector<std::int64_t> shape, Matrix data) {
  for (const std::int64_t d : shape) {
    if (d <= 0) {
      throw InvalidArgumentError("checkpoint: tensor '" + name +
                                 "' has non-positive dimension");
    }
  }
  const auto [rows, cols] = carrier_dims(shape);
  if (data.rows() != rows || data.cols() != cols) {
    throw InvalidArgumentError("checkpoint: tensor '" + name + "' data " +
                               shape_str(data) + " does not carry its logical shape");
  }
  if (has(name)) {
    throw InvalidArgumentError("checkpoint: duplicate tensor name '" + name + "'");
  }
  tensors.push_back(Entry{std::move(name), std::move(shape), std::move(data)});
}

void Checkpoint::add_matrix(std::string name, Matrix data) {
  std::vector<std::int64_t> shape{data.rows(), data.cols()};
  add(std::move(name), std::move(shape), std::move(data));
}

bool Checkpoint::has(const std::string& name) const {
  for (const Entry& e : tensors) {
    if (e.name == name) return true;
  }
  return false;
}

const Checkpoint::Entry& Checkpoint::at(const std::string& name) const {
  for (const Entry& e : tensors) {
    if (e.name == name) return e;
  }
  throw IntegrityError("checkpoint: missing tensor '" + name + "'");
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  // Assemble the payload first so the manifest can carry its digest.
  std::string payload;
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const Checkpoint::Entry& e : ckpt.tensors) {
    const std::uint64_t bytes =
        static_cast<std::uint64_t>(element_count(e.shape)) * sizeof(double);
    table.push_back({{"name", e.name},
                     {"shape", e.shape},
                     {"offset", offset},
                     {"bytes", bytes}});
    payload.append(reinterpret_cast<const char*>(e.data.data()), bytes);
    offset += bytes;
  }

  nlohmann::json manifest = {
      {"format_version", ckpt.format_version},
      {"kind", ckpt.kind},
      {"meta", ckpt.meta},
      {"tensors", table},
      {"payload_bytes", offset},
      {"payload_sha256", sha256_hex(payload)},
  };
  const std::string manifest_bytes = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("checkpoint: cannot open for writing: " + path.string());
  }
  out.write(kCheckpointMagic, 8);
  write_u64(out, manifest_bytes.size());
  out.write(manifest_bytes.data(), static_cast<std::streamsize>(manifest_bytes.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) {
    throw IoError("checkpoint: write failed: " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IntegrityError("checkpoint: cannot open: " + path.string());
  }
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw IntegrityError("checkpoint: bad magic in " + path.string());
  }
  std::uint64_t manifest_len = 0;
  std::memcpy(&manifest_len, bytes.data() + 8, sizeof manifest_len);
  if (16 + manifest_len > bytes.size()) {
    throw IntegrityError("checkpoint: manifest length exceeds file size in " +
                         path.string());
  }

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("checkpoint: malformed manifest in " + path.string() + ": " +
                         e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.format_version = manifest.at("format_version").get<int>();
    if (ckpt.format_version != kCheckpointFormatVersion) {
      throw IntegrityError("checkpoint: format version " +
                           std::to_string(ckpt.format_version) + " unsupported (expected " +
                           std::to_string(kCheckpointFormatVersion) + ")");
    }
    ckpt.kind = manifest.at("kind").get<std::string>();
    ckpt.meta = manifest.at("meta");

    const std::string payload = bytes.substr(16 + manifest_len);
    const std::uint64_t payload_bytes = manifest.at("payload_bytes").get<std::uint64_t>();
    if (payload.size() != payload_bytes) {
      throw IntegrityError("checkpoint: truncated payload in " + path.string() + " (" +
                           std::to_string(payload.size()) + " bytes, manifest says " +
                           std::to_string(payload_bytes) + ")");
    }
    if (sha256_hex(payload) != manifest.at("payload_sha256").get<std::string>()) {
      throw IntegrityError("checkpoint: payload digest mismatch in " + path.string());
    }

    std::uint64_t expected_offset = 0;
    for (const nlohmann::json& row : manifest.at("tensors")) {
      Checkpoint::Entry e;
      e.name = row.at("name").get<std::string>();
      e.shape = row.at("shape").get<std::vector<std::int64_t>>();
      const std::uint64_t offset = row.at("offset").get<std::uint64_t>();
      const std::uint64_t nbytes = row.at("bytes").get<std::uint64_t>();
      const auto [rows, cols] = carrier_dims(e.shape);
      if (nbytes != static_cast<std::uint64_t>(element_count(e.shape)) * sizeof(double)) {
        throw IntegrityError("checkpoint: tensor '" + e.name +
                             "' byte count disagrees with its shape");
      }
      if (offset != expected_offset || offset + nbytes > payload_bytes) {
        throw IntegrityError("checkpoint: tensor '" + e.name +
                             "' offsets overlap or exceed payload");
      }
      expected_offset = offset + nbytes;
      e.data.resize(rows, cols);
      std::memcpy(e.data.data(), payload.data() + offset, nbytes);
      if (ckpt.has(e.name)) {
        throw IntegrityError("checkpoint: duplicate tensor '" + e.name + "'");
      }
      ckpt.tensors.push_back(std::move(e));
    }
    if (expected_offset != payload_bytes) {
      throw IntegrityError("checkpoint: payload has " +
                           std::to_string(payload_bytes - expected_offset) +
                           " unclaimed trailing bytes");
    }
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("checkpoint: manifest field error in " + path.string() + ": " +
                         e.what());
  }
  return ckpt;
}

void expect_kind(const Checkpoint& ckpt, const std::string& kind) {
  if (ckpt.kind != kind) {
    throw IntegrityError("checkpoint: model kind mismatch: expected '" + kind +
                         "', found '" + ckpt.kind + "'");
  }
}

}  // namespace phonmap
