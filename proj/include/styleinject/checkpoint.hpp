// Copyright (c) 2026 The StyleInject Lab Authors. All Rights Reserved.
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

#pragma once

// Binary layout, all integers little-endian:
//   "SINJ" | u32 version | u64 step | u64 config hash | u32 tensor count
//   per tensor: u32 name length, name bytes, u8 dtype, u32 rank, u64 dims[rank], f64 values
//   u32 metadata count, then per entry: u32 key length, key, u32 value length, value

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "styleinject/optim.hpp"

namespace styleinject {

inline constexpr char kCheckpointMagic[4] = {'S', 'I', 'N', 'J'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 1;

class ConfigHashMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t step = 0;
  std::uint64_t config_hash = 0;
  ParameterList tensors;
  std::map<std::string, std::string> metadata;
  std::vector<std::string> warnings;  // filled by load, never serialised

  const Tensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t.tensor;
    return nullptr;
  }
};

inline std::uint64_t config_hash(const std::string& canonical_config) {
  return fnv1a(canonical_config.data(), canonical_config.size());
}

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    bytes_.insert(bytes_.end(), bits.begin(), bits.end());
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void put_raw(const char* data, std::size_t n) { bytes_.insert(bytes_.end(), data, data + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::array<unsigned char, sizeof(T)> bits;
    std::memcpy(bits.data(), bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(source_ + ": truncated checkpoint at byte " + std::to_string(pos_));
    }
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  const std::vector<char>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.put_raw(kCheckpointMagic, 4);
  w.put<std::uint32_t>(ckpt.version);
  w.put<std::uint64_t>(ckpt.step);
  w.put<std::uint64_t>(ckpt.config_hash);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.put_string(name);
    w.put<std::uint8_t>(kDtypeF64);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint64_t>(d);
    for (double v : t.values()) w.put<double>(v);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    w.put_string(k);
    w.put_string(v);
  }
  return w.bytes();
}

// Parses a whole buffer; nothing is returned unless every byte is valid.
inline Checkpoint deserialize_checkpoint(const std::vector<char>& bytes, const std::string& source = "checkpoint") {
  detail::ByteReader r(bytes, source);
  r.need(4);
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError(source + ": not a checkpoint (bad magic)");
  }
  for (int i = 0; i < 4; ++i) r.get<char>();
  Checkpoint ckpt;
  ckpt.version = r.get<std::uint32_t>();
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(ckpt.version) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  ckpt.step = r.get<std::uint64_t>();
  ckpt.config_hash = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    const auto dtype = r.get<std::uint8_t>();
    if (dtype != kDtypeF64) {
      throw FormatError(source + ": tensor '" + name + "' has unknown dtype tag " + std::to_string(dtype));
    }
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>());
      if (d != 0 && numel > r.remaining() / d) {
        throw FormatError(source + ": tensor '" + name + "' is larger than the file");
      }
      numel *= d;
    }
    r.need(numel * sizeof(double));
    std::vector<double> values(numel);
    for (auto& v : values) v = r.get<double>();
    ckpt.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  const auto meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < meta; ++i) {
    std::string key = r.get_string();
    ckpt.metadata[key] = r.get_string();
  }
  if (r.remaining() != 0) {
    throw FormatError(source + ": " + std::to_string(r.remaining()) + " trailing bytes after checkpoint");
  }
  return ckpt;
}

// Writes to a sibling temporary and renames, so readers never see a partial file.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

struct LoadOptions {
  std::optional<std::uint64_t> expected_hash;
  bool force = false;  // accept a config-hash mismatch with a warning
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const LoadOptions& options = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checkpoint ckpt = deserialize_checkpoint(bytes, path.string());
  if (options.expected_hash && *options.expected_hash != ckpt.config_hash) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "config hash %016llx does not match expected %016llx",
                  static_cast<unsigned long long>(ckpt.config_hash),
                  static_cast<unsigned long long>(*options.expected_hash));
    if (!options.force) throw ConfigHashMismatch(path.string() + ": " + buf + " (use --force to override)");
    ckpt.warnings.push_back(path.string() + ": " + buf + "; loading anyway (--force)");
  }
  return ckpt;
}

// Copies values for every name in `params` from the checkpoint, prefixed.
// Every tensor is checked before any is written.
inline void assign_from_checkpoint(const Checkpoint& ckpt, ParameterList params, const std::string& prefix) {
  std::vector<const Tensor*> sources;
  for (const auto& p : params) {
    const Tensor* src = ckpt.find(prefix + p.name);
    if (!src) throw FormatError("checkpoint has no tensor '" + prefix + p.name + "'");
    if (src->shape() != p.tensor.shape()) {
      throw FormatError("checkpoint tensor '" + prefix + p.name + "' has shape " + shape_string(src->shape()) +
                        ", expected " + shape_string(p.tensor.shape()));
    }
    sources.push_back(src);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_values();
    std::copy(sources[i]->values().begin(), sources[i]->values().end(), dst.begin());
  }
}

inline void append_tensors(Checkpoint& ckpt, const ParameterList& params, const std::string& prefix) {
  for (const auto& p : params) ckpt.tensors.push_back({prefix + p.name, p.tensor.detach().clone()});
}

}  // namespace styleinject
