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

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "styleinject/adapters.hpp"

namespace styleinject {

struct ManifestEntry {
  std::string name;
  LayerKind kind = LayerKind::kLinear;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  AdaptPolicy policy = AdaptPolicy::kFrozen;
};

// Adaptable layers of a host network, in model order.
class LayerManifest {
 public:
  LayerManifest() = default;
  explicit LayerManifest(std::vector<ManifestEntry> entries) : entries_(std::move(entries)) {
    validate();
  }

  const std::vector<ManifestEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const ManifestEntry* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& e : entries_) {
      if (e.name.empty()) throw ConfigError("manifest entry with empty name");
      if (!seen.insert(e.name).second) throw ConfigError("duplicate manifest layer '" + e.name + "'");
      if (e.d_in == 0 || e.d_out == 0) {
        throw ConfigError("manifest layer '" + e.name + "' has a non-positive dimension");
      }
    }
  }

  // Line format: `name kind d_in d_out policy`; `#` starts a comment.
  static LayerManifest parse(std::istream& in) {
    std::vector<ManifestEntry> entries;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      std::istringstream fields(line);
      std::vector<std::string> cols;
      for (std::string tok; fields >> tok;) cols.push_back(tok);
      if (cols.empty()) continue;
      auto fail = [&](const std::string& why) {
        throw FormatError("manifest line " + std::to_string(line_no) + ": " + why);
      };
      if (cols.size() != 5) fail("expected 5 columns `name kind d_in d_out policy`, got " +
                                 std::to_string(cols.size()));
      ManifestEntry e;
      e.name = cols[0];
      try {
        e.kind = parse_layer_kind(cols[1]);
        e.policy = parse_policy(cols[4]);
      } catch (const ConfigError& err) {
        fail(err.what());
      }
      auto dim = [&](const std::string& text) -> std::size_t {
        std::size_t pos = 0;
        long long v = 0;
        try {
          v = std::stoll(text, &pos);
        } catch (const std::exception&) {
          fail("dimension '" + text + "' is not an integer");
        }
        if (pos != text.size() || v <= 0) fail("dimension '" + text + "' must be a positive integer");
        return static_cast<std::size_t>(v);
      };
      e.d_in = dim(cols[2]);
      e.d_out = dim(cols[3]);
      if (!seen.insert(e.name).second) fail("duplicate layer name '" + e.name + "'");
      entries.push_back(std::move(e));
    }
    return LayerManifest(std::move(entries));
  }

  static LayerManifest load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest '" + path + "'");
    return parse(in);
  }

  void write(std::ostream& out) const {
    out << "# name kind d_in d_out policy\n";
    for (const auto& e : entries_) {
      out << e.name << ' ' << to_string(e.kind) << ' ' << e.d_in << ' ' << e.d_out << ' '
          << to_string(e.policy) << '\n';
    }
  }

  std::string to_text() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }

 private:
  std::vector<ManifestEntry> entries_;
};

inline bool target_matches(const std::string& target, const std::string& layer) {
  if (target == layer) return true;
  auto dot = layer.rfind('.');
  return dot != std::string::npos && layer.compare(dot + 1, std::string::npos, target) == 0;
}

// Rewrites the policy column from config.targets (unlisted layers become
// frozen). A target that matches no layer is a config error.
inline LayerManifest apply_targets(const LayerManifest& manifest, const AdapterConfig& config) {
  std::vector<ManifestEntry> entries = manifest.entries();
  for (auto& e : entries) e.policy = AdaptPolicy::kFrozen;
  for (const auto& t : config.targets) {
    bool matched = false;
    for (auto& e : entries) {
      if (target_matches(t.layer, e.name)) {
        e.policy = t.policy;
        matched = true;
      }
    }
    if (!matched) throw ConfigError("adapter target '" + t.layer + "' matches no layer in the manifest");
  }
  return LayerManifest(std::move(entries));
}

// ---------------------------------------------------------------------------
// Parameter accounting

struct LayerParamCount {
  std::string name;
  AdaptPolicy policy = AdaptPolicy::kFrozen;  // as realised under the method
  std::uint64_t down = 0;      // Σ Aᵢ
  std::uint64_t up = 0;        // B
  std::uint64_t router = 0;
  std::uint64_t hypernet = 0;
  std::uint64_t total() const { return down + up + router + hypernet; }
};

struct ParamBreakdown {
  std::vector<LayerParamCount> layers;
  std::uint64_t total = 0;
};

// LoRA layers: r·(d_in + d_out). Style layers: n·r·d_in + d_out·r, router
// n·d_in + n, hypernet d_out·r + d_out (omitted for DMA-only).
inline ParamBreakdown count_params(const AdapterConfig& config, const LayerManifest& manifest) {
  config.validate();
  manifest.validate();
  const std::uint64_t r = config.rank;
  const std::uint64_t n = config.effective_styles();
  ParamBreakdown out;
  for (const auto& e : manifest.entries()) {
    if (e.kind != LayerKind::kLinear && e.kind != LayerKind::kConv1x1) {
      throw ConfigError("count_params: unsupported layer kind for '" + e.name + "'");
    }
    LayerParamCount c;
    c.name = e.name;
    c.policy = config.realised(e.policy);
    const std::uint64_t k = e.d_in, d = e.d_out;
    switch (c.policy) {
      case AdaptPolicy::kFrozen: continue;
      case AdaptPolicy::kLora:
        c.down = r * k;
        c.up = d * r;
        break;
      case AdaptPolicy::kStyleInject:
        c.down = n * r * k;
        c.up = d * r;
        c.router = n * k + n;
        if (config.method != AdapterMethod::kDmaOnly) c.hypernet = d * r + d;
        break;
    }
    out.total += c.total();
    out.layers.push_back(c);
  }
  return out;
}

// Millions with two decimals, ties rounded to even: 3188736 -> "3.19M".
inline std::string format_millions(std::uint64_t count) {
  std::uint64_t hundredths = count / 10000;
  const std::uint64_t rem = count % 10000;
  if (rem > 5000 || (rem == 5000 && hundredths % 2 == 1)) ++hundredths;
  std::string frac = std::to_string(hundredths % 100);
  if (frac.size() < 2) frac.insert(0, "0");
  return std::to_string(hundredths / 100) + "." + frac + "M";
}

}  // namespace styleinject
