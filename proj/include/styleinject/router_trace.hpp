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

// Router trace: JSON lines, one record per (step, layer, instance):
//   {"instance":0,"layer":"block0.to_q","s":[...],"step":3,"t":940}

#include <cmath>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "styleinject/adapters.hpp"

namespace styleinject {

struct RouterRecord {
  std::size_t step = 0;
  std::string layer;
  int t = 0;
  std::size_t instance = 0;
  std::vector<double> s;
};

inline constexpr double kTraceTolerance = 1e-6;

// Σ s = 1 within tolerance and every entry strictly inside (0, 1), except
// the single-style case where s = [1].
inline bool is_probability_vector(const std::vector<double>& s, double tol = kTraceTolerance) {
  if (s.empty()) return false;
  double total = 0.0;
  for (double v : s) {
    if (!std::isfinite(v)) return false;
    if (s.size() > 1 && !(v > 0.0 && v < 1.0)) return false;
    total += v;
  }
  return std::abs(total - 1.0) <= tol;
}

class RouterTraceWriter {
 public:
  explicit RouterTraceWriter(std::ostream& out) : out_(out) {}

  void write(const RouterRecord& r) {
    if (!is_probability_vector(r.s)) {
      throw NumericError("router output for layer '" + r.layer + "' at step " + std::to_string(r.step) +
                         " is not a probability vector");
    }
    nlohmann::json j{{"step", r.step}, {"layer", r.layer}, {"t", r.t}, {"instance", r.instance}, {"s", r.s}};
    out_ << j.dump() << '\n';
    ++records_;
  }

  // s: [B, n], one record per instance.
  void write_batch(std::size_t step, const std::string& layer, int t, const Tensor& s) {
    const std::size_t batch = s.dim(0), n = s.dim(1);
    for (std::size_t b = 0; b < batch; ++b) {
      RouterRecord r{step, layer, t, b, {}};
      r.s.assign(s.values().begin() + b * n, s.values().begin() + (b + 1) * n);
      write(r);
    }
  }

  std::size_t records() const { return records_; }

 private:
  std::ostream& out_;
  std::size_t records_ = 0;
};

inline std::vector<RouterRecord> read_router_trace(std::istream& in) {
  std::vector<RouterRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back({j.at("step").get<std::size_t>(), j.at("layer").get<std::string>(), j.at("t").get<int>(),
                     j.at("instance").get<std::size_t>(), j.at("s").get<std::vector<double>>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("router trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace styleinject
