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

#include <cmath>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "styleinject/tensor.hpp"

// Differentiable operations over Tensor. Every reduction runs in sequential
// index order so results are bit-stable across runs.
namespace styleinject {

namespace detail {

inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
  long r = static_cast<long>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ContractError(std::string(op) + ": axis " + std::to_string(axis) +
                        " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis);
}

// For a reduction over `axes` (keepdim), maps every input flat index to the
// flat index of its output cell.
struct Reduction {
  Shape out_shape;
  std::vector<std::size_t> target;  // per input element
  std::size_t count = 1;            // elements per output cell
};

inline Reduction plan_reduction(const Shape& shape, const std::vector<long>& axes, const char* op) {
  if (axes.empty()) throw ContractError(std::string(op) + ": reduce_axes must be non-empty");
  std::set<std::size_t> reduced;
  for (long a : axes) {
    if (!reduced.insert(normalize_axis(a, shape.size(), op)).second) {
      throw ContractError(std::string(op) + ": duplicate reduce axis");
    }
  }
  Reduction plan;
  plan.out_shape = shape;
  for (auto a : reduced) {
    if (shape[a] == 0) {
      throw DegenerateInputError(std::string(op) + ": reduction over zero-extent axis " +
                                 std::to_string(a) + " of " + shape_string(shape));
    }
    plan.count *= shape[a];
    plan.out_shape[a] = 1;
  }
  auto in_strides = strides_of(shape);
  auto out_strides = strides_of(plan.out_shape);
  std::size_t n = shape_numel(shape);
  plan.target.resize(n);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat, out = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) {
      std::size_t idx = rem / in_strides[d];
      rem %= in_strides[d];
      if (!reduced.count(d)) out += idx * out_strides[d];
    }
    plan.target[flat] = out;
  }
  return plan;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

// a: [..., m, k]; b: [k, p] (shared) or [..., k, p] with the same leading dims.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  auto fail = [&] {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) fail();
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), p = b.dim(b.rank() - 1);
  if (k != kb) fail();
  const bool batched_b = b.rank() > 2;
  if (batched_b) {
    if (b.rank() != a.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      fail();
    }
  }
  const std::size_t batch = a.numel() / std::max<std::size_t>(m * k, 1);
  Shape out_shape = a.shape();
  out_shape.back() = p;
  std::vector<double> out(batch * m * p, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t n = 0; n < batch; ++n) {
    const double* A = av.data() + n * m * k;
    const double* B = bv.data() + (batched_b ? n * k * p : 0);
    double* C = out.data() + n * m * p;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p; ++j) {
        double acc = 0.0;
        for (std::size_t q = 0; q < k; ++q) acc += A[i * k + q] * B[q * p + j];
        C[i * p + j] = acc;
      }
  }
  return make_op_result(
      std::move(out_shape), std::move(out), "matmul", {a, b},
      [a, b, batch, m, k, p, batched_b](std::span<const double> g,
                                        std::vector<std::vector<double>>& gin) {
        auto av = a.values();
        auto bv = b.values();
        for (std::size_t n = 0; n < batch; ++n) {
          const double* A = av.data() + n * m * k;
          const double* B = bv.data() + (batched_b ? n * k * p : 0);
          const double* G = g.data() + n * m * p;
          if (!gin[0].empty()) {
            double* dA = gin[0].data() + n * m * k;
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t q = 0; q < k; ++q) {
                double acc = 0.0;
                for (std::size_t j = 0; j < p; ++j) acc += G[i * p + j] * B[q * p + j];
                dA[i * k + q] += acc;
              }
          }
          if (!gin[1].empty()) {
            double* dB = gin[1].data() + (batched_b ? n * k * p : 0);
            for (std::size_t q = 0; q < k; ++q)
              for (std::size_t j = 0; j < p; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < m; ++i) acc += A[i * k + q] * G[i * p + j];
                dB[q * p + j] += acc;
              }
          }
        }
      });
}

// x: [..., k], weight: [d, k] -> [..., d]; computes x·weightᵀ row by row.
inline Tensor linear(const Tensor& x, const Tensor& weight) {
  if (x.rank() < 1 || weight.rank() != 2 || x.shape().back() != weight.dim(1)) {
    throw DimensionError("linear: input " + shape_string(x.shape()) +
                         " incompatible with weight " + shape_string(weight.shape()));
  }
  const std::size_t k = weight.dim(1), d = weight.dim(0);
  const std::size_t rows = x.numel() / std::max<std::size_t>(k, 1);
  Shape out_shape = x.shape();
  out_shape.back() = d;
  std::vector<double> out(rows * d);
  auto xv = x.values();
  auto wv = weight.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < d; ++o) {
      double acc = 0.0;
      for (std::size_t q = 0; q < k; ++q) acc += xv[r * k + q] * wv[o * k + q];
      out[r * d + o] = acc;
    }
  return make_op_result(std::move(out_shape), std::move(out), "linear", {x, weight},
                        [x, weight, rows, k, d](std::span<const double> g,
                                                std::vector<std::vector<double>>& gin) {
                          auto xv = x.values();
                          auto wv = weight.values();
                          if (!gin[0].empty()) {
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t q = 0; q < k; ++q) {
                                double acc = 0.0;
                                for (std::size_t o = 0; o < d; ++o)
                                  acc += g[r * d + o] * wv[o * k + q];
                                gin[0][r * k + q] += acc;
                              }
                          }
                          if (!gin[1].empty()) {
                            for (std::size_t o = 0; o < d; ++o)
                              for (std::size_t q = 0; q < k; ++q) {
                                double acc = 0.0;
                                for (std::size_t r = 0; r < rows; ++r)
                                  acc += g[r * d + o] * xv[r * k + q];
                                gin[1][o * k + q] += acc;
                              }
                          }
                        });
}

// Swaps the last two axes.
inline Tensor transpose(const Tensor& t) {
  if (t.rank() < 2) throw DimensionError("transpose: rank < 2 for " + shape_string(t.shape()));
  const std::size_t m = t.dim(t.rank() - 2), n = t.dim(t.rank() - 1);
  const std::size_t batch = t.numel() / std::max<std::size_t>(m * n, 1);
  Shape out_shape = t.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  std::vector<double> out(t.numel());
  auto v = t.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = v[b * m * n + i * n + j];
  return make_op_result(std::move(out_shape), std::move(out), "transpose", {t},
                        [batch, m, n](std::span<const double> g,
                                      std::vector<std::vector<double>>& gin) {
                          for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j)
                                gin[0][b * m * n + i * n + j] += g[b * m * n + j * m + i];
                        });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op_result(a.shape(), std::move(out), "add", {a, b},
                        [](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          for (auto& gi : gin)
                            if (!gi.empty())
                              for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                        });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op_result(a.shape(), std::move(out), "sub", {a, b},
                        [](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          if (!gin[0].empty())
                            for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                          if (!gin[1].empty())
                            for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] -= g[i];
                        });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op_result(a.shape(), std::move(out), "mul", {a, b},
                        [a, b](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          if (!gin[0].empty())
                            for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * b[i];
                          if (!gin[1].empty())
                            for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] += g[i] * a[i];
                        });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return make_op_result(a.shape(), std::move(out), "div", {a, b},
                        [a, b](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          if (!gin[0].empty())
                            for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] / b[i];
                          if (!gin[1].empty())
                            for (std::size_t i = 0; i < g.size(); ++i)
                              gin[1][i] -= g[i] * a[i] / (b[i] * b[i]);
                        });
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_op_result(a.shape(), std::move(out), "scale", {a},
                        [factor](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * factor;
                        });
}

inline Tensor add_scalar(const Tensor& a, double offset) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + offset;
  return make_op_result(a.shape(), std::move(out), "add_scalar", {a},
                        [](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                        });
}

inline Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  auto saved = std::make_shared<std::vector<double>>(out);
  return make_op_result(a.shape(), std::move(out), "tanh", {a},
                        [saved](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          const auto& y = *saved;
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gin[0][i] += g[i] * (1.0 - y[i] * y[i]);
                        });
}

// sqrt(max(var, eps²)), i.e. max(σ, eps). Zero gradient where floored.
inline Tensor stddev_floor(const Tensor& var, double eps) {
  const double floor_sq = eps * eps;
  std::vector<double> out(var.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(std::max(var[i], floor_sq));
  auto saved = std::make_shared<std::vector<double>>(out);
  return make_op_result(var.shape(), std::move(out), "stddev_floor", {var},
                        [var, floor_sq, saved](std::span<const double> g,
                                               std::vector<std::vector<double>>& gin) {
                          for (std::size_t i = 0; i < g.size(); ++i)
                            if (var[i] > floor_sq) gin[0][i] += g[i] / (2.0 * (*saved)[i]);
                        });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(t.shape()) + " as " +
                         shape_string(shape));
  }
  std::vector<double> out(t.values().begin(), t.values().end());
  return make_op_result(std::move(shape), std::move(out), "reshape", {t},
                        [](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                        });
}

// Right-aligned broadcast; every source extent must equal the target extent
// or be 1.
inline Tensor broadcast_to(const Tensor& t, const Shape& shape) {
  const auto& src = t.shape();
  auto fail = [&] {
    throw DimensionError("broadcast_to: cannot broadcast " + shape_string(src) + " to " +
                         shape_string(shape));
  };
  if (src.size() > shape.size()) fail();
  const std::size_t lead = shape.size() - src.size();
  auto src_strides = detail::strides_of(src);
  std::vector<std::size_t> eff(shape.size(), 0);
  for (std::size_t d = 0; d < src.size(); ++d) {
    if (src[d] == shape[lead + d]) {
      eff[lead + d] = src_strides[d];
    } else if (src[d] == 1) {
      eff[lead + d] = 0;
    } else {
      fail();
    }
  }
  auto out_strides = detail::strides_of(shape);
  const std::size_t n = shape_numel(shape);
  auto index = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<double> out(n);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat, s = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) {
      s += (rem / out_strides[d]) * eff[d];
      rem %= out_strides[d];
    }
    (*index)[flat] = s;
    out[flat] = t[s];
  }
  return make_op_result(shape, std::move(out), "broadcast_to", {t},
                        [index](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          for (std::size_t i = 0; i < g.size(); ++i) gin[0][(*index)[i]] += g[i];
                        });
}

// Contiguous range [start, start + length) along `axis`.
inline Tensor slice(const Tensor& t, long axis, std::size_t start, std::size_t length) {
  const std::size_t ax = detail::normalize_axis(axis, t.rank(), "slice");
  if (start + length > t.dim(ax)) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") exceeds " + shape_string(t.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= t.dim(d);
  for (std::size_t d = ax + 1; d < t.rank(); ++d) inner *= t.dim(d);
  const std::size_t extent = t.dim(ax);
  Shape out_shape = t.shape();
  out_shape[ax] = length;
  std::vector<double> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < length; ++j)
      for (std::size_t i = 0; i < inner; ++i)
        out[(o * length + j) * inner + i] = t[(o * extent + start + j) * inner + i];
  return make_op_result(std::move(out_shape), std::move(out), "slice", {t},
                        [outer, length, inner, extent, start](
                            std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t j = 0; j < length; ++j)
                              for (std::size_t i = 0; i < inner; ++i)
                                gin[0][(o * extent + start + j) * inner + i] +=
                                    g[(o * length + j) * inner + i];
                        });
}

// table: [V, d]; returns [ids.size(), d].
inline Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw DimensionError("gather_rows: table must be rank 2");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<int> rows(ids.begin(), ids.end());
  std::vector<double> out(rows.size() * d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || static_cast<std::size_t>(rows[r]) >= vocab) {
      throw ContractError("gather_rows: id " + std::to_string(rows[r]) + " outside vocabulary of " +
                          std::to_string(vocab));
    }
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = table[rows[r] * d + c];
  }
  return make_op_result({rows.size(), d}, std::move(out), "gather_rows", {table},
                        [rows, d](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          for (std::size_t r = 0; r < rows.size(); ++r)
                            for (std::size_t c = 0; c < d; ++c)
                              gin[0][rows[r] * d + c] += g[r * d + c];
                        });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.values()) acc += v;
  return make_op_result({}, {acc}, "sum", {t},
                        [](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          for (auto& v : gin[0]) v += g[0];
                        });
}

inline Tensor mean(const Tensor& t) {
  if (t.numel() == 0) throw DegenerateInputError("mean of an empty tensor");
  return scale(sum(t), 1.0 / static_cast<double>(t.numel()));
}

// Sum over `axes`, keeping reduced axes with extent 1.
inline Tensor sum_axes(const Tensor& t, const std::vector<long>& axes) {
  auto plan = std::make_shared<detail::Reduction>(detail::plan_reduction(t.shape(), axes, "sum_axes"));
  std::vector<double> out(shape_numel(plan->out_shape), 0.0);
  for (std::size_t i = 0; i < t.numel(); ++i) out[plan->target[i]] += t[i];
  return make_op_result(plan->out_shape, std::move(out), "sum_axes", {t},
                        [plan](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i)
                            gin[0][i] += g[plan->target[i]];
                        });
}

inline Tensor mean_axes(const Tensor& t, const std::vector<long>& axes) {
  auto plan = std::make_shared<detail::Reduction>(detail::plan_reduction(t.shape(), axes, "mean_axes"));
  const double inv = 1.0 / static_cast<double>(plan->count);
  std::vector<double> out(shape_numel(plan->out_shape), 0.0);
  for (std::size_t i = 0; i < t.numel(); ++i) out[plan->target[i]] += t[i];
  for (auto& v : out) v *= inv;
  return make_op_result(plan->out_shape, std::move(out), "mean_axes", {t},
                        [plan, inv](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i)
                            gin[0][i] += g[plan->target[i]] * inv;
                        });
}

// Population variance (divide by count) over `axes`, keepdim. Two-pass.
inline Tensor var_axes(const Tensor& t, const std::vector<long>& axes) {
  auto plan = std::make_shared<detail::Reduction>(detail::plan_reduction(t.shape(), axes, "var_axes"));
  const double inv = 1.0 / static_cast<double>(plan->count);
  const std::size_t cells = shape_numel(plan->out_shape);
  auto mu = std::make_shared<std::vector<double>>(cells, 0.0);
  for (std::size_t i = 0; i < t.numel(); ++i) (*mu)[plan->target[i]] += t[i];
  for (auto& v : *mu) v *= inv;
  std::vector<double> out(cells, 0.0);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    double dev = t[i] - (*mu)[plan->target[i]];
    out[plan->target[i]] += dev * dev;
  }
  for (auto& v : out) v *= inv;
  return make_op_result(plan->out_shape, std::move(out), "var_axes", {t},
                        [t, plan, mu, inv](std::span<const double> g,
                                           std::vector<std::vector<double>>& gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i) {
                            auto cell = plan->target[i];
                            gin[0][i] += g[cell] * 2.0 * (t[i] - (*mu)[cell]) * inv;
                          }
                        });
}

struct Moments {
  Tensor mean;
  Tensor var;
};

// Population mean and variance over `reduce_axes`, broadcastable back to t.
inline Moments moments(const Tensor& t, const std::vector<long>& reduce_axes) {
  return {mean_axes(t, reduce_axes), var_axes(t, reduce_axes)};
}

// Max-shifted softmax along `axis`.
inline Tensor softmax(const Tensor& t, long axis = -1) {
  const std::size_t ax = detail::normalize_axis(axis, t.rank(), "softmax");
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= t.dim(d);
  for (std::size_t d = ax + 1; d < t.rank(); ++d) inner *= t.dim(d);
  const std::size_t extent = t.dim(ax);
  std::vector<double> out(t.numel());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      auto at = [&](std::size_t j) { return (o * extent + j) * inner + i; };
      double mx = t[at(0)];
      for (std::size_t j = 1; j < extent; ++j) mx = std::max(mx, t[at(j)]);
      double total = 0.0;
      for (std::size_t j = 0; j < extent; ++j) {
        out[at(j)] = std::exp(t[at(j)] - mx);
        total += out[at(j)];
      }
      for (std::size_t j = 0; j < extent; ++j) out[at(j)] /= total;
    }
  auto saved = std::make_shared<std::vector<double>>(out);
  return make_op_result(t.shape(), std::move(out), "softmax", {t},
                        [saved, outer, inner, extent](std::span<const double> g,
                                                      std::vector<std::vector<double>>& gin) {
                          const auto& y = *saved;
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t i = 0; i < inner; ++i) {
                              auto at = [&](std::size_t j) { return (o * extent + j) * inner + i; };
                              double dot = 0.0;
                              for (std::size_t j = 0; j < extent; ++j) dot += g[at(j)] * y[at(j)];
                              for (std::size_t j = 0; j < extent; ++j)
                                gin[0][at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        });
}

// Mean over all elements of (a - b)².
inline Tensor mse(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mse");
  if (a.numel() == 0) throw DegenerateInputError("mse of empty tensors");
  const double inv = 1.0 / static_cast<double>(a.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double d = a[i] - b[i];
    acc += d * d;
  }
  return make_op_result({}, {acc * inv}, "mse", {a, b},
                        [a, b, inv](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                          for (std::size_t i = 0; i < a.numel(); ++i) {
                            double d = 2.0 * (a[i] - b[i]) * inv * g[0];
                            if (!gin[0].empty()) gin[0][i] += d;
                            if (!gin[1].empty()) gin[1][i] -= d;
                          }
                        });
}

}  // namespace styleinject
