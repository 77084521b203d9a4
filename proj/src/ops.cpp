#include "man/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "man/errors.hpp"

namespace man {

BatchNormStats BatchNormStats::fresh(std::size_t width) {
  BatchNormStats s;
  s.running_mean = Tensor::zeros({width});
  s.running_var = Tensor::full({width}, 1.0);
  return s;
}

}  // namespace man

namespace man::ops {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) +
                         " . " + shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;  // bag-of-features inputs are mostly zero
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return tape.record(
      OpKind::kMatmul, {a, b}, Tensor({m, n}, std::move(out)),
      [ai, bi, m, k, n](std::span<const double> g, std::span<const std::span<double>> gin) {
        const double* A = ai->data.data();
        const double* B = bi->data.data();
        if (!gin[0].empty()) {
          double* ga = gin[0].data();
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double* brow = B + p * n;
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (!gin[1].empty()) {
          double* gb = gin[1].data();
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = A[i * k + p];
              if (aip == 0.0) continue;
              double* gbrow = gb + p * n;
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
            }
          }
        }
      });
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) +
                         " does not match " + shape_to_string(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  return tape.record(OpKind::kAddBias, {x, bias}, Tensor(x.shape(), std::move(out)),
                     [m, n](std::span<const double> g, std::span<const std::span<double>> gin) {
                       if (!gin[0].empty())
                         for (std::size_t i = 0; i < m * n; ++i) gin[0][i] += g[i];
                       if (!gin[1].empty())
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) gin[1][j] += g[i * n + j];
                     });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return tape.record(OpKind::kAdd, {a, b}, Tensor(a.shape(), std::move(out)),
                     [](std::span<const double> g, std::span<const std::span<double>> gin) {
                       for (auto dst : gin)
                         if (!dst.empty())
                           for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                     });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return tape.record(OpKind::kSub, {a, b}, Tensor(a.shape(), std::move(out)),
                     [](std::span<const double> g, std::span<const std::span<double>> gin) {
                       if (!gin[0].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                       if (!gin[1].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] -= g[i];
                     });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return tape.record(
      OpKind::kMul, {a, b}, Tensor(a.shape(), std::move(out)),
      [ai, bi](std::span<const double> g, std::span<const std::span<double>> gin) {
        if (!gin[0].empty())
          for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * bi->data[i];
        if (!gin[1].empty())
          for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] += g[i] * ai->data[i];
      });
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return tape.record(OpKind::kScale, {x}, Tensor(x.shape(), std::move(out)),
                     [factor](std::span<const double> g, std::span<const std::span<double>> gin) {
                       if (!gin[0].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * factor;
                     });
}

Tensor square(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
  auto xi = x.impl();
  return tape.record(OpKind::kSquare, {x}, Tensor(x.shape(), std::move(out)),
                     [xi](std::span<const double> g, std::span<const std::span<double>> gin) {
                       if (!gin[0].empty())
                         for (std::size_t i = 0; i < g.size(); ++i)
                           gin[0][i] += 2.0 * xi->data[i] * g[i];
                     });
}

Tensor sum(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return tape.record(OpKind::kSum, {x}, Tensor::scalar(acc),
                     [](std::span<const double> g, std::span<const std::span<double>> gin) {
                       if (!gin[0].empty())
                         for (double& v : gin[0]) v += g[0];
                     });
}

Tensor mean(Tape& tape, const Tensor& x) {
  return scale(tape, sum(tape, x), 1.0 / static_cast<double>(x.numel()));
}

Tensor relu(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  auto xi = x.impl();
  return tape.record(OpKind::kRelu, {x}, Tensor(x.shape(), std::move(out)),
                     [xi](std::span<const double> g, std::span<const std::span<double>> gin) {
                       if (!gin[0].empty())
                         for (std::size_t i = 0; i < g.size(); ++i)
                           if (xi->data[i] > 0.0) gin[0][i] += g[i];
                     });
}

Tensor softmax(Tape& tape, const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("softmax needs at least one axis");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(in[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  Tensor result(x.shape(), std::move(out));
  auto yi = result.impl();
  return tape.record(
      OpKind::kSoftmax, {x}, result,
      [yi, rows, n](std::span<const double> g, std::span<const std::span<double>> gin) {
        if (gin[0].empty()) return;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = yi->data.data() + r * n;
          const double* gr = g.data() + r * n;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += gr[j] * y[j];
          for (std::size_t j = 0; j < n; ++j) gin[0][r * n + j] += y[j] * (gr[j] - dot);
        }
      });
}

Tensor nll(Tape& tape, const Tensor& probs, std::span<const std::size_t> targets,
           double floor) {
  require_rank(probs, 2, "nll");
  const std::size_t b = probs.dim(0), c = probs.dim(1);
  if (targets.size() != b) {
    throw DimensionError("nll: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(b) + " rows");
  }
  std::vector<std::size_t> idx(targets.begin(), targets.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (idx[i] >= c) {
      throw DimensionError("nll: target " + std::to_string(idx[i]) + " out of range for " +
                           std::to_string(c) + " classes");
    }
    acc += -std::log(std::max(probs.at(i, idx[i]), floor));
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  auto pi = probs.impl();
  return tape.record(
      OpKind::kNll, {probs}, Tensor::scalar(acc * inv_b),
      [pi, idx = std::move(idx), c, floor, inv_b](std::span<const double> g,
                                                  std::span<const std::span<double>> gin) {
        if (gin[0].empty()) return;
        for (std::size_t i = 0; i < idx.size(); ++i) {
          const double p = pi->data[i * c + idx[i]];
          if (p >= floor) gin[0][i * c + idx[i]] -= g[0] * inv_b / p;
        }
      });
}

Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  const std::size_t m = a.dim(0), p = a.dim(1), q = b.dim(1);
  if (b.dim(0) != m) {
    throw DimensionError("concat_cols: row counts differ, " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
  std::vector<double> out(m * (p + q));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data().data() + i * p, p, out.data() + i * (p + q));
    std::copy_n(b.data().data() + i * q, q, out.data() + i * (p + q) + p);
  }
  return tape.record(
      OpKind::kConcatCols, {a, b}, Tensor({m, p + q}, std::move(out)),
      [m, p, q](std::span<const double> g, std::span<const std::span<double>> gin) {
        for (std::size_t i = 0; i < m; ++i) {
          if (!gin[0].empty())
            for (std::size_t j = 0; j < p; ++j) gin[0][i * p + j] += g[i * (p + q) + j];
          if (!gin[1].empty())
            for (std::size_t j = 0; j < q; ++j) gin[1][i * q + j] += g[i * (p + q) + p + j];
        }
      });
}

Tensor stack_rows(Tape& tape, std::span<const Tensor> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const std::size_t n = rows.front().numel();
  std::vector<double> out;
  out.reserve(rows.size() * n);
  for (const auto& r : rows) {
    if (r.numel() != n) throw DimensionError("stack_rows: rows differ in size");
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  return tape.record(OpKind::kStackRows, rows, Tensor({rows.size(), n}, std::move(out)),
                     [n](std::span<const double> g, std::span<const std::span<double>> gin) {
                       for (std::size_t r = 0; r < gin.size(); ++r)
                         if (!gin[r].empty())
                           for (std::size_t j = 0; j < n; ++j) gin[r][j] += g[r * n + j];
                     });
}

Tensor concat_rows(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  require_rank(parts.front(), 2, "concat_rows");
  const std::size_t d = parts.front().dim(1);
  std::size_t m = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != d) {
      throw DimensionError("concat_rows: column counts differ, " +
                           shape_to_string(parts.front().shape()) + " vs " +
                           shape_to_string(p.shape()));
    }
    m += p.dim(0);
    sizes.push_back(p.numel());
  }
  std::vector<double> out;
  out.reserve(m * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return tape.record(OpKind::kConcatRows, parts, Tensor({m, d}, std::move(out)),
                     [sizes](std::span<const double> g, std::span<const std::span<double>> gin) {
                       std::size_t offset = 0;
                       for (std::size_t r = 0; r < gin.size(); ++r) {
                         if (!gin[r].empty())
                           for (std::size_t j = 0; j < sizes[r]; ++j) gin[r][j] += g[offset + j];
                         offset += sizes[r];
                       }
                     });
}

Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_rows");
  if (begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_rows: bad range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") of " + shape_to_string(x.shape()));
  }
  const std::size_t d = x.dim(1);
  std::vector<double> out(x.data().begin() + begin * d, x.data().begin() + end * d);
  return tape.record(OpKind::kSliceRows, {x}, Tensor({end - begin, d}, std::move(out)),
                     [begin, d](std::span<const double> g, std::span<const std::span<double>> gin) {
                       if (gin[0].empty()) return;
                       for (std::size_t j = 0; j < g.size(); ++j) gin[0][begin * d + j] += g[j];
                     });
}

Tensor batch_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, Mode mode, bool update_running) {
  require_rank(x, 2, "batch_norm");
  const std::size_t b = x.dim(0), d = x.dim(1);
  if (gamma.numel() != d || beta.numel() != d || stats.running_mean.numel() != d ||
      stats.running_var.numel() != d) {
    throw DimensionError("batch_norm: parameters do not match width " + std::to_string(d));
  }
  const auto in = x.data();
  std::vector<double> xhat(b * d), inv_std(d), out(b * d);
  const bool train = mode == Mode::kTrain;
  if (train) {
    if (b < 2) throw DimensionError("batch_norm: train mode needs a batch of at least 2");
    std::vector<double> mu(d, 0.0), var(d, 0.0);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j) mu[j] += in[i * d + j];
    for (double& v : mu) v /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = in[i * d + j] - mu[j];
        var[j] += c * c;
      }
    for (double& v : var) v /= static_cast<double>(b);
    for (std::size_t j = 0; j < d; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + stats.epsilon);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j)
        xhat[i * d + j] = (in[i * d + j] - mu[j]) * inv_std[j];
    if (update_running) {
      auto rm = stats.running_mean.mutable_data();
      auto rv = stats.running_var.mutable_data();
      const double m = stats.momentum;
      const double unbias = static_cast<double>(b) / static_cast<double>(b - 1);
      for (std::size_t j = 0; j < d; ++j) {
        rm[j] = (1.0 - m) * rm[j] + m * mu[j];
        rv[j] = (1.0 - m) * rv[j] + m * var[j] * unbias;
      }
    }
  } else {
    const auto rm = stats.running_mean.data();
    const auto rv = stats.running_var.data();
    for (std::size_t j = 0; j < d; ++j) inv_std[j] = 1.0 / std::sqrt(rv[j] + stats.epsilon);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j)
        xhat[i * d + j] = (in[i * d + j] - rm[j]) * inv_std[j];
  }
  const auto gm = gamma.data();
  const auto bt = beta.data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = gm[j] * xhat[i * d + j] + bt[j];

  auto gi = gamma.impl();
  return tape.record(
      OpKind::kBatchNorm, {x, gamma, beta}, Tensor({b, d}, std::move(out)),
      [gi, xhat = std::move(xhat), inv_std = std::move(inv_std), b, d, train](
          std::span<const double> g, std::span<const std::span<double>> gin) {
        const auto& gm = gi->data;
        if (!gin[1].empty())
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) gin[1][j] += g[i * d + j] * xhat[i * d + j];
        if (!gin[2].empty())
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) gin[2][j] += g[i * d + j];
        if (gin[0].empty()) return;
        if (!train) {
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j)
              gin[0][i * d + j] += g[i * d + j] * gm[j] * inv_std[j];
          return;
        }
        const double bn = static_cast<double>(b);
        for (std::size_t j = 0; j < d; ++j) {
          double sum_dx = 0.0, sum_dx_xhat = 0.0;
          for (std::size_t i = 0; i < b; ++i) {
            const double dxhat = g[i * d + j] * gm[j];
            sum_dx += dxhat;
            sum_dx_xhat += dxhat * xhat[i * d + j];
          }
          for (std::size_t i = 0; i < b; ++i) {
            const double dxhat = g[i * d + j] * gm[j];
            gin[0][i * d + j] +=
                inv_std[j] / bn * (bn * dxhat - sum_dx - xhat[i * d + j] * sum_dx_xhat);
          }
        }
      });
}

Tensor dropout(Tape& tape, const Tensor& x, double p, Mode mode, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (mode == Mode::kEval || p == 0.0) return x;
  if (rng == nullptr) throw ConfigError("dropout in train mode needs a random stream");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng->bernoulli(p) ? 0.0 : keep_scale;
    out[i] = x[i] * mask[i];
  }
  return tape.record(OpKind::kDropout, {x}, Tensor(x.shape(), std::move(out)),
                     [mask = std::move(mask)](std::span<const double> g,
                                              std::span<const std::span<double>> gin) {
                       if (!gin[0].empty())
                         for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * mask[i];
                     });
}

Tensor embedding(Tape& tape, const Tensor& table, std::span<const std::int32_t> ids,
                 std::size_t min_rows) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), e = table.dim(1);
  const std::size_t rows = std::max<std::size_t>({ids.size(), min_rows, 1});
  std::vector<double> out(rows * e, 0.0);
  std::vector<std::int32_t> kept(ids.begin(), ids.end());
  for (std::size_t t = 0; t < kept.size(); ++t) {
    if (kept[t] < 0 || static_cast<std::size_t>(kept[t]) >= vocab) {
      throw DimensionError("embedding: token id " + std::to_string(kept[t]) +
                           " outside table of " + std::to_string(vocab) + " rows");
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(kept[t]) * e, e,
                out.data() + t * e);
  }
  return tape.record(OpKind::kEmbedding, {table}, Tensor({rows, e}, std::move(out)),
                     [kept = std::move(kept), e](std::span<const double> g,
                                                 std::span<const std::span<double>> gin) {
                       if (gin[0].empty()) return;
                       for (std::size_t t = 0; t < kept.size(); ++t) {
                         double* dst = gin[0].data() + static_cast<std::size_t>(kept[t]) * e;
                         for (std::size_t j = 0; j < e; ++j) dst[j] += g[t * e + j];
                       }
                     });
}

Tensor conv1d_maxpool(Tape& tape, const Tensor& tokens, std::span<const Tensor> kernels,
                      std::span<const Tensor> biases) {
  require_rank(tokens, 2, "conv1d_maxpool");
  if (kernels.empty() || kernels.size() != biases.size()) {
    throw DimensionError("conv1d_maxpool: need one bias per kernel bank");
  }
  const std::size_t len = tokens.dim(0), e = tokens.dim(1);
  std::size_t total = 0;
  for (std::size_t bank = 0; bank < kernels.size(); ++bank) {
    const Tensor& w = kernels[bank];
    require_rank(w, 3, "conv1d_maxpool kernel");
    if (w.dim(1) != e) {
      throw ConfigError("conv1d_maxpool: embedding dimension " + std::to_string(e) +
                        " differs from configured " + std::to_string(w.dim(1)));
    }
    if (w.dim(0) > len) {
      throw DimensionError("conv1d_maxpool: sequence of " + std::to_string(len) +
                           " tokens is shorter than kernel width " + std::to_string(w.dim(0)));
    }
    if (biases[bank].numel() != w.dim(2)) {
      throw DimensionError("conv1d_maxpool: bias does not match kernel count");
    }
    total += w.dim(2);
  }

  const double* x = tokens.data().data();
  std::vector<double> out(total, 0.0);
  // argmax window start per output, or -1 when ReLU clipped the maximum.
  std::vector<std::ptrdiff_t> arg(total, -1);
  std::size_t offset = 0;
  std::vector<double> z;
  for (std::size_t bank = 0; bank < kernels.size(); ++bank) {
    const Tensor& w = kernels[bank];
    const std::size_t width = w.dim(0), k = w.dim(2);
    const double* wd = w.data().data();
    const double* bd = biases[bank].data().data();
    const std::size_t positions = len - width + 1;
    z.assign(k, 0.0);
    for (std::size_t t = 0; t < positions; ++t) {
      std::copy_n(bd, k, z.begin());
      // the window is contiguous in row-major token storage
      const double* window = x + t * e;
      for (std::size_t r = 0; r < width * e; ++r) {
        const double xv = window[r];
        if (xv == 0.0) continue;
        const double* wrow = wd + r * k;
        for (std::size_t c = 0; c < k; ++c) z[c] += xv * wrow[c];
      }
      for (std::size_t c = 0; c < k; ++c) {
        if (z[c] > out[offset + c]) {
          out[offset + c] = z[c];
          arg[offset + c] = static_cast<std::ptrdiff_t>(t);
        }
      }
    }
    offset += k;
  }

  std::vector<Tensor> inputs;
  inputs.reserve(1 + 2 * kernels.size());
  inputs.push_back(tokens);
  inputs.insert(inputs.end(), kernels.begin(), kernels.end());
  inputs.insert(inputs.end(), biases.begin(), biases.end());
  std::vector<std::shared_ptr<TensorImpl>> weights;
  std::vector<std::size_t> widths, counts;
  for (const auto& w : kernels) {
    weights.push_back(w.impl());
    widths.push_back(w.dim(0));
    counts.push_back(w.dim(2));
  }
  auto ti = tokens.impl();
  return tape.record(
      OpKind::kConv1dMaxPool, std::span<const Tensor>(inputs), Tensor({total}, std::move(out)),
      [ti, weights = std::move(weights), widths = std::move(widths), counts = std::move(counts),
       arg = std::move(arg), e](std::span<const double> g, std::span<const std::span<double>> gin) {
        const std::size_t banks = weights.size();
        const double* x = ti->data.data();
        std::size_t offset = 0;
        for (std::size_t bank = 0; bank < banks; ++bank) {
          const std::size_t width = widths[bank], k = counts[bank];
          const double* wd = weights[bank]->data.data();
          auto gx = gin[0];
          auto gw = gin[1 + bank];
          auto gb = gin[1 + banks + bank];
          for (std::size_t c = 0; c < k; ++c) {
            const std::ptrdiff_t t = arg[offset + c];
            if (t < 0) continue;
            const double gc = g[offset + c];
            if (!gb.empty()) gb[c] += gc;
            const std::size_t start = static_cast<std::size_t>(t) * e;
            for (std::size_t r = 0; r < width * e; ++r) {
              if (!gw.empty()) gw[r * k + c] += gc * x[start + r];
              if (!gx.empty()) gx[start + r] += gc * wd[r * k + c];
            }
          }
          offset += k;
        }
      });
}

}  // namespace man::ops
