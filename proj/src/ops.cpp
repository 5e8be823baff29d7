#include "nadex/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nadex/errors.hpp"

namespace nadex::ops {

using autograd::accumulate;
using autograd::make_result;

namespace {

bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Returns true when `a` is the broadcast (larger) side.
bool broadcast_pair(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return true;
  if (b.numel() == 1 || is_suffix(a.shape(), b.shape())) return true;
  if (a.numel() == 1 || is_suffix(b.shape(), a.shape())) return false;
  throw DimensionError(std::string(op) + ": shapes " +
                       shape_to_string(a.shape()) + " and " +
                       shape_to_string(b.shape()) + " do not broadcast");
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind,
              const char* name) {
  const bool a_big = broadcast_pair(a, b, name);
  const Shape out_shape = a_big ? a.shape() : b.shape();
  const std::size_t n = shape_numel(out_shape);
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  std::vector<double> out(n);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i % na];
    const double y = bv[i % nb];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = x + y; break;
      case BinaryKind::kSub: out[i] = x - y; break;
      case BinaryKind::kMul: out[i] = x * y; break;
    }
  }
  return make_result(out_shape, std::move(out), {a, b}, [=](TensorImpl* self) {
    return [=]() {
      const auto& g = self->grad;
      if (a.requires_grad()) {
        std::vector<double> ga(na, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          ga[i % na] += kind == BinaryKind::kMul ? g[i] * b[i % nb] : g[i];
        }
        accumulate(a.impl(), ga);
      }
      if (b.requires_grad()) {
        std::vector<double> gb(nb, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          double d = g[i];
          if (kind == BinaryKind::kSub) d = -d;
          if (kind == BinaryKind::kMul) d *= a[i % na];
          gb[i % nb] += d;
        }
        accumulate(b.impl(), gb);
      }
    };
  });
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got shape " +
                         shape_to_string(x.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, BinaryKind::kAdd, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, BinaryKind::kSub, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, BinaryKind::kMul, "mul");
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      std::vector<double> gx(self->grad);
      for (double& v : gx) v *= factor;
      accumulate(x.impl(), gx);
    };
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v += value;
  return make_result(x.shape(), std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() { accumulate(x.impl(), self->grad); };
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    if (v >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      std::vector<double> gx(self->grad.size());
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const double s = self->data[i];
        gx[i] = self->grad[i] * s * (1.0 - s);
      }
      accumulate(x.impl(), gx);
    };
  });
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // NaN passes through so the caller can report which loss went bad.
    if (x[i] <= 0.0) {
      throw DomainError("log of non-positive value " + std::to_string(x[i]) +
                        " at index " + std::to_string(i));
    }
    out[i] = std::log(x[i]);
  }
  return make_result(x.shape(), std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      std::vector<double> gx(self->grad.size());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = self->grad[i] / x[i];
      accumulate(x.impl(), gx);
    };
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0 ? x[i] : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      std::vector<double> gx(self->grad.size());
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] = x[i] > 0 ? self->grad[i] : 0.0;
      }
      accumulate(x.impl(), gx);
    };
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const std::size_t n = x.numel();
  return make_result({1}, {total}, {x}, [=](TensorImpl* self) {
    return [=]() {
      std::vector<double> gx(n, self->grad[0]);
      accumulate(x.impl(), gx);
    };
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  double total = 0.0;
  for (double v : x.data()) total += v;
  const std::size_t n = x.numel();
  return make_result({1}, {total / static_cast<double>(n)}, {x},
                     [=](TensorImpl* self) {
                       return [=]() {
                         std::vector<double> gx(
                             n, self->grad[0] / static_cast<double>(n));
                         accumulate(x.impl(), gx);
                       };
                     });
}

Tensor sum_last(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("sum_last needs rank >= 1");
  const std::size_t rows = x.outer();
  const std::size_t cols = x.inner();
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r] += x[r * cols + c];
  }
  return make_result(out_shape, std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      std::vector<double> gx(rows * cols);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] = self->grad[r];
      }
      accumulate(x.impl(), gx);
    };
  });
}

namespace {

// out[m×n] += a[m×k] · b[k×n]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

// out[m×n] += a[m×k] · b[n×k]ᵀ
void gemm_nt(const double* a, const double* b, double* out, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out[i * n + j] += acc;
    }
  }
}

// out[k×n] += a[m×k]ᵀ · b[m×n]
void gemm_tn(const double* a, const double* b, double* out, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* row = out + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ for " +
                         shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [=](TensorImpl* self) {
    return [=]() {
      const double* g = self->grad.data();
      if (a.requires_grad()) {
        std::vector<double> ga(m * k, 0.0);
        gemm_nt(g, b.data().data(), ga.data(), m, n, k);
        accumulate(a.impl(), ga);
      }
      if (b.requires_grad()) {
        std::vector<double> gb(k * n, 0.0);
        gemm_tn(a.data().data(), g, gb.data(), m, k, n);
        accumulate(b.impl(), gb);
      }
    };
  });
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_transposed");
  require_rank(b, 2, "matmul_transposed");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_transposed: inner extents differ for " +
                         shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [=](TensorImpl* self) {
    return [=]() {
      const double* g = self->grad.data();
      if (a.requires_grad()) {
        std::vector<double> ga(m * k, 0.0);
        gemm_nn(g, b.data().data(), ga.data(), m, n, k);
        accumulate(a.impl(), ga);
      }
      if (b.requires_grad()) {
        std::vector<double> gb(n * k, 0.0);
        gemm_tn(g, a.data().data(), gb.data(), m, n, k);
        accumulate(b.impl(), gb);
      }
    };
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  }
  return make_result({c, r}, std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      std::vector<double> gx(r * c);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = self->grad[j * r + i];
      }
      accumulate(x.impl(), gx);
    };
  });
}

Tensor softmax(const Tensor& x, double temperature) {
  if (!(temperature > 0.0)) {
    throw ConfigError("softmax temperature must be positive, got " +
                      std::to_string(temperature));
  }
  const std::size_t rows = x.outer();
  const std::size_t cols = x.inner();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * cols;
    double* y = out.data() + r * cols;
    double hi = -INFINITY;
    for (std::size_t c = 0; c < cols; ++c) hi = std::max(hi, in[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp((in[c] - hi) / temperature);
      z += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      std::vector<double> gx(rows * cols);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self->data.data() + r * cols;
        const double* g = self->grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
        for (std::size_t c = 0; c < cols; ++c) {
          gx[r * cols + c] = y[c] * (g[c] - dot) / temperature;
        }
      }
      accumulate(x.impl(), gx);
    };
  });
}

Tensor l2_normalize(const Tensor& x) {
  const std::size_t rows = x.outer();
  const std::size_t cols = x.inner();
  std::vector<double> out(x.numel(), 0.0);
  std::vector<double> norms(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += x[r * cols + c] * x[r * cols + c];
    norms[r] = std::sqrt(sq);
    if (norms[r] == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = x[r * cols + c] / norms[r];
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      std::vector<double> gx(rows * cols, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        if (norms[r] == 0.0) continue;
        const double* y = self->data.data() + r * cols;
        const double* g = self->grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
        for (std::size_t c = 0; c < cols; ++c) {
          gx[r * cols + c] = (g[c] - y[c] * dot) / norms[r];
        }
      }
      accumulate(x.impl(), gx);
    };
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t rows = x.outer();
  const std::size_t cols = x.inner();
  if (gain.numel() != cols || bias.numel() != cols) {
    throw DimensionError("layer_norm: gain/bias " +
                         shape_to_string(gain.shape()) + "/" +
                         shape_to_string(bias.shape()) +
                         " do not match trailing extent of " +
                         shape_to_string(x.shape()));
  }
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  std::vector<std::uint8_t> floored(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += in[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(cols);
    if (var < kLayerNormVarianceFloor) {
      var = kLayerNormVarianceFloor;
      floored[r] = 1;
    }
    rstd[r] = 1.0 / std::sqrt(var);
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      xhat[i] = (in[c] - mu) * rstd[r];
      out[i] = gain[c] * xhat[i] + bias[c];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, bias}, [=](TensorImpl* self) {
        return [=]() {
          const auto& g = self->grad;
          if (gain.requires_grad() || bias.requires_grad()) {
            std::vector<double> gg(cols, 0.0), gb(cols, 0.0);
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t c = 0; c < cols; ++c) {
                gg[c] += g[r * cols + c] * xhat[r * cols + c];
                gb[c] += g[r * cols + c];
              }
            }
            accumulate(gain.impl(), gg);
            accumulate(bias.impl(), gb);
          }
          if (!x.requires_grad()) return;
          std::vector<double> gx(rows * cols);
          const double inv_n = 1.0 / static_cast<double>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              const double d = g[r * cols + c] * gain[c];
              mean_d += d;
              mean_dx += d * xhat[r * cols + c];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            // With the floor active the scale is a constant.
            if (floored[r]) mean_dx = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t i = r * cols + c;
              gx[i] = rstd[r] * (g[i] * gain[c] - mean_d - xhat[i] * mean_dx);
            }
          }
          accumulate(x.impl(), gx);
        };
      });
}

Tensor embedding_gather(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank(table, 2, "embedding_gather");
  const std::size_t vocab = table.dim(0);
  const std::size_t width = table.dim(1);
  for (std::size_t id : ids) {
    if (id >= vocab) {
      throw IndexError("embedding id " + std::to_string(id) +
                       " out of range for table with " + std::to_string(vocab) +
                       " rows");
    }
  }
  std::vector<double> out(ids.size() * width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.data().data() + ids[i] * width, width,
                out.data() + i * width);
  }
  std::vector<std::size_t> index(ids.begin(), ids.end());
  return make_result(
      {ids.size(), width}, std::move(out), {table},
      [=](TensorImpl* self) mutable {
        return [=, index = std::move(index)]() {
          auto& gt = table.impl()->grad;
          table.impl()->ensure_grad();
          for (std::size_t i = 0; i < index.size(); ++i) {
            const double* g = self->grad.data() + i * width;
            double* dst = gt.data() + index[i] * width;
            for (std::size_t c = 0; c < width; ++c) dst[c] += g[c];
          }
        };
      });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> ids) {
  require_rank(x, 2, "pick");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (ids.size() != rows) {
    throw DimensionError("pick: " + std::to_string(ids.size()) +
                         " ids for " + std::to_string(rows) + " rows");
  }
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (ids[r] >= cols) {
      throw IndexError("pick: id " + std::to_string(ids[r]) +
                       " out of range for " + std::to_string(cols) + " columns");
    }
    out[r] = x[r * cols + ids[r]];
  }
  std::vector<std::size_t> index(ids.begin(), ids.end());
  return make_result({rows}, std::move(out), {x}, [=](TensorImpl* self) mutable {
    return [=, index = std::move(index)]() {
      std::vector<double> gx(rows * cols, 0.0);
      for (std::size_t r = 0; r < rows; ++r) gx[r * cols + index[r]] = self->grad[r];
      accumulate(x.impl(), gx);
    };
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_to_string(x.shape()) + " -> " +
                         shape_to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x},
                     [=](TensorImpl* self) {
                       return [=]() { accumulate(x.impl(), self->grad); };
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  if (x.rank() < 1 || begin + count > x.dim(0)) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") of " +
                         shape_to_string(x.shape()));
  }
  const std::size_t row = x.dim(0) ? x.numel() / x.dim(0) : 0;
  Shape shape = x.shape();
  shape[0] = count;
  std::vector<double> out(x.data().begin() + begin * row,
                          x.data().begin() + (begin + count) * row);
  const std::size_t total = x.numel();
  return make_result(shape, std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      std::vector<double> gx(total, 0.0);
      std::copy(self->grad.begin(), self->grad.end(), gx.begin() + begin * row);
      accumulate(x.impl(), gx);
    };
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<double> out;
  for (const Tensor& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) {
      throw DimensionError("concat_rows: " + shape_to_string(p.shape()) +
                           " does not match " +
                           shape_to_string(parts[0].shape()));
    }
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return make_result(shape, std::move(out), parts, [=](TensorImpl* self) {
    return [=]() {
      std::size_t offset = 0;
      for (const Tensor& p : parts) {
        std::span<const double> g(self->grad.data() + offset, p.numel());
        accumulate(p.impl(), g);
        offset += p.numel();
      }
    };
  });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool train) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout rate must lie in [0, 1), got " +
                      std::to_string(rate));
  }
  if (!train || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform01() < rate ? 0.0 : keep_scale;
    out[i] = x[i] * mask[i];
  }
  return make_result(x.shape(), std::move(out), {x}, [=](TensorImpl* self) {
    return [=]() {
      std::vector<double> gx(mask.size());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = self->grad[i] * mask[i];
      accumulate(x.impl(), gx);
    };
  });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t batch, std::size_t seq,
                            std::size_t heads,
                            std::span<const std::uint8_t> key_mask) {
  require_rank(q, 2, "multi_head_attention");
  const std::size_t width = q.dim(1);
  if (q.shape() != k.shape() || q.shape() != v.shape() ||
      q.dim(0) != batch * seq) {
    throw DimensionError("multi_head_attention: q/k/v " +
                         shape_to_string(q.shape()) + "/" +
                         shape_to_string(k.shape()) + "/" +
                         shape_to_string(v.shape()) + " for batch " +
                         std::to_string(batch) + " x seq " +
                         std::to_string(seq));
  }
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) +
                      " not divisible by heads " + std::to_string(heads));
  }
  if (key_mask.size() != batch * seq) {
    throw DimensionError("multi_head_attention: mask has " +
                         std::to_string(key_mask.size()) + " entries, need " +
                         std::to_string(batch * seq));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    if (std::none_of(key_mask.begin() + b * seq,
                     key_mask.begin() + (b + 1) * seq,
                     [](std::uint8_t m) { return m != 0; })) {
      throw ContractError("sequence " + std::to_string(b) +
                          " has no unmasked positions");
    }
  }
  const std::size_t hd = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<std::uint8_t> mask(key_mask.begin(), key_mask.end());
  // probs[b][h][i][j]
  std::vector<double> probs(batch * heads * seq * seq, 0.0);
  std::vector<double> out(batch * seq * width, 0.0);
  const double* qd = q.data().data();
  const double* kd = k.data().data();
  const double* vd = v.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq; ++i) {
        double* p = probs.data() + ((b * heads + h) * seq + i) * seq;
        const double* qi = qd + (b * seq + i) * width + h * hd;
        double hi = -INFINITY;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mask[b * seq + j]) continue;
          const double* kj = kd + (b * seq + j) * width + h * hd;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
          p[j] = s * inv_sqrt;
          hi = std::max(hi, p[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mask[b * seq + j]) continue;
          p[j] = std::exp(p[j] - hi);
          z += p[j];
        }
        double* oi = out.data() + (b * seq + i) * width + h * hd;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mask[b * seq + j]) continue;
          p[j] /= z;
          const double* vj = vd + (b * seq + j) * width + h * hd;
          for (std::size_t c = 0; c < hd; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }
  return make_result(
      q.shape(), std::move(out), {q, k, v}, [=](TensorImpl* self) mutable {
        return [=, probs = std::move(probs), mask = std::move(mask)]() {
          const std::size_t n = batch * seq * width;
          std::vector<double> gq(n, 0.0), gk(n, 0.0), gv(n, 0.0);
          const double* go = self->grad.data();
          const double* qd = q.data().data();
          const double* kd = k.data().data();
          const double* vd = v.data().data();
          std::vector<double> dp(seq);
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t h = 0; h < heads; ++h) {
              for (std::size_t i = 0; i < seq; ++i) {
                const double* p =
                    probs.data() + ((b * heads + h) * seq + i) * seq;
                const double* goi = go + (b * seq + i) * width + h * hd;
                double weighted = 0.0;
                for (std::size_t j = 0; j < seq; ++j) {
                  dp[j] = 0.0;
                  if (!mask[b * seq + j]) continue;
                  const double* vj = vd + (b * seq + j) * width + h * hd;
                  double* gvj = gv.data() + (b * seq + j) * width + h * hd;
                  for (std::size_t c = 0; c < hd; ++c) {
                    dp[j] += goi[c] * vj[c];
                    gvj[c] += p[j] * goi[c];
                  }
                  weighted += p[j] * dp[j];
                }
                const double* qi = qd + (b * seq + i) * width + h * hd;
                double* gqi = gq.data() + (b * seq + i) * width + h * hd;
                for (std::size_t j = 0; j < seq; ++j) {
                  if (!mask[b * seq + j]) continue;
                  const double ds = p[j] * (dp[j] - weighted) * inv_sqrt;
                  if (ds == 0.0) continue;
                  const double* kj = kd + (b * seq + j) * width + h * hd;
                  double* gkj = gk.data() + (b * seq + j) * width + h * hd;
                  for (std::size_t c = 0; c < hd; ++c) {
                    gqi[c] += ds * kj[c];
                    gkj[c] += ds * qi[c];
                  }
                }
              }
            }
          }
          accumulate(q.impl(), gq);
          accumulate(k.impl(), gk);
          accumulate(v.impl(), gv);
        };
      });
}

}  // namespace nadex::ops
