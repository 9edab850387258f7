#pragma once

// Differentiable layer primitives with explicit forward/backward pairs.
// All reductions run in row-major order so results are reproducible bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dvme/errors.hpp"
#include "dvme/rng.hpp"
#include "dvme/tensor.hpp"

namespace dvme::nn {

enum class Mode { train, eval };

inline constexpr double kLayerNormEps = 1e-5;

namespace detail {
template <typename T>
void require_matrix(const BasicTensor<T>& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " must be a matrix, got shape " +
                         shape_string(t.shape()));
  }
}
}  // namespace detail

// a[m x k] * b[k x n]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_matrix(a, "matmul lhs");
  detail::require_matrix(b, "matmul rhs");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  BasicTensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = out.data() + i * n;
    const T* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

// a^T * b for a[k x m], b[k x n]
template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_matrix(a, "matmul_tn lhs");
  detail::require_matrix(b, "matmul_tn rhs");
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul_tn outer dimensions disagree: " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
  BasicTensor<T> out({m, n});
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a.data() + p * m;
    const T* brow = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T{0}) continue;
      T* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

// a * b^T for a[m x k], b[n x k]
template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_matrix(a, "matmul_nt lhs");
  detail::require_matrix(b, "matmul_nt rhs");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt inner dimensions disagree: " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
  BasicTensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b.data() + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out(i, j) = acc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear: y = x W + b

template <typename T>
struct LinearGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dw;
  BasicTensor<T> db;
};

template <typename T>
BasicTensor<T> linear_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                              const BasicTensor<T>& b) {
  detail::require_matrix(w, "linear weight");
  if (b.rank() != 1 || b.size() != w.cols()) {
    throw DimensionError("linear bias shape " + shape_string(b.shape()) +
                         " does not match weight " + shape_string(w.shape()));
  }
  BasicTensor<T> y = matmul(x, w);
  const std::size_t n = w.cols();
  for (std::size_t i = 0; i < y.rows(); ++i) {
    T* row = y.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += b[j];
  }
  return y;
}

// dW = x^T dy, db = column sums of dy, dx = dy W^T. dx is skipped when
// need_dx is false (inputs that are constants, such as frozen embeddings).
template <typename T>
LinearGrads<T> linear_backward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                               const BasicTensor<T>& dy, bool need_dx = true) {
  if (dy.rank() != 2 || dy.rows() != x.rows() || dy.cols() != w.cols()) {
    throw DimensionError("linear_backward upstream gradient shape " + shape_string(dy.shape()));
  }
  LinearGrads<T> g;
  g.dw = matmul_tn(x, dy);
  g.db = BasicTensor<T>({w.cols()});
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    const auto row = dy.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) g.db[j] += row[j];
  }
  if (need_dx) g.dx = matmul_nt(dy, w);
  return g;
}

// ---------------------------------------------------------------------------
// Softmax over the last axis.

template <typename T>
void softmax_inplace(std::span<T> row) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : row) mx = std::max(mx, v);
  T sum{0};
  for (T& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (T& v : row) v /= sum;
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw DimensionError("softmax needs a non-empty last axis");
  }
  BasicTensor<T> y = x;
  const std::size_t n = x.shape().back();
  for (std::size_t off = 0; off < y.size(); off += n) {
    softmax_inplace(std::span<T>(y.data() + off, n));
  }
  return y;
}

// dx = y * (dy - <dy, y>) per row, given the forward output y.
template <typename T>
BasicTensor<T> softmax_rows_backward(const BasicTensor<T>& y, const BasicTensor<T>& dy) {
  if (!y.same_shape(dy)) throw DimensionError("softmax_backward shape mismatch");
  BasicTensor<T> dx(y.shape());
  const std::size_t n = y.shape().back();
  for (std::size_t off = 0; off < y.size(); off += n) {
    T dot{0};
    for (std::size_t j = 0; j < n; ++j) dot += dy[off + j] * y[off + j];
    for (std::size_t j = 0; j < n; ++j) dx[off + j] = y[off + j] * (dy[off + j] - dot);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// LayerNorm over the feature axis of a [B x d] matrix.

template <typename T>
struct LayerNormCache {
  BasicTensor<T> xhat;         // pre-affine normalized input
  std::vector<T> inv_std;      // per row
};

template <typename T>
struct LayerNormOutput {
  BasicTensor<T> y;
  LayerNormCache<T> cache;
};

template <typename T>
struct LayerNormGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dgamma;
  BasicTensor<T> dbeta;
};

template <typename T>
LayerNormOutput<T> layernorm_forward(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                     const BasicTensor<T>& beta, double eps = kLayerNormEps) {
  detail::require_matrix(x, "layernorm input");
  const std::size_t rows = x.rows(), d = x.cols();
  if (d == 0 || gamma.size() != d || beta.size() != d) {
    throw DimensionError("layernorm affine parameters do not match feature dim " +
                         std::to_string(d));
  }
  if (!(eps > 0.0)) throw ParameterError("layernorm eps must be positive");
  LayerNormOutput<T> out{BasicTensor<T>(x.shape()), {BasicTensor<T>(x.shape()), {}}};
  out.cache.inv_std.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto xr = x.row(i);
    T mean{0};
    for (T v : xr) mean += v;
    mean /= static_cast<T>(d);
    T var{0};
    for (T v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(var + static_cast<T>(eps));
    out.cache.inv_std[i] = inv;
    auto xh = out.cache.xhat.row(i);
    auto yr = out.y.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (xr[j] - mean) * inv;
      yr[j] = xh[j] * gamma[j] + beta[j];
    }
  }
  return out;
}

template <typename T>
LayerNormGrads<T> layernorm_backward(const LayerNormCache<T>& cache, const BasicTensor<T>& gamma,
                                     const BasicTensor<T>& dy) {
  const auto& xhat = cache.xhat;
  if (!xhat.same_shape(dy)) throw DimensionError("layernorm_backward shape mismatch");
  const std::size_t rows = xhat.rows(), d = xhat.cols();
  LayerNormGrads<T> g{BasicTensor<T>(xhat.shape()), BasicTensor<T>({d}), BasicTensor<T>({d})};
  std::vector<T> dxhat(d);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto xh = xhat.row(i);
    const auto dyr = dy.row(i);
    T sum_dxhat{0}, sum_dxhat_xhat{0};
    for (std::size_t j = 0; j < d; ++j) {
      g.dgamma[j] += dyr[j] * xh[j];
      g.dbeta[j] += dyr[j];
      dxhat[j] = dyr[j] * gamma[j];
      sum_dxhat += dxhat[j];
      sum_dxhat_xhat += dxhat[j] * xh[j];
    }
    const T inv_d = T{1} / static_cast<T>(d);
    auto dxr = g.dx.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      dxr[j] = cache.inv_std[i] * (dxhat[j] - inv_d * sum_dxhat - xh[j] * inv_d * sum_dxhat_xhat);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU and inverted dropout.

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  for (T& v : y.values()) v = v > T{0} ? v : T{0};
  return y;
}

// Gradient passes where the forward input was strictly positive.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  if (!x.same_shape(dy)) throw DimensionError("relu_backward shape mismatch");
  BasicTensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(x[i] > T{0})) dx[i] = T{0};
  }
  return dx;
}

template <typename T>
struct DropoutOutput {
  BasicTensor<T> y;
  BasicTensor<T> mask;  // per-element scale: 0 or 1/(1-p); empty in eval mode
};

inline void check_dropout_p(double p) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ParameterError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  }
}

template <typename T>
DropoutOutput<T> dropout(const BasicTensor<T>& x, double p, Mode mode, CounterStream& stream) {
  check_dropout_p(p);
  if (mode == Mode::eval || p == 0.0) return {x, {}};
  DropoutOutput<T> out{x, BasicTensor<T>(x.shape())};
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T m = stream.uniform() < p ? T{0} : scale;
    out.mask[i] = m;
    out.y[i] = x[i] * m;
  }
  return out;
}

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& mask, const BasicTensor<T>& dy) {
  if (mask.empty()) return dy;
  if (!mask.same_shape(dy)) throw DimensionError("dropout_backward shape mismatch");
  BasicTensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy, averaged over the batch.

template <typename T>
struct CrossEntropyOutput {
  T loss{};
  BasicTensor<T> dlogits;
};

template <typename T>
CrossEntropyOutput<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  detail::require_matrix(logits, "cross_entropy logits");
  const std::size_t batch = logits.rows(), classes = logits.cols();
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(batch) + " rows");
  }
  if (batch == 0) throw DimensionError("cross_entropy on an empty batch");
  CrossEntropyOutput<T> out{T{0}, softmax_rows(logits)};
  const T inv_b = T{1} / static_cast<T>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ParameterError("label " + std::to_string(y) + " outside [0, " +
                           std::to_string(classes) + ")");
    }
    // log-sum-exp form keeps the loss finite for saturated logits
    const auto lr = logits.row(i);
    T mx = lr[0];
    for (T v : lr) mx = std::max(mx, v);
    T se{0};
    for (T v : lr) se += std::exp(v - mx);
    out.loss += (std::log(se) + mx - lr[y]) * inv_b;
    auto g = out.dlogits.row(i);
    g[y] -= T{1};
    for (T& v : g) v *= inv_b;
  }
  return out;
}

}  // namespace dvme::nn
