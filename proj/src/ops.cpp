#include "tatrans/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "tatrans/error.hpp"

namespace tatrans::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

void require_rank2(const char* op, const Shape& s) {
  if (s.size() != 2) throw ValidationError(std::string(op) + ": expected a rank-2 tensor, got " + shape_string(s));
}

template <typename T>
ConstMap<T> as_matrix(const Tensor<T>& t) {
  return ConstMap<T>(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
MutMap<T> as_matrix(std::vector<T>& buf, std::size_t rows, std::size_t cols) {
  return MutMap<T>(buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b, Transpose tb) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  require_rank2("matmul", A.shape);
  require_rank2("matmul", B.shape);
  const bool t = tb == Transpose::Yes;
  const std::size_t m = A.rows(), k = A.cols();
  const std::size_t kb = t ? B.cols() : B.rows();
  const std::size_t n = t ? B.rows() : B.cols();
  if (k != kb) shape_error(t ? "matmul(a, b^T)" : "matmul", A.shape, B.shape);

  Tensor<T> out(Shape{m, n});
  auto C = as_matrix(out.data, m, n);
  if (t) {
    C.noalias() = as_matrix(A) * as_matrix(B).transpose();
  } else {
    C.noalias() = as_matrix(A) * as_matrix(B);
  }
  return g.record(std::move(out), {a, b}, [a, b, t, m, k, n](Graph<T>& g, Var self) {
    const auto dC = ConstMap<T>(g.grad(self).data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    const auto Am = as_matrix(g.value(a));
    const auto Bm = as_matrix(g.value(b));
    if (g.requires_grad(a)) {
      auto dA = as_matrix(g.grad_buffer(a), m, k);
      if (t) {
        dA.noalias() += dC * Bm;
      } else {
        dA.noalias() += dC * Bm.transpose();
      }
    }
    if (g.requires_grad(b)) {
      if (t) {
        auto dB = as_matrix(g.grad_buffer(b), n, k);
        dB.noalias() += dC.transpose() * Am;
      } else {
        auto dB = as_matrix(g.grad_buffer(b), k, n);
        dB.noalias() += Am.transpose() * dC;
      }
    }
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  if (A.shape != B.shape) shape_error("add", A.shape, B.shape);
  Tensor<T> out(A.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    for (Var p : {a, b}) {
      if (!g.requires_grad(p)) continue;
      auto& dp = g.grad_buffer(p);
      for (std::size_t i = 0; i < d.size(); ++i) dp[i] += d[i];
    }
  });
}

template <typename T>
Var add_bias(Graph<T>& g, Var x, Var bias) {
  const auto& X = g.value(x);
  const auto& Bv = g.value(bias);
  require_rank2("add_bias", X.shape);
  if (Bv.size() != X.cols()) shape_error("add_bias", X.shape, Bv.shape);
  Tensor<T> out(X.shape);
  const std::size_t rows = X.rows(), cols = X.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] = X.data[r * cols + c] + Bv.data[c];
  }
  return g.record(std::move(out), {x, bias}, [x, bias, rows, cols](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    if (g.requires_grad(x)) {
      auto& dx = g.grad_buffer(x);
      for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i];
    }
    if (g.requires_grad(bias)) {
      auto& db = g.grad_buffer(bias);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) db[c] += d[r * cols + c];
      }
    }
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  if (A.shape != B.shape) shape_error("mul", A.shape, B.shape);
  Tensor<T> out(A.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    const auto& A = g.value(a);
    const auto& B = g.value(b);
    if (g.requires_grad(a)) {
      auto& da = g.grad_buffer(a);
      for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i] * B[i];
    }
    if (g.requires_grad(b)) {
      auto& db = g.grad_buffer(b);
      for (std::size_t i = 0; i < d.size(); ++i) db[i] += d[i] * A[i];
    }
  });
}

template <typename T>
Var scale(Graph<T>& g, Var a, double factor) {
  const auto& A = g.value(a);
  const T f = static_cast<T>(factor);
  Tensor<T> out(A.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * f;
  return g.record(std::move(out), {a}, [a, f](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    auto& da = g.grad_buffer(a);
    for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i] * f;
  });
}

template <typename T>
Var relu(Graph<T>& g, Var a) {
  const auto& A = g.value(a);
  Tensor<T> out(A.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] > T{} ? A[i] : T{};
  return g.record(std::move(out), {a}, [a](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    const auto& A = g.value(a);
    auto& da = g.grad_buffer(a);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (A[i] > T{}) da[i] += d[i];
    }
  });
}

template <typename T>
Var softmax(Graph<T>& g, Var x) {
  const auto& X = g.value(x);
  require_rank2("softmax", X.shape);
  const std::size_t rows = X.rows(), cols = X.cols();
  Tensor<T> out(X.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = &X.data[r * cols];
    T* o = &out.data[r * cols];
    const T mx = *std::max_element(in, in + cols);
    T total{};
    for (std::size_t c = 0; c < cols; ++c) total += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return g.record(std::move(out), {x}, [x, rows, cols](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    const auto& y = g.value(self);
    auto& dx = g.grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot{};
      for (std::size_t c = 0; c < cols; ++c) dot += d[r * cols + c] * y.data[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += y.data[r * cols + c] * (d[r * cols + c] - dot);
    }
  });
}

template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, double eps) {
  const auto& X = g.value(x);
  const auto& G = g.value(gamma);
  const auto& B = g.value(beta);
  require_rank2("layer_norm", X.shape);
  const std::size_t rows = X.rows(), cols = X.cols();
  if (G.size() != cols) shape_error("layer_norm(gamma)", X.shape, G.shape);
  if (B.size() != cols) shape_error("layer_norm(beta)", X.shape, B.shape);

  Tensor<T> out(X.shape);
  std::vector<T> xhat(X.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = &X.data[r * cols];
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += in[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = static_cast<T>(rs);
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = static_cast<T>((in[c] - mean) * rs);
      xhat[r * cols + c] = h;
      out.data[r * cols + c] = G.data[c] * h + B.data[c];
    }
  }
  return g.record(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& g, Var self) {
                    const auto& d = g.grad(self);
                    const auto& G = g.value(gamma);
                    if (g.requires_grad(gamma)) {
                      auto& dg = g.grad_buffer(gamma);
                      for (std::size_t i = 0; i < d.size(); ++i) dg[i % cols] += d[i] * xhat[i];
                    }
                    if (g.requires_grad(beta)) {
                      auto& db = g.grad_buffer(beta);
                      for (std::size_t i = 0; i < d.size(); ++i) db[i % cols] += d[i];
                    }
                    if (!g.requires_grad(x)) return;
                    auto& dx = g.grad_buffer(x);
                    const double n = static_cast<double>(cols);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double mean_dh = 0.0, mean_dh_h = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double dh = static_cast<double>(d[r * cols + c]) * G.data[c];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[r * cols + c];
                      }
                      mean_dh /= n;
                      mean_dh_h /= n;
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double dh = static_cast<double>(d[r * cols + c]) * G.data[c];
                        dx[r * cols + c] +=
                            static_cast<T>(rstd[r] * (dh - mean_dh - xhat[r * cols + c] * mean_dh_h));
                      }
                    }
                  });
}

template <typename T>
Var embedding(Graph<T>& g, Var table, std::span<const int> ids) {
  const auto& W = g.value(table);
  require_rank2("embedding", W.shape);
  const std::size_t vocab = W.rows(), dim = W.cols();
  Tensor<T> out(Shape{ids.size(), dim});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw ValidationError("embedding: id " + std::to_string(ids[r]) + " outside table of " + std::to_string(vocab) + " rows");
    }
    std::copy_n(&W.data[static_cast<std::size_t>(ids[r]) * dim], dim, &out.data[r * dim]);
  }
  return g.record(std::move(out), {table},
                  [table, dim, ids = std::vector<int>(ids.begin(), ids.end())](Graph<T>& g, Var self) {
                    const auto& d = g.grad(self);
                    auto& dw = g.grad_buffer(table);
                    for (std::size_t r = 0; r < ids.size(); ++r) {
                      T* dst = &dw[static_cast<std::size_t>(ids[r]) * dim];
                      const T* src = &d[r * dim];
                      for (std::size_t c = 0; c < dim; ++c) dst[c] += src[c];
                    }
                  });
}

template <typename T>
Var cross_entropy(Graph<T>& g, Var logits, std::span<const int> targets, int ignore) {
  const auto& L = g.value(logits);
  require_rank2("cross_entropy", L.shape);
  const std::size_t rows = L.rows(), cols = L.cols();
  if (targets.size() != rows) {
    throw ValidationError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " + shape_string(L.shape));
  }
  Tensor<T> logp = log_softmax_rows(L);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == ignore) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= cols) {
      throw ValidationError("cross_entropy: target " + std::to_string(targets[r]) + " outside " + std::to_string(cols) + " classes");
    }
    total -= logp.data[r * cols + static_cast<std::size_t>(targets[r])];
    ++count;
  }
  if (count == 0) throw ValidationError("cross_entropy: no target positions");
  return g.record(Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(count))), {logits},
                  [logits, rows, cols, count, ignore, logp = std::move(logp),
                   targets = std::vector<int>(targets.begin(), targets.end())](Graph<T>& g, Var self) {
                    const T scale_out = g.grad(self)[0] / static_cast<T>(count);
                    auto& dl = g.grad_buffer(logits);
                    for (std::size_t r = 0; r < rows; ++r) {
                      if (targets[r] == ignore) continue;
                      for (std::size_t c = 0; c < cols; ++c) dl[r * cols + c] += std::exp(logp.data[r * cols + c]) * scale_out;
                      dl[r * cols + static_cast<std::size_t>(targets[r])] -= scale_out;
                    }
                  });
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
  const auto& X = g.value(x);
  double total = 0.0;
  for (T v : X.data) total += v;
  return g.record(Tensor<T>::scalar(static_cast<T>(total)), {x}, [x](Graph<T>& g, Var self) {
    const T d = g.grad(self)[0];
    auto& dx = g.grad_buffer(x);
    for (auto& v : dx) v += d;
  });
}

template <typename T>
Var dropout(Graph<T>& g, Var x, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ValidationError("dropout: probability must be in [0,1)");
  if (p == 0.0) return x;
  const auto& X = g.value(x);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(X.size());
  Tensor<T> out(X.shape);
  for (std::size_t i = 0; i < X.size(); ++i) {
    mask[i] = rng.bernoulli(p) ? T{} : keep_scale;
    out[i] = X[i] * mask[i];
  }
  return g.record(std::move(out), {x}, [x, mask = std::move(mask)](Graph<T>& g, Var self) {
    const auto& d = g.grad(self);
    auto& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] * mask[i];
  });
}

template <typename T>
Var attention(Graph<T>& g, Var q, Var k, Var v, const AttentionLayout& layout) {
  const auto& Q = g.value(q);
  const auto& K = g.value(k);
  const auto& V = g.value(v);
  require_rank2("attention", Q.shape);
  if (K.shape != V.shape) shape_error("attention(k, v)", K.shape, V.shape);
  const std::size_t B = layout.batch, Lq = layout.q_len, Lk = layout.k_len, H = layout.heads;
  const std::size_t D = Q.cols();
  if (Q.rows() != B * Lq || K.rows() != B * Lk || K.cols() != D) shape_error("attention(q, k)", Q.shape, K.shape);
  if (H == 0 || D % H != 0) throw ValidationError("attention: model dim " + std::to_string(D) + " not divisible by heads");
  if (layout.k_valid.size() != B) throw ValidationError("attention: k_valid must list one length per sequence");
  const std::size_t dh = D / H;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  // probs[b][h][i][j], zero where masked.
  std::vector<T> probs(B * H * Lq * Lk, T{});
  Tensor<T> out(Shape{B * Lq, D});
  std::vector<T> scores(Lk);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t valid = std::min(layout.k_valid[b], Lk);
    if (valid == 0) throw ValidationError("attention: sequence " + std::to_string(b) + " has no valid keys");
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < Lq; ++i) {
        const std::size_t limit = layout.causal ? std::min(valid, i + 1) : valid;
        const T* qi = &Q.data[(b * Lq + i) * D + h * dh];
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < limit; ++j) {
          const T* kj = &K.data[(b * Lk + j) * D + h * dh];
          T s{};
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          scores[j] = s * inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        T total{};
        for (std::size_t j = 0; j < limit; ++j) total += (scores[j] = std::exp(scores[j] - mx));
        T* p = &probs[((b * H + h) * Lq + i) * Lk];
        T* oi = &out.data[(b * Lq + i) * D + h * dh];
        for (std::size_t j = 0; j < limit; ++j) {
          p[j] = scores[j] / total;
          const T* vj = &V.data[(b * Lk + j) * D + h * dh];
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }
  return g.record(std::move(out), {q, k, v},
                  [q, k, v, B, Lq, Lk, H, D, dh, inv_sqrt, probs = std::move(probs)](Graph<T>& g, Var self) {
                    const auto& dO = g.grad(self);
                    const auto& Q = g.value(q);
                    const auto& K = g.value(k);
                    const auto& V = g.value(v);
                    const bool gq = g.requires_grad(q), gk = g.requires_grad(k), gv = g.requires_grad(v);
                    std::vector<T> scratch;
                    std::vector<T>* dQ = gq ? &g.grad_buffer(q) : &scratch;
                    std::vector<T>* dK = gk ? &g.grad_buffer(k) : &scratch;
                    std::vector<T>* dV = gv ? &g.grad_buffer(v) : &scratch;
                    std::vector<T> dp(Lk);
                    for (std::size_t b = 0; b < B; ++b) {
                      for (std::size_t h = 0; h < H; ++h) {
                        for (std::size_t i = 0; i < Lq; ++i) {
                          const T* p = &probs[((b * H + h) * Lq + i) * Lk];
                          const T* doi = &dO[(b * Lq + i) * D + h * dh];
                          T dot{};
                          for (std::size_t j = 0; j < Lk; ++j) {
                            if (p[j] == T{}) {
                              dp[j] = T{};
                              continue;
                            }
                            const T* vj = &V.data[(b * Lk + j) * D + h * dh];
                            T s{};
                            for (std::size_t c = 0; c < dh; ++c) s += doi[c] * vj[c];
                            dp[j] = s;
                            dot += s * p[j];
                            if (gv) {
                              T* dvj = &(*dV)[(b * Lk + j) * D + h * dh];
                              for (std::size_t c = 0; c < dh; ++c) dvj[c] += p[j] * doi[c];
                            }
                          }
                          const T* qi = &Q.data[(b * Lq + i) * D + h * dh];
                          T* dqi = gq ? &(*dQ)[(b * Lq + i) * D + h * dh] : nullptr;
                          for (std::size_t j = 0; j < Lk; ++j) {
                            if (p[j] == T{}) continue;
                            const T ds = p[j] * (dp[j] - dot) * inv_sqrt;
                            const T* kj = &K.data[(b * Lk + j) * D + h * dh];
                            if (gq) {
                              for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
                            }
                            if (gk) {
                              T* dkj = &(*dK)[(b * Lk + j) * D + h * dh];
                              for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
                            }
                          }
                        }
                      }
                    }
                  });
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& logits) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  Tensor<T> out(logits.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = &logits.data[r * cols];
    const T mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(static_cast<double>(in[c] - mx));
    const T lse = mx + static_cast<T>(std::log(total));
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] = in[c] - lse;
  }
  return out;
}

#define TATRANS_INSTANTIATE_OPS(T)                                                          \
  template Var matmul(Graph<T>&, Var, Var, Transpose);                                      \
  template Var add(Graph<T>&, Var, Var);                                                    \
  template Var add_bias(Graph<T>&, Var, Var);                                               \
  template Var mul(Graph<T>&, Var, Var);                                                    \
  template Var scale(Graph<T>&, Var, double);                                               \
  template Var relu(Graph<T>&, Var);                                                        \
  template Var softmax(Graph<T>&, Var);                                                     \
  template Var layer_norm(Graph<T>&, Var, Var, Var, double);                                \
  template Var embedding(Graph<T>&, Var, std::span<const int>);                             \
  template Var cross_entropy(Graph<T>&, Var, std::span<const int>, int);                    \
  template Var sum(Graph<T>&, Var);                                                         \
  template Var dropout(Graph<T>&, Var, double, Rng&);                                       \
  template Var attention(Graph<T>&, Var, Var, Var, const AttentionLayout&);                 \
  template Tensor<T> log_softmax_rows(const Tensor<T>&);

TATRANS_INSTANTIATE_OPS(float)
TATRANS_INSTANTIATE_OPS(double)

}  // namespace tatrans::nn
