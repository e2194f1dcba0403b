#pragma once

// Differentiable kernels. All ops are pure functions of their operands and
// process rows independently, so results do not depend on batch composition.

#include "iorm/tensor.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace iorm {

namespace kernel {

// C[n×m] (+)= A[n×k] · B[k×m]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
    for (std::size_t i = 0; i < n; ++i) {
        T* crow = c + i * m;
        if (!accumulate) std::fill(crow, crow + m, T{0});
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[n×m] = A[n×k] · B[k×m] with each output summed as a balanced tree over k.
// Equal terms then add up exactly when their count is a power of two.
template <typename T>
void gemm_nn_pairwise(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
    std::vector<T> scratch(k * m);
    for (std::size_t i = 0; i < n; ++i) {
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < m; ++j) scratch[p * m + j] = arow[p] * b[p * m + j];
        for (std::size_t stride = 1; stride < k; stride *= 2)
            for (std::size_t p = 0; p + stride < k; p += 2 * stride)
                for (std::size_t j = 0; j < m; ++j) scratch[p * m + j] += scratch[(p + stride) * m + j];
        if (k == 0) std::fill(c + i * m, c + (i + 1) * m, T{0});
        else std::copy_n(scratch.data(), m, c + i * m);
    }
}

// C[n×m] (+)= A[n×k] · B[m×k]ᵀ
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
    std::vector<T> bt(k * m);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * m + j] = b[j * k + p];
    gemm_nn(a, bt.data(), c, n, k, m, accumulate);
}

// C[n×m] (+)= A[k×n]ᵀ · B[k×m]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
    if (!accumulate) std::fill(c, c + n * m, T{0});
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * n;
        const T* brow = b + p * m;
        for (std::size_t i = 0; i < n; ++i) {
            const T av = arow[i];
            T* crow = c + i * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

} // namespace kernel

namespace detail {

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw DimensionError(msg);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    require(a.shape() == b.shape(),
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
std::size_t last_dim(const Tensor<T>& x, const char* op) {
    require(x.rank() >= 1, std::string(op) + ": needs rank >= 1");
    return x.shape().back();
}

template <typename T>
void require_finite(const Tensor<T>& x, const char* op) {
    for (T v : x.data()) {
        if (!std::isfinite(v)) throw NumericInputError(std::string(op) + ": non-finite input");
    }
}

} // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                    "matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    std::vector<T> out(n * m);
    kernel::gemm_nn(a.data().data(), b.data().data(), out.data(), n, k, m, false);
    return detail::make_result<T>({n, m}, std::move(out), "matmul", {&a, &b}, [n, k, m](Node<T>& self) {
        auto& A = *self.parents[0];
        auto& B = *self.parents[1];
        if (A.requires_grad)
            kernel::gemm_nt(self.grad.data(), B.data.data(), A.grad_buffer().data(), n, m, k, true);
        if (B.requires_grad)
            kernel::gemm_tn(A.data.data(), self.grad.data(), B.grad_buffer().data(), k, n, m, true);
    });
}

/// Batched product: a[G,n,k] · b[G,k,m] → [G,n,m].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
                    "bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t g = a.dim(0), n = a.dim(1), k = a.dim(2), m = b.dim(2);
    std::vector<T> out(g * n * m);
    for (std::size_t i = 0; i < g; ++i)
        kernel::gemm_nn_pairwise(a.data().data() + i * n * k, b.data().data() + i * k * m, out.data() + i * n * m, n,
                                 k, m);
    return detail::make_result<T>({g, n, m}, std::move(out), "bmm", {&a, &b}, [g, n, k, m](Node<T>& self) {
        auto& A = *self.parents[0];
        auto& B = *self.parents[1];
        for (std::size_t i = 0; i < g; ++i) {
            const T* gout = self.grad.data() + i * n * m;
            if (A.requires_grad)
                kernel::gemm_nt(gout, B.data.data() + i * k * m, A.grad_buffer().data() + i * n * k, n, m, k, true);
            if (B.requires_grad)
                kernel::gemm_tn(A.data.data() + i * n * k, gout, B.grad_buffer().data() + i * k * m, k, n, m, true);
        }
    });
}

/// Batched product with transposed right operand: a[G,n,k] · b[G,m,k]ᵀ → [G,n,m].
template <typename T>
Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2),
                    "bmm_nt: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t g = a.dim(0), n = a.dim(1), k = a.dim(2), m = b.dim(1);
    std::vector<T> out(g * n * m);
    for (std::size_t i = 0; i < g; ++i)
        kernel::gemm_nt(a.data().data() + i * n * k, b.data().data() + i * m * k, out.data() + i * n * m, n, k, m,
                        false);
    return detail::make_result<T>({g, n, m}, std::move(out), "bmm_nt", {&a, &b}, [g, n, k, m](Node<T>& self) {
        auto& A = *self.parents[0];
        auto& B = *self.parents[1];
        for (std::size_t i = 0; i < g; ++i) {
            const T* gout = self.grad.data() + i * n * m;
            // dA = G · B, dB = Gᵀ · A
            if (A.requires_grad)
                kernel::gemm_nn(gout, B.data.data() + i * m * k, A.grad_buffer().data() + i * n * k, n, m, k, true);
            if (B.requires_grad)
                kernel::gemm_tn(gout, A.data.data() + i * n * k, B.grad_buffer().data() + i * m * k, m, n, k, true);
        }
    });
}

/// y = x·W + b over the last axis; W is [in, out], b is [out] or undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const std::size_t in = detail::last_dim(x, "linear");
    detail::require(w.rank() == 2 && w.dim(0) == in,
                    "linear: input " + shape_str(x.shape()) + " does not fit weight " + shape_str(w.shape()));
    const std::size_t out_dim = w.dim(1);
    if (b.defined())
        detail::require(b.rank() == 1 && b.dim(0) == out_dim, "linear: bias shape " + shape_str(b.shape()));
    const std::size_t rows = x.numel() / in;
    std::vector<T> out(rows * out_dim);
    kernel::gemm_nn(x.data().data(), w.data().data(), out.data(), rows, in, out_dim, false);
    if (b.defined()) {
        const T* bp = b.data().data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += bp[j];
    }
    Shape shape = x.shape();
    shape.back() = out_dim;
    return detail::make_result<T>(std::move(shape), std::move(out), "linear", {&x, &w, &b},
                                  [rows, in, out_dim, has_bias = b.defined()](Node<T>& self) {
                                      // parents are pushed in operand order, skipping undefined ones
                                      auto& X = *self.parents[0];
                                      auto& W = *self.parents[1];
                                      const T* g = self.grad.data();
                                      if (X.requires_grad)
                                          kernel::gemm_nt(g, W.data.data(), X.grad_buffer().data(), rows, out_dim, in,
                                                          true);
                                      if (W.requires_grad)
                                          kernel::gemm_tn(X.data.data(), g, W.grad_buffer().data(), in, rows, out_dim,
                                                          true);
                                      if (has_bias && self.parents[2]->requires_grad) {
                                          auto& gb = self.parents[2]->grad_buffer();
                                          for (std::size_t r = 0; r < rows; ++r)
                                              for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
                                      }
                                  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::make_result<T>(a.shape(), std::move(out), "add", {&a, &b}, [](Node<T>& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return detail::make_result<T>(a.shape(), std::move(out), "sub", {&a, &b}, [](Node<T>& self) {
        const T sign[2] = {T{1}, T{-1}};
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = self.parents[k];
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::make_result<T>(a.shape(), std::move(out), "mul", {&a, &b}, [](Node<T>& self) {
        auto& A = *self.parents[0];
        auto& B = *self.parents[1];
        if (A.requires_grad) {
            auto& g = A.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.data[i];
        }
        if (B.requires_grad) {
            auto& g = B.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.data[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    return detail::make_result<T>(a.shape(), std::move(out), "scale", {&a}, [s](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

/// a·x + b elementwise with constant a, b.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x.data()[i] + b;
    return detail::make_result<T>(x.shape(), std::move(out), "affine", {&x}, [a](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a;
    });
}

/// Multiplies every element of sample b (leading axis) by factors[b].
template <typename T>
Tensor<T> scale_per_sample(const Tensor<T>& x, std::vector<T> factors) {
    detail::require(x.rank() >= 1 && factors.size() == x.dim(0), "scale_per_sample: factor count mismatch");
    const std::size_t per = x.numel() / x.dim(0);
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factors[i / per];
    return detail::make_result<T>(x.shape(), std::move(out), "scale_per_sample", {&x},
                                  [per, f = std::move(factors)](Node<T>& self) {
                                      auto& g = self.parents[0]->grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * f[i / per];
                                  });
}

/// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    const T inv_sqrt2 = T{1} / std::sqrt(T{2});
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x.data()[i];
        out[i] = T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2));
    }
    return detail::make_result<T>(x.shape(), std::move(out), "gelu", {&x}, [inv_sqrt2](Node<T>& self) {
        auto& X = *self.parents[0];
        auto& g = X.grad_buffer();
        const T inv_sqrt_2pi = T{1} / std::sqrt(T{2} * std::numbers::pi_v<T>);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = X.data[i];
            const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
            const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * v * v);
            g[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

/// Normalizes over the last axis, then applies gamma/beta of that width.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T{1e-5}) {
    const std::size_t c = detail::last_dim(x, "layernorm");
    detail::require(gamma.numel() == c && beta.numel() == c, "layernorm: affine width mismatch");
    const std::size_t rows = x.numel() / c;
    std::vector<T> out(x.numel());
    std::vector<T> xhat(x.numel());
    std::vector<T> inv_std(rows);
    const T* xp = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xp + r * c;
        T mean = 0;
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<T>(c);
        T var = 0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<T>(c);
        const T is = T{1} / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < c; ++j) {
            const T h = (row[j] - mean) * is;
            xhat[r * c + j] = h;
            out[r * c + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    return detail::make_result<T>(
        x.shape(), std::move(out), "layernorm", {&x, &gamma, &beta},
        [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            auto& X = *self.parents[0];
            auto& G = *self.parents[1];
            auto& B = *self.parents[2];
            const T* g = self.grad.data();
            if (G.requires_grad) {
                auto& gg = G.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * xhat[r * c + j];
            }
            if (B.requires_grad) {
                auto& gb = B.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
            }
            if (X.requires_grad) {
                auto& gx = X.grad_buffer();
                const T inv_c = T{1} / static_cast<T>(c);
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_d = 0, mean_dx = 0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const T d = g[r * c + j] * G.data[j];
                        mean_d += d;
                        mean_dx += d * xhat[r * c + j];
                    }
                    mean_d *= inv_c;
                    mean_dx *= inv_c;
                    for (std::size_t j = 0; j < c; ++j) {
                        const T d = g[r * c + j] * G.data[j];
                        gx[r * c + j] += inv_std[r] * (d - mean_d - xhat[r * c + j] * mean_dx);
                    }
                }
            }
        });
}

/// Softmax over the last axis with max subtraction.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    const std::size_t k = detail::last_dim(x, "softmax");
    if (k == 0) throw DimensionError("softmax: empty key axis");
    detail::require_finite(x, "softmax");
    const std::size_t rows = x.numel() / k;
    std::vector<T> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = x.data().data() + r * k;
        T* o = out.data() + r * k;
        const T mx = *std::max_element(row, row + k);
        T sum = 0;
        for (std::size_t j = 0; j < k; ++j) {
            o[j] = std::exp(row[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < k; ++j) o[j] /= sum;
    }
    return detail::make_result<T>(x.shape(), std::move(out), "softmax", {&x}, [rows, k](Node<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = self.data.data() + r * k;
            const T* g = self.grad.data() + r * k;
            T dot = 0;
            for (std::size_t j = 0; j < k; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += y[j] * (g[j] - dot);
        }
    });
}

/// Row-wise softmax of an n×k matrix.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& m) {
    detail::require(m.rank() == 2, "softmax_rows: expected a matrix, got " + shape_str(m.shape()));
    return softmax_lastdim(m);
}

/// x / max(‖x‖, eps) along the last axis.
template <typename T>
Tensor<T> l2_normalize_lastdim(const Tensor<T>& x, T eps = T{1e-6}) {
    const std::size_t d = detail::last_dim(x, "l2_normalize");
    const std::size_t rows = d ? x.numel() / d : 0;
    std::vector<T> out(x.numel());
    std::vector<T> denom(rows);
    std::vector<char> clamped(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = x.data().data() + r * d;
        T ss = 0;
        for (std::size_t j = 0; j < d; ++j) ss += row[j] * row[j];
        const T norm = std::sqrt(ss);
        clamped[r] = norm <= eps;
        denom[r] = clamped[r] ? eps : norm;
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = row[j] / denom[r];
    }
    return detail::make_result<T>(
        x.shape(), std::move(out), "l2_normalize", {&x},
        [rows, d, denom = std::move(denom), clamped = std::move(clamped)](Node<T>& self) {
            auto& gx = self.parents[0]->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.data.data() + r * d;
                const T* g = self.grad.data() + r * d;
                if (clamped[r]) {
                    for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g[j] / denom[r];
                    continue;
                }
                T dot = 0;
                for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += (g[j] - y[j] * dot) / denom[r];
            }
        });
}

/// Pairwise cosine similarities of rows: a[n×d], b[m×d] → [n×m].
template <typename T>
Tensor<T> cosine_similarity_matrix(const Tensor<T>& a, const Tensor<T>& b, T eps = T{1e-6}) {
    detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1) && a.dim(1) >= 1,
                    "cosine_similarity_matrix: incompatible shapes " + shape_str(a.shape()) + " and " +
                        shape_str(b.shape()));
    const Tensor<T> na = l2_normalize_lastdim(a, eps);
    const Tensor<T> nb = l2_normalize_lastdim(b, eps);
    Tensor<T> out = bmm_nt(reshape(na, {1, a.dim(0), a.dim(1)}), reshape(nb, {1, b.dim(0), b.dim(1)}));
    return reshape(out, {a.dim(0), b.dim(0)});
}

/// Batched cosine similarities: a[G,n,d], b[G,m,d] → [G,n,m].
template <typename T>
Tensor<T> cosine_bmm(const Tensor<T>& a, const Tensor<T>& b, T eps = T{1e-6}) {
    return bmm_nt(l2_normalize_lastdim(a, eps), l2_normalize_lastdim(b, eps));
}

/// Divides group g of logits[G,n,m] by tau[g % heads].
template <typename T>
Tensor<T> scale_by_temperature(const Tensor<T>& logits, const Tensor<T>& tau) {
    detail::require(logits.rank() == 3 && tau.rank() == 1 && logits.dim(0) % tau.dim(0) == 0,
                    "scale_by_temperature: logits " + shape_str(logits.shape()) + " vs tau " +
                        shape_str(tau.shape()));
    const std::size_t heads = tau.dim(0);
    const std::size_t per = logits.dim(1) * logits.dim(2);
    std::vector<T> out(logits.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits.data()[i] / tau.data()[(i / per) % heads];
    return detail::make_result<T>(logits.shape(), std::move(out), "scale_by_temperature", {&logits, &tau},
                                  [heads, per](Node<T>& self) {
                                      auto& L = *self.parents[0];
                                      auto& Tau = *self.parents[1];
                                      const std::size_t n = self.grad.size();
                                      if (L.requires_grad) {
                                          auto& g = L.grad_buffer();
                                          for (std::size_t i = 0; i < n; ++i)
                                              g[i] += self.grad[i] / Tau.data[(i / per) % heads];
                                      }
                                      if (Tau.requires_grad) {
                                          auto& g = Tau.grad_buffer();
                                          for (std::size_t i = 0; i < n; ++i) {
                                              const std::size_t h = (i / per) % heads;
                                              g[h] -= self.grad[i] * self.data[i] / Tau.data[h];
                                          }
                                      }
                                  });
}

/// logits[G,n,n] + table[index[i·n+j], h] (+ mask[w,i,j]) where groups are laid
/// out as [batch, windows, heads]. `mask` is empty or windows·n·n long.
template <typename T>
Tensor<T> add_relative_bias(const Tensor<T>& logits, const Tensor<T>& table, std::vector<std::size_t> index,
                            std::size_t windows, std::vector<T> mask) {
    detail::require(logits.rank() == 3 && table.rank() == 2, "add_relative_bias: bad ranks");
    const std::size_t heads = table.dim(1);
    const std::size_t nn = logits.dim(1) * logits.dim(2);
    detail::require(index.size() == nn, "add_relative_bias: index size mismatch");
    detail::require(logits.dim(0) % (heads * windows) == 0, "add_relative_bias: group count mismatch");
    detail::require(mask.empty() || mask.size() == windows * nn, "add_relative_bias: mask size mismatch");
    std::vector<T> out(logits.numel());
    const T* tp = table.data().data();
    for (std::size_t g = 0; g < logits.dim(0); ++g) {
        const std::size_t h = g % heads;
        const std::size_t w = (g / heads) % windows;
        const T* l = logits.data().data() + g * nn;
        T* o = out.data() + g * nn;
        for (std::size_t e = 0; e < nn; ++e) {
            o[e] = l[e] + tp[index[e] * heads + h];
            if (!mask.empty()) o[e] += mask[w * nn + e];
        }
    }
    return detail::make_result<T>(logits.shape(), std::move(out), "add_relative_bias", {&logits, &table},
                                  [heads, nn, index = std::move(index)](Node<T>& self) {
                                      auto& L = *self.parents[0];
                                      auto& Tb = *self.parents[1];
                                      if (L.requires_grad) {
                                          auto& g = L.grad_buffer();
                                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                      }
                                      if (Tb.requires_grad) {
                                          auto& gt = Tb.grad_buffer();
                                          const std::size_t groups = self.grad.size() / nn;
                                          for (std::size_t g = 0; g < groups; ++g) {
                                              const std::size_t h = g % heads;
                                              for (std::size_t e = 0; e < nn; ++e)
                                                  gt[index[e] * heads + h] += self.grad[g * nn + e];
                                          }
                                      }
                                  });
}

/// out[i] = x[index[i]]; the backward pass scatter-adds.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::vector<std::size_t> index, Shape out_shape, const char* op = "gather") {
    detail::require(numel_of(out_shape) == index.size(), "gather: index count does not match output shape");
    std::vector<T> out(index.size());
    const T* xp = x.data().data();
    for (std::size_t i = 0; i < index.size(); ++i) out[i] = xp[index[i]];
    return detail::make_result<T>(std::move(out_shape), std::move(out), op, {&x},
                                  [index = std::move(index)](Node<T>& self) {
                                      auto& g = self.parents[0]->grad_buffer();
                                      for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
                                  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    detail::require(numel_of(shape) == x.numel(),
                    "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    return detail::make_result<T>(std::move(shape), x.values(), "reshape", {&x}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

/// Mean over the middle axis: x[B,N,C] → [B,C].
template <typename T>
Tensor<T> mean_tokens(const Tensor<T>& x) {
    detail::require(x.rank() == 3 && x.dim(1) > 0, "mean_tokens: expected [B,N,C], got " + shape_str(x.shape()));
    const std::size_t b = x.dim(0), n = x.dim(1), c = x.dim(2);
    std::vector<T> out(b * c, T{0});
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t j = 0; j < c; ++j) out[i * c + j] += x.data()[(i * n + t) * c + j];
    const T inv = T{1} / static_cast<T>(n);
    for (auto& v : out) v *= inv;
    return detail::make_result<T>({b, c}, std::move(out), "mean_tokens", {&x}, [b, n, c, inv](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t t = 0; t < n; ++t)
                for (std::size_t j = 0; j < c; ++j) g[(i * n + t) * c + j] += self.grad[i * c + j] * inv;
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = 0;
    for (T v : x.data()) s += v;
    return detail::make_result<T>(Shape{}, {s}, "sum", {&x}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

/// Mean over rows of −Σ_k target_k · log softmax(logits)_k. Targets are constants.
template <typename T>
Tensor<T> soft_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets) {
    detail::require(logits.rank() == 2 && logits.shape() == targets.shape(),
                    "soft_cross_entropy: logits " + shape_str(logits.shape()) + " vs targets " +
                        shape_str(targets.shape()));
    const std::size_t b = logits.dim(0), k = logits.dim(1);
    std::vector<T> prob(b * k);
    T loss = 0;
    for (std::size_t i = 0; i < b; ++i) {
        const T* z = logits.data().data() + i * k;
        const T mx = *std::max_element(z, z + k);
        T s = 0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - mx);
        const T lse = mx + std::log(s);
        for (std::size_t j = 0; j < k; ++j) {
            prob[i * k + j] = std::exp(z[j] - lse);
            loss -= targets.data()[i * k + j] * (z[j] - lse);
        }
    }
    loss /= static_cast<T>(b);
    std::vector<T> tgt(targets.values());
    return detail::make_result<T>(Shape{}, {loss}, "soft_cross_entropy", {&logits},
                                  [b, k, prob = std::move(prob), tgt = std::move(tgt)](Node<T>& self) {
                                      auto& g = self.parents[0]->grad_buffer();
                                      const T scale = self.grad[0] / static_cast<T>(b);
                                      for (std::size_t i = 0; i < b; ++i) {
                                          T tsum = 0;
                                          for (std::size_t j = 0; j < k; ++j) tsum += tgt[i * k + j];
                                          for (std::size_t j = 0; j < k; ++j)
                                              g[i * k + j] += scale * (prob[i * k + j] * tsum - tgt[i * k + j]);
                                      }
                                  });
}

// --- index maps for pure data movement -------------------------------------

/// Toroidal roll of x[B,H,W,C]: out[y][x] = in[(y−dy) mod H][(x−dx) mod W].
inline std::vector<std::size_t> cyclic_shift_index(std::size_t b, std::size_t h, std::size_t w, std::size_t c,
                                                   long dy, long dx) {
    std::vector<std::size_t> idx(b * h * w * c);
    const long H = static_cast<long>(h), W = static_cast<long>(w);
    std::size_t o = 0;
    for (std::size_t n = 0; n < b; ++n)
        for (long y = 0; y < H; ++y) {
            const long sy = (((y - dy) % H) + H) % H;
            for (long x = 0; x < W; ++x) {
                const long sx = (((x - dx) % W) + W) % W;
                const std::size_t base = ((n * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)) * c;
                for (std::size_t ch = 0; ch < c; ++ch) idx[o++] = base + ch;
            }
        }
    return idx;
}

template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, long dy, long dx) {
    const bool batched = x.rank() == 4;
    detail::require(x.rank() == 3 || batched, "cyclic_shift: expected [H,W,C] or [B,H,W,C], got " + shape_str(x.shape()));
    const std::size_t o = batched ? 1 : 0;
    const std::size_t b = batched ? x.dim(0) : 1;
    return gather(x, cyclic_shift_index(b, x.dim(o), x.dim(o + 1), x.dim(o + 2), dy, dx), x.shape(), "cyclic_shift");
}

/// [B,H,W,C] → [B·nW, w·w, C], windows and in-window tokens row-major.
inline std::vector<std::size_t> window_partition_index(std::size_t b, std::size_t h, std::size_t w, std::size_t c,
                                                       std::size_t win) {
    std::vector<std::size_t> idx;
    idx.reserve(b * h * w * c);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t wy = 0; wy < h / win; ++wy)
            for (std::size_t wx = 0; wx < w / win; ++wx)
                for (std::size_t ty = 0; ty < win; ++ty)
                    for (std::size_t tx = 0; tx < win; ++tx) {
                        const std::size_t base = ((n * h + wy * win + ty) * w + wx * win + tx) * c;
                        for (std::size_t ch = 0; ch < c; ++ch) idx.push_back(base + ch);
                    }
    return idx;
}

inline std::vector<std::size_t> invert_permutation(const std::vector<std::size_t>& p) {
    std::vector<std::size_t> inv(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) inv[p[i]] = i;
    return inv;
}

template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, std::size_t win) {
    detail::require(x.rank() == 4, "window_partition: expected [B,H,W,C], got " + shape_str(x.shape()));
    const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (win == 0 || h % win || w % win)
        throw ConfigError("window size " + std::to_string(win) + " does not divide grid " + std::to_string(h) + "x" +
                          std::to_string(w));
    return gather(x, window_partition_index(b, h, w, c, win), {b * (h / win) * (w / win), win * win, c},
                  "window_partition");
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, std::size_t win, std::size_t b, std::size_t h, std::size_t w) {
    detail::require(windows.rank() == 3 && windows.dim(1) == win * win, "window_reverse: bad window tensor");
    const std::size_t c = windows.dim(2);
    detail::require(windows.numel() == b * h * w * c, "window_reverse: extent mismatch");
    return gather(windows, invert_permutation(window_partition_index(b, h, w, c, win)), {b, h, w, c},
                  "window_reverse");
}

/// [G,n,heads·d] → [G·heads, n, d].
inline std::vector<std::size_t> split_heads_index(std::size_t g, std::size_t n, std::size_t heads, std::size_t d) {
    std::vector<std::size_t> idx;
    idx.reserve(g * n * heads * d);
    for (std::size_t i = 0; i < g; ++i)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t t = 0; t < n; ++t)
                for (std::size_t j = 0; j < d; ++j) idx.push_back((i * n + t) * heads * d + h * d + j);
    return idx;
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
    const std::size_t g = x.dim(0), n = x.dim(1), c = x.dim(2);
    detail::require(c % heads == 0, "split_heads: width " + std::to_string(c) + " not divisible by heads");
    return gather(x, split_heads_index(g, n, heads, c / heads), {g * heads, n, c / heads}, "split_heads");
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads) {
    const std::size_t g = x.dim(0) / heads, n = x.dim(1), d = x.dim(2);
    return gather(x, invert_permutation(split_heads_index(g, n, heads, d)), {g, n, heads * d}, "merge_heads");
}

} // namespace iorm
