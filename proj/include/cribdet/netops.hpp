// netops.hpp : layer primitives (conv via strip im2col + gemm, batch norm,
// squeeze-and-excitation, softmax) with analytic backward passes.
// Templated on the scalar type so tests can run the same math in double.
#pragma once

#include <cblas.h>

#include <cmath>
#include <type_traits>
#include <cstring>
#include <vector>

#include "cribdet/tensor.hpp"

namespace cribdet::netops {

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m,
                n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m,
                n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

struct PlaneShape {
    int h = 0;
    int w = 0;
    int c = 0;
    std::size_t pixels() const { return static_cast<std::size_t>(h) * w; }
    std::size_t count() const { return pixels() * c; }
};

inline int conv_out_dim(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

template <typename Real>
struct Workspace {
    std::vector<Real> col;
    std::vector<Real> dcol;
};

// Rows [r0, r1) of the output lattice gathered into a (rows*Wo) x (k*k*Cin)
// matrix, channel-last taps. Out-of-frame taps are zero.
template <typename Real>
void im2col_strip(const Real* x, PlaneShape in, int k, int stride, int pad, int wo, int r0, int r1,
                  Real* col) {
    const int taps = k * k;
    const std::size_t row_len = static_cast<std::size_t>(taps) * in.c;
    for (int r = r0; r < r1; ++r) {
        for (int c = 0; c < wo; ++c) {
            Real* dst = col + (static_cast<std::size_t>(r - r0) * wo + c) * row_len;
            for (int ky = 0; ky < k; ++ky) {
                const int sy = r * stride - pad + ky;
                for (int kx = 0; kx < k; ++kx) {
                    const int sx = c * stride - pad + kx;
                    Real* out = dst + (static_cast<std::size_t>(ky) * k + kx) * in.c;
                    if (sy < 0 || sy >= in.h || sx < 0 || sx >= in.w) {
                        std::fill(out, out + in.c, Real(0));
                    } else {
                        const Real* src = x + (static_cast<std::size_t>(sy) * in.w + sx) * in.c;
                        std::copy(src, src + in.c, out);
                    }
                }
            }
        }
    }
}

template <typename Real>
void col2im_add_strip(const Real* col, PlaneShape in, int k, int stride, int pad, int wo, int r0, int r1,
                      Real* dx) {
    const int taps = k * k;
    const std::size_t row_len = static_cast<std::size_t>(taps) * in.c;
    for (int r = r0; r < r1; ++r) {
        for (int c = 0; c < wo; ++c) {
            const Real* src = col + (static_cast<std::size_t>(r - r0) * wo + c) * row_len;
            for (int ky = 0; ky < k; ++ky) {
                const int sy = r * stride - pad + ky;
                if (sy < 0 || sy >= in.h) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int sx = c * stride - pad + kx;
                    if (sx < 0 || sx >= in.w) continue;
                    Real* out = dx + (static_cast<std::size_t>(sy) * in.w + sx) * in.c;
                    const Real* taps_src = src + (static_cast<std::size_t>(ky) * k + kx) * in.c;
                    for (int ch = 0; ch < in.c; ++ch) out[ch] += taps_src[ch];
                }
            }
        }
    }
}

inline int strip_rows_for(int wo, int row_len) {
    // Keep the im2col buffer around 16 MB of floats.
    const std::size_t budget = 4u << 20;
    std::size_t rows = budget / (static_cast<std::size_t>(wo) * row_len);
    if (rows == 0) rows = 1;
    return static_cast<int>(rows);
}

// Single-plane convolution. w is (k*k*Cin) x Cout row-major; bias optional.
template <typename Real>
void conv2d_forward(const Real* x, PlaneShape in, const Tensor<Real>& w,
                    const Tensor<std::type_identity_t<Real>>* bias, int k,
                    int stride, int pad, Real* y, PlaneShape out, Workspace<Real>& ws) {
    const int row_len = k * k * in.c;
    const int strip = strip_rows_for(out.w, row_len);
    ws.col.resize(static_cast<std::size_t>(strip) * out.w * row_len);
    for (int r0 = 0; r0 < out.h; r0 += strip) {
        const int r1 = std::min(out.h, r0 + strip);
        im2col_strip(x, in, k, stride, pad, out.w, r0, r1, ws.col.data());
        const int m = (r1 - r0) * out.w;
        gemm(false, false, m, out.c, row_len, Real(1), ws.col.data(), row_len, w.ptr(), out.c, Real(0),
             y + static_cast<std::size_t>(r0) * out.w * out.c, out.c);
    }
    if (bias) {
        const std::size_t n = out.pixels();
        for (std::size_t i = 0; i < n; ++i)
            for (int ch = 0; ch < out.c; ++ch) y[i * out.c + ch] += bias->data[static_cast<std::size_t>(ch)];
    }
}

// dw/dbias accumulate (+=); dx may be null when input gradients are not needed.
template <typename Real>
void conv2d_backward(const Real* x, PlaneShape in, const Tensor<Real>& w, int k, int stride, int pad,
                     const Real* dy, PlaneShape out, Real* dx, Tensor<Real>& dw,
                     Tensor<std::type_identity_t<Real>>* dbias, Workspace<Real>& ws) {
    const int row_len = k * k * in.c;
    const int strip = strip_rows_for(out.w, row_len);
    ws.col.resize(static_cast<std::size_t>(strip) * out.w * row_len);
    if (dx) ws.dcol.resize(ws.col.size());
    for (int r0 = 0; r0 < out.h; r0 += strip) {
        const int r1 = std::min(out.h, r0 + strip);
        const int m = (r1 - r0) * out.w;
        const Real* dy_strip = dy + static_cast<std::size_t>(r0) * out.w * out.c;
        im2col_strip(x, in, k, stride, pad, out.w, r0, r1, ws.col.data());
        // dW += col^T * dY
        gemm(true, false, row_len, out.c, m, Real(1), ws.col.data(), row_len, dy_strip, out.c, Real(1),
             dw.ptr(), out.c);
        if (dx) {
            // dCol = dY * W^T, then scatter-add back onto the input plane.
            gemm(false, true, m, row_len, out.c, Real(1), dy_strip, out.c, w.ptr(), out.c, Real(0),
                 ws.dcol.data(), row_len);
            col2im_add_strip(ws.dcol.data(), in, k, stride, pad, out.w, r0, r1, dx);
        }
    }
    if (dbias) {
        const std::size_t n = out.pixels();
        for (std::size_t i = 0; i < n; ++i)
            for (int ch = 0; ch < out.c; ++ch) dbias->data[static_cast<std::size_t>(ch)] += dy[i * out.c + ch];
    }
}

enum class Mode { Train, Eval };

template <typename Real>
struct BnParams {
    Tensor<Real> gamma, beta, running_mean, running_var;

    explicit BnParams(int c = 0)
        : gamma({c}, Real(1)), beta({c}, Real(0)), running_mean({c}, Real(0)), running_var({c}, Real(1)) {}
};

template <typename Real>
struct BnCache {
    std::vector<Real> mean, invstd;
};

inline constexpr double kBnEpsilon = 1e-3;
inline constexpr double kBnMomentum = 0.99;

// x viewed as n x c (n = P*H*W). Train mode normalizes with batch statistics
// and reports them through batch_mean/batch_var so the owner can maintain the
// running estimates; Eval mode uses the stored running statistics.
template <typename Real>
void bn_forward_stats(const Real* x, std::size_t n, int c, const BnParams<Real>& p, Mode mode,
                      BnCache<Real>* cache, std::vector<Real>* batch_mean, std::vector<Real>* batch_var,
                      Real* y) {
    std::vector<Real> mean(static_cast<std::size_t>(c)), invstd(static_cast<std::size_t>(c));
    if (mode == Mode::Train) {
        std::vector<double> sum(static_cast<std::size_t>(c), 0.0), sq(static_cast<std::size_t>(c), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const Real* row = x + i * c;
            for (int ch = 0; ch < c; ++ch) {
                sum[static_cast<std::size_t>(ch)] += row[ch];
                sq[static_cast<std::size_t>(ch)] += static_cast<double>(row[ch]) * row[ch];
            }
        }
        if (batch_mean) batch_mean->resize(static_cast<std::size_t>(c));
        if (batch_var) batch_var->resize(static_cast<std::size_t>(c));
        for (int ch = 0; ch < c; ++ch) {
            const auto s = static_cast<std::size_t>(ch);
            const double m = sum[s] / static_cast<double>(n);
            const double v = std::max(0.0, sq[s] / static_cast<double>(n) - m * m);
            mean[s] = static_cast<Real>(m);
            invstd[s] = static_cast<Real>(1.0 / std::sqrt(v + kBnEpsilon));
            if (batch_mean) (*batch_mean)[s] = static_cast<Real>(m);
            if (batch_var) (*batch_var)[s] = static_cast<Real>(v);
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            const auto s = static_cast<std::size_t>(ch);
            mean[s] = p.running_mean.data[s];
            invstd[s] =
                static_cast<Real>(1.0 / std::sqrt(static_cast<double>(p.running_var.data[s]) + kBnEpsilon));
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const Real* xi = x + i * c;
        Real* yi = y + i * c;
        for (int ch = 0; ch < c; ++ch) {
            const auto s = static_cast<std::size_t>(ch);
            yi[ch] = p.gamma.data[s] * (xi[ch] - mean[s]) * invstd[s] + p.beta.data[s];
        }
    }
    if (cache) {
        cache->mean = std::move(mean);
        cache->invstd = std::move(invstd);
    }
}

template <typename Real>
void bn_backward(const Real* x, std::size_t n, int c, const BnParams<Real>& p, const BnCache<Real>& cache,
                 const Real* dy, Real* dx, Tensor<Real>& dgamma, Tensor<Real>& dbeta) {
    std::vector<double> sum_dy(static_cast<std::size_t>(c), 0.0),
        sum_dy_xhat(static_cast<std::size_t>(c), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const Real* xi = x + i * c;
        const Real* di = dy + i * c;
        for (int ch = 0; ch < c; ++ch) {
            const auto s = static_cast<std::size_t>(ch);
            const double xhat = (xi[ch] - cache.mean[s]) * cache.invstd[s];
            sum_dy[s] += di[ch];
            sum_dy_xhat[s] += di[ch] * xhat;
        }
    }
    for (int ch = 0; ch < c; ++ch) {
        const auto s = static_cast<std::size_t>(ch);
        dgamma.data[s] += static_cast<Real>(sum_dy_xhat[s]);
        dbeta.data[s] += static_cast<Real>(sum_dy[s]);
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Real* xi = x + i * c;
        const Real* di = dy + i * c;
        Real* oi = dx + i * c;
        for (int ch = 0; ch < c; ++ch) {
            const auto s = static_cast<std::size_t>(ch);
            const double xhat = (xi[ch] - cache.mean[s]) * cache.invstd[s];
            const double t = di[ch] - inv_n * (sum_dy[s] + xhat * sum_dy_xhat[s]);
            oi[ch] = static_cast<Real>(p.gamma.data[s] * cache.invstd[s] * t);
        }
    }
}

template <typename Real>
void relu_forward(const Real* x, std::size_t n, Real* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > Real(0) ? x[i] : Real(0);
}

// Mask from the cached pre-activation values.
template <typename Real>
void relu_backward(const Real* pre, std::size_t n, const Real* dy, Real* dx) {
    for (std::size_t i = 0; i < n; ++i) dx[i] = pre[i] > Real(0) ? dy[i] : Real(0);
}

template <typename Real>
struct SeParams {
    Tensor<Real> w1, b1, w2, b2;  // w1: C x C/r, w2: C/r x C

    SeParams() = default;
    SeParams(int c, int r) : w1({c, c / r}), b1({c / r}), w2({c / r, c}), b2({c}) {}
};

template <typename Real>
struct SeCache {
    std::vector<Real> z, u, a, s;  // squeeze, hidden pre/post ReLU, excitation
};

// Per-plane squeeze-and-excitation: channel means -> two FC layers -> sigmoid
// gate scaling each channel. `identity_excitation` is a test hook that forces
// the gate to 1 so the block acts as the identity.
template <typename Real>
void se_forward(const Real* x, PlaneShape in, const SeParams<Real>& p, SeCache<Real>* cache, Real* y,
                bool identity_excitation = false) {
    const int c = in.c;
    const int cr = p.b1.dim(0);
    const std::size_t n = in.pixels();
    std::vector<Real> z(static_cast<std::size_t>(c), Real(0));
    for (std::size_t i = 0; i < n; ++i) {
        const Real* xi = x + i * c;
        for (int ch = 0; ch < c; ++ch) z[static_cast<std::size_t>(ch)] += xi[ch];
    }
    const Real inv_n = Real(1) / static_cast<Real>(n);
    for (auto& v : z) v *= inv_n;

    std::vector<Real> u(static_cast<std::size_t>(cr)), a(static_cast<std::size_t>(cr)),
        s(static_cast<std::size_t>(c));
    for (int j = 0; j < cr; ++j) {
        Real acc = p.b1.data[static_cast<std::size_t>(j)];
        for (int ch = 0; ch < c; ++ch) acc += p.w1.data[static_cast<std::size_t>(ch) * cr + j] * z[static_cast<std::size_t>(ch)];
        u[static_cast<std::size_t>(j)] = acc;
        a[static_cast<std::size_t>(j)] = acc > Real(0) ? acc : Real(0);
    }
    for (int ch = 0; ch < c; ++ch) {
        Real acc = p.b2.data[static_cast<std::size_t>(ch)];
        for (int j = 0; j < cr; ++j) acc += p.w2.data[static_cast<std::size_t>(j) * c + ch] * a[static_cast<std::size_t>(j)];
        s[static_cast<std::size_t>(ch)] = identity_excitation ? Real(1) : Real(1) / (Real(1) + std::exp(-acc));
    }
    for (std::size_t i = 0; i < n; ++i) {
        const Real* xi = x + i * c;
        Real* yi = y + i * c;
        for (int ch = 0; ch < c; ++ch) yi[ch] = xi[ch] * s[static_cast<std::size_t>(ch)];
    }
    if (cache) {
        cache->z = std::move(z);
        cache->u = std::move(u);
        cache->a = std::move(a);
        cache->s = std::move(s);
    }
}

template <typename Real>
struct SeGrads {
    Tensor<Real>*dw1, *db1, *dw2, *db2;
};

template <typename Real>
void se_backward(const Real* x, PlaneShape in, const SeParams<Real>& p, const SeCache<Real>& cache,
                 const Real* dy, Real* dx, SeGrads<Real> g) {
    const int c = in.c;
    const int cr = p.b1.dim(0);
    const std::size_t n = in.pixels();
    std::vector<Real> ds(static_cast<std::size_t>(c), Real(0));
    for (std::size_t i = 0; i < n; ++i) {
        const Real* xi = x + i * c;
        const Real* di = dy + i * c;
        Real* oi = dx + i * c;
        for (int ch = 0; ch < c; ++ch) {
            ds[static_cast<std::size_t>(ch)] += di[ch] * xi[ch];
            oi[ch] = di[ch] * cache.s[static_cast<std::size_t>(ch)];
        }
    }
    std::vector<Real> dv(static_cast<std::size_t>(c)), da(static_cast<std::size_t>(cr), Real(0)),
        du(static_cast<std::size_t>(cr)), dz(static_cast<std::size_t>(c), Real(0));
    for (int ch = 0; ch < c; ++ch) {
        const auto sc = cache.s[static_cast<std::size_t>(ch)];
        dv[static_cast<std::size_t>(ch)] = ds[static_cast<std::size_t>(ch)] * sc * (Real(1) - sc);
        g.db2->data[static_cast<std::size_t>(ch)] += dv[static_cast<std::size_t>(ch)];
    }
    for (int j = 0; j < cr; ++j)
        for (int ch = 0; ch < c; ++ch) {
            g.dw2->data[static_cast<std::size_t>(j) * c + ch] +=
                cache.a[static_cast<std::size_t>(j)] * dv[static_cast<std::size_t>(ch)];
            da[static_cast<std::size_t>(j)] += p.w2.data[static_cast<std::size_t>(j) * c + ch] * dv[static_cast<std::size_t>(ch)];
        }
    for (int j = 0; j < cr; ++j) {
        du[static_cast<std::size_t>(j)] = cache.u[static_cast<std::size_t>(j)] > Real(0) ? da[static_cast<std::size_t>(j)] : Real(0);
        g.db1->data[static_cast<std::size_t>(j)] += du[static_cast<std::size_t>(j)];
    }
    for (int ch = 0; ch < c; ++ch)
        for (int j = 0; j < cr; ++j) {
            g.dw1->data[static_cast<std::size_t>(ch) * cr + j] +=
                cache.z[static_cast<std::size_t>(ch)] * du[static_cast<std::size_t>(j)];
            dz[static_cast<std::size_t>(ch)] += p.w1.data[static_cast<std::size_t>(ch) * cr + j] * du[static_cast<std::size_t>(j)];
        }
    const Real inv_n = Real(1) / static_cast<Real>(n);
    for (std::size_t i = 0; i < n; ++i) {
        Real* oi = dx + i * c;
        for (int ch = 0; ch < c; ++ch) oi[ch] += dz[static_cast<std::size_t>(ch)] * inv_n;
    }
}

template <typename Real>
void softmax_forward(const Real* logits, std::size_t n, int c, Real* probs) {
    for (std::size_t i = 0; i < n; ++i) {
        const Real* xi = logits + i * c;
        Real* yi = probs + i * c;
        Real mx = xi[0];
        for (int ch = 1; ch < c; ++ch) mx = std::max(mx, xi[ch]);
        Real sum = Real(0);
        for (int ch = 0; ch < c; ++ch) {
            yi[ch] = std::exp(xi[ch] - mx);
            sum += yi[ch];
        }
        const Real inv = Real(1) / sum;
        for (int ch = 0; ch < c; ++ch) yi[ch] *= inv;
    }
}

template <typename Real>
void softmax_backward(const Real* probs, std::size_t n, int c, const Real* dprobs, Real* dlogits) {
    for (std::size_t i = 0; i < n; ++i) {
        const Real* yi = probs + i * c;
        const Real* di = dprobs + i * c;
        Real* oi = dlogits + i * c;
        Real dot = Real(0);
        for (int ch = 0; ch < c; ++ch) dot += yi[ch] * di[ch];
        for (int ch = 0; ch < c; ++ch) oi[ch] = yi[ch] * (di[ch] - dot);
    }
}

}  // namespace cribdet::netops
