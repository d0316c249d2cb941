#pragma once

// Minimal NCHW kernels (forward + hand-written backward) used by the denoiser.
// Eigen supplies the GEMMs; everything else is explicit loops. All kernels are
// pure functions of their inputs, single-threaded, and deterministic.

#define EIGEN_DONT_PARALLELIZE 1
#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <vector>

namespace gf::nn {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapRM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapRM = Eigen::Map<const MatRM<T>>;

struct ConvDims {
    int cin = 0, hin = 0, win = 0;
    int cout = 0, k = 3, stride = 1, pad = 1;
    int hout() const { return (hin + 2 * pad - k) / stride + 1; }
    int wout() const { return (win + 2 * pad - k) / stride + 1; }
    int patch() const { return cin * k * k; }
    std::size_t out_size() const { return static_cast<std::size_t>(cout) * hout() * wout(); }
    std::size_t in_size() const { return static_cast<std::size_t>(cin) * hin * win; }
    std::size_t weight_size() const { return static_cast<std::size_t>(cout) * patch(); }
};

template <class T>
void im2col(const T* x, const ConvDims& d, T* cols) {
    const int ho = d.hout(), wo = d.wout(), P = ho * wo;
    for (int c = 0; c < d.cin; ++c) {
        const T* xc = x + static_cast<std::size_t>(c) * d.hin * d.win;
        for (int ky = 0; ky < d.k; ++ky) {
            for (int kx = 0; kx < d.k; ++kx) {
                T* row = cols + (static_cast<std::size_t>(c) * d.k * d.k + ky * d.k + kx) * P;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * d.stride - d.pad + ky;
                    T* out = row + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= d.hin) {
                        for (int ox = 0; ox < wo; ++ox) out[ox] = T(0);
                        continue;
                    }
                    const T* xr = xc + static_cast<std::size_t>(iy) * d.win;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * d.stride - d.pad + kx;
                        out[ox] = (ix >= 0 && ix < d.win) ? xr[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const T* cols, const ConvDims& d, T* dx) {
    const int ho = d.hout(), wo = d.wout(), P = ho * wo;
    for (int c = 0; c < d.cin; ++c) {
        T* xc = dx + static_cast<std::size_t>(c) * d.hin * d.win;
        for (int ky = 0; ky < d.k; ++ky) {
            for (int kx = 0; kx < d.k; ++kx) {
                const T* row = cols + (static_cast<std::size_t>(c) * d.k * d.k + ky * d.k + kx) * P;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * d.stride - d.pad + ky;
                    if (iy < 0 || iy >= d.hin) continue;
                    T* xr = xc + static_cast<std::size_t>(iy) * d.win;
                    const T* in = row + static_cast<std::size_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * d.stride - d.pad + kx;
                        if (ix >= 0 && ix < d.win) xr[ix] += in[ox];
                    }
                }
            }
        }
    }
}

template <class T>
void conv2d_forward(const T* x, const T* w, const T* b, const ConvDims& d, T* y, std::vector<T>& scratch) {
    const int P = d.hout() * d.wout();
    const int K = d.patch();
    scratch.resize(static_cast<std::size_t>(K) * P);
    im2col(x, d, scratch.data());
    CMapRM<T> W(w, d.cout, K);
    CMapRM<T> C(scratch.data(), K, P);
    MapRM<T> Y(y, d.cout, P);
    Y.noalias() = W * C;
    if (b)
        for (int c = 0; c < d.cout; ++c) Y.row(c).array() += b[c];
}

/// dw/db accumulate; dx (optional) is overwritten.
template <class T>
void conv2d_backward(const T* x, const T* w, const ConvDims& d, const T* dy, T* dw, T* db, T* dx,
                     std::vector<T>& scratch, std::vector<T>& scratch2) {
    const int P = d.hout() * d.wout();
    const int K = d.patch();
    scratch.resize(static_cast<std::size_t>(K) * P);
    im2col(x, d, scratch.data());
    CMapRM<T> C(scratch.data(), K, P);
    CMapRM<T> dY(dy, d.cout, P);
    MapRM<T> dW(dw, d.cout, K);
    dW.noalias() += dY * C.transpose();
    if (db)
        for (int c = 0; c < d.cout; ++c) db[c] += dY.row(c).sum();
    if (dx) {
        scratch2.resize(static_cast<std::size_t>(K) * P);
        CMapRM<T> W(w, d.cout, K);
        MapRM<T> dC(scratch2.data(), K, P);
        dC.noalias() = W.transpose() * dY;
        std::fill(dx, dx + d.in_size(), T(0));
        col2im_add(scratch2.data(), d, dx);
    }
}

inline constexpr double kGroupNormEps = 1e-5;

/// save holds (mean, istd) per group.
template <class T>
void groupnorm_forward(const T* x, const T* gamma, const T* beta, int C, int HW, int groups, T* y, T* save) {
    const int cg = C / groups;
    const std::size_t group_elems = static_cast<std::size_t>(cg) * HW;
    for (int g = 0; g < groups; ++g) {
        const T* xg = x + static_cast<std::size_t>(g) * group_elems;
        double sum = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < group_elems; ++i) {
            sum += xg[i];
            sq += static_cast<double>(xg[i]) * xg[i];
        }
        const double mean = sum / static_cast<double>(group_elems);
        const double var = sq / static_cast<double>(group_elems) - mean * mean;
        const double istd = 1.0 / std::sqrt(var + kGroupNormEps);
        save[2 * g] = static_cast<T>(mean);
        save[2 * g + 1] = static_cast<T>(istd);
        for (int c = 0; c < cg; ++c) {
            const int ch = g * cg + c;
            const T* xr = x + static_cast<std::size_t>(ch) * HW;
            T* yr = y + static_cast<std::size_t>(ch) * HW;
            const T a = static_cast<T>(gamma[ch] * istd);
            const T b = static_cast<T>(beta[ch] - gamma[ch] * istd * mean);
            for (int i = 0; i < HW; ++i) yr[i] = a * xr[i] + b;
        }
    }
}

/// dgamma/dbeta accumulate; dx is overwritten.
template <class T>
void groupnorm_backward(const T* x, const T* gamma, const T* save, int C, int HW, int groups, const T* dy,
                        T* dgamma, T* dbeta, T* dx) {
    const int cg = C / groups;
    const std::size_t group_elems = static_cast<std::size_t>(cg) * HW;
    for (int g = 0; g < groups; ++g) {
        const double mean = save[2 * g];
        const double istd = save[2 * g + 1];
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int c = 0; c < cg; ++c) {
            const int ch = g * cg + c;
            const T* xr = x + static_cast<std::size_t>(ch) * HW;
            const T* dyr = dy + static_cast<std::size_t>(ch) * HW;
            double dgam = 0.0, dbet = 0.0;
            for (int i = 0; i < HW; ++i) {
                const double xhat = (xr[i] - mean) * istd;
                const double dxh = static_cast<double>(dyr[i]) * gamma[ch];
                dgam += dyr[i] * xhat;
                dbet += dyr[i];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xhat;
            }
            dgamma[ch] += static_cast<T>(dgam);
            dbeta[ch] += static_cast<T>(dbet);
        }
        const double m1 = sum_dxhat / static_cast<double>(group_elems);
        const double m2 = sum_dxhat_xhat / static_cast<double>(group_elems);
        for (int c = 0; c < cg; ++c) {
            const int ch = g * cg + c;
            const T* xr = x + static_cast<std::size_t>(ch) * HW;
            const T* dyr = dy + static_cast<std::size_t>(ch) * HW;
            T* dxr = dx + static_cast<std::size_t>(ch) * HW;
            for (int i = 0; i < HW; ++i) {
                const double xhat = (xr[i] - mean) * istd;
                const double dxh = static_cast<double>(dyr[i]) * gamma[ch];
                dxr[i] = static_cast<T>((dxh - m1 - xhat * m2) * istd);
            }
        }
    }
}

template <class T>
T silu_one(T x) {
    const T s = T(1) / (T(1) + std::exp(-x));
    return x * s;
}

template <class T>
void silu_forward(const T* x, std::size_t n, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] = silu_one(x[i]);
}

/// dx overwritten: dx = dy * (s + x s (1 - s)).
template <class T>
void silu_backward(const T* x, const T* dy, std::size_t n, T* dx) {
    for (std::size_t i = 0; i < n; ++i) {
        const T s = T(1) / (T(1) + std::exp(-x[i]));
        dx[i] = dy[i] * (s + x[i] * s * (T(1) - s));
    }
}

/// y[out] = W[out x in] x + b.
template <class T>
void linear_forward(const T* x, const T* w, const T* b, int in, int out, T* y) {
    CMapRM<T> W(w, out, in);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> X(x, in);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> Y(y, out);
    Y.noalias() = W * X;
    if (b)
        for (int o = 0; o < out; ++o) y[o] += b[o];
}

/// dw/db accumulate; dx (optional) accumulates when accumulate_dx, else overwrites.
template <class T>
void linear_backward(const T* x, const T* w, int in, int out, const T* dy, T* dw, T* db, T* dx,
                     bool accumulate_dx) {
    CMapRM<T> W(w, out, in);
    MapRM<T> dW(dw, out, in);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> X(x, in);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> dY(dy, out);
    dW.noalias() += dY * X.transpose();
    if (db)
        for (int o = 0; o < out; ++o) db[o] += dy[o];
    if (dx) {
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dX(dx, in);
        if (accumulate_dx)
            dX.noalias() += W.transpose() * dY;
        else
            dX.noalias() = W.transpose() * dY;
    }
}

template <class T>
void upsample2x_forward(const T* x, int c, int h, int w, T* y) {
    for (int ch = 0; ch < c; ++ch) {
        const T* xc = x + static_cast<std::size_t>(ch) * h * w;
        T* yc = y + static_cast<std::size_t>(ch) * (2 * h) * (2 * w);
        for (int yy = 0; yy < h; ++yy) {
            for (int xx = 0; xx < w; ++xx) {
                const T v = xc[yy * w + xx];
                T* o = yc + (2 * yy) * (2 * w) + 2 * xx;
                o[0] = v;
                o[1] = v;
                o[2 * w] = v;
                o[2 * w + 1] = v;
            }
        }
    }
}

template <class T>
void upsample2x_backward(const T* dy, int c, int h, int w, T* dx) {
    for (int ch = 0; ch < c; ++ch) {
        const T* dyc = dy + static_cast<std::size_t>(ch) * (2 * h) * (2 * w);
        T* dxc = dx + static_cast<std::size_t>(ch) * h * w;
        for (int yy = 0; yy < h; ++yy) {
            for (int xx = 0; xx < w; ++xx) {
                const T* o = dyc + (2 * yy) * (2 * w) + 2 * xx;
                dxc[yy * w + xx] = o[0] + o[1] + o[2 * w] + o[2 * w + 1];
            }
        }
    }
}

/// Row-wise softmax on an n x n matrix, in place.
template <class T>
void softmax_rows(T* s, int n) {
    for (int j = 0; j < n; ++j) {
        T* row = s + static_cast<std::size_t>(j) * n;
        T mx = row[0];
        for (int i = 1; i < n; ++i) mx = std::max(mx, row[i]);
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            row[i] = std::exp(row[i] - mx);
            sum += row[i];
        }
        const T inv = static_cast<T>(1.0 / sum);
        for (int i = 0; i < n; ++i) row[i] *= inv;
    }
}

} // namespace gf::nn
