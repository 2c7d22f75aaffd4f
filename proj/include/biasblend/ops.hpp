#pragma once

// Forward/backward for the five layer primitives (linear, conv2d, layer
// norm, GELU, cross-entropy) plus the finite-difference gradient oracle.
// No autodiff graph: the architecture set is small and fixed, so each
// backward is written out explicitly against the forward it mirrors.

#include <cmath>
#include <functional>
#include <vector>

#include "biasblend/kernels.hpp"
#include "biasblend/tensor.hpp"

namespace bb::ops {

using kernels::ConvSpec;

// ---------------------------------------------------------------- linear --

// y = x W^T + b ; x: (n,in), w: (out,in), b: (out) or empty.
template <class T>
TensorT<T> linear_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    check(x.ndim() == 2 && w.ndim() == 2, "linear expects 2-d x and w, got ",
          shape_str(x.shape), " and ", shape_str(w.shape));
    check(x.shape[1] == w.shape[1], "linear: input width ", x.shape[1],
          " != weight fan-in ", w.shape[1]);
    TensorT<T> wt = kernels::transpose2d(w);
    TensorT<T> y = kernels::matmul(x, wt);
    if (b.numel() > 0) {
        check(b.numel() == w.shape[0], "linear: bias length ", b.numel(),
              " != fan-out ", w.shape[0]);
        const std::int64_t n = y.shape[0], m = y.shape[1];
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < m; ++j) y.data[i * m + j] += b.data[j];
    }
    return y;
}

template <class T>
struct LinearGrads {
    TensorT<T> dx, dw, db;
};

template <class T>
LinearGrads<T> linear_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy) {
    LinearGrads<T> g;
    g.dx = kernels::matmul(dy, w);                          // (n,out)(out,in)
    g.dw = kernels::matmul(kernels::transpose2d(dy), x);    // (out,n)(n,in)
    const std::int64_t n = dy.shape[0], m = dy.shape[1];
    g.db = TensorT<T>({m});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j) g.db.data[j] += dy.data[i * m + j];
    return g;
}

// ---------------------------------------------------------------- conv2d --

// Single-sample forward per the ConvSpec contract; see kernels.hpp for the
// batched lane used in training.
template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& kernel, const ConvSpec& spec) {
    kernels::conv2d_check(x, kernel, spec);
    TensorT<T> xb = x.reshaped({1, x.shape[0], x.shape[1], x.shape[2]});
    TensorT<T> yb = kernels::conv2d_batch(xb, kernel, spec);
    return yb.reshaped({yb.shape[1], yb.shape[2], yb.shape[3]});
}

template <class T>
struct ConvGrads {
    TensorT<T> dx, dk, db;
};

// x: (n,c,h,w), dy: (n,o,ho,wo). Deterministic: dx is a gather per input
// element, dk is owned per kernel element, db per out channel. Dense heavy
// layers lower dk/dx to GEMMs over the im2col patches (same (c,ky,kx)
// reduction order for dk; dx regroups the sum per output window, still with
// a fixed order).
template <class T>
ConvGrads<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& kernel, const ConvSpec& sp,
                             const TensorT<T>& dy) {
    const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    const std::int64_t o = sp.out_channels, k = sp.kernel;
    const std::int64_t ho = dy.shape[2], wo = dy.shape[3];
    ConvGrads<T> g;
    g.dx = TensorT<T>({n, c, h, w});
    g.dk = TensorT<T>({o, c, k, k});
    g.db = TensorT<T>({o});

    const T* px = x.data.data();
    const T* pk = kernel.data.data();
    const T* pdy = dy.data.data();

    bool all_dense = true;
    {
        std::vector<unsigned char> plane_nonzero(static_cast<std::size_t>(n * c));
#pragma omp parallel for schedule(static)
        for (std::int64_t sc = 0; sc < n * c; ++sc) {
            const T* plane = px + sc * h * w;
            unsigned char nz = 0;
            for (std::int64_t i = 0; i < h * w; ++i)
                if (plane[i] != T{0}) {
                    nz = 1;
                    break;
                }
            plane_nonzero[static_cast<std::size_t>(sc)] = nz;
        }
        for (auto nz : plane_nonzero) all_dense = all_dense && nz;
    }
    if (kernels::conv_prefers_gemm(x, sp, all_dense)) {
        const std::int64_t hw = ho * wo, red = c * k * k;
        TensorT<T> cols = kernels::im2col(x, sp, ho, wo);
        // dy reordered to (n*hw, o)
        TensorT<T> dy2({n * hw, o});
#pragma omp parallel for schedule(static)
        for (std::int64_t s = 0; s < n; ++s)
            for (std::int64_t oc = 0; oc < o; ++oc)
                for (std::int64_t pos = 0; pos < hw; ++pos)
                    dy2.data[(s * hw + pos) * o + oc] = pdy[(s * o + oc) * hw + pos];
        TensorT<T> dk2 = kernels::matmul(kernels::transpose2d(dy2), cols);  // (o, red)
        g.dk = dk2.reshaped({o, c, k, k});
        TensorT<T> ker2 = kernel.reshaped({o, red});
        TensorT<T> dcols = kernels::matmul(dy2, ker2);  // (n*hw, red)
        T* pdx2 = g.dx.data.data();
        const T* pdc = dcols.data.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (std::int64_t s = 0; s < n; ++s) {
            for (std::int64_t ic = 0; ic < c; ++ic) {
                T* dxp = pdx2 + (s * c + ic) * h * w;
                for (std::int64_t iy = 0; iy < h; ++iy)
                    for (std::int64_t ix = 0; ix < w; ++ix) {
                        T acc{0};
                        for (std::int64_t ky = 0; ky < k; ++ky) {
                            const std::int64_t ny = iy + sp.padding - ky;
                            if (ny < 0 || ny % sp.stride) continue;
                            const std::int64_t oy = ny / sp.stride;
                            if (oy >= ho) continue;
                            for (std::int64_t kx = 0; kx < k; ++kx) {
                                const std::int64_t nx = ix + sp.padding - kx;
                                if (nx < 0 || nx % sp.stride) continue;
                                const std::int64_t ox = nx / sp.stride;
                                if (ox >= wo) continue;
                                acc += pdc[((s * ho + oy) * wo + ox) * red +
                                           (ic * k + ky) * k + kx];
                            }
                        }
                        dxp[iy * w + ix] = acc;
                    }
            }
        }
        for (std::int64_t s = 0; s < n; ++s)
            for (std::int64_t oc = 0; oc < o; ++oc) {
                const T* dyp = pdy + (s * o + oc) * hw;
                T acc{0};
                for (std::int64_t i = 0; i < hw; ++i) acc += dyp[i];
                g.db.data[oc] += acc;
            }
        return g;
    }

    T* pdx = g.dx.data.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t s = 0; s < n; ++s) {
        for (std::int64_t ic = 0; ic < c; ++ic) {
            T* dxp = pdx + (s * c + ic) * h * w;
            for (std::int64_t iy = 0; iy < h; ++iy) {
                for (std::int64_t ix = 0; ix < w; ++ix) {
                    T acc{0};
                    for (std::int64_t oc = 0; oc < o; ++oc) {
                        const T* dyp = pdy + (s * o + oc) * ho * wo;
                        const T* kmat = pk + (oc * c + ic) * k * k;
                        for (std::int64_t ky = 0; ky < k; ++ky) {
                            const std::int64_t ny = iy + sp.padding - ky;
                            if (ny < 0 || ny % sp.stride) continue;
                            const std::int64_t oy = ny / sp.stride;
                            if (oy >= ho) continue;
                            for (std::int64_t kx = 0; kx < k; ++kx) {
                                const std::int64_t nx = ix + sp.padding - kx;
                                if (nx < 0 || nx % sp.stride) continue;
                                const std::int64_t ox = nx / sp.stride;
                                if (ox >= wo) continue;
                                acc += dyp[oy * wo + ox] * kmat[ky * k + kx];
                            }
                        }
                    }
                    dxp[iy * w + ix] = acc;
                }
            }
        }
    }

    T* pdk = g.dk.data.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t oc = 0; oc < o; ++oc) {
        for (std::int64_t ic = 0; ic < c; ++ic) {
            for (std::int64_t ky = 0; ky < k; ++ky) {
                for (std::int64_t kx = 0; kx < k; ++kx) {
                    T acc{0};
                    for (std::int64_t s = 0; s < n; ++s) {
                        const T* xp = px + (s * c + ic) * h * w;
                        const T* dyp = pdy + (s * o + oc) * ho * wo;
                        for (std::int64_t oy = 0; oy < ho; ++oy) {
                            const std::int64_t iy = oy * sp.stride + ky - sp.padding;
                            if (iy < 0 || iy >= h) continue;
                            for (std::int64_t ox = 0; ox < wo; ++ox) {
                                const std::int64_t ix = ox * sp.stride + kx - sp.padding;
                                if (ix < 0 || ix >= w) continue;
                                acc += dyp[oy * wo + ox] * xp[iy * w + ix];
                            }
                        }
                    }
                    pdk[((oc * c + ic) * k + ky) * k + kx] = acc;
                }
            }
        }
    }

    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t oc = 0; oc < o; ++oc) {
            const T* dyp = pdy + (s * o + oc) * ho * wo;
            T acc{0};
            for (std::int64_t i = 0; i < ho * wo; ++i) acc += dyp[i];
            g.db.data[oc] += acc;
        }
    return g;
}

// ------------------------------------------------------------ layer norm --

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes over the last `feat` elements of each row; x viewed as
// (rows, feat). Variance is the biased (1/N) estimate.
template <class T>
TensorT<T> layernorm_forward(const TensorT<T>& x, std::int64_t feat, const TensorT<T>& gain,
                             const TensorT<T>& shift) {
    check(x.numel() % feat == 0, "layernorm: ", x.numel(), " elements not divisible by feature size ",
          feat);
    const bool affine = gain.numel() > 0;
    if (affine)
        check(gain.numel() == feat && shift.numel() == feat,
              "layernorm: gain/shift length must equal feature size ", feat);
    const std::int64_t rows = x.numel() / feat;
    TensorT<T> y = x;
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r) {
        T* row = y.data.data() + r * feat;
        double mu = 0;
        for (std::int64_t i = 0; i < feat; ++i) mu += row[i];
        mu /= static_cast<double>(feat);
        double var = 0;
        for (std::int64_t i = 0; i < feat; ++i) {
            const double d = row[i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(feat);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::int64_t i = 0; i < feat; ++i) {
            double xhat = (row[i] - mu) * inv;
            if (affine) xhat = xhat * gain.data[i] + shift.data[i];
            row[i] = static_cast<T>(xhat);
        }
    }
    return y;
}

template <class T>
struct LayerNormGrads {
    TensorT<T> dx, dgain, dshift;
};

template <class T>
LayerNormGrads<T> layernorm_backward(const TensorT<T>& x, std::int64_t feat, const TensorT<T>& gain,
                                     const TensorT<T>& dy) {
    const bool affine = gain.numel() > 0;
    const std::int64_t rows = x.numel() / feat;
    LayerNormGrads<T> g;
    g.dx = TensorT<T>(x.shape);
    if (affine) {
        g.dgain = TensorT<T>({feat});
        g.dshift = TensorT<T>({feat});
    }
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = x.data.data() + r * feat;
        const T* dyr = dy.data.data() + r * feat;
        T* dxr = g.dx.data.data() + r * feat;
        double mu = 0;
        for (std::int64_t i = 0; i < feat; ++i) mu += xr[i];
        mu /= static_cast<double>(feat);
        double var = 0;
        for (std::int64_t i = 0; i < feat; ++i) {
            const double d = xr[i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(feat);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        double m1 = 0, m2 = 0;  // mean(dxhat), mean(dxhat * xhat)
        for (std::int64_t i = 0; i < feat; ++i) {
            const double xhat = (xr[i] - mu) * inv;
            const double dxhat = affine ? dyr[i] * static_cast<double>(gain.data[i]) : dyr[i];
            m1 += dxhat;
            m2 += dxhat * xhat;
        }
        m1 /= static_cast<double>(feat);
        m2 /= static_cast<double>(feat);
        for (std::int64_t i = 0; i < feat; ++i) {
            const double xhat = (xr[i] - mu) * inv;
            const double dxhat = affine ? dyr[i] * static_cast<double>(gain.data[i]) : dyr[i];
            dxr[i] = static_cast<T>((dxhat - m1 - xhat * m2) * inv);
        }
    }
    if (affine) {
        // column reductions, serial over rows for fixed order
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* xr = x.data.data() + r * feat;
            const T* dyr = dy.data.data() + r * feat;
            double mu = 0;
            for (std::int64_t i = 0; i < feat; ++i) mu += xr[i];
            mu /= static_cast<double>(feat);
            double var = 0;
            for (std::int64_t i = 0; i < feat; ++i) {
                const double d = xr[i] - mu;
                var += d * d;
            }
            var /= static_cast<double>(feat);
            const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
            for (std::int64_t i = 0; i < feat; ++i) {
                g.dgain.data[i] += static_cast<T>(dyr[i] * (xr[i] - mu) * inv);
                g.dshift.data[i] += dyr[i];
            }
        }
    }
    return g;
}

// ------------------------------------------------------------------ GELU --

// Exact Gaussian-CDF formulation x * Phi(x), not the tanh approximation.
template <class T>
T gelu_scalar(T x) {
    const double xd = static_cast<double>(x);
    return static_cast<T>(xd * 0.5 * (1.0 + std::erf(xd * 0.7071067811865475)));
}

template <class T>
T gelu_grad_scalar(T x) {
    const double xd = static_cast<double>(x);
    const double phi_cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865475));
    const double phi_pdf = std::exp(-0.5 * xd * xd) * 0.3989422804014327;
    return static_cast<T>(phi_cdf + xd * phi_pdf);
}

template <class T>
TensorT<T> gelu_forward(const TensorT<T>& x) {
    TensorT<T> y = x;
    const std::int64_t n = y.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) y.data[i] = gelu_scalar(y.data[i]);
    return y;
}

template <class T>
TensorT<T> gelu_backward(const TensorT<T>& x, const TensorT<T>& dy) {
    TensorT<T> dx = x;
    const std::int64_t n = dx.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) dx.data[i] = gelu_grad_scalar(x.data[i]) * dy.data[i];
    return dx;
}

// --------------------------------------------------------- cross entropy --

// Mean over the batch of -log softmax(logits)[label], stabilized by
// max-subtraction. Returns the loss; softmax rows are written to `probs`
// when non-null (reused by the backward).
template <class T>
double cross_entropy_forward(const TensorT<T>& logits, const std::vector<std::int64_t>& labels,
                             TensorT<T>* probs = nullptr) {
    check(logits.ndim() == 2, "cross_entropy expects (n,classes) logits, got ",
          shape_str(logits.shape));
    const std::int64_t n = logits.shape[0], classes = logits.shape[1];
    check(static_cast<std::int64_t>(labels.size()) == n, "cross_entropy: ", labels.size(),
          " labels for ", n, " rows");
    for (auto l : labels)
        check(l >= 0 && l < classes, "cross_entropy: label ", l, " out of range [0,", classes, ")");
    if (probs) *probs = TensorT<T>({n, classes});
    std::vector<double> row_loss(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const T* row = logits.data.data() + i * classes;
        double mx = row[0];
        for (std::int64_t j = 1; j < classes; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0;
        for (std::int64_t j = 0; j < classes; ++j) denom += std::exp(row[j] - mx);
        const double log_denom = std::log(denom);
        row_loss[static_cast<std::size_t>(i)] =
            -(static_cast<double>(row[labels[static_cast<std::size_t>(i)]]) - mx - log_denom);
        if (probs) {
            T* prow = probs->data.data() + i * classes;
            for (std::int64_t j = 0; j < classes; ++j)
                prow[j] = static_cast<T>(std::exp(row[j] - mx) / denom);
        }
    }
    double total = 0;
    for (double l : row_loss) total += l;
    return total / static_cast<double>(n);
}

// dL/dlogits = (softmax - onehot) / n
template <class T>
TensorT<T> cross_entropy_backward(const TensorT<T>& probs, const std::vector<std::int64_t>& labels) {
    const std::int64_t n = probs.shape[0], classes = probs.shape[1];
    TensorT<T> dl = probs;
    const T invn = static_cast<T>(1.0 / static_cast<double>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        T* row = dl.data.data() + i * classes;
        row[labels[static_cast<std::size_t>(i)]] -= T{1};
        for (std::int64_t j = 0; j < classes; ++j) row[j] *= invn;
    }
    return dl;
}

// ----------------------------------------------------------- finite diff --

// Central differences, evaluated in 64-bit: the gradient-check oracle for
// every analytic backward above.
inline TensorD finite_diff_grad(const std::function<double(const TensorD&)>& f, const TensorD& x,
                                double h = 1e-5) {
    check(h > 0, "finite_diff_grad: step must be positive, got ", h);
    TensorD g(x.shape);
    TensorD xe = x;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double orig = xe.data[i];
        xe.data[i] = orig + h;
        const double fp = f(xe);
        xe.data[i] = orig - h;
        const double fm = f(xe);
        xe.data[i] = orig;
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace bb::ops
