#pragma once

// Independent reference implementations used as test oracles. These stay
// deliberately naive (scalar loops, 64-bit accumulation where noted) and
// share no code with the library paths they check.

#include <cmath>
#include <vector>

#include "biasblend/tensor.hpp"

namespace oracle {

using bb::Shape;
using bb::TensorT;

// plain triple loop, scalar accumulator
template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    const std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    TensorT<T> c({m, n});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
            T acc{0};
            for (std::int64_t kk = 0; kk < k; ++kk) acc += a.at(i, kk) * b.at(kk, j);
            c.at(i, j) = acc;
        }
    return c;
}

// scalar nested-loop cross-correlation with zero padding
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& kernel, std::int64_t stride,
                  std::int64_t padding) {
    const std::int64_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
    const std::int64_t o = kernel.shape[0], k = kernel.shape[2];
    const std::int64_t ho = (h - k + 2 * padding) / stride + 1;
    const std::int64_t wo = (w - k + 2 * padding) / stride + 1;
    TensorT<T> y({o, ho, wo});
    for (std::int64_t oc = 0; oc < o; ++oc)
        for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                T acc{0};
                for (std::int64_t ic = 0; ic < c; ++ic)
                    for (std::int64_t ky = 0; ky < k; ++ky)
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            const std::int64_t iy = oy * stride + ky - padding;
                            const std::int64_t ix = ox * stride + kx - padding;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += kernel.data[((oc * c + ic) * k + ky) * k + kx] *
                                   x.data[(ic * h + iy) * w + ix];
                        }
                y.data[(oc * ho + oy) * wo + ox] = acc;
            }
    return y;
}

// 64-bit softmax cross-entropy, mean over rows
inline double cross_entropy(const std::vector<std::vector<double>>& logits,
                            const std::vector<std::int64_t>& labels) {
    double total = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        double mx = logits[i][0];
        for (double v : logits[i]) mx = std::max(mx, v);
        double denom = 0;
        for (double v : logits[i]) denom += std::exp(v - mx);
        total += -(logits[i][static_cast<std::size_t>(labels[i])] - mx - std::log(denom));
    }
    return total / static_cast<double>(logits.size());
}

// extract PxP patches row-major and concatenate (single channel)
template <class T>
TensorT<T> patchify(const TensorT<T>& x, std::int64_t P) {
    const std::int64_t H = x.shape[0], W = x.shape[1];
    TensorT<T> out({H * W});
    std::int64_t pos = 0;
    for (std::int64_t R = 0; R < H / P; ++R)
        for (std::int64_t C = 0; C < W / P; ++C)
            for (std::int64_t r = 0; r < P; ++r)
                for (std::int64_t c = 0; c < P; ++c)
                    out.data[pos++] = x.at(R * P + r, C * P + c);
    return out;
}

// y_i = w_r x_i per row of X
template <class T>
TensorT<T> rowwise_apply(const TensorT<T>& w, const TensorT<T>& x) {
    const std::int64_t rows = x.shape[0], in = x.shape[1], out = w.shape[0];
    TensorT<T> y({rows, out});
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t i = 0; i < out; ++i) {
            T acc{0};
            for (std::int64_t j = 0; j < in; ++j) acc += w.at(i, j) * x.at(r, j);
            y.at(r, i) = acc;
        }
    return y;
}

// apply a 2-layer shared MLP along columns of a 2-d tensor (the token-mix
// path written directly, without any transpose machinery)
template <class T>
TensorT<T> mix_columns(const TensorT<T>& x, const TensorT<T>& w) {
    const std::int64_t S = x.shape[0], C = x.shape[1];
    TensorT<T> y({w.shape[0], C});
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < w.shape[0]; ++i) {
            T acc{0};
            for (std::int64_t s = 0; s < S; ++s) acc += w.at(i, s) * x.at(s, c);
            y.at(i, c) = acc;
        }
    return y;
}

template <class T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    double worst = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a.data[i]) -
                                         static_cast<double>(b.data[i])));
    return worst;
}

template <class T>
bool bit_equal(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape != b.shape) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        if (a.data[i] != b.data[i]) return false;
    return true;
}

}  // namespace oracle
