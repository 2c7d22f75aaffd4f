#pragma once

// Dense kernels, two lanes each: a serial reference (suffix _serial) and an
// OpenMP-parallel default. Both accumulate every output element in the same
// fixed order (ascending k, or ascending (c,ky,kx)), so the lanes produce
// bit-identical results and runs are deterministic regardless of thread
// count. tests/ assert exact equality; bench/ compares throughput.

#include <cstdint>

#include "biasblend/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bb::kernels {

// ---------------------------------------------------------------- matmul --

template <class T>
void matmul_into_serial(const TensorT<T>& a, const TensorT<T>& b, TensorT<T>& out) {
    const std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    const T* pa = a.data.data();
    const T* pb = b.data.data();
    T* pc = out.data.data();
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = pc + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = T{0};
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const T av = pa[i * k + kk];
            const T* brow = pb + kk * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void matmul_into(const TensorT<T>& a, const TensorT<T>& b, TensorT<T>& out) {
    const std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    const T* pa = a.data.data();
    const T* pb = b.data.data();
    T* pc = out.data.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = pc + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = T{0};
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const T av = pa[i * k + kk];
            const T* brow = pb + kk * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void matmul_shape_check(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.ndim() == 2 && b.ndim() == 2, "matmul expects 2-d tensors, got ",
          shape_str(a.shape), " and ", shape_str(b.shape));
    check(a.shape[1] == b.shape[0], "matmul inner dimensions disagree: ",
          shape_str(a.shape), " x ", shape_str(b.shape));
}

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    matmul_shape_check(a, b);
    TensorT<T> out({a.shape[0], b.shape[1]});
    matmul_into(a, b, out);
    return out;
}

template <class T>
TensorT<T> matmul_serial(const TensorT<T>& a, const TensorT<T>& b) {
    matmul_shape_check(a, b);
    TensorT<T> out({a.shape[0], b.shape[1]});
    matmul_into_serial(a, b, out);
    return out;
}

template <class T>
TensorT<T> transpose2d(const TensorT<T>& a) {
    check(a.ndim() == 2, "transpose2d expects a 2-d tensor, got ", shape_str(a.shape));
    const std::int64_t r = a.shape[0], c = a.shape[1];
    TensorT<T> out({c, r});
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out.data[j * r + i] = a.data[i * c + j];
    return out;
}

// ---------------------------------------------------------------- conv2d --

// Hyperparameters of one conv layer: square k x k kernel, stride s,
// zero padding p. Output dims follow h_out = (h_in - k + 2p)/s + 1.
struct ConvSpec {
    std::int64_t kernel = 3;
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    std::int64_t in_channels = 1;
    std::int64_t out_channels = 1;

    std::int64_t out_dim(std::int64_t in_dim) const {
        check(kernel >= 1 && stride >= 1 && padding >= 0 && in_channels >= 1 && out_channels >= 1,
              "invalid ConvSpec (k=", kernel, " s=", stride, " p=", padding, ")");
        const std::int64_t num = in_dim - kernel + 2 * padding;
        check(num >= 0, "conv window k=", kernel, " with p=", padding,
              " does not fit input dim ", in_dim);
        return num / stride + 1;
    }
};

template <class T>
void conv2d_check(const TensorT<T>& x, const TensorT<T>& kernel, const ConvSpec& spec) {
    check(x.ndim() == 3, "conv2d input must be (c,h,w), got ", shape_str(x.shape));
    check(kernel.ndim() == 4, "conv2d kernel must be (o,c,k,k), got ", shape_str(kernel.shape));
    check(kernel.shape[1] == x.shape[0] && kernel.shape[1] == spec.in_channels,
          "conv2d channel mismatch: input ", shape_str(x.shape), ", kernel ",
          shape_str(kernel.shape), ", spec c=", spec.in_channels);
    check(kernel.shape[0] == spec.out_channels && kernel.shape[2] == spec.kernel &&
              kernel.shape[3] == spec.kernel,
          "conv2d kernel shape ", shape_str(kernel.shape), " disagrees with spec (o=",
          spec.out_channels, ", k=", spec.kernel, ")");
}

// Cross-correlation (no kernel flip), zero padding. Each output element
// accumulates over (c,ky,kx) ascending. x: (c,h,w), kernel: (o,c,k,k).
template <class T>
void conv2d_into_serial(const T* x, std::int64_t h, std::int64_t w, const T* kernel,
                        const ConvSpec& sp, T* out, std::int64_t ho, std::int64_t wo) {
    const std::int64_t c = sp.in_channels, o = sp.out_channels, k = sp.kernel;
    for (std::int64_t oc = 0; oc < o; ++oc) {
        T* oplane = out + oc * ho * wo;
        for (std::int64_t i = 0; i < ho * wo; ++i) oplane[i] = T{0};
        for (std::int64_t ic = 0; ic < c; ++ic) {
            const T* xplane = x + ic * h * w;
            const T* kmat = kernel + (oc * c + ic) * k * k;
            for (std::int64_t ky = 0; ky < k; ++ky) {
                for (std::int64_t kx = 0; kx < k; ++kx) {
                    const T kv = kmat[ky * k + kx];
                    for (std::int64_t oy = 0; oy < ho; ++oy) {
                        const std::int64_t iy = oy * sp.stride + ky - sp.padding;
                        if (iy < 0 || iy >= h) continue;
                        const T* xrow = xplane + iy * w;
                        T* orow = oplane + oy * wo;
                        for (std::int64_t ox = 0; ox < wo; ++ox) {
                            const std::int64_t ix = ox * sp.stride + kx - sp.padding;
                            if (ix < 0 || ix >= w) continue;
                            orow[ox] += kv * xrow[ix];
                        }
                    }
                }
            }
        }
    }
}

template <class T>
TensorT<T> conv2d_serial(const TensorT<T>& x, const TensorT<T>& kernel, const ConvSpec& spec) {
    conv2d_check(x, kernel, spec);
    const std::int64_t ho = spec.out_dim(x.shape[1]), wo = spec.out_dim(x.shape[2]);
    TensorT<T> out({spec.out_channels, ho, wo});
    conv2d_into_serial(x.data.data(), x.shape[1], x.shape[2], kernel.data.data(), spec,
                       out.data.data(), ho, wo);
    return out;
}

// Zero-padded patch rows: (n*ho*wo) x (c*k*k), reduction index ordered
// (c,ky,kx) ascending to mirror the direct kernel's accumulation order.
template <class T>
TensorT<T> im2col(const TensorT<T>& x, const ConvSpec& sp, std::int64_t ho, std::int64_t wo) {
    const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    const std::int64_t k = sp.kernel, red = c * k * k;
    TensorT<T> cols({n * ho * wo, red});
#pragma omp parallel for schedule(static)
    for (std::int64_t s = 0; s < n; ++s) {
        const T* xs = x.data.data() + s * c * h * w;
        for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                T* row = cols.data.data() + ((s * ho + oy) * wo + ox) * red;
                for (std::int64_t ic = 0; ic < c; ++ic)
                    for (std::int64_t ky = 0; ky < k; ++ky) {
                        const std::int64_t iy = oy * sp.stride + ky - sp.padding;
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            const std::int64_t ix = ox * sp.stride + kx - sp.padding;
                            row[(ic * k + ky) * k + kx] =
                                (iy < 0 || iy >= h || ix < 0 || ix >= w)
                                    ? T{0}
                                    : xs[(ic * h + iy) * w + ix];
                        }
                    }
            }
    }
    return cols;
}

// Use the GEMM lowering when the batch is dense and the reduction is long
// enough that the direct loop's short inner trips dominate.
template <class T>
bool conv_prefers_gemm(const TensorT<T>& x, const ConvSpec& sp, bool all_planes_dense) {
    return all_planes_dense && sp.in_channels * sp.kernel * sp.kernel >= 48 && x.shape[0] >= 2;
}

// Batched forward, parallel over (sample, out-channel). Accumulation order
// per output element matches the serial kernel exactly in both lanes: the
// direct loop runs (c,ky,kx) ascending, and the GEMM lowering reduces over
// the identically-ordered im2col index (padding zeros contribute exact
// no-ops). All-zero input planes are skipped in the direct lane: their
// products contribute only +/-0 and an IEEE accumulator seeded at +0 never
// becomes -0 from adding signed zeros, so skipping cannot change any output
// bit. This makes convolving one-hot batches (the identity-batch conv->FC
// construction) cheap.
template <class T>
TensorT<T> conv2d_batch(const TensorT<T>& x, const TensorT<T>& kernel, const ConvSpec& spec) {
    check(x.ndim() == 4, "conv2d_batch input must be (n,c,h,w), got ", shape_str(x.shape));
    const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    check(c == spec.in_channels, "conv2d_batch channel mismatch: input has ", c,
          " channels, spec expects ", spec.in_channels);
    conv2d_check(TensorT<T>({c, h, w}), kernel, spec);
    const std::int64_t ho = spec.out_dim(h), wo = spec.out_dim(w);
    const std::int64_t o = spec.out_channels, k = spec.kernel;
    TensorT<T> out({n, o, ho, wo});
    const T* px = x.data.data();
    const T* pk = kernel.data.data();
    T* po = out.data.data();

    std::vector<unsigned char> plane_nonzero(static_cast<std::size_t>(n * c));
    bool all_dense = true;
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

    if (conv_prefers_gemm(x, spec, all_dense)) {
        TensorT<T> cols = im2col(x, spec, ho, wo);
        TensorT<T> ker2 = kernel.reshaped({o, c * k * k});
        TensorT<T> y2 = matmul(cols, transpose2d(ker2));  // (n*ho*wo, o)
        const std::int64_t hw = ho * wo;
#pragma omp parallel for schedule(static)
        for (std::int64_t s = 0; s < n; ++s)
            for (std::int64_t pos = 0; pos < hw; ++pos)
                for (std::int64_t oc = 0; oc < o; ++oc)
                    po[(s * o + oc) * hw + pos] = y2.data[(s * hw + pos) * o + oc];
        return out;
    }

#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t s = 0; s < n; ++s) {
        for (std::int64_t oc = 0; oc < o; ++oc) {
            const T* xs = px + s * c * h * w;
            T* oplane = po + (s * o + oc) * ho * wo;
            for (std::int64_t i = 0; i < ho * wo; ++i) oplane[i] = T{0};
            for (std::int64_t ic = 0; ic < c; ++ic) {
                if (!plane_nonzero[static_cast<std::size_t>(s * c + ic)]) continue;
                const T* xplane = xs + ic * h * w;
                const T* kmat = pk + (oc * c + ic) * k * k;
                for (std::int64_t ky = 0; ky < k; ++ky) {
                    for (std::int64_t kx = 0; kx < k; ++kx) {
                        const T kv = kmat[ky * k + kx];
                        for (std::int64_t oy = 0; oy < ho; ++oy) {
                            const std::int64_t iy = oy * spec.stride + ky - spec.padding;
                            if (iy < 0 || iy >= h) continue;
                            const T* xrow = xplane + iy * w;
                            T* orow = oplane + oy * wo;
                            for (std::int64_t ox = 0; ox < wo; ++ox) {
                                const std::int64_t ix = ox * spec.stride + kx - spec.padding;
                                if (ix < 0 || ix >= w) continue;
                                orow[ox] += kv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace bb::kernels
