#pragma once

// Equivalent fully-connected matrices for structured layers: conv kernels
// (identity-batch construction), patchify and transpose permutations,
// block-diagonal shared-weight expansion, and their compositions
// W_P = W~ * L. Matrices are materialized densely; the largest needed is
// 2048x3072 (patch embedding) and 3072x3072 (wide conv layer).

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "biasblend/kernels.hpp"
#include "biasblend/tensor.hpp"

namespace bb {

enum class FcSource { ConvKernel, Patchify, Transpose, SharedWeight, Composed };

inline const char* to_string(FcSource s) {
    switch (s) {
        case FcSource::ConvKernel: return "conv-kernel";
        case FcSource::Patchify: return "patchify";
        case FcSource::Transpose: return "transpose";
        case FcSource::SharedWeight: return "shared-weight";
        case FcSource::Composed: return "composed";
    }
    return "?";
}

template <class T>
struct FcEquivalentT {
    TensorT<T> matrix;  // (prod(output_shape), prod(input_shape))
    FcSource source = FcSource::Composed;
    Shape input_shape, output_shape;
    // For permutation sources: out[i] = in[perm[i]] (row i has its 1 at column perm[i]).
    std::vector<std::int64_t> perm;

    bool is_permutation() const { return !perm.empty(); }

    void validate() const {
        check(matrix.ndim() == 2, "FcEquivalent matrix must be 2-d");
        check(matrix.shape[0] == shape_numel(output_shape) &&
                  matrix.shape[1] == shape_numel(input_shape),
              "FcEquivalent dims ", shape_str(matrix.shape), " disagree with shapes out=",
              shape_str(output_shape), " in=", shape_str(input_shape));
    }

    // vec(y) = M vec(x)
    TensorT<T> apply(const TensorT<T>& vec_x) const {
        check(vec_x.numel() == matrix.shape[1], "FcEquivalent::apply: input length ",
              vec_x.numel(), " != ", matrix.shape[1]);
        TensorT<T> col = vec_x.reshaped({vec_x.numel(), 1});
        return kernels::matmul(matrix, col).reshaped({matrix.shape[0]});
    }
};

using FcEquivalent = FcEquivalentT<float>;

namespace detail {
template <class T>
TensorT<T> perm_to_matrix(const std::vector<std::int64_t>& perm) {
    const std::int64_t n = static_cast<std::int64_t>(perm.size());
    TensorT<T> m({n, n});
    for (std::int64_t i = 0; i < n; ++i) m.at(i, perm[static_cast<std::size_t>(i)]) = T{1};
    return m;
}
}  // namespace detail

// ------------------------------------------------------------ conv -> FC --

// Identity-batch construction: reshape the (chw x chw) identity into chw
// one-hot images, convolve the whole batch, and read the transposed result
// as W_F. Whatever convention conv2d implements, the returned matrix
// satisfies vec(F*x) = W_F vec(x) by construction.
template <class T>
FcEquivalentT<T> conv_to_fc(const TensorT<T>& kernel, const kernels::ConvSpec& spec,
                            const Shape& in_shape) {
    check(in_shape.size() == 3, "conv_to_fc: in_shape must be (c,h,w), got ", shape_str(in_shape));
    const std::int64_t c = in_shape[0], h = in_shape[1], w = in_shape[2];
    check(c == spec.in_channels, "conv_to_fc: in_shape channels ", c, " != spec channels ",
          spec.in_channels);
    kernels::conv2d_check(TensorT<T>({c, h, w}), kernel, spec);
    const std::int64_t chw = c * h * w;
    TensorT<T> eye_batch = TensorT<T>::identity(chw).reshaped({chw, c, h, w});
    TensorT<T> conv = kernels::conv2d_batch(eye_batch, kernel, spec);
    const std::int64_t out_elems = conv.numel() / chw;
    FcEquivalentT<T> fc;
    fc.matrix = kernels::transpose2d(conv.reshaped({chw, out_elems}));
    fc.source = FcSource::ConvKernel;
    fc.input_shape = in_shape;
    fc.output_shape = {spec.out_channels, spec.out_dim(h), spec.out_dim(w)};
    fc.validate();
    return fc;
}

// -------------------------------------------------------------- patchify --

// Single-channel patch grid: an HxW image cut into (H/P)x(W/P) patches of
// side P.
struct PatchGrid {
    std::int64_t H, W, P;
    std::int64_t h() const { return H / P; }
    std::int64_t w() const { return W / P; }

    PatchGrid(std::int64_t H_, std::int64_t W_, std::int64_t P_) : H(H_), W(W_), P(P_) {
        check(H > 0 && W > 0 && P > 0, "PatchGrid dims must be positive");
        check(H % P == 0 && W % P == 0, "patch side ", P, " must divide image dims ", H, "x", W);
    }
};

// Row i of the permutation picks source pixel j = (R*P + r)*W + (C*P + c),
// where patch index (R,C) and in-patch index (r,c) are recovered from i by
// floor/mod on P^2 and the patch-count width.
template <class T>
FcEquivalentT<T> build_patchify_matrix(const PatchGrid& grid) {
    const std::int64_t n = grid.H * grid.W;
    const std::int64_t p2 = grid.P * grid.P;
    FcEquivalentT<T> fc;
    fc.perm.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t patch = i / p2;
        const std::int64_t R = patch / grid.w();
        const std::int64_t C = patch % grid.w();
        const std::int64_t pix = i % p2;
        const std::int64_t r = pix / grid.P;
        const std::int64_t c = pix % grid.P;
        fc.perm[static_cast<std::size_t>(i)] = (R * grid.P + r) * grid.W + (C * grid.P + c);
    }
    fc.matrix = detail::perm_to_matrix<T>(fc.perm);
    fc.source = FcSource::Patchify;
    fc.input_shape = {1, grid.H, grid.W};
    fc.output_shape = {1, grid.H, grid.W};
    fc.validate();
    return fc;
}

// Multi-channel extension (the paper presents one channel): output is
// patch-major with channels outermost within each patch, i.e.
// [patch][channel][pixel-in-patch], which keeps per-patch vectors
// contiguous for the block-diagonal patch embedding. Reduces to the
// single-channel matrix for channels == 1.
template <class T>
FcEquivalentT<T> build_patchify_matrix_multichannel(const PatchGrid& grid, std::int64_t channels) {
    check(channels >= 1, "channels must be >= 1");
    const std::int64_t p2 = grid.P * grid.P;
    const std::int64_t n = channels * grid.H * grid.W;
    FcEquivalentT<T> fc;
    fc.perm.resize(static_cast<std::size_t>(n));
    for (std::int64_t patch = 0; patch < grid.h() * grid.w(); ++patch) {
        const std::int64_t R = patch / grid.w();
        const std::int64_t C = patch % grid.w();
        for (std::int64_t ch = 0; ch < channels; ++ch) {
            for (std::int64_t pix = 0; pix < p2; ++pix) {
                const std::int64_t r = pix / grid.P;
                const std::int64_t c = pix % grid.P;
                const std::int64_t i = (patch * channels + ch) * p2 + pix;
                fc.perm[static_cast<std::size_t>(i)] =
                    ch * grid.H * grid.W + (R * grid.P + r) * grid.W + (C * grid.P + c);
            }
        }
    }
    fc.matrix = detail::perm_to_matrix<T>(fc.perm);
    fc.source = FcSource::Patchify;
    fc.input_shape = {channels, grid.H, grid.W};
    fc.output_shape = {channels, grid.H, grid.W};
    fc.validate();
    return fc;
}

// ------------------------------------------------------------- transpose --

// In-place transpose permutation: pi(k) = W*k mod (HW-1), fixing the last
// element. T vec(x) = vec(x^T) for x in R^{HxW}.
template <class T>
FcEquivalentT<T> build_transpose_matrix(std::int64_t H, std::int64_t W) {
    check(H >= 1 && W >= 1, "build_transpose_matrix: dims must be >= 1");
    const std::int64_t n = H * W;
    FcEquivalentT<T> fc;
    fc.perm.resize(static_cast<std::size_t>(n));
    for (std::int64_t k = 0; k < n; ++k)
        fc.perm[static_cast<std::size_t>(k)] = (k == n - 1) ? n - 1 : (W * k) % (n - 1);
    fc.matrix = detail::perm_to_matrix<T>(fc.perm);
    fc.source = FcSource::Transpose;
    fc.input_shape = {1, H, W};
    fc.output_shape = {1, W, H};
    fc.validate();
    return fc;
}

// ----------------------------------------------------- shared weight (W~) --

// Block-diagonal expansion of a weight shared across R rows:
// vec(Y) = diag(w_r, ..., w_r) vec(X) where y_i = w_r x_i per row.
template <class T>
FcEquivalentT<T> expand_shared_weight(const TensorT<T>& w_r, std::int64_t rows) {
    check(w_r.ndim() == 2, "expand_shared_weight: w_r must be 2-d, got ", shape_str(w_r.shape));
    check(rows >= 1, "expand_shared_weight: R must be >= 1, got ", rows);
    const std::int64_t out = w_r.shape[0], in = w_r.shape[1];
    FcEquivalentT<T> fc;
    fc.matrix = TensorT<T>({rows * out, rows * in});
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t i = 0; i < out; ++i)
            for (std::int64_t j = 0; j < in; ++j)
                fc.matrix.at(r * out + i, r * in + j) = w_r.at(i, j);
    fc.source = FcSource::SharedWeight;
    fc.input_shape = {1, rows, in};
    fc.output_shape = {1, rows, out};
    fc.validate();
    return fc;
}

// --------------------------------------------------------------- compose --

// W_P = wtilde * l. Permutation operands reduce to row/column gathers; the
// result is the same dense matrix either way.
template <class T>
FcEquivalentT<T> compose_prior(const FcEquivalentT<T>& wtilde, const FcEquivalentT<T>& l) {
    check(wtilde.matrix.shape[1] == l.matrix.shape[0], "compose_prior: inner dims disagree: ",
          shape_str(wtilde.matrix.shape), " x ", shape_str(l.matrix.shape));
    FcEquivalentT<T> fc;
    fc.source = FcSource::Composed;
    fc.input_shape = l.input_shape;
    fc.output_shape = wtilde.output_shape;
    const std::int64_t m = wtilde.matrix.shape[0], n = l.matrix.shape[1];
    if (l.is_permutation()) {
        // (A P)[i][j] = A[i][inv(j)] : permute columns of A
        std::vector<std::int64_t> inv(l.perm.size());
        for (std::size_t i = 0; i < l.perm.size(); ++i)
            inv[static_cast<std::size_t>(l.perm[i])] = static_cast<std::int64_t>(i);
        fc.matrix = TensorT<T>({m, n});
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j)
                fc.matrix.at(i, j) = wtilde.matrix.at(i, inv[static_cast<std::size_t>(j)]);
    } else if (wtilde.is_permutation()) {
        // (P B)[i] = B[perm[i]] : permute rows of B
        fc.matrix = TensorT<T>({m, n});
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j)
                fc.matrix.at(i, j) = l.matrix.at(wtilde.perm[static_cast<std::size_t>(i)], j);
    } else {
        fc.matrix = kernels::matmul(wtilde.matrix, l.matrix);
    }
    if (wtilde.is_permutation() && l.is_permutation()) {
        fc.perm.resize(wtilde.perm.size());
        for (std::size_t i = 0; i < wtilde.perm.size(); ++i)
            fc.perm[i] = l.perm[static_cast<std::size_t>(wtilde.perm[i])];
    }
    fc.validate();
    return fc;
}

template <class T>
FcEquivalentT<T> fc_identity(std::int64_t n) {
    FcEquivalentT<T> fc;
    fc.perm.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) fc.perm[static_cast<std::size_t>(i)] = i;
    fc.matrix = TensorT<T>::identity(n);
    fc.source = FcSource::Composed;
    fc.input_shape = {1, 1, n};
    fc.output_shape = {1, 1, n};
    return fc;
}

// -------------------------------------------------------------- PGM dump --

// Sparsity pattern as a binary PGM: one byte per entry, 0 for zeros,
// 255 for nonzeros. Handy for eyeballing permutation/block structure.
template <class T>
void write_sparsity_pgm(const FcEquivalentT<T>& fc, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot open ", path, " for writing");
    const std::int64_t rows = fc.matrix.shape[0], cols = fc.matrix.shape[1];
    out << "P5\n" << cols << " " << rows << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(cols));
    for (std::int64_t i = 0; i < rows; ++i) {
        for (std::int64_t j = 0; j < cols; ++j)
            row[static_cast<std::size_t>(j)] = fc.matrix.at(i, j) == T{0} ? 0 : 255;
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    require(out.good(), "short write to ", path);
}

}  // namespace bb
