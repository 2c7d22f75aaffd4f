#include "biasblend/selftest.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include "biasblend/fc_equiv.hpp"
#include "biasblend/model.hpp"
#include "biasblend/ops.hpp"
#include "biasblend/rng.hpp"

namespace bb {

namespace {

struct Reporter {
    std::ostream& out;
    int failures = 0;

    void line(const std::string& name, bool ok, const std::string& detail = "") {
        out << (ok ? "[PASS] " : "[FAIL] ") << name;
        if (!detail.empty()) out << "  (" << detail << ")";
        out << "\n";
        if (!ok) ++failures;
    }
};

struct ConvCase {
    const char* name;
    Shape in;
    kernels::ConvSpec spec;
};

// The six Table-3 layer shapes.
std::vector<ConvCase> table3_layers() {
    return {
        {"conv layer 1 (3,32,32)->(1,32,32)", {3, 32, 32}, {3, 1, 1, 3, 1}},
        {"conv layer 2 (1,32,32)->(4,16,16)", {1, 32, 32}, {3, 2, 1, 1, 4}},
        {"conv layer 3 (4,16,16)->(16,8,8)", {4, 16, 16}, {3, 2, 1, 4, 16}},
        {"conv layer 4 (16,8,8)->(64,4,4)", {16, 8, 8}, {3, 2, 1, 16, 64}},
        {"conv layer 5 (64,4,4)->(256,2,2)", {64, 4, 4}, {3, 2, 1, 64, 256}},
        {"conv layer 6 (256,2,2)->(256,2,2)", {256, 2, 2}, {3, 1, 1, 256, 256}},
    };
}

template <class T>
double conv_fc_max_err(const ConvCase& cc, Rng& rng, int pairs, bool inject_fault) {
    double worst = 0;
    for (int p = 0; p < pairs; ++p) {
        TensorT<T> kernel = TensorT<T>::uniform(
            {cc.spec.out_channels, cc.spec.in_channels, cc.spec.kernel, cc.spec.kernel}, rng, -1, 1);
        TensorT<T> x = TensorT<T>::uniform(cc.in, rng, -1, 1);
        auto fc = conv_to_fc(kernel, cc.spec, cc.in);
        if (inject_fault && p == 0) fc.matrix.data[fc.matrix.numel() / 2] += T{0.5};
        TensorT<T> via_fc = fc.apply(x.reshaped({x.numel()}));
        TensorT<T> direct = ops::conv2d_forward(x, kernel, cc.spec);
        for (std::int64_t i = 0; i < direct.numel(); ++i)
            worst = std::max(worst, std::abs(static_cast<double>(via_fc.data[i]) -
                                             static_cast<double>(direct.data[i])));
    }
    return worst;
}

bool perm_orthogonal(const FcEquivalent& fc) {
    // permutation structure: exactly one 1 per row and column
    const std::int64_t n = fc.matrix.shape[0];
    if (fc.matrix.shape[1] != n) return false;
    std::vector<int> col_count(static_cast<std::size_t>(n), 0);
    for (std::int64_t i = 0; i < n; ++i) {
        int row_count = 0;
        for (std::int64_t j = 0; j < n; ++j) {
            const float v = fc.matrix.at(i, j);
            if (v == 1.0f) {
                ++row_count;
                ++col_count[static_cast<std::size_t>(j)];
            } else if (v != 0.0f) {
                return false;
            }
        }
        if (row_count != 1) return false;
    }
    for (int c : col_count)
        if (c != 1) return false;
    return true;
}

double gradient_check_linear(Rng& rng) {
    TensorD x = TensorD::uniform({4, 6}, rng, -1, 1);
    TensorD w = TensorD::uniform({5, 6}, rng, -1, 1);
    TensorD b = TensorD::uniform({5}, rng, -1, 1);
    TensorD dy = TensorD::uniform({4, 5}, rng, -1, 1);
    auto loss = [&](const TensorD& ww) {
        TensorD y = ops::linear_forward(x, ww, b);
        double s = 0;
        for (std::int64_t i = 0; i < y.numel(); ++i) s += y.data[i] * dy.data[i];
        return s;
    };
    TensorD fd = ops::finite_diff_grad(loss, w);
    auto g = ops::linear_backward(x, w, dy);
    double worst = 0;
    for (std::int64_t i = 0; i < w.numel(); ++i) {
        const double denom = std::max(1.0, std::abs(fd.data[i]));
        worst = std::max(worst, std::abs(fd.data[i] - g.dw.data[i]) / denom);
    }
    return worst;
}

}  // namespace

int run_selftest(std::ostream& out, bool inject_conv_fault) {
    Reporter rep{out};
    out << std::setprecision(3);
    Rng rng(20240817);

    for (const auto& cc : table3_layers()) {
        const double err32 = conv_fc_max_err<float>(cc, rng, 2, inject_conv_fault);
        rep.line(cat("conv/FC equivalence f32: ", cc.name), err32 < 1e-4, cat("max err ", err32));
        const double err64 = conv_fc_max_err<double>(cc, rng, 1, false);
        rep.line(cat("conv/FC equivalence f64: ", cc.name), err64 < 1e-10, cat("max err ", err64));
    }

    {
        auto p = build_patchify_matrix<float>(PatchGrid(4, 4, 2));
        auto t = build_transpose_matrix<float>(3, 4);
        rep.line("patchify matrix is an orthogonal permutation", perm_orthogonal(p));
        rep.line("transpose matrix is an orthogonal permutation", perm_orthogonal(t));
        // transpose applied to vec(x) equals vec(x^T)
        Tensor x = Tensor::uniform({3, 4}, rng, -1, 1);
        Tensor tx = t.apply(x.reshaped({12}));
        Tensor xt = kernels::transpose2d(x);
        bool ok = true;
        for (int i = 0; i < 12; ++i) ok = ok && tx.data[i] == xt.data[i];
        rep.line("transpose matrix reproduces vec(x^T)", ok);
    }

    {
        Tensor w = Tensor::uniform({5, 7}, rng, -1, 1);
        auto bd = expand_shared_weight(w, 3);
        Tensor x = Tensor::uniform({3, 7}, rng, -1, 1);
        Tensor via = bd.apply(x.reshaped({21}));
        bool ok = true;
        for (int r = 0; r < 3; ++r)
            for (int i = 0; i < 5; ++i) {
                float acc = 0;
                for (int j = 0; j < 7; ++j) acc += w.at(i, j) * x.at(r, j);
                ok = ok && acc == via.data[r * 5 + i];
            }
        rep.line("Toeplitz expansion equals row-wise application", ok);
    }

    {
        bool ok = true;
        std::string detail;
        try {
            ok = ok && build_smlp(1024, 6, 3072, 10).param_count() == 8'405'002;
            ok = ok && build_scnn().param_count() == 757'982;
            ok = ok && build_mixer().param_count() == 93'130;
            ok = ok && build_smlp(2048, 9, 3072, 10).param_count() == 39'865'610;
            auto pair = build_budgeted_mlps();
            ok = ok && pair.first.param_count() == 16'922'724;
            ok = ok && pair.second.param_count() == 16'812'024;
            ok = ok && pair.first.interpolated_param_count() == 9'440'256;
            ok = ok && pair.second.interpolated_param_count() == 9'440'256;
        } catch (const std::exception& e) {
            ok = false;
            detail = e.what();
        }
        rep.line("golden parameter counts", ok, detail);
    }

    {
        const double err = gradient_check_linear(rng);
        rep.line("linear gradient vs central differences", err < 1e-3, cat("max rel err ", err));
    }

    {
        // analytic GELU derivative against the finite-difference oracle
        TensorD x = TensorD::uniform({64}, rng, -3, 3);
        auto loss = [](const TensorD& v) {
            TensorD y = ops::gelu_forward(v);
            double s = 0;
            for (auto d : y.data) s += d;
            return s;
        };
        TensorD fd = ops::finite_diff_grad(loss, x);
        double worst = 0;
        for (std::int64_t i = 0; i < x.numel(); ++i)
            worst = std::max(worst,
                             std::abs(fd.data[i] - ops::gelu_grad_scalar(x.data[i])) /
                                 std::max(1.0, std::abs(fd.data[i])));
        rep.line("gelu gradient vs central differences", worst < 1e-3, cat("max rel err ", worst));
    }

    out << (rep.failures == 0 ? "selftest: all checks passed\n"
                              : cat("selftest: ", rep.failures, " check(s) FAILED\n"));
    return rep.failures;
}

}  // namespace bb
