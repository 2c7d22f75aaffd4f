#include "biasblend/model.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

#include "biasblend/ops.hpp"
#include "biasblend/rng.hpp"

namespace bb {

using kernels::ConvSpec;
using json = nlohmann::json;

// --------------------------------------------------------------- helpers --

namespace {

Tensor kaiming_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    return Tensor::uniform(std::move(shape), rng, -bound, bound);
}

std::int64_t layer_fan_in(const LayerDef& def, const Shape& wshape) {
    if (def.kind == LayerKind::Conv2d) return def.conv.in_channels * def.conv.kernel * def.conv.kernel;
    return wshape[1];
}

Layer make_layer(LayerDef def, Shape wshape, std::int64_t bias_len, std::uint64_t seed) {
    Layer layer;
    layer.def = std::move(def);
    const std::int64_t fan_in = layer_fan_in(layer.def, wshape);
    Rng rng(seed);
    layer.w = kaiming_uniform(std::move(wshape), fan_in, rng);
    layer.b = Tensor({bias_len});
    return layer;
}

std::uint64_t head_seed_of(const InitSeeds& seeds) {
    return seeds.head ? seeds.head : derive_seed(seeds.body, "head");
}

// [n,R,C] -> [n,C,R]
Tensor batch_transpose(const Tensor& x) {
    const std::int64_t n = x.shape[0], r = x.shape[1], c = x.shape[2];
    Tensor out({n, c, r});
#pragma omp parallel for schedule(static)
    for (std::int64_t s = 0; s < n; ++s) {
        const float* xp = x.data.data() + s * r * c;
        float* op = out.data.data() + s * r * c;
        for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) op[j * r + i] = xp[i * c + j];
    }
    return out;
}

// Shared-row linear: x [n,R,Cin] -> [n,R,Cout] with one (Cout,Cin) weight.
Tensor rows_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::int64_t n = x.shape[0], rows = x.shape[1];
    Tensor flat = x.reshaped({n * rows, x.shape[2]});
    Tensor y = ops::linear_forward(flat, w, b);
    return y.reshaped({n, rows, w.shape[0]});
}

// CIFAR-style images into per-patch vectors: [n,3,H,W] -> [n,S,c*P*P],
// patch-major with channels outermost within each patch (matches the
// multichannel patchify permutation).
Tensor gather_patches(const Tensor& x, std::int64_t P) {
    const std::int64_t n = x.shape[0], c = x.shape[1], H = x.shape[2], W = x.shape[3];
    const std::int64_t hp = H / P, wp = W / P, S = hp * wp, plen = c * P * P;
    Tensor out({n, S, plen});
#pragma omp parallel for schedule(static)
    for (std::int64_t s = 0; s < n; ++s) {
        const float* xp = x.data.data() + s * c * H * W;
        float* op = out.data.data() + s * S * plen;
        for (std::int64_t patch = 0; patch < S; ++patch) {
            const std::int64_t R = patch / wp, C = patch % wp;
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t r = 0; r < P; ++r)
                    for (std::int64_t cc = 0; cc < P; ++cc)
                        op[(patch * c + ch) * P * P + r * P + cc] =
                            xp[ch * H * W + (R * P + r) * W + (C * P + cc)];
        }
    }
    return out;
}

// Scatter-add adjoint of gather_patches (each pixel lands in exactly one patch).
Tensor scatter_patches(const Tensor& dpatches, std::int64_t c, std::int64_t H, std::int64_t W,
                       std::int64_t P) {
    const std::int64_t n = dpatches.shape[0];
    const std::int64_t hp = H / P, wp = W / P, S = hp * wp, plen = c * P * P;
    Tensor out({n, c, H, W});
#pragma omp parallel for schedule(static)
    for (std::int64_t s = 0; s < n; ++s) {
        const float* dp = dpatches.data.data() + s * S * plen;
        float* op = out.data.data() + s * c * H * W;
        for (std::int64_t patch = 0; patch < S; ++patch) {
            const std::int64_t R = patch / wp, C = patch % wp;
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t r = 0; r < P; ++r)
                    for (std::int64_t cc = 0; cc < P; ++cc)
                        op[ch * H * W + (R * P + r) * W + (C * P + cc)] =
                            dp[(patch * c + ch) * P * P + r * P + cc];
        }
    }
    return out;
}

void add_channel_bias(Tensor& y, const Tensor& b) {
    const std::int64_t n = y.shape[0], o = y.shape[1], hw = y.shape[2] * y.shape[3];
#pragma omp parallel for schedule(static)
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t oc = 0; oc < o; ++oc) {
            float* p = y.data.data() + (s * o + oc) * hw;
            const float bv = b.data[static_cast<std::size_t>(oc)];
            for (std::int64_t i = 0; i < hw; ++i) p[i] += bv;
        }
}

std::int64_t per_sample_feats(const Tensor& t) { return t.numel() / t.shape[0]; }

}  // namespace

// ----------------------------------------------------------------- Model --

std::int64_t Model::param_count() const {
    std::int64_t total = 0;
    for (const auto& l : layers) total += l.w.numel() + l.b.numel();
    return total;
}

std::int64_t Model::interpolated_param_count() const {
    std::int64_t total = 0;
    for (const auto& l : layers)
        if (l.def.interpolable) total += l.w.numel() + l.b.numel();
    return total;
}

std::vector<std::size_t> Model::interpolable_layers() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].def.interpolable) idx.push_back(i);
    return idx;
}

// -------------------------------------------------------------- builders --

namespace {

struct MlpLayerSpec {
    std::int64_t width;
    bool norm, act, interp;
};

Model make_mlp(const std::string& arch, std::int64_t in_dim, std::int64_t classes,
               const std::vector<MlpLayerSpec>& hidden, std::int64_t pool_groups,
               InitSeeds seeds) {
    Model m;
    m.arch = arch;
    m.input_shape = {in_dim};
    m.classes = classes;
    std::int64_t prev = in_dim;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        const auto& h = hidden[i];
        LayerDef def;
        def.kind = LayerKind::FullyConnected;
        def.in_shape = {prev};
        def.out_shape = {h.width};
        def.norm = h.norm;
        def.act = h.act ? Activation::Gelu : Activation::None;
        def.interpolable = h.interp;
        m.layers.push_back(make_layer(def, {h.width, prev}, h.width,
                                      derive_seed(seeds.body, "layer", i)));
        prev = h.width;
    }
    LayerDef head;
    head.kind = LayerKind::Classifier;
    head.pool_groups = pool_groups;
    check(prev % pool_groups == 0, "pool groups ", pool_groups, " must divide width ", prev);
    const std::int64_t head_in = prev / pool_groups;
    head.in_shape = {prev};
    head.out_shape = {classes};
    m.layers.push_back(make_layer(head, {classes, head_in}, classes,
                                  derive_seed(head_seed_of(seeds), "head")));
    return m;
}

void assert_count(const Model& m, std::int64_t expect) {
    check(m.param_count() == expect, m.arch, ": parameter count ", m.param_count(),
          " != published ", expect);
}

}  // namespace

Model build_smlp(std::int64_t width, std::int64_t depth, std::int64_t in_dim, std::int64_t classes,
                 InitSeeds seeds) {
    std::vector<MlpLayerSpec> hidden;
    std::int64_t pool_groups = 1;
    for (std::int64_t i = 1; i <= depth; ++i) {
        bool norm, act;
        if (depth == 6) {
            // Table 3: features from layers 1 and 5 are normalized then activated.
            norm = act = (i == 1 || i == 5);
        } else if (depth == 9) {
            // Table 4: LN after layers 1,3,5,7,9; GELU between the pair MLPs.
            norm = (i % 2 == 1);
            act = (i % 2 == 0);
        } else {
            norm = act = true;
        }
        hidden.push_back({width, norm, act, true});
    }
    if (depth == 9) pool_groups = 16;  // mirror the mixer's mean-pool head
    Model m = make_mlp("smlp", in_dim, classes, hidden, pool_groups, seeds);
    if (width == 1024 && depth == 6 && in_dim == 3072 && classes == 10) assert_count(m, 8'405'002);
    if (width == 2048 && depth == 9 && in_dim == 3072 && classes == 10) assert_count(m, 39'865'610);
    if (depth == 0) check(m.param_count() == in_dim * classes + classes, "smlp depth-0 count");
    return m;
}

namespace {

Model make_cnn(const std::string& arch, const std::vector<std::int64_t>& channels,
               const std::vector<std::int64_t>& strides, const std::vector<bool>& norm_act,
               const std::vector<bool>& interp, std::int64_t classes, InitSeeds seeds) {
    Model m;
    m.arch = arch;
    m.input_shape = {3, 32, 32};
    m.classes = classes;
    std::int64_t c = 3, hw = 32;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        LayerDef def;
        def.kind = LayerKind::Conv2d;
        def.conv = ConvSpec{3, strides[i], 1, c, channels[i]};
        def.in_shape = {c, hw, hw};
        const std::int64_t out_hw = def.conv.out_dim(hw);
        def.out_shape = {channels[i], out_hw, out_hw};
        def.norm = norm_act[i];
        def.act = norm_act[i] ? Activation::Gelu : Activation::None;
        def.interpolable = interp[i];
        m.layers.push_back(make_layer(def, {channels[i], c, 3, 3}, channels[i],
                                      derive_seed(seeds.body, "layer", i)));
        c = channels[i];
        hw = out_hw;
    }
    LayerDef head;
    head.kind = LayerKind::Classifier;
    head.in_shape = {c, hw, hw};
    head.out_shape = {classes};
    const std::int64_t flat = c * hw * hw;
    m.layers.push_back(make_layer(head, {classes, flat}, classes,
                                  derive_seed(head_seed_of(seeds), "head")));
    return m;
}

}  // namespace

Model build_scnn(InitSeeds seeds) {
    // Table 3: output shapes [1,32,32],[4,16,16],[16,8,8],[64,4,4],[256,2,2],[256,2,2].
    // Strides 1 on layers 1 and 6 (shape-preserving rows), 2 elsewhere.
    Model m = make_cnn("scnn", {1, 4, 16, 64, 256, 256}, {1, 2, 2, 2, 2, 1},
                       {true, false, false, false, true, false},
                       {true, true, true, true, true, true}, 10, seeds);
    assert_count(m, 757'982);
    return m;
}

Model build_mixer(InitSeeds seeds) {
    Model m;
    m.arch = "mixer";
    m.input_shape = {3, 32, 32};
    m.classes = 10;
    const std::int64_t S = 16, C = 128, P = 8;

    LayerDef embed;
    embed.kind = LayerKind::LinearPatchEmbed;
    embed.in_shape = {3, 32, 32};
    embed.out_shape = {S, C};
    embed.mix_rows = S;
    embed.norm = true;
    embed.interpolable = true;
    m.layers.push_back(make_layer(embed, {C, 3 * P * P}, C, derive_seed(seeds.body, "layer", 0)));

    std::size_t li = 1;
    for (int block = 0; block < 2; ++block) {
        LayerDef tok1;
        tok1.kind = LayerKind::TokenMix;
        tok1.transpose_in = true;
        tok1.in_shape = {S, C};
        tok1.out_shape = {C, S};
        tok1.mix_rows = C;
        tok1.act = Activation::Gelu;
        tok1.interpolable = true;
        m.layers.push_back(make_layer(tok1, {S, S}, S, derive_seed(seeds.body, "layer", li++)));

        LayerDef tok2;
        tok2.kind = LayerKind::TokenMix;
        tok2.transpose_out = true;
        tok2.in_shape = {C, S};
        tok2.out_shape = {S, C};
        tok2.mix_rows = C;
        tok2.norm = true;
        tok2.interpolable = true;
        m.layers.push_back(make_layer(tok2, {S, S}, S, derive_seed(seeds.body, "layer", li++)));

        LayerDef ch1;
        ch1.kind = LayerKind::ChannelMix;
        ch1.in_shape = {S, C};
        ch1.out_shape = {S, C};
        ch1.mix_rows = S;
        ch1.act = Activation::Gelu;
        ch1.interpolable = true;
        m.layers.push_back(make_layer(ch1, {C, C}, C, derive_seed(seeds.body, "layer", li++)));

        LayerDef ch2 = ch1;
        ch2.act = Activation::None;
        ch2.norm = true;
        m.layers.push_back(make_layer(ch2, {C, C}, C, derive_seed(seeds.body, "layer", li++)));
    }

    LayerDef head;
    head.kind = LayerKind::Classifier;
    head.pool_groups = S;  // mean over patches, then 128 -> classes
    head.in_shape = {S, C};
    head.out_shape = {10};
    m.layers.push_back(make_layer(head, {10, C}, 10, derive_seed(head_seed_of(seeds), "head")));

    assert_count(m, 93'130);
    return m;
}

Model build_imlp(PriorKind prior, InitSeeds seeds) {
    check(prior == PriorKind::Cnn || prior == PriorKind::Mixer,
          "build_imlp: prior must be cnn or mixer");
    Model m = prior == PriorKind::Cnn ? build_smlp(1024, 6, 3072, 10, seeds)
                                      : build_smlp(2048, 9, 3072, 10, seeds);
    m.arch = prior == PriorKind::Cnn ? "imlp-cnn" : "imlp-mixer";
    return m;
}

// Appendix H widths, chosen so both the totals and the shared interpolated
// budget match Table 6 exactly (asserted below).
std::pair<Model, Model> build_budgeted_mlps(InitSeeds seeds1, InitSeeds seeds2) {
    std::vector<MlpLayerSpec> h1;
    for (std::int64_t w : {512, 896, 1216, 1472, 1472, 1600}) h1.push_back({w, true, true, true});
    h1.push_back({1546, true, true, false});
    h1.push_back({3216, true, true, false});
    Model mlp1 = make_mlp("mlp1", 3072, 10, h1, 1, seeds1);

    std::vector<MlpLayerSpec> h2;
    h2.push_back({3072, true, true, true});
    for (std::int64_t w : {1024, 1638, 1544}) h2.push_back({w, true, true, false});
    Model mlp2 = make_mlp("mlp2", 3072, 10, h2, 1, seeds2);

    assert_count(mlp1, 16'922'724);
    assert_count(mlp2, 16'812'024);
    check(mlp1.interpolated_param_count() == 9'440'256, "mlp1 interpolated budget ",
          mlp1.interpolated_param_count(), " != 9,440,256");
    check(mlp2.interpolated_param_count() == 9'440'256, "mlp2 interpolated budget ",
          mlp2.interpolated_param_count(), " != 9,440,256");
    return {std::move(mlp1), std::move(mlp2)};
}

Model build_budget_prior(PriorKind which, InitSeeds seeds) {
    if (which == PriorKind::BudgetSpread) {
        // Dims match MLP-1's six interpolable widths: 512,896,1216,1472,1472,1600.
        Model m = make_cnn("budget-prior-spread", {2, 14, 76, 368, 368, 400}, {2, 2, 2, 2, 1, 1},
                           {true, true, true, true, true, true},
                           {true, true, true, true, true, true}, 10, seeds);
        return m;
    }
    check(which == PriorKind::BudgetFirst, "build_budget_prior: expected a budget prior kind");
    // First layer 3->3@32x32 pairs with MLP-2's 3072-wide first layer; the
    // remaining layers only make the prior a trainable classifier.
    Model m = make_cnn("budget-prior-first", {3, 4, 16, 64, 256, 256}, {1, 2, 2, 2, 2, 1},
                       {true, true, true, true, true, true},
                       {true, false, false, false, false, false}, 10, seeds);
    return m;
}

Model build_prior(PriorKind kind, InitSeeds seeds) {
    switch (kind) {
        case PriorKind::Cnn: return build_scnn(seeds);
        case PriorKind::Mixer: return build_mixer(seeds);
        case PriorKind::BudgetSpread:
        case PriorKind::BudgetFirst: return build_budget_prior(kind, seeds);
        case PriorKind::None: break;
    }
    throw std::invalid_argument("build_prior: no prior model for kind 'none'");
}

Model build_paired_mlp(PriorKind kind, InitSeeds seeds) {
    switch (kind) {
        case PriorKind::None: return build_smlp(1024, 6, 3072, 10, seeds);
        case PriorKind::Cnn:
        case PriorKind::Mixer: return build_imlp(kind, seeds);
        case PriorKind::BudgetSpread: return build_budgeted_mlps(seeds, {}).first;
        case PriorKind::BudgetFirst: return build_budgeted_mlps({}, seeds).second;
    }
    throw std::invalid_argument("build_paired_mlp: bad prior kind");
}

// ------------------------------------------------------------- execution --

namespace {

Tensor affine_forward(const Layer& layer, const Tensor& x, ForwardTrace* trace, std::size_t li) {
    const LayerDef& def = layer.def;
    switch (def.kind) {
        case LayerKind::FullyConnected:
            return ops::linear_forward(x, layer.w, layer.b);
        case LayerKind::Conv2d: {
            Tensor y = kernels::conv2d_batch(x, layer.w, def.conv);
            if (layer.b.numel()) add_channel_bias(y, layer.b);
            return y;
        }
        case LayerKind::LinearPatchEmbed: {
            Tensor patches = gather_patches(x, 8);
            if (trace) trace->pre_pool[li] = patches;  // reuse slot for the patch cache
            return rows_linear(patches, layer.w, layer.b);
        }
        case LayerKind::TokenMix:
        case LayerKind::ChannelMix: {
            Tensor xin = def.transpose_in ? batch_transpose(x) : x;
            if (trace && def.transpose_in) trace->pre_pool[li] = xin;
            Tensor y = rows_linear(xin, layer.w, layer.b);
            if (def.transpose_out) y = batch_transpose(y);
            return y;
        }
        case LayerKind::Classifier: {
            const std::int64_t n = x.shape[0];
            Tensor flat = x.reshaped({n, per_sample_feats(x)});
            if (def.pool_groups > 1) {
                const std::int64_t g = def.pool_groups, f = flat.shape[1] / g;
                Tensor pooled({n, f});
                for (std::int64_t s = 0; s < n; ++s) {
                    const float* xp = flat.data.data() + s * g * f;
                    float* pp = pooled.data.data() + s * f;
                    for (std::int64_t gi = 0; gi < g; ++gi)
                        for (std::int64_t j = 0; j < f; ++j) pp[j] += xp[gi * f + j];
                    const float inv = 1.0f / static_cast<float>(g);
                    for (std::int64_t j = 0; j < f; ++j) pp[j] *= inv;
                }
                if (trace) trace->pre_pool[li] = pooled;
                return ops::linear_forward(pooled, layer.w, layer.b);
            }
            if (trace) trace->pre_pool[li] = flat;
            return ops::linear_forward(flat, layer.w, layer.b);
        }
    }
    throw std::logic_error("affine_forward: unhandled layer kind");
}

}  // namespace

ForwardTrace forward_trace(const Model& m, const Tensor& batch) {
    check(!m.layers.empty(), "model has no layers");
    const std::int64_t n = batch.shape[0];
    check(per_sample_feats(batch) == shape_numel(m.input_shape), "forward: batch sample size ",
          per_sample_feats(batch), " != model input ", shape_str(m.input_shape));
    ForwardTrace tr;
    tr.input = batch;
    tr.layer_in.resize(m.layers.size());
    tr.pre_norm.resize(m.layers.size());
    tr.pre_act.resize(m.layers.size());
    tr.pre_pool.resize(m.layers.size());

    Tensor x = batch;
    if (m.input_shape.size() == 1 && batch.ndim() != 2) x = batch.reshaped({n, shape_numel(m.input_shape)});
    if (m.input_shape.size() == 3 && batch.ndim() != 4)
        x = batch.reshaped({n, m.input_shape[0], m.input_shape[1], m.input_shape[2]});

    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const Layer& layer = m.layers[i];
        tr.layer_in[i] = x;
        Tensor z = affine_forward(layer, x, &tr, i);
        tr.pre_norm[i] = z;
        if (layer.def.norm) z = ops::layernorm_forward(z, per_sample_feats(z), Tensor{}, Tensor{});
        tr.pre_act[i] = z;
        if (layer.def.act == Activation::Gelu) z = ops::gelu_forward(z);
        x = std::move(z);
    }
    tr.logits = x;
    return tr;
}

Tensor forward(const Model& m, const Tensor& batch) {
    ForwardTrace tr = forward_trace(m, batch);
    return tr.logits;
}

void backward(Model& m, const ForwardTrace& trace, const Tensor& dlogits) {
    Tensor grad = dlogits;
    for (std::size_t ii = m.layers.size(); ii-- > 0;) {
        Layer& layer = m.layers[ii];
        const LayerDef& def = layer.def;
        if (def.act == Activation::Gelu) grad = ops::gelu_backward(trace.pre_act[ii], grad);
        if (def.norm)
            grad = ops::layernorm_backward(trace.pre_norm[ii], per_sample_feats(trace.pre_norm[ii]),
                                           Tensor{}, grad)
                       .dx;
        switch (def.kind) {
            case LayerKind::FullyConnected: {
                auto g = ops::linear_backward(trace.layer_in[ii], layer.w, grad);
                layer.dw = std::move(g.dw);
                layer.db = std::move(g.db);
                grad = std::move(g.dx);
                break;
            }
            case LayerKind::Conv2d: {
                auto g = ops::conv2d_backward(trace.layer_in[ii], layer.w, def.conv, grad);
                layer.dw = std::move(g.dk);
                layer.db = std::move(g.db);
                grad = std::move(g.dx);
                break;
            }
            case LayerKind::LinearPatchEmbed: {
                const Tensor& patches = trace.pre_pool[ii];
                const std::int64_t n = patches.shape[0], rows = patches.shape[1];
                Tensor dy = grad.reshaped({n * rows, layer.w.shape[0]});
                auto g = ops::linear_backward(patches.reshaped({n * rows, patches.shape[2]}),
                                              layer.w, dy);
                layer.dw = std::move(g.dw);
                layer.db = std::move(g.db);
                const Shape& in = def.in_shape;
                grad = scatter_patches(g.dx.reshaped({n, rows, patches.shape[2]}), in[0], in[1],
                                       in[2], 8);
                break;
            }
            case LayerKind::TokenMix:
            case LayerKind::ChannelMix: {
                Tensor dy = def.transpose_out ? batch_transpose(grad) : grad;
                const Tensor& xin = def.transpose_in ? trace.pre_pool[ii] : trace.layer_in[ii];
                const std::int64_t n = xin.shape[0], rows = xin.shape[1];
                auto g = ops::linear_backward(xin.reshaped({n * rows, xin.shape[2]}), layer.w,
                                              dy.reshaped({n * rows, layer.w.shape[0]}));
                layer.dw = std::move(g.dw);
                layer.db = std::move(g.db);
                Tensor dx = g.dx.reshaped({n, rows, xin.shape[2]});
                grad = def.transpose_in ? batch_transpose(dx) : std::move(dx);
                break;
            }
            case LayerKind::Classifier: {
                const Tensor& feats = trace.pre_pool[ii];
                auto g = ops::linear_backward(feats, layer.w, grad);
                layer.dw = std::move(g.dw);
                layer.db = std::move(g.db);
                if (def.pool_groups > 1) {
                    const std::int64_t n = feats.shape[0], f = feats.shape[1];
                    const std::int64_t gcount = def.pool_groups;
                    Tensor dx({n, gcount * f});
                    const float inv = 1.0f / static_cast<float>(gcount);
                    for (std::int64_t s = 0; s < n; ++s)
                        for (std::int64_t gi = 0; gi < gcount; ++gi)
                            for (std::int64_t j = 0; j < f; ++j)
                                dx.data[(s * gcount + gi) * f + j] = g.dx.data[s * f + j] * inv;
                    grad = std::move(dx);
                } else {
                    grad = std::move(g.dx);
                }
                // reshape back to the layer's input layout for the next step down
                if (trace.layer_in[ii].ndim() > 2) grad = grad.reshaped(trace.layer_in[ii].shape);
                break;
            }
        }
    }
}

// --------------------------------------------------------- interpolation --

std::vector<FcEquivalent> extract_prior_fc(const Model& prior) {
    std::vector<FcEquivalent> out;
    bool any = false;
    for (const auto& layer : prior.layers) {
        if (!layer.def.interpolable) continue;
        any = true;
        const LayerDef& def = layer.def;
        switch (def.kind) {
            case LayerKind::Conv2d:
                out.push_back(conv_to_fc(layer.w, def.conv, def.in_shape));
                break;
            case LayerKind::LinearPatchEmbed: {
                PatchGrid grid(def.in_shape[1], def.in_shape[2], 8);
                auto bd = expand_shared_weight(layer.w, def.mix_rows);
                auto p = build_patchify_matrix_multichannel<float>(grid, def.in_shape[0]);
                out.push_back(compose_prior(bd, p));
                break;
            }
            case LayerKind::TokenMix: {
                auto bd = expand_shared_weight(layer.w, def.mix_rows);
                if (def.transpose_in) {
                    auto t = build_transpose_matrix<float>(def.in_shape[0], def.in_shape[1]);
                    out.push_back(compose_prior(bd, t));
                } else {
                    check(def.transpose_out, "token mixer must transpose on one side");
                    auto t = build_transpose_matrix<float>(def.in_shape[0], def.in_shape[1]);
                    out.push_back(compose_prior(t, bd));
                }
                break;
            }
            case LayerKind::ChannelMix:
                out.push_back(expand_shared_weight(layer.w, def.mix_rows));
                break;
            case LayerKind::FullyConnected: {
                FcEquivalent fc;
                fc.matrix = layer.w;
                fc.source = FcSource::Composed;
                fc.input_shape = def.in_shape;
                fc.output_shape = def.out_shape;
                out.push_back(std::move(fc));
                break;
            }
            case LayerKind::Classifier:
                throw std::invalid_argument("classifier layers are not interpolable");
        }
    }
    check(any, "extract_prior_fc: model '", prior.arch, "' has no interpolable layers");
    return out;
}

Tensor flatten_prior_bias(const Layer& layer) {
    const LayerDef& def = layer.def;
    switch (def.kind) {
        case LayerKind::FullyConnected:
        case LayerKind::Classifier:
            return layer.b;
        case LayerKind::Conv2d: {
            const std::int64_t o = def.out_shape[0], hw = def.out_shape[1] * def.out_shape[2];
            Tensor flat({o * hw});
            for (std::int64_t oc = 0; oc < o; ++oc)
                for (std::int64_t i = 0; i < hw; ++i)
                    flat.data[oc * hw + i] = layer.b.data[static_cast<std::size_t>(oc)];
            return flat;
        }
        case LayerKind::LinearPatchEmbed:
        case LayerKind::ChannelMix: {
            // output [rows, row_out], bias per row position
            const std::int64_t rows = def.out_shape[0], f = def.out_shape[1];
            Tensor flat({rows * f});
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < f; ++j) flat.data[r * f + j] = layer.b.data[static_cast<std::size_t>(j)];
            return flat;
        }
        case LayerKind::TokenMix: {
            const std::int64_t d0 = def.out_shape[0], d1 = def.out_shape[1];
            Tensor flat({d0 * d1});
            if (def.transpose_out) {
                // bias applied before the transpose: constant along dim 1
                for (std::int64_t i = 0; i < d0; ++i)
                    for (std::int64_t j = 0; j < d1; ++j)
                        flat.data[i * d1 + j] = layer.b.data[static_cast<std::size_t>(i)];
            } else {
                for (std::int64_t i = 0; i < d0; ++i)
                    for (std::int64_t j = 0; j < d1; ++j)
                        flat.data[i * d1 + j] = layer.b.data[static_cast<std::size_t>(j)];
            }
            return flat;
        }
    }
    throw std::logic_error("flatten_prior_bias: unhandled kind");
}

// ------------------------------------------------------------ checkpoint --

namespace {

json def_to_json(const LayerDef& d) {
    return json{{"kind", static_cast<int>(d.kind)},
                {"in_shape", d.in_shape},
                {"out_shape", d.out_shape},
                {"norm", d.norm},
                {"act", d.act == Activation::Gelu},
                {"interpolable", d.interpolable},
                {"transpose_in", d.transpose_in},
                {"transpose_out", d.transpose_out},
                {"conv", {d.conv.kernel, d.conv.stride, d.conv.padding, d.conv.in_channels,
                          d.conv.out_channels}},
                {"mix_rows", d.mix_rows},
                {"pool_groups", d.pool_groups}};
}

LayerDef def_from_json(const json& j) {
    LayerDef d;
    d.kind = static_cast<LayerKind>(j.at("kind").get<int>());
    d.in_shape = j.at("in_shape").get<Shape>();
    d.out_shape = j.at("out_shape").get<Shape>();
    d.norm = j.at("norm").get<bool>();
    d.act = j.at("act").get<bool>() ? Activation::Gelu : Activation::None;
    d.interpolable = j.at("interpolable").get<bool>();
    d.transpose_in = j.at("transpose_in").get<bool>();
    d.transpose_out = j.at("transpose_out").get<bool>();
    auto c = j.at("conv");
    d.conv = ConvSpec{c.at(0).get<std::int64_t>(), c.at(1).get<std::int64_t>(),
                      c.at(2).get<std::int64_t>(), c.at(3).get<std::int64_t>(),
                      c.at(4).get<std::int64_t>()};
    d.mix_rows = j.at("mix_rows").get<std::int64_t>();
    d.pool_groups = j.at("pool_groups").get<std::int64_t>();
    return d;
}

}  // namespace

void save_checkpoint(const Model& m, const std::string& path, std::uint64_t seed,
                     std::int64_t epoch) {
    json header;
    header["format"] = "biasblend-checkpoint-v1";
    header["arch"] = m.arch;
    header["classes"] = m.classes;
    header["input_shape"] = m.input_shape;
    header["seed"] = seed;
    header["epoch"] = epoch;
    json layers = json::array();
    for (const auto& l : m.layers) {
        json lj = def_to_json(l.def);
        lj["w_shape"] = l.w.shape;
        lj["b_len"] = l.b.numel();
        layers.push_back(lj);
    }
    header["layers"] = layers;
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot open checkpoint ", path, " for writing");
    out << header.dump() << "\n";
    for (const auto& l : m.layers) {
        out.write(reinterpret_cast<const char*>(l.w.data.data()),
                  static_cast<std::streamsize>(l.w.data.size() * sizeof(float)));
        out.write(reinterpret_cast<const char*>(l.b.data.data()),
                  static_cast<std::streamsize>(l.b.data.size() * sizeof(float)));
    }
    require(out.good(), "short write to checkpoint ", path);
}

Model load_checkpoint(const std::string& path, std::uint64_t* seed, std::int64_t* epoch) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open checkpoint ", path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "checkpoint ", path, " missing header");
    json header = json::parse(line);
    require(header.value("format", "") == "biasblend-checkpoint-v1", "checkpoint ", path,
            " has unknown format");
    Model m;
    m.arch = header.at("arch").get<std::string>();
    m.classes = header.at("classes").get<std::int64_t>();
    m.input_shape = header.at("input_shape").get<Shape>();
    if (seed) *seed = header.at("seed").get<std::uint64_t>();
    if (epoch) *epoch = header.at("epoch").get<std::int64_t>();
    for (const auto& lj : header.at("layers")) {
        Layer l;
        l.def = def_from_json(lj);
        l.w = Tensor(lj.at("w_shape").get<Shape>());
        l.b = Tensor({lj.at("b_len").get<std::int64_t>()});
        in.read(reinterpret_cast<char*>(l.w.data.data()),
                static_cast<std::streamsize>(l.w.data.size() * sizeof(float)));
        in.read(reinterpret_cast<char*>(l.b.data.data()),
                static_cast<std::streamsize>(l.b.data.size() * sizeof(float)));
        require(in.good(), "checkpoint ", path, " truncated at byte ",
                static_cast<std::int64_t>(in.tellg()));
        m.layers.push_back(std::move(l));
    }
    return m;
}

}  // namespace bb
