#pragma once

// The four published architectures plus the fixed-budget pair, with
// per-layer access for interpolation. Every builder asserts its golden
// parameter count, so any drift in the layer math fails at construction.

#include <cstdint>
#include <string>
#include <vector>

#include "biasblend/fc_equiv.hpp"
#include "biasblend/kernels.hpp"
#include "biasblend/tensor.hpp"

namespace bb {

enum class LayerKind { FullyConnected, Conv2d, LinearPatchEmbed, TokenMix, ChannelMix, Classifier };
enum class Activation { None, Gelu };
enum class PriorKind { None, Cnn, Mixer, BudgetSpread, BudgetFirst };

struct LayerDef {
    LayerKind kind = LayerKind::FullyConnected;
    Shape in_shape, out_shape;  // (c,h,w) for image tensors, (d) for flat
    bool norm = false;          // layer norm over the flattened output features
    Activation act = Activation::None;
    bool interpolable = false;
    bool transpose_in = false;   // mixer: operate on the transposed 2-d tensor
    bool transpose_out = false;  // mixer: transpose back after the shared MLP
    kernels::ConvSpec conv;      // Conv2d only
    std::int64_t mix_rows = 0;   // TokenMix/ChannelMix/LinearPatchEmbed: rows sharing the weight
    std::int64_t pool_groups = 1;  // Classifier: mean over this many groups before the linear
};

struct Layer {
    LayerDef def;
    Tensor w;  // FC/Classifier: (out,in); Conv2d: (o,c,k,k); shared layers: (row_out,row_in)
    Tensor b;  // (out channels / row_out); empty biases are treated as zero
    Tensor dw, db;  // gradients, filled by backward()
};

struct Model {
    std::string arch;
    Shape input_shape;      // (3,32,32) or (in_dim)
    std::int64_t classes = 10;
    std::vector<Layer> layers;

    std::int64_t param_count() const;
    // Parameters belonging to interpolable layers (weights and biases).
    std::int64_t interpolated_param_count() const;
    std::vector<std::size_t> interpolable_layers() const;
};

// Activation caches from one forward pass, consumed by backward().
struct ForwardTrace {
    Tensor input;
    std::vector<Tensor> layer_in;    // input to each layer (post previous act)
    std::vector<Tensor> pre_norm;    // affine output
    std::vector<Tensor> pre_act;     // after optional norm
    std::vector<Tensor> pre_pool;    // classifier only: features before pooling
    Tensor logits;
};

// ------------------------------------------------------------- builders --

// Init seeds: each layer draws from derive_seed(body, "layer", i); the
// classifier draws from `head` so paired models with matching head shapes
// start from identical classifiers.
struct InitSeeds {
    std::uint64_t body = 1;
    std::uint64_t head = 0;  // 0 -> derive from body
};

Model build_smlp(std::int64_t width, std::int64_t depth, std::int64_t in_dim, std::int64_t classes,
                 InitSeeds seeds = {});
Model build_scnn(InitSeeds seeds = {});
Model build_mixer(InitSeeds seeds = {});
Model build_imlp(PriorKind prior, InitSeeds seeds = {});
// Appendix-H budget pair: MLP-1 spreads the 9,440,256-parameter budget over
// six layers, MLP-2 concentrates it in one 3072-wide first layer.
std::pair<Model, Model> build_budgeted_mlps(InitSeeds seeds1 = {}, InitSeeds seeds2 = {});
// The conv priors paired with the budget MLPs.
Model build_budget_prior(PriorKind which, InitSeeds seeds = {});

Model build_prior(PriorKind kind, InitSeeds seeds = {});
Model build_paired_mlp(PriorKind kind, InitSeeds seeds = {});

// ------------------------------------------------------------ execution --

ForwardTrace forward_trace(const Model& m, const Tensor& batch);
Tensor forward(const Model& m, const Tensor& batch);
// Fills layer dw/db; returns nothing else (input grads are not needed).
void backward(Model& m, const ForwardTrace& trace, const Tensor& dlogits);

// --------------------------------------------------------- interpolation --

// One FcEquivalent per interpolable layer of the prior, in layer order.
std::vector<FcEquivalent> extract_prior_fc(const Model& prior);

// Flattened-feature bias of a structured layer (conv bias tiled over its
// spatial output, shared-row bias tiled through the layer's output layout).
Tensor flatten_prior_bias(const Layer& layer);

// ------------------------------------------------------------ checkpoint --

// Single file: one JSON header line (arch, shapes, seed, epoch), then raw
// little-endian float32 blocks in layer order (w, b per layer).
void save_checkpoint(const Model& m, const std::string& path, std::uint64_t seed, std::int64_t epoch);
Model load_checkpoint(const std::string& path, std::uint64_t* seed = nullptr,
                      std::int64_t* epoch = nullptr);

}  // namespace bb
