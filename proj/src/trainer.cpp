#include "biasblend/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "biasblend/ops.hpp"

namespace bb {

// -------------------------------------------------------------- schedule --

double schedule_alpha(const ScheduleSpec& spec, std::int64_t t, std::int64_t t_max) {
    check(t >= 0, "schedule_alpha: t must be >= 0, got ", t);
    check(t <= t_max, "schedule_alpha: t=", t, " exceeds t_max=", t_max);
    switch (spec.mode) {
        case ScheduleMode::None:
        case ScheduleMode::TestTimeOnly:
            return 0.0;
        case ScheduleMode::Constant:
            return spec.a;
        case ScheduleMode::PolyDecay: {
            check(spec.k >= 0, "schedule_alpha: decay exponent must be >= 0");
            const double frac = 1.0 - static_cast<double>(t) / static_cast<double>(t_max);
            return spec.a * std::pow(frac, spec.k);
        }
    }
    throw std::logic_error("schedule_alpha: unhandled mode");
}

// ---------------------------------------------------------------- config --

namespace {
const char* variant_name(data::Variant v) { return v == data::Variant::C10 ? "cifar10" : "cifar100"; }
const char* prior_name(PriorKind p) {
    switch (p) {
        case PriorKind::None: return "none";
        case PriorKind::Cnn: return "cnn";
        case PriorKind::Mixer: return "mixer";
        case PriorKind::BudgetSpread: return "budget-spread";
        case PriorKind::BudgetFirst: return "budget-first";
    }
    return "?";
}
const char* mode_name(ScheduleMode m) {
    switch (m) {
        case ScheduleMode::None: return "none";
        case ScheduleMode::Constant: return "constant";
        case ScheduleMode::PolyDecay: return "poly-decay";
        case ScheduleMode::TestTimeOnly: return "test-time-only";
    }
    return "?";
}
}  // namespace

std::map<std::string, std::string> TrainConfig::to_map() const {
    std::map<std::string, std::string> kv;
    kv["epochs"] = std::to_string(epochs);
    kv["batch_size"] = std::to_string(batch_size);
    kv["lr"] = cat(lr);
    kv["seed"] = std::to_string(seed);
    kv["dataset"] = variant_name(dataset);
    kv["augment"] = augment ? "true" : "false";
    kv["schedule"] = mode_name(schedule.mode);
    kv["alpha"] = cat(schedule.a);
    kv["decay_k"] = cat(schedule.k);
    kv["test_time_alpha"] = cat(schedule.alpha_test);
    kv["prior"] = prior_name(prior);
    kv["subset"] = std::to_string(subset_n);
    kv["eval_subset"] = std::to_string(eval_subset);
    kv["data_dir"] = data_dir;
    kv["train_biases"] = train_biases ? "true" : "false";
    return kv;
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv) {
    TrainConfig cfg;
    auto get = [&](const char* key) -> const std::string* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (auto* v = get("epochs")) cfg.epochs = std::stoll(*v);
    if (auto* v = get("batch_size")) cfg.batch_size = std::stoll(*v);
    if (auto* v = get("lr")) cfg.lr = std::stof(*v);
    if (auto* v = get("seed")) cfg.seed = std::stoull(*v);
    if (auto* v = get("dataset")) {
        check(*v == "cifar10" || *v == "cifar100", "config: dataset must be cifar10 or cifar100, got '",
              *v, "'");
        cfg.dataset = *v == "cifar10" ? data::Variant::C10 : data::Variant::C100;
    }
    if (auto* v = get("augment")) cfg.augment = *v == "true";
    if (auto* v = get("schedule")) {
        if (*v == "none") cfg.schedule.mode = ScheduleMode::None;
        else if (*v == "constant") cfg.schedule.mode = ScheduleMode::Constant;
        else if (*v == "poly-decay") cfg.schedule.mode = ScheduleMode::PolyDecay;
        else if (*v == "test-time-only") cfg.schedule.mode = ScheduleMode::TestTimeOnly;
        else throw std::invalid_argument(cat("config: unknown schedule '", *v, "'"));
    }
    if (auto* v = get("alpha")) cfg.schedule.a = std::stod(*v);
    if (auto* v = get("decay_k")) cfg.schedule.k = std::stod(*v);
    if (auto* v = get("test_time_alpha")) cfg.schedule.alpha_test = std::stod(*v);
    if (auto* v = get("prior")) {
        if (*v == "none") cfg.prior = PriorKind::None;
        else if (*v == "cnn") cfg.prior = PriorKind::Cnn;
        else if (*v == "mixer") cfg.prior = PriorKind::Mixer;
        else if (*v == "budget-spread") cfg.prior = PriorKind::BudgetSpread;
        else if (*v == "budget-first") cfg.prior = PriorKind::BudgetFirst;
        else throw std::invalid_argument(cat("config: unknown prior '", *v, "'"));
    }
    if (auto* v = get("subset")) cfg.subset_n = std::stoll(*v);
    if (auto* v = get("eval_subset")) cfg.eval_subset = std::stoll(*v);
    if (auto* v = get("data_dir")) cfg.data_dir = *v;
    if (auto* v = get("train_biases")) cfg.train_biases = *v == "true";
    return cfg;
}

// --------------------------------------------------------------- metrics --

std::string metrics_csv_header() { return "epoch,model,train_loss,test_top1,alpha,seconds"; }

namespace {
std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}
}  // namespace

std::string metrics_to_csv(const std::vector<MetricsRecord>& records) {
    std::string out = metrics_csv_header() + "\n";
    for (const auto& r : records)
        out += cat(r.epoch, ",", r.model, ",", fmt_double(r.train_loss), ",",
                   fmt_double(r.test_top1), ",", fmt_double(r.alpha_used), ",",
                   fmt_double(r.wall_seconds), "\n");
    return out;
}

std::vector<MetricsRecord> metrics_from_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "metrics csv is empty");
    require(line == metrics_csv_header(), "metrics csv has unexpected header '", line, "'");
    std::vector<MetricsRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        MetricsRecord r;
        std::string field;
        std::getline(ls, field, ',');
        r.epoch = std::stoll(field);
        std::getline(ls, r.model, ',');
        std::getline(ls, field, ',');
        r.train_loss = std::stod(field);
        std::getline(ls, field, ',');
        r.test_top1 = std::stod(field);
        std::getline(ls, field, ',');
        r.alpha_used = std::stod(field);
        require(static_cast<bool>(std::getline(ls, field, ',')), "metrics csv row truncated: ", line);
        r.wall_seconds = std::stod(field);
        out.push_back(std::move(r));
    }
    return out;
}

// ----------------------------------------------------------- interpolate --

void interpolate_weights_inplace(Tensor& w, const Tensor& w_p, double alpha) {
    check(w.shape == w_p.shape, "interpolate_weights: shape mismatch ", shape_str(w.shape),
          " vs ", shape_str(w_p.shape));
    check(alpha >= 0.0 && alpha <= 1.0, "interpolate_weights: alpha must be in [0,1], got ", alpha);
    if (alpha == 0.0) return;
    if (alpha == 1.0) {
        w.data = w_p.data;
        return;
    }
    const float a = static_cast<float>(alpha);
    const float one_minus = 1.0f - a;
    const std::int64_t n = w.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) w.data[i] = one_minus * w.data[i] + a * w_p.data[i];
}

Tensor interpolate_weights(const Tensor& w, const Tensor& w_p, double alpha) {
    Tensor out = w;
    interpolate_weights_inplace(out, w_p, alpha);
    return out;
}

// -------------------------------------------------------------- training --

namespace {

struct ParamSet {
    std::vector<Tensor*> params;
    std::vector<const Tensor*> grads;
    std::vector<Shape> shapes;
};

ParamSet collect_params(Model& m, bool train_biases) {
    ParamSet ps;
    for (auto& l : m.layers) {
        ps.params.push_back(&l.w);
        ps.shapes.push_back(l.w.shape);
        if (train_biases && l.b.numel()) {
            ps.params.push_back(&l.b);
            ps.shapes.push_back(l.b.shape);
        }
    }
    return ps;
}

std::vector<const Tensor*> collect_grads(Model& m, bool train_biases) {
    std::vector<const Tensor*> grads;
    for (auto& l : m.layers) {
        grads.push_back(&l.dw);
        if (train_biases && l.b.numel()) grads.push_back(&l.db);
    }
    return grads;
}

// Assemble one augmented+normalized batch as (n,3,32,32).
Tensor make_batch(const data::DatasetHandle& ds, const std::vector<std::int64_t>& order,
                  std::int64_t begin, std::int64_t end, bool do_augment, Rng& aug_rng,
                  const data::Normalizer& norm, std::vector<std::int64_t>& labels_out) {
    const std::int64_t n = end - begin;
    Tensor batch({n, 3, 32, 32});
    labels_out.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t idx = order[static_cast<std::size_t>(begin + i)];
        Tensor img = ds.pixels(idx);
        if (do_augment) img = data::augment(img, aug_rng);
        std::copy(img.data.begin(), img.data.end(), batch.data.begin() + i * data::kImageBytes);
        labels_out[static_cast<std::size_t>(i)] = ds.label(idx);
    }
    norm.apply(batch);
    return batch;
}

double train_step(Model& m, AdamState& opt, const Tensor& batch,
                  const std::vector<std::int64_t>& labels, bool train_biases) {
    Tensor input = batch;
    if (m.input_shape.size() == 1)
        input = batch.reshaped({batch.shape[0], shape_numel(m.input_shape)});
    ForwardTrace tr = forward_trace(m, input);
    Tensor probs;
    const double loss = ops::cross_entropy_forward(tr.logits, labels, &probs);
    backward(m, tr, ops::cross_entropy_backward(probs, labels));
    auto params = collect_params(m, train_biases);
    opt.step(params.params, collect_grads(m, train_biases));
    return loss;
}

}  // namespace

EpochStats train_epoch(Model& mlp, AdamState& mlp_opt, Model* paired, AdamState* paired_opt,
                       const data::DatasetHandle& train, const data::Normalizer& norm,
                       const TrainConfig& cfg, std::int64_t epoch) {
    check(train.size() > 0, "train_epoch: empty dataset");
    std::vector<std::int64_t> order(static_cast<std::size_t>(train.size()));
    for (std::int64_t i = 0; i < train.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    Rng aug_rng(derive_seed(cfg.seed, "augment", static_cast<std::uint64_t>(epoch)));

    EpochStats stats;
    std::int64_t batches = 0;
    std::vector<std::int64_t> labels;
    for (std::int64_t begin = 0; begin < train.size(); begin += cfg.batch_size) {
        const std::int64_t end = std::min<std::int64_t>(begin + cfg.batch_size, train.size());
        Tensor batch = make_batch(train, order, begin, end, cfg.augment, aug_rng, norm, labels);
        stats.mlp_loss += train_step(mlp, mlp_opt, batch, labels, cfg.train_biases);
        if (paired) stats.prior_loss += train_step(*paired, *paired_opt, batch, labels, cfg.train_biases);
        ++batches;
    }
    stats.mlp_loss /= static_cast<double>(batches);
    stats.prior_loss /= static_cast<double>(batches);
    return stats;
}

double evaluate(const Model& m, const data::DatasetHandle& test_set, const data::Normalizer& norm,
                std::int64_t limit) {
    const std::int64_t n = limit > 0 ? std::min(limit, test_set.size()) : test_set.size();
    check(n > 0, "evaluate: empty dataset");
    constexpr std::int64_t kEvalBatch = 256;
    std::int64_t correct = 0;
    std::vector<std::int64_t> labels;
    std::vector<std::int64_t> order(static_cast<std::size_t>(test_set.size()));
    for (std::int64_t i = 0; i < test_set.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    Rng no_aug(0);
    for (std::int64_t begin = 0; begin < n; begin += kEvalBatch) {
        const std::int64_t end = std::min<std::int64_t>(begin + kEvalBatch, n);
        Tensor batch = make_batch(test_set, order, begin, end, false, no_aug, norm, labels);
        Tensor input = batch;
        if (m.input_shape.size() == 1)
            input = batch.reshaped({batch.shape[0], shape_numel(m.input_shape)});
        Tensor logits = forward(m, input);
        const std::int64_t classes = logits.shape[1];
        for (std::int64_t i = 0; i < logits.shape[0]; ++i) {
            const float* row = logits.data.data() + i * classes;
            std::int64_t arg = 0;  // ties resolve to the lowest class index
            for (std::int64_t c = 1; c < classes; ++c)
                if (row[c] > row[arg]) arg = c;
            if (arg == labels[static_cast<std::size_t>(i)]) ++correct;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

namespace {

// Interpolable-layer pairing check, done before any training starts.
void check_pair(const Model& mlp, const Model& prior, const ScheduleSpec& spec) {
    const auto midx = mlp.interpolable_layers();
    const auto pidx = prior.interpolable_layers();
    check(midx.size() == pidx.size(), "pair mismatch: MLP has ", midx.size(),
          " interpolable layers, prior has ", pidx.size());
    for (std::size_t i = 0; i < midx.size(); ++i) {
        const Layer& ml = mlp.layers[midx[i]];
        const Layer& pl = prior.layers[pidx[i]];
        const std::int64_t pin = shape_numel(pl.def.in_shape);
        const std::int64_t pout = shape_numel(pl.def.out_shape);
        check(ml.w.shape[0] == pout && ml.w.shape[1] == pin, "pair mismatch at interpolable layer ",
              i, ": MLP weight ", shape_str(ml.w.shape), " vs prior flat dims (", pout, ",", pin,
              ")");
    }
    if (!spec.layer_mask.empty())
        check(spec.layer_mask.size() == midx.size(), "layer_mask length ", spec.layer_mask.size(),
              " != interpolable layer count ", midx.size());
}

void apply_interpolation(Model& mlp, const std::vector<FcEquivalent>& wps,
                         const ScheduleSpec& spec, double alpha) {
    const auto midx = mlp.interpolable_layers();
    for (std::size_t i = 0; i < midx.size(); ++i) {
        if (!spec.layer_mask.empty() && !spec.layer_mask[i]) continue;
        interpolate_weights_inplace(mlp.layers[midx[i]].w, wps[i].matrix, alpha);
    }
}

}  // namespace

RunResult run_interpolated_training(const TrainConfig& cfg, const data::DatasetHandle& train,
                                    const data::DatasetHandle& test_full) {
    check(cfg.epochs >= 1, "config: epochs must be >= 1");
    check(cfg.batch_size >= 1, "config: batch_size must be >= 1");
    check(cfg.schedule.a >= 0.0 && cfg.schedule.a <= 1.0, "config: alpha must lie in [0,1]");
    const bool has_prior = cfg.prior != PriorKind::None;
    const bool interpolating = has_prior && (cfg.schedule.mode == ScheduleMode::Constant ||
                                             cfg.schedule.mode == ScheduleMode::PolyDecay);

    InitSeeds mlp_seeds{derive_seed(cfg.seed, "mlp"), derive_seed(cfg.seed, "head")};
    RunResult result;
    result.mlp = has_prior ? build_paired_mlp(cfg.prior, mlp_seeds)
                           : build_smlp(1024, 6, 3072, 10, mlp_seeds);
    if (has_prior) {
        InitSeeds prior_seeds{derive_seed(cfg.seed, "prior"), derive_seed(cfg.seed, "head")};
        result.prior = build_prior(cfg.prior, prior_seeds);
        check_pair(result.mlp, *result.prior, cfg.schedule);
    }

    data::Normalizer norm = data::Normalizer::fit(train);
    AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;
    AdamState mlp_opt(collect_params(result.mlp, cfg.train_biases).shapes, adam_cfg);
    AdamState prior_opt;
    if (has_prior)
        prior_opt = AdamState(collect_params(*result.prior, cfg.train_biases).shapes, adam_cfg);

    for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochStats stats = train_epoch(result.mlp, mlp_opt, has_prior ? &*result.prior : nullptr,
                                       has_prior ? &prior_opt : nullptr, train, norm, cfg, epoch);
        double alpha = 0.0;
        if (interpolating) {
            alpha = schedule_alpha(cfg.schedule, epoch, cfg.epochs);
            apply_interpolation(result.mlp, extract_prior_fc(*result.prior), cfg.schedule, alpha);
        }
        if (cfg.epoch_hook)
            cfg.epoch_hook(epoch, result.mlp, has_prior ? &*result.prior : nullptr);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double mlp_top1 = evaluate(result.mlp, test_full, norm, cfg.eval_subset);
        result.metrics.push_back({epoch, "imlp", stats.mlp_loss, mlp_top1, alpha, secs});
        if (has_prior) {
            const double prior_top1 = evaluate(*result.prior, test_full, norm, cfg.eval_subset);
            result.metrics.push_back({epoch, "prior", stats.prior_loss, prior_top1, alpha, secs});
        }
    }

    result.final_mlp_top1 = evaluate(result.mlp, test_full, norm);
    if (has_prior) result.final_prior_top1 = evaluate(*result.prior, test_full, norm);
    return result;
}

RunResult run_interpolated_training(const TrainConfig& cfg) {
    require(!cfg.data_dir.empty(),
            "no dataset directory configured (--data-dir or BIASBLEND_DATA); expected canonical "
            "binary files with 3073-byte records for CIFAR-10");
    data::DatasetHandle train = data::load_cifar(cfg.data_dir, cfg.dataset, data::Split::Train);
    data::DatasetHandle test = data::load_cifar(cfg.data_dir, cfg.dataset, data::Split::Test);
    if (cfg.subset_n > 0) train = data::subset(train, cfg.subset_n, cfg.seed);
    return run_interpolated_training(cfg, train, test);
}

Model test_time_interpolate(const Model& imlp, const Model& prior, double alpha_test) {
    check(alpha_test >= 0.0 && alpha_test <= 1.0, "alpha_test must lie in [0,1], got ", alpha_test);
    ScheduleSpec all;
    check_pair(imlp, prior, all);
    Model blended = imlp;
    apply_interpolation(blended, extract_prior_fc(prior), all, alpha_test);
    return blended;
}

SweepResult alpha_sweep(const TrainConfig& base, const std::vector<double>& alphas,
                        const std::vector<std::uint64_t>& seeds,
                        const data::DatasetHandle& train, const data::DatasetHandle& test_full) {
    for (double a : alphas) check(a >= 0.0 && a <= 1.0, "sweep alpha ", a, " outside [0,1]");
    SweepResult result;
    for (double a : alphas) {
        SweepAggregate agg;
        agg.alpha = a;
        std::vector<double> vals;
        for (auto seed : seeds) {
            TrainConfig cfg = base;
            cfg.seed = seed;
            cfg.schedule.mode = ScheduleMode::Constant;
            cfg.schedule.a = a;
            RunResult run = run_interpolated_training(cfg, train, test_full);
            result.rows.push_back({a, seed, run.final_mlp_top1});
            vals.push_back(run.final_mlp_top1);
        }
        double mean = 0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double var = 0;
        for (double v : vals) var += (v - mean) * (v - mean);
        agg.mean = mean;
        agg.stddev = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
        result.table.push_back(agg);
    }
    return result;
}

}  // namespace bb
