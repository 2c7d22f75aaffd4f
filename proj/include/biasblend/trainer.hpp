#pragma once

// The paired training loop: train the MLP and the prior independently each
// epoch, then pull every masked interpolable weight toward its extracted
// FC equivalent, W <- (1-alpha) W + alpha W_P. Plus the decay schedule,
// test-time-only interpolation, and evaluation.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "biasblend/adam.hpp"
#include "biasblend/dataset.hpp"
#include "biasblend/model.hpp"

namespace bb {

enum class ScheduleMode { None, Constant, PolyDecay, TestTimeOnly };

struct ScheduleSpec {
    ScheduleMode mode = ScheduleMode::None;
    double a = 0.0;           // initial interpolation weight, in [0,1]
    double k = 0.0;           // decay exponent, >= 0
    double alpha_test = 0.0;  // TestTimeOnly: weight applied once before eval
    std::vector<bool> layer_mask;  // empty = every interpolable layer
};

// alpha[t] = a (1 - t/t_max)^k for PolyDecay; a for Constant; 0 during
// training for TestTimeOnly/None. Errors on t outside [0, t_max].
double schedule_alpha(const ScheduleSpec& spec, std::int64_t t, std::int64_t t_max);

struct TrainConfig {
    std::int64_t epochs = 100;
    std::int64_t batch_size = 128;
    float lr = 1e-4f;
    std::uint64_t seed = 1;
    data::Variant dataset = data::Variant::C10;
    bool augment = true;
    ScheduleSpec schedule;
    PriorKind prior = PriorKind::None;
    std::int64_t subset_n = 0;      // 0 = full train split
    std::int64_t eval_subset = 0;   // 0 = full test split for per-epoch metrics
    std::string data_dir;
    bool train_biases = true;

    // Observer called after each epoch's interpolation (not serialized).
    std::function<void(std::int64_t epoch, const Model& mlp, const Model* prior)> epoch_hook;

    std::map<std::string, std::string> to_map() const;
    static TrainConfig from_map(const std::map<std::string, std::string>& kv);
};

struct MetricsRecord {
    std::int64_t epoch = 0;
    std::string model;  // "imlp" or "prior"
    double train_loss = 0;
    double test_top1 = 0;
    double alpha_used = 0;
    double wall_seconds = 0;
};

std::string metrics_csv_header();
std::string metrics_to_csv(const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> metrics_from_csv(const std::string& csv);

struct RunResult {
    Model mlp;
    std::optional<Model> prior;
    std::vector<MetricsRecord> metrics;
    double final_mlp_top1 = 0;
    double final_prior_top1 = 0;
};

// Elementwise convex combination, computed literally as (1-a)*w + a*w_p;
// the endpoints short-circuit so alpha=0 returns w and alpha=1 returns w_p
// bit-exactly.
Tensor interpolate_weights(const Tensor& w, const Tensor& w_p, double alpha);
void interpolate_weights_inplace(Tensor& w, const Tensor& w_p, double alpha);

// One shuffled pass with Adam updates; returns the mean batch loss.
// When `paired` is non-null both models consume identical batches.
struct EpochStats {
    double mlp_loss = 0;
    double prior_loss = 0;
};
EpochStats train_epoch(Model& mlp, AdamState& mlp_opt, Model* paired, AdamState* paired_opt,
                       const data::DatasetHandle& train, const data::Normalizer& norm,
                       const TrainConfig& cfg, std::int64_t epoch);

double evaluate(const Model& m, const data::DatasetHandle& test_set, const data::Normalizer& norm,
                std::int64_t limit = 0);

// Algorithm-level entry point: builds the pair, trains, interpolates per
// schedule, records metrics for both models. The data-dir overload loads
// (and subsets) the configured dataset first.
RunResult run_interpolated_training(const TrainConfig& cfg, const data::DatasetHandle& train,
                                    const data::DatasetHandle& test_full);
RunResult run_interpolated_training(const TrainConfig& cfg);

// One-shot convex combination of interpolable weights for models trained
// without interpolation; returns an evaluation-only model.
Model test_time_interpolate(const Model& imlp, const Model& prior, double alpha_test);

struct SweepRow {
    double alpha = 0;
    std::uint64_t seed = 0;
    double top1 = 0;
};
struct SweepAggregate {
    double alpha = 0;
    double mean = 0;
    double stddev = 0;  // sample standard deviation over seeds
};
struct SweepResult {
    std::vector<SweepRow> rows;           // one per (alpha, seed) run
    std::vector<SweepAggregate> table;    // one per alpha
};
SweepResult alpha_sweep(const TrainConfig& base, const std::vector<double>& alphas,
                        const std::vector<std::uint64_t>& seeds,
                        const data::DatasetHandle& train, const data::DatasetHandle& test_full);

}  // namespace bb
