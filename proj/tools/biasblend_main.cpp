// biasblend: configuration-driven experiment runner for interpolated-MLP
// training. Subcommands: train, sweep, selftest, budget-compare, gen-data.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "biasblend/selftest.hpp"
#include "biasblend/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace bb;

namespace {

// ------------------------------------------------------------- config io --

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open config file ", path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, path, ":", lineno, ": expected key = value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

std::uint64_t config_hash(const std::map<std::string, std::string>& kv) {
    std::string canon;
    for (const auto& [k, v] : kv) canon += k + "=" + v + "\n";
    return fnv1a64(canon);
}

std::string hash_hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

std::string iso_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%FT%TZ", &tm);
    return buf;
}

// Refuses a rerun into a directory whose manifest carries the same config
// hash (or any manifest at all) unless forced.
void write_manifest(const fs::path& out_dir, const std::map<std::string, std::string>& kv,
                    bool force, const std::string& status) {
    const fs::path mpath = out_dir / "manifest.json";
    const std::string hash = hash_hex(config_hash(kv));
    if (status == "running" && fs::exists(mpath) && !force) {
        std::ifstream in(mpath);
        json old = json::parse(in, nullptr, false);
        const std::string old_hash = old.is_object() ? old.value("config_hash", "") : "";
        require(false, "run directory ", out_dir.string(), " already has a manifest (",
                old_hash == hash ? "identical config hash " : "different config hash ", old_hash,
                "); use --force to overwrite");
    }
    json m;
    m["config"] = kv;
    m["config_hash"] = hash;
    m["out_dir"] = out_dir.string();
    m["status"] = status;
    m[status == "running" ? "started" : "finished"] = iso_now();
    if (status != "running" && fs::exists(mpath)) {
        std::ifstream in(mpath);
        json old = json::parse(in);
        m["started"] = old.value("started", "");
    }
    std::ofstream out(mpath);
    out << m.dump(2) << "\n";
}

// ----------------------------------------------------------- train flags --

struct TrainCli {
    std::string config_file, out_dir = "runs/run", data_dir, prior = "none";
    double alpha = -1, decay_a = -1, decay_k = -1, test_time_alpha = -1;
    std::int64_t epochs = -1, batch_size = -1, subset = -1, eval_subset = -1;
    double lr = -1;
    std::int64_t seed = -1;
    std::string dataset;
    bool no_augment = false, no_interp = false, no_bias = false, force = false;
    bool no_checkpoints = false;
};

void add_train_flags(CLI::App* cmd, TrainCli& tc) {
    cmd->add_option("--config", tc.config_file, "flat key=value config file");
    cmd->add_option("--out", tc.out_dir, "run output directory");
    cmd->add_option("--data-dir", tc.data_dir, "dataset directory (env BIASBLEND_DATA)");
    cmd->add_option("--prior", tc.prior, "prior model: cnn, mixer, none")
        ->check(CLI::IsMember({"cnn", "mixer", "none", "budget-spread", "budget-first"}));
    cmd->add_option("--alpha", tc.alpha, "constant interpolation weight in [0,1]");
    cmd->add_option("--decay-a", tc.decay_a, "decay schedule initial weight a");
    cmd->add_option("--decay-k", tc.decay_k, "decay schedule exponent k");
    cmd->add_option("--test-time-alpha", tc.test_time_alpha,
                    "train without interpolation, blend once before eval");
    cmd->add_option("--epochs", tc.epochs, "training epochs");
    cmd->add_option("--batch-size", tc.batch_size, "batch size");
    cmd->add_option("--lr", tc.lr, "Adam learning rate");
    cmd->add_option("--seed", tc.seed, "run seed");
    cmd->add_option("--subset", tc.subset, "stratified train subset size (0 = full)");
    cmd->add_option("--eval-subset", tc.eval_subset, "per-epoch eval subset (0 = full test)");
    cmd->add_option("--dataset", tc.dataset, "cifar10 or cifar100")
        ->check(CLI::IsMember({"cifar10", "cifar100"}));
    cmd->add_flag("--no-augment", tc.no_augment, "disable crop/flip augmentation");
    cmd->add_flag("--no-interp", tc.no_interp, "disable interpolation (schedule none)");
    cmd->add_flag("--no-bias", tc.no_bias, "freeze biases at zero");
    cmd->add_flag("--force", tc.force, "overwrite an existing run directory");
    cmd->add_flag("--no-checkpoints", tc.no_checkpoints, "skip checkpoint files");
}

// Merge config file + CLI overrides into a TrainConfig (CLI wins).
TrainConfig resolve_config(const TrainCli& tc) {
    std::map<std::string, std::string> kv;
    if (!tc.config_file.empty()) kv = read_config_file(tc.config_file);
    auto set = [&](const char* key, auto value) { kv[key] = cat(value); };
    if (tc.epochs >= 0) set("epochs", tc.epochs);
    if (tc.batch_size >= 0) set("batch_size", tc.batch_size);
    if (tc.lr >= 0) set("lr", tc.lr);
    if (tc.seed >= 0) set("seed", tc.seed);
    if (!tc.dataset.empty()) set("dataset", tc.dataset);
    if (tc.no_augment) set("augment", "false");
    if (tc.subset >= 0) set("subset", tc.subset);
    if (tc.eval_subset >= 0) set("eval_subset", tc.eval_subset);
    if (tc.no_bias) set("train_biases", "false");
    if (tc.prior != "none" || !kv.count("prior")) set("prior", tc.prior);

    if (tc.no_interp) {
        set("schedule", "none");
    } else if (tc.test_time_alpha >= 0) {
        set("schedule", "test-time-only");
        set("test_time_alpha", tc.test_time_alpha);
    } else if (tc.decay_k >= 0) {
        set("schedule", "poly-decay");
        set("alpha", tc.decay_a >= 0 ? tc.decay_a : 0.5);
        set("decay_k", tc.decay_k);
    } else if (tc.alpha >= 0) {
        set("schedule", "constant");
        set("alpha", tc.alpha);
    }

    if (!tc.data_dir.empty()) {
        set("data_dir", tc.data_dir);
    } else if (!kv.count("data_dir") || kv["data_dir"].empty()) {
        if (const char* env = std::getenv("BIASBLEND_DATA")) set("data_dir", env);
    }
    return TrainConfig::from_map(kv);
}

// --------------------------------------------------------------- cmd_train

int cmd_train(const TrainCli& tc) {
    TrainConfig cfg = resolve_config(tc);
    if (cfg.prior == PriorKind::None && cfg.schedule.mode != ScheduleMode::None &&
        cfg.schedule.mode != ScheduleMode::TestTimeOnly && cfg.schedule.a != 0.0) {
        std::cerr << "error: field 'prior' is none but an interpolation schedule is set\n";
        return 2;
    }
    const fs::path out_dir = tc.out_dir;
    fs::create_directories(out_dir);
    const auto kv = cfg.to_map();
    write_manifest(out_dir, kv, tc.force, "running");

    RunResult run = run_interpolated_training(cfg);

    std::ofstream(out_dir / "metrics.csv") << metrics_to_csv(run.metrics);
    json summary;
    summary["config"] = kv;
    summary["config_hash"] = hash_hex(config_hash(kv));
    summary["final_mlp_top1"] = run.final_mlp_top1;
    if (run.prior) summary["final_prior_top1"] = run.final_prior_top1;
    if (cfg.schedule.mode == ScheduleMode::TestTimeOnly && run.prior) {
        data::DatasetHandle test = data::load_cifar(cfg.data_dir, cfg.dataset, data::Split::Test);
        data::DatasetHandle train = data::load_cifar(cfg.data_dir, cfg.dataset, data::Split::Train);
        if (cfg.subset_n > 0) train = data::subset(train, cfg.subset_n, cfg.seed);
        Model blended = test_time_interpolate(run.mlp, *run.prior, cfg.schedule.alpha_test);
        summary["test_time_top1"] =
            evaluate(blended, test, data::Normalizer::fit(train));
        summary["test_time_alpha"] = cfg.schedule.alpha_test;
    }
    std::ofstream(out_dir / "summary.json") << summary.dump(2) << "\n";
    if (!tc.no_checkpoints) {
        save_checkpoint(run.mlp, (out_dir / "mlp.ckpt").string(), cfg.seed, cfg.epochs);
        if (run.prior)
            save_checkpoint(*run.prior, (out_dir / "prior.ckpt").string(), cfg.seed, cfg.epochs);
    }
    write_manifest(out_dir, kv, true, "done");
    std::cout << "final mlp top1: " << run.final_mlp_top1;
    if (run.prior) std::cout << "   prior top1: " << run.final_prior_top1;
    std::cout << "\nrun written to " << out_dir.string() << "\n";
    return 0;
}

// --------------------------------------------------------------- cmd_sweep

struct SweepPoint {
    double value;  // alpha or k
    std::uint64_t seed;
    fs::path dir;
};

int cmd_sweep(const TrainCli& tc, const std::vector<double>& alphas,
              const std::vector<double>& decay_ks, std::vector<std::uint64_t> seeds,
              int jobs) {
    require(alphas.empty() != decay_ks.empty(),
            "sweep needs exactly one of --alphas or --decay-ks");
    if (seeds.empty()) seeds = {1};
    const bool decay_sweep = !decay_ks.empty();
    const auto& values = decay_sweep ? decay_ks : alphas;

    const fs::path out_dir = tc.out_dir;
    fs::create_directories(out_dir);

    std::vector<SweepPoint> points;
    for (double v : values)
        for (auto seed : seeds) {
            std::ostringstream name;
            name << (decay_sweep ? "k" : "alpha") << "_" << v << "_seed_" << seed;
            points.push_back({v, seed, out_dir / name.str()});
        }

    // Launch each point as an independent child `train` process, at most
    // `jobs` in flight; the parent only aggregates files afterwards.
    char exe[4096];
    const ssize_t len = readlink("/proc/self/exe", exe, sizeof exe - 1);
    require(len > 0, "cannot resolve /proc/self/exe");
    exe[len] = '\0';

    std::vector<pid_t> live;
    int failures = 0;
    auto reap_one = [&]() {
        int status = 0;
        const pid_t pid = wait(&status);
        if (pid > 0 && (!WIFEXITED(status) || WEXITSTATUS(status) != 0)) ++failures;
        for (auto it = live.begin(); it != live.end(); ++it)
            if (*it == pid) {
                live.erase(it);
                break;
            }
    };

    for (const auto& pt : points) {
        while (static_cast<int>(live.size()) >= std::max(1, jobs)) reap_one();
        std::vector<std::string> args = {exe, "train", "--out", pt.dir.string(),
                                         "--seed", std::to_string(pt.seed)};
        if (decay_sweep) {
            args.insert(args.end(), {"--decay-a", cat(tc.decay_a >= 0 ? tc.decay_a : 0.5),
                                     "--decay-k", cat(pt.value)});
        } else {
            args.insert(args.end(), {"--alpha", cat(pt.value)});
        }
        auto pass_through = [&](const char* flag, auto v, auto unset) {
            if (v != unset) args.insert(args.end(), {flag, cat(v)});
        };
        pass_through("--epochs", tc.epochs, std::int64_t{-1});
        pass_through("--batch-size", tc.batch_size, std::int64_t{-1});
        pass_through("--subset", tc.subset, std::int64_t{-1});
        pass_through("--eval-subset", tc.eval_subset, std::int64_t{-1});
        pass_through("--lr", tc.lr, -1.0);
        if (!tc.data_dir.empty()) args.insert(args.end(), {"--data-dir", tc.data_dir});
        if (!tc.dataset.empty()) args.insert(args.end(), {"--dataset", tc.dataset});
        if (!tc.prior.empty()) args.insert(args.end(), {"--prior", tc.prior});
        if (!tc.config_file.empty()) args.insert(args.end(), {"--config", tc.config_file});
        if (tc.no_augment) args.push_back("--no-augment");
        if (tc.no_bias) args.push_back("--no-bias");
        if (tc.force) args.push_back("--force");
        args.push_back("--no-checkpoints");

        const pid_t pid = fork();
        require(pid >= 0, "fork failed");
        if (pid == 0) {
            std::vector<char*> argv;
            for (auto& a : args) argv.push_back(a.data());
            argv.push_back(nullptr);
            execv(exe, argv.data());
            _exit(127);
        }
        live.push_back(pid);
    }
    while (!live.empty()) reap_one();

    // aggregate: one row per point, then mean +- sample std per value
    std::map<double, std::vector<double>> by_value;
    std::ostringstream rows;
    rows << (decay_sweep ? "k" : "alpha") << ",seed,top1\n";
    for (const auto& pt : points) {
        const fs::path sj = pt.dir / "summary.json";
        if (!fs::exists(sj)) {
            std::cerr << "missing " << sj.string() << " (point failed?)\n";
            continue;
        }
        std::ifstream in(sj);
        json s = json::parse(in);
        const double top1 = s.at("final_mlp_top1").get<double>();
        by_value[pt.value].push_back(top1);
        rows << pt.value << "," << pt.seed << "," << top1 << "\n";
    }
    std::ostringstream agg;
    agg << (decay_sweep ? "k" : "alpha") << ",mean,std\n";
    std::cout << (decay_sweep ? "k" : "alpha") << "      mean    std\n";
    for (const auto& [v, vals] : by_value) {
        double mean = 0;
        for (double x : vals) mean += x;
        mean /= static_cast<double>(vals.size());
        double var = 0;
        for (double x : vals) var += (x - mean) * (x - mean);
        const double sd = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0;
        agg << v << "," << mean << "," << sd << "\n";
        std::cout << v << "   " << mean << "   " << sd << "\n";
    }
    std::ofstream(out_dir / "points.csv") << rows.str();
    std::ofstream(out_dir / "aggregate.csv") << agg.str();
    if (failures) std::cerr << failures << " sweep point(s) failed\n";
    return failures ? 1 : 0;
}

// ------------------------------------------------------- cmd_budget_compare

int cmd_budget_compare(const TrainCli& tc, std::vector<std::uint64_t> seeds, double alpha) {
    if (seeds.empty()) seeds = {1, 2, 3};
    TrainConfig base = resolve_config(tc);
    if (base.epochs == 100 && tc.epochs < 0) base.epochs = 4;  // desk-scale default

    require(!base.data_dir.empty(),
            "no dataset directory configured (--data-dir or BIASBLEND_DATA); expected canonical "
            "binary files with 3073-byte records for CIFAR-10");
    data::DatasetHandle train = data::load_cifar(base.data_dir, base.dataset, data::Split::Train);
    data::DatasetHandle test = data::load_cifar(base.data_dir, base.dataset, data::Split::Test);
    if (base.subset_n > 0) train = data::subset(train, base.subset_n, base.seed);

    auto models = build_budgeted_mlps();
    std::cout << "MLP-1 total params: " << models.first.param_count()
              << "  interpolated: " << models.first.interpolated_param_count() << "\n";
    std::cout << "MLP-2 total params: " << models.second.param_count()
              << "  interpolated: " << models.second.interpolated_param_count() << "\n";

    auto run_case = [&](PriorKind prior, bool interp, std::uint64_t seed) {
        TrainConfig cfg = base;
        cfg.prior = prior;
        cfg.seed = seed;
        cfg.schedule.mode = interp ? ScheduleMode::Constant : ScheduleMode::None;
        cfg.schedule.a = interp ? alpha : 0.0;
        return run_interpolated_training(cfg, train, test).final_mlp_top1;
    };

    double b1 = 0, i1 = 0, b2 = 0, i2 = 0;
    for (auto seed : seeds) {
        b1 += run_case(PriorKind::BudgetSpread, false, seed);
        i1 += run_case(PriorKind::BudgetSpread, true, seed);
        b2 += run_case(PriorKind::BudgetFirst, false, seed);
        i2 += run_case(PriorKind::BudgetFirst, true, seed);
    }
    const double n = static_cast<double>(seeds.size());
    b1 /= n; i1 /= n; b2 /= n; i2 /= n;

    std::cout << "\nmodel   baseline  cnn-interpolated  gain\n";
    std::cout << "MLP-1   " << b1 << "   " << i1 << "   " << (i1 - b1) << "\n";
    std::cout << "MLP-2   " << b2 << "   " << i2 << "   " << (i2 - b2) << "\n";
    std::cout << (i2 - b2 > i1 - b1
                      ? "first-layer-concentrated interpolation gains more\n"
                      : "WARNING: spread interpolation gained more at this desk scale\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"interpolated-MLP training experiments"};
    app.require_subcommand(1);

    TrainCli train_cli;
    CLI::App* train = app.add_subcommand("train", "single training run");
    add_train_flags(train, train_cli);

    TrainCli sweep_cli;
    std::vector<double> sweep_alphas, sweep_ks;
    std::vector<std::uint64_t> sweep_seeds;
    int jobs = 1;
    CLI::App* sweep = app.add_subcommand("sweep", "alpha or decay-rate sweep");
    add_train_flags(sweep, sweep_cli);
    sweep->add_option("--alphas", sweep_alphas, "alpha grid")->delimiter(',');
    sweep->add_option("--decay-ks", sweep_ks, "decay exponent grid")->delimiter(',');
    sweep->add_option("--seeds", sweep_seeds, "seeds per point")->delimiter(',');
    sweep->add_option("--jobs", jobs, "max concurrent child processes");

    bool inject_fault = false;
    CLI::App* selftest = app.add_subcommand("selftest", "dataset-free equivalence checks");
    selftest->add_flag("--inject-conv-fault", inject_fault,
                       "corrupt one conversion to prove the check bites");

    TrainCli budget_cli;
    std::vector<std::uint64_t> budget_seeds;
    double budget_alpha = 0.5;
    CLI::App* budget = app.add_subcommand("budget-compare",
                                          "fixed-budget first-layer vs spread interpolation");
    add_train_flags(budget, budget_cli);
    budget->add_option("--seeds", budget_seeds, "seeds")->delimiter(',');
    budget->add_option("--budget-alpha", budget_alpha, "interpolation weight");

    std::string gen_dir = "data/synthetic", gen_dataset = "cifar10";
    std::uint64_t gen_seed = 7;
    std::int64_t gen_train_n = 10000, gen_test_n = 10000;
    CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic dataset in CIFAR layout");
    gen->add_option("--out", gen_dir, "output directory");
    gen->add_option("--dataset", gen_dataset)->check(CLI::IsMember({"cifar10", "cifar100"}));
    gen->add_option("--seed", gen_seed);
    gen->add_option("--train-n", gen_train_n);
    gen->add_option("--test-n", gen_test_n);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return cmd_train(train_cli);
        if (*sweep) return cmd_sweep(sweep_cli, sweep_alphas, sweep_ks, sweep_seeds, jobs);
        if (*selftest) return run_selftest(std::cout, inject_fault) == 0 ? 0 : 1;
        if (*budget) return cmd_budget_compare(budget_cli, budget_seeds, budget_alpha);
        if (*gen) {
            data::write_synthetic_cifar(gen_dir,
                                        gen_dataset == "cifar10" ? data::Variant::C10
                                                                 : data::Variant::C100,
                                        gen_seed, gen_train_n, gen_test_n);
            std::cout << "synthetic dataset written to " << gen_dir << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
