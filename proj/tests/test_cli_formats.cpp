#include <doctest.h>

#include "biasblend/common.hpp"
#include "biasblend/trainer.hpp"

using namespace bb;

TEST_CASE("train config round-trips through its key/value map") {
    TrainConfig cfg;
    cfg.epochs = 17;
    cfg.batch_size = 64;
    cfg.lr = 3e-4f;
    cfg.seed = 99;
    cfg.dataset = data::Variant::C100;
    cfg.augment = false;
    cfg.schedule.mode = ScheduleMode::PolyDecay;
    cfg.schedule.a = 0.5;
    cfg.schedule.k = 2.0;
    cfg.prior = PriorKind::Mixer;
    cfg.subset_n = 1234;
    cfg.eval_subset = 55;
    cfg.data_dir = "/tmp/somewhere";
    cfg.train_biases = false;

    TrainConfig back = TrainConfig::from_map(cfg.to_map());
    CHECK(back.epochs == cfg.epochs);
    CHECK(back.batch_size == cfg.batch_size);
    CHECK(back.lr == cfg.lr);
    CHECK(back.seed == cfg.seed);
    CHECK(back.dataset == cfg.dataset);
    CHECK(back.augment == cfg.augment);
    CHECK(back.schedule.mode == cfg.schedule.mode);
    CHECK(back.schedule.a == cfg.schedule.a);
    CHECK(back.schedule.k == cfg.schedule.k);
    CHECK(back.prior == cfg.prior);
    CHECK(back.subset_n == cfg.subset_n);
    CHECK(back.eval_subset == cfg.eval_subset);
    CHECK(back.data_dir == cfg.data_dir);
    CHECK(back.train_biases == cfg.train_biases);
}

TEST_CASE("config map rejects unknown enum spellings") {
    std::map<std::string, std::string> kv{{"dataset", "cifar11"}};
    CHECK_THROWS_AS((void)TrainConfig::from_map(kv), std::invalid_argument);
    kv = {{"prior", "vit"}};
    CHECK_THROWS_AS((void)TrainConfig::from_map(kv), std::invalid_argument);
    kv = {{"schedule", "cosine"}};
    CHECK_THROWS_AS((void)TrainConfig::from_map(kv), std::invalid_argument);
}

TEST_CASE("fnv1a64 is stable and sensitive") {
    // reference value for the one-byte string "a"
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("epochs=10\n") != fnv1a64("epochs=11\n"));
    CHECK(fnv1a64("abc") == fnv1a64("abc"));
}

TEST_CASE("metrics CSV round-trips losslessly") {
    std::vector<MetricsRecord> recs = {
        {1, "imlp", 2.302585092994046, 10.5, 0.005, 1.25},
        {1, "prior", 1.9876543210987654, 22.25, 0.005, 1.25},
        {2, "imlp", 0.1234567890123456, 33.75, 0.0025, 0.5},
    };
    const std::string csv = metrics_to_csv(recs);
    CHECK(csv.substr(0, csv.find('\n')) == "epoch,model,train_loss,test_top1,alpha,seconds");
    auto back = metrics_from_csv(csv);
    REQUIRE(back.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(back[i].epoch == recs[i].epoch);
        CHECK(back[i].model == recs[i].model);
        CHECK(back[i].train_loss == recs[i].train_loss);
        CHECK(back[i].test_top1 == recs[i].test_top1);
        CHECK(back[i].alpha_used == recs[i].alpha_used);
        CHECK(back[i].wall_seconds == recs[i].wall_seconds);
    }
}

TEST_CASE("metrics CSV rejects malformed input") {
    CHECK_THROWS_AS((void)metrics_from_csv(""), std::runtime_error);
    CHECK_THROWS_AS((void)metrics_from_csv("wrong,header\n"), std::runtime_error);
    CHECK_THROWS_AS((void)metrics_from_csv(metrics_csv_header() + "\n1,imlp,0.5\n"),
                    std::runtime_error);
}
