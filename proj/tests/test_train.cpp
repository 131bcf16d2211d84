#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nbcv/data.hpp"
#include "nbcv/train.hpp"
#include "support/oracles.hpp"

using namespace nbcv;
using namespace nbcv::testing;

namespace {

TrainConfig basic_cfg(const std::string& loss, std::size_t epochs) {
    TrainConfig cfg;
    cfg.phases = {{loss, epochs, std::nullopt}};
    cfg.eps = 0.1;
    cfg.k = 3;
    cfg.batch_size = 64;
    cfg.adam.lr = 5e-3;
    cfg.seed = 0;
    return cfg;
}

std::vector<double> flatten_params(const Network& net) {
    std::vector<double> all;
    for (const Tensor* p : net.parameters()) all.insert(all.end(), p->data.begin(), p->data.end());
    return all;
}

}  // namespace

TEST_CASE("train: zero epochs returns the initial net unchanged") {
    Dataset ds = gen_synthetic(SyntheticKind::blobs, 32, 0.05, 1);
    Network net = random_mlp({2, 8, 2}, 5);
    std::vector<double> before = flatten_params(net);
    auto [out, history] = train(net, ds, basic_cfg("ce", 0));
    CHECK(flatten_params(out) == before);
    CHECK(history.empty());
}

TEST_CASE("train: separable blobs reach 100% train accuracy with CE") {
    Dataset ds = gen_synthetic(SyntheticKind::blobs, 256, 0.05, 3);
    Network net = random_mlp({2, 16, 2}, 0);
    auto [trained, history] = train(std::move(net), ds, basic_cfg("ce", 200));
    CHECK(history.back().train_acc == doctest::Approx(1.0));
}

TEST_CASE("train: identical config and seed give identical parameters") {
    Dataset ds = gen_synthetic(SyntheticKind::blobs, 96, 0.08, 4);
    TrainConfig cfg = basic_cfg("nbc", 3);
    cfg.beta = 0.5;
    auto [a, ha] = train(random_mlp({2, 8, 2}, 1), ds, cfg);
    auto [b, hb] = train(random_mlp({2, 8, 2}, 1), ds, cfg);
    CHECK(flatten_params(a) == flatten_params(b));
    CHECK(ha.size() == hb.size());
}

TEST_CASE("train: beta = 0 trajectory is bitwise equal to CE training") {
    Dataset ds = gen_synthetic(SyntheticKind::blobs, 96, 0.08, 6);
    TrainConfig ce = basic_cfg("ce", 4);
    TrainConfig nbc0 = basic_cfg("nbc", 4);
    nbc0.beta = 0.0;
    auto [a, ha] = train(random_mlp({2, 8, 2}, 2), ds, ce);
    auto [b, hb] = train(random_mlp({2, 8, 2}, 2), ds, nbc0);
    CHECK(flatten_params(a) == flatten_params(b));
    for (std::size_t e = 0; e < ha.size(); ++e) CHECK(ha[e].loss == hb[e].loss);
}

TEST_CASE("train: every loss kind runs and logs finite losses") {
    Dataset ds = gen_synthetic(SyntheticKind::blobs, 64, 0.08, 7);
    for (const std::string loss :
         {"ce", "nbc", "madry", "trades", "rs", "madry+nbc", "trades+nbc", "rs+nbc"}) {
        CAPTURE(loss);
        TrainConfig cfg = basic_cfg(loss, 2);
        auto [net, history] = train(random_mlp({2, 6, 2}, 3), ds, cfg);
        REQUIRE(history.size() == 2);
        for (const EpochStats& es : history) {
            CHECK(std::isfinite(es.loss));
            CHECK(es.phase == loss);
        }
    }
}

TEST_CASE("train: phases run sequentially and epochs are global") {
    Dataset ds = gen_synthetic(SyntheticKind::blobs, 64, 0.08, 8);
    TrainConfig cfg = basic_cfg("madry", 2);
    cfg.phases.push_back({"nbc", 3, 1.0});
    auto [net, history] = train(random_mlp({2, 6, 2}, 4), ds, cfg);
    REQUIRE(history.size() == 5);
    CHECK(history[0].phase == "madry");
    CHECK(history[4].phase == "nbc");
    for (std::size_t e = 0; e < history.size(); ++e) CHECK(history[e].epoch == e);
}

TEST_CASE("train config: validation rejects bad fields") {
    TrainConfig cfg = basic_cfg("ce", 1);
    cfg.beta = -1.0;
    CHECK_THROWS(cfg.validate());
    cfg = basic_cfg("ce", 1);
    cfg.eps = -0.5;
    CHECK_THROWS(cfg.validate());
    cfg = basic_cfg("ce", 1);
    cfg.alpha = -1.0;
    CHECK_THROWS(cfg.validate());
    cfg = basic_cfg("nope", 1);
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("train config: JSON round-trip of the phase schedule") {
    std::string text = R"({
        "phases": [{"loss": "rs", "epochs": 2}, {"loss": "nbc", "epochs": 3, "beta": 2.5}],
        "epsilon": 0.2, "k": 5, "gamma": "exp_rank", "lr": 0.01,
        "batch_size": 32, "seed": 9, "trades_lambda": 4.0, "rs_weight": 0.002
    })";
    TrainConfig cfg = train_config_from_json(text);
    REQUIRE(cfg.phases.size() == 2);
    CHECK(cfg.phases[0].loss == "rs");
    CHECK(cfg.phases[1].beta.value() == 2.5);
    CHECK(cfg.eps == 0.2);
    CHECK(cfg.k == 5);
    CHECK(cfg.effective_alpha() == doctest::Approx(0.02));  // defaults to eps/10
    CHECK(cfg.adam.lr == 0.01);
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.seed == 9);
}

TEST_CASE("train history CSV carries epoch, phase, loss and accuracies") {
    Dataset ds = gen_synthetic(SyntheticKind::blobs, 64, 0.05, 9);
    auto [net, history] = train(random_mlp({2, 6, 2}, 5), ds, basic_cfg("ce", 2), &ds);
    std::string csv = history_to_csv(history);
    CHECK(csv.rfind("epoch,phase,loss,train_acc,test_acc\n", 0) == 0);
    CHECK(csv.find("\n0,ce,") != std::string::npos);
    CHECK(csv.find("\n1,ce,") != std::string::npos);
}

TEST_CASE("accuracy and pgd_accuracy bound each other") {
    Dataset ds = gen_synthetic(SyntheticKind::blobs, 128, 0.05, 10);
    auto [net, history] = train(random_mlp({2, 16, 2}, 6), ds, basic_cfg("ce", 60));
    double clean = accuracy(net, ds);
    double robust = pgd_accuracy(net, ds, 0.05, 10, 0.0125, 1, 0);
    CHECK(clean >= robust);  // an attack can only lower accuracy
    CHECK(clean > 0.9);
}
