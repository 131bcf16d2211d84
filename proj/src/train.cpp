#include "nbcv/train.hpp"

#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <numeric>
#include <stdexcept>

namespace nbcv {

using nlohmann::json;

namespace {

struct LossKind {
    enum class Base { ce, madry, trades, rs } base = Base::ce;
    bool plus_nbc = false;
};

LossKind parse_loss_kind(const std::string& name) {
    auto base_of = [](const std::string& s) {
        if (s == "ce") return LossKind::Base::ce;
        if (s == "madry") return LossKind::Base::madry;
        if (s == "trades") return LossKind::Base::trades;
        if (s == "rs") return LossKind::Base::rs;
        throw std::invalid_argument("unknown loss kind: " + s);
    };
    LossKind kind;
    if (name == "nbc") {
        kind.base = LossKind::Base::ce;
        kind.plus_nbc = true;
        return kind;
    }
    auto plus = name.find("+nbc");
    if (plus != std::string::npos && plus + 4 == name.size()) {
        kind.base = base_of(name.substr(0, plus));
        kind.plus_nbc = true;
        return kind;
    }
    kind.base = base_of(name);
    return kind;
}

}  // namespace

void TrainConfig::validate() const {
    if (beta < 0.0) throw std::invalid_argument("TrainConfig: beta must be >= 0");
    if (eps < 0.0) throw std::invalid_argument("TrainConfig: eps must be >= 0");
    if (alpha < 0.0) throw std::invalid_argument("TrainConfig: alpha must be > 0 when set");
    if (k > 0 && eps > 0.0 && effective_alpha() <= 0.0)
        throw std::invalid_argument("TrainConfig: alpha must be > 0 when k > 0");
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be > 0");
    if (domain.lo > domain.hi) throw std::invalid_argument("TrainConfig: empty input domain");
    for (const TrainPhase& p : phases) {
        parse_loss_kind(p.loss);
        if (p.beta && *p.beta < 0.0)
            throw std::invalid_argument("TrainConfig: phase beta must be >= 0");
    }
}

std::pair<Network, TrainHistory> train(Network net, const Dataset& train_ds,
                                       const TrainConfig& cfg, const Dataset* test_ds) {
    cfg.validate();
    if (train_ds.size() == 0) throw std::invalid_argument("train: empty dataset");

    double alpha = cfg.effective_alpha();
    AdamState adam_state;
    TrainHistory history;
    RngStream shuffle_rng(cfg.seed, "train/shuffle");

    std::vector<std::size_t> order(train_ds.size());
    std::iota(order.begin(), order.end(), 0);

    std::size_t global_epoch = 0;
    for (const TrainPhase& phase : cfg.phases) {
        LossKind kind = parse_loss_kind(phase.loss);
        double beta = phase.beta ? *phase.beta : cfg.beta;
        bool with_nbc = kind.plus_nbc && beta != 0.0;
        GammaFactors gamma;
        if (with_nbc) gamma = gamma_factors(net.hidden_layer_sizes(), cfg.gamma);

        BaselineConfig bl;
        bl.eps = cfg.eps;
        bl.k = cfg.k;
        bl.alpha = alpha;
        bl.trades_lambda = cfg.trades_lambda;
        bl.rs_weight = cfg.rs_weight;
        bl.domain = cfg.domain;

        for (std::size_t e = 0; e < phase.epochs; ++e, ++global_epoch) {
            shuffle_rng.shuffle(order);
            double loss_sum = 0.0;
            std::size_t batch_count = 0;

            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                std::size_t end = std::min(start + cfg.batch_size, order.size());
                RngStream adv_rng(cfg.seed, "train/adv/" + std::to_string(global_epoch) + "/" +
                                                std::to_string(batch_count));

                // inner adversaries use the pre-update parameters; they are
                // detached constants in the loss graph. The tape holds views,
                // so the vector must never reallocate once views exist.
                std::vector<Tensor> adv_inputs;
                adv_inputs.reserve(2 * (end - start));
                Tape tape;
                NetGraph graph(tape, net, /*params_require_grad=*/true);
                std::vector<Tape::NodeId> sample_losses;

                for (std::size_t bi = start; bi < end; ++bi) {
                    const Tensor& x = train_ds.inputs[order[bi]];
                    std::size_t y = train_ds.labels[order[bi]];

                    Tape::NodeId total;
                    Tape::NodeId x_node = tape.constant_view(x);
                    switch (kind.base) {
                        case LossKind::Base::ce: {
                            total = tape.ce_softmax(graph.forward(x_node), y);
                            break;
                        }
                        case LossKind::Base::madry: {
                            adv_inputs.push_back(pgd_attack(net, x, y, cfg.eps, cfg.k, alpha,
                                                            cfg.domain, adv_rng, 1));
                            Tape::NodeId xa = tape.constant_view(adv_inputs.back());
                            total = tape.ce_softmax(graph.forward(xa), y);
                            break;
                        }
                        case LossKind::Base::trades: {
                            adv_inputs.push_back(
                                find_adversary_kl(net, x, cfg.eps, cfg.k, alpha, cfg.domain,
                                                  adv_rng));
                            Tape::NodeId xa = tape.constant_view(adv_inputs.back());
                            Tape::NodeId ce = tape.ce_softmax(graph.forward(x_node), y);
                            Tape::NodeId kl =
                                tape.kl_softmax(graph.forward(x_node), graph.forward(xa));
                            total = tape.lincomb({ce, kl}, {1.0, cfg.trades_lambda});
                            break;
                        }
                        case LossKind::Base::rs: {
                            Tape::NodeId ce = tape.ce_softmax(graph.forward(x_node), y);
                            Tensor lo = x, hi = x;
                            for (std::size_t i = 0; i < x.size(); ++i) {
                                lo[i] = std::max(x[i] - cfg.eps, cfg.domain.lo);
                                hi[i] = std::min(x[i] + cfg.eps, cfg.domain.hi);
                            }
                            std::vector<std::pair<Tape::NodeId, Tape::NodeId>> pre_bounds;
                            graph.interval_forward(lo, hi, pre_bounds);
                            std::vector<Tape::NodeId> terms{ce};
                            std::vector<double> coeffs{1.0};
                            for (auto [l, u] : pre_bounds) {
                                Tape::NodeId t =
                                    tape.sum(tape.tanh_of(tape.shift(tape.mul(l, u), 1.0)));
                                terms.push_back(t);
                                coeffs.push_back(-cfg.rs_weight);
                            }
                            total = tape.lincomb(terms, coeffs);
                            break;
                        }
                    }

                    if (with_nbc) {
                        adv_inputs.push_back(find_adversary_nbc(net, x, gamma, cfg.eps, cfg.k,
                                                                alpha, cfg.domain, adv_rng));
                        Tape::NodeId xp = tape.constant_view(adv_inputs.back());
                        Tape::NodeId score = nbc_score_graph(tape, graph, x_node, xp, gamma);
                        total = tape.lincomb({total, score}, {1.0, -beta});
                    }
                    sample_losses.push_back(total);
                }

                std::vector<double> mean_coeffs(sample_losses.size(),
                                                1.0 / static_cast<double>(sample_losses.size()));
                Tape::NodeId batch_loss = tape.lincomb(sample_losses, mean_coeffs);
                double loss_value = tape.value(batch_loss)[0];
                if (!std::isfinite(loss_value))
                    throw std::runtime_error(
                        "train: non-finite loss in phase '" + phase.loss + "', epoch " +
                        std::to_string(global_epoch) + ", batch " + std::to_string(batch_count));

                tape.backward(batch_loss);
                std::vector<Tensor> grads;
                grads.reserve(graph.param_nodes().size());
                for (Tape::NodeId pid : graph.param_nodes()) grads.push_back(tape.gradient(pid));
                adam_step(net.parameters(), grads, adam_state, cfg.adam);

                loss_sum += loss_value;
                batch_count += 1;
            }

            EpochStats es;
            es.epoch = global_epoch;
            es.phase = phase.loss;
            es.loss = batch_count ? loss_sum / static_cast<double>(batch_count) : 0.0;
            es.train_acc = accuracy(net, train_ds);
            es.test_acc = test_ds ? accuracy(net, *test_ds)
                                  : std::numeric_limits<double>::quiet_NaN();
            history.push_back(es);
        }
    }
    return {std::move(net), std::move(history)};
}

double accuracy(const Network& net, const Dataset& ds) {
    if (ds.size() == 0) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (argmax_index(net.forward(ds.inputs[i]).logits) == ds.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

double pgd_accuracy(const Network& net, const Dataset& ds, double eps, std::size_t steps,
                    double step_size, std::size_t random_restarts, std::uint64_t seed,
                    DomainBounds domain) {
    if (ds.size() == 0) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        RngStream rng(seed, "pgd_eval/" + std::to_string(i));
        Tensor adv = pgd_attack(net, ds.inputs[i], ds.labels[i], eps, steps, step_size, domain,
                                rng, random_restarts);
        if (argmax_index(net.forward(adv).logits) == ds.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

TrainConfig train_config_from_json(const std::string& text) {
    json doc = json::parse(text);
    TrainConfig cfg;
    for (const json& jp : doc.at("phases")) {
        TrainPhase p;
        p.loss = jp.at("loss").get<std::string>();
        p.epochs = jp.at("epochs").get<std::size_t>();
        if (jp.contains("beta")) p.beta = jp["beta"].get<double>();
        cfg.phases.push_back(std::move(p));
    }
    if (doc.contains("beta")) cfg.beta = doc["beta"].get<double>();
    if (doc.contains("epsilon")) cfg.eps = doc["epsilon"].get<double>();
    if (doc.contains("k")) cfg.k = doc["k"].get<std::size_t>();
    if (doc.contains("alpha")) cfg.alpha = doc["alpha"].get<double>();
    if (doc.contains("gamma")) cfg.gamma = parse_gamma_scheme(doc["gamma"].get<std::string>());
    if (doc.contains("lr")) cfg.adam.lr = doc["lr"].get<double>();
    if (doc.contains("adam_eps")) cfg.adam.eps = doc["adam_eps"].get<double>();
    if (doc.contains("batch_size")) cfg.batch_size = doc["batch_size"].get<std::size_t>();
    if (doc.contains("seed")) cfg.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("trades_lambda")) cfg.trades_lambda = doc["trades_lambda"].get<double>();
    if (doc.contains("rs_weight")) cfg.rs_weight = doc["rs_weight"].get<double>();
    if (doc.contains("domain")) {
        auto d = doc["domain"].get<std::vector<double>>();
        if (d.size() != 2) throw std::invalid_argument("train config: domain must be [lo, hi]");
        cfg.domain = {d[0], d[1]};
    }
    cfg.validate();
    return cfg;
}

std::string history_to_csv(const TrainHistory& history) {
    std::string out = "epoch,phase,loss,train_acc,test_acc\n";
    char line[160];
    for (const EpochStats& es : history) {
        std::snprintf(line, sizeof line, "%zu,%s,%.9g,%.6g,%.6g\n", es.epoch, es.phase.c_str(),
                      es.loss, es.train_acc, es.test_acc);
        out += line;
    }
    return out;
}

}  // namespace nbcv
