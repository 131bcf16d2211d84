#ifndef NBCV_TRAIN_HPP
#define NBCV_TRAIN_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nbcv/data.hpp"
#include "nbcv/losses.hpp"
#include "nbcv/network.hpp"
#include "nbcv/optim.hpp"

namespace nbcv {

// Loss kinds: ce | nbc | madry | trades | rs, plus "+nbc" combinations
// (e.g. "madry+nbc" adds the consistency regularizer to the Madry loss).
struct TrainPhase {
    std::string loss = "ce";
    std::size_t epochs = 0;
    std::optional<double> beta;  // per-phase override of TrainConfig::beta
};

struct TrainConfig {
    std::vector<TrainPhase> phases;
    double beta = 1.0;
    double eps = 0.1;
    std::size_t k = 10;
    double alpha = 0.0;  // 0 means eps / 10
    GammaScheme gamma = GammaScheme::exp_rank;
    AdamParams adam;
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;
    DomainBounds domain;
    double trades_lambda = 6.0;
    double rs_weight = 1e-3;

    double effective_alpha() const { return alpha > 0.0 ? alpha : eps / 10.0; }
    void validate() const;
};

struct EpochStats {
    std::size_t epoch = 0;  // global epoch index across phases
    std::string phase;
    double loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;  // NaN when no test split was given
};
using TrainHistory = std::vector<EpochStats>;

// Runs the configured phases sequentially with Adam. Deterministic given the
// seed: one shuffling stream, per-batch adversary streams, serial updates.
// Throws on a non-finite loss.
std::pair<Network, TrainHistory> train(Network net, const Dataset& train_ds,
                                       const TrainConfig& cfg,
                                       const Dataset* test_ds = nullptr);

double accuracy(const Network& net, const Dataset& ds);
double pgd_accuracy(const Network& net, const Dataset& ds, double eps, std::size_t steps,
                    double step_size, std::size_t random_restarts, std::uint64_t seed,
                    DomainBounds domain = {});

TrainConfig train_config_from_json(const std::string& text);
std::string history_to_csv(const TrainHistory& history);

}  // namespace nbcv

#endif
