#ifndef NBCV_LOSSES_HPP
#define NBCV_LOSSES_HPP

#include <string>
#include <vector>

#include "nbcv/autograd.hpp"
#include "nbcv/network.hpp"
#include "nbcv/rng.hpp"
#include "nbcv/tensor.hpp"

namespace nbcv {

// v.v' / (|v||v'|); returns 0 if either norm is below 1e-12 (dead layer)
double cosine_similarity(const std::vector<double>& v, const std::vector<double>& vp);

// KL(p || q) over probability vectors; entries are floored at 1e-12 before logs
double kl_div(const std::vector<double>& p, const std::vector<double>& q);

std::vector<double> softmax(const std::vector<double>& logits);
double cross_entropy(const Tensor& logits, std::size_t label);

enum class GammaScheme { unit, exp_rank, rank_times_size };
GammaScheme parse_gamma_scheme(const std::string& name);
std::string gamma_scheme_name(GammaScheme s);

// Per-ReLU-layer scaling. exp_rank assigns gamma = 2^rank where rank is the
// 1-based ascending rank of the layer width, ties broken by layer index.
struct GammaFactors {
    std::vector<double> factors;
    std::vector<std::size_t> ranks;
};
GammaFactors gamma_factors(const std::vector<std::size_t>& hidden_sizes, GammaScheme scheme);

struct LossValue {
    double total = 0.0;
    double ce = 0.0;
    double nbc_score = 0.0;
    double kl = 0.0;
    double regularizer = 0.0;
};

// Builds forward subgraphs of one network on a tape, creating parameter
// leaves (views into the live Network) on first use.
class NetGraph {
public:
    NetGraph(Tape& tape, const Network& net, bool params_require_grad);

    Tape::NodeId forward(Tape::NodeId x, std::vector<Tape::NodeId>* relu_pre = nullptr);

    // (lo, hi) interval sweep; records pre-activation bound node pairs per
    // ReLU layer. Requires an affine/flatten-only network.
    void interval_forward(const Tensor& input_lo, const Tensor& input_hi,
                          std::vector<std::pair<Tape::NodeId, Tape::NodeId>>& relu_pre_bounds);

    // parameter gradient node ids, in Network::parameters() order
    const std::vector<Tape::NodeId>& param_nodes() const { return param_nodes_; }

private:
    Tape& tape_;
    const Network& net_;
    std::vector<Tape::NodeId> param_nodes_;
};

// Continuous consistency score between two inputs: sum_i cos(v_i, v'_i)/gamma_i
// minus KL(softmax f(x) || softmax f(x')), over flattened ReLU pre-activations.
Tape::NodeId nbc_score_graph(Tape& tape, NetGraph& graph, Tape::NodeId x, Tape::NodeId xp,
                             const GammaFactors& gamma);
double nbc_score(const Network& net, const Tensor& x, const Tensor& xp,
                 const GammaFactors& gamma);

// Inner adversary: k raw-gradient descent steps on the consistency score,
// clipped to the eps-ball intersected with the input domain after every step.
Tensor find_adversary_nbc(const Network& net, const Tensor& x, const GammaFactors& gamma,
                          double eps, std::size_t k, double alpha, DomainBounds domain,
                          RngStream& rng);

// Projected sign-gradient ascent on cross-entropy. Run 0 starts at x; each of
// `random_restarts` extra runs starts at a uniform point in the ball. Returns
// the iterate with the highest cross-entropy seen.
Tensor pgd_attack(const Network& net, const Tensor& x, std::size_t label, double eps,
                  std::size_t steps, double step_size, DomainBounds domain, RngStream& rng,
                  std::size_t random_restarts = 1);

struct NbcLossConfig {
    double beta = 1.0;
    double eps = 0.1;
    std::size_t k = 10;
    double alpha = 0.01;  // defaults to eps/10 upstream
    GammaScheme gamma = GammaScheme::exp_rank;
    DomainBounds domain;
};

// CE(f(x), y) - beta * NBC(f, x, x') with x' from find_adversary_nbc.
// beta == 0 short-circuits to plain cross-entropy.
LossValue nbc_loss(const Network& net, const Tensor& x, std::size_t y, const NbcLossConfig& cfg,
                   RngStream& rng);

// KL ascent from a small-noise start; the TRADES inner loop.
Tensor find_adversary_kl(const Network& net, const Tensor& x, double eps, std::size_t k,
                         double alpha, DomainBounds domain, RngStream& rng);

struct BaselineConfig {
    double eps = 0.1;
    std::size_t k = 10;
    double alpha = 0.01;
    double trades_lambda = 6.0;
    double rs_weight = 1e-3;
    DomainBounds domain;
};

LossValue madry_loss(const Network& net, const Tensor& x, std::size_t y,
                     const BaselineConfig& cfg, RngStream& rng);
LossValue trades_loss(const Network& net, const Tensor& x, std::size_t y,
                      const BaselineConfig& cfg, RngStream& rng);
// CE + rs_weight * sum over neurons of -tanh(1 + l*u), with (l, u) from the
// differentiable interval sweep at radius eps.
LossValue rs_loss(const Network& net, const Tensor& x, std::size_t y, const BaselineConfig& cfg);

}  // namespace nbcv

#endif
