#include "nbcv/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nbcv {

namespace {

constexpr double kDegenerateNorm = 1e-12;
constexpr double kProbFloor = 1e-12;

struct Box {
    Tensor lo, hi;
};

Box ball_box(const Tensor& x, double eps, DomainBounds domain) {
    Box b{x, x};
    for (std::size_t i = 0; i < x.size(); ++i) {
        b.lo[i] = std::max(x[i] - eps, domain.lo);
        b.hi[i] = std::min(x[i] + eps, domain.hi);
    }
    return b;
}

void clamp_into(Tensor& t, const Box& box) {
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = std::min(std::max(t[i], box.lo[i]), box.hi[i]);
}

Tensor uniform_in_box(const Box& box, RngStream& rng) {
    Tensor t = box.lo;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(box.lo[i], box.hi[i]);
    return t;
}

}  // namespace

double cosine_similarity(const std::vector<double>& v, const std::vector<double>& vp) {
    if (v.size() != vp.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
    if (v.empty()) throw std::invalid_argument("cosine_similarity: empty vectors");
    double d = 0.0, n1 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        d += v[i] * vp[i];
        n1 += v[i] * v[i];
        n2 += vp[i] * vp[i];
    }
    n1 = std::sqrt(n1);
    n2 = std::sqrt(n2);
    if (n1 < kDegenerateNorm || n2 < kDegenerateNorm) return 0.0;
    return d / (n1 * n2);
}

double kl_div(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_div: length mismatch");
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < -1e-12 || q[i] < -1e-12)
            throw std::invalid_argument("kl_div: negative probability entry");
        sp += p[i];
        sq += q[i];
    }
    if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9)
        throw std::invalid_argument("kl_div: inputs must sum to 1");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        double pi = std::max(p[i], kProbFloor);
        double qi = std::max(q[i], kProbFloor);
        kl += pi * std::log(pi / qi);
    }
    return kl;
}

std::vector<double> softmax(const std::vector<double>& logits) {
    double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        acc += p[i];
    }
    for (double& v : p) v /= acc;
    return p;
}

double cross_entropy(const Tensor& logits, std::size_t label) {
    if (label >= logits.size()) throw std::invalid_argument("cross_entropy: label out of range");
    double m = *std::max_element(logits.data.begin(), logits.data.end());
    double acc = 0.0;
    for (double v : logits.data) acc += std::exp(v - m);
    return m + std::log(acc) - logits[label];
}

GammaScheme parse_gamma_scheme(const std::string& name) {
    if (name == "unit") return GammaScheme::unit;
    if (name == "exp_rank") return GammaScheme::exp_rank;
    if (name == "rank_times_size") return GammaScheme::rank_times_size;
    throw std::invalid_argument("unknown gamma scheme: " + name);
}

std::string gamma_scheme_name(GammaScheme s) {
    switch (s) {
        case GammaScheme::unit: return "unit";
        case GammaScheme::exp_rank: return "exp_rank";
        case GammaScheme::rank_times_size: return "rank_times_size";
    }
    return "?";
}

GammaFactors gamma_factors(const std::vector<std::size_t>& hidden_sizes, GammaScheme scheme) {
    if (hidden_sizes.empty()) throw std::invalid_argument("gamma_factors: no hidden layers");
    for (std::size_t m : hidden_sizes)
        if (m == 0) throw std::invalid_argument("gamma_factors: zero-width layer");

    std::vector<std::size_t> order(hidden_sizes.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (hidden_sizes[a] != hidden_sizes[b]) return hidden_sizes[a] < hidden_sizes[b];
        return a < b;  // earlier layer gets the smaller rank
    });

    GammaFactors g;
    g.ranks.assign(hidden_sizes.size(), 0);
    for (std::size_t pos = 0; pos < order.size(); ++pos) g.ranks[order[pos]] = pos + 1;

    g.factors.resize(hidden_sizes.size());
    for (std::size_t i = 0; i < hidden_sizes.size(); ++i) {
        switch (scheme) {
            case GammaScheme::unit: g.factors[i] = 1.0; break;
            case GammaScheme::exp_rank:
                g.factors[i] = std::ldexp(1.0, static_cast<int>(g.ranks[i]));
                break;
            case GammaScheme::rank_times_size:
                g.factors[i] =
                    static_cast<double>(g.ranks[i]) * static_cast<double>(hidden_sizes[i]);
                break;
        }
    }
    return g;
}

NetGraph::NetGraph(Tape& tape, const Network& net, bool params_require_grad)
    : tape_(tape), net_(net) {
    for (const Layer& layer : net.layers()) {
        auto attach = [&](const Tensor& t) {
            param_nodes_.push_back(params_require_grad ? tape_.leaf_view(t)
                                                       : tape_.constant_view(t));
        };
        if (const auto* a = std::get_if<AffineLayer>(&layer)) {
            attach(a->w);
            attach(a->b);
        } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
            attach(c->kernels);
            attach(c->bias);
        }
    }
}

Tape::NodeId NetGraph::forward(Tape::NodeId x, std::vector<Tape::NodeId>* relu_pre) {
    Tape::NodeId cur = x;
    std::size_t pidx = 0;
    std::vector<std::size_t> shape = net_.input_shape();
    for (const Layer& layer : net_.layers()) {
        if (const auto* a = std::get_if<AffineLayer>(&layer)) {
            Tape::NodeId w = param_nodes_[pidx++];
            Tape::NodeId b = param_nodes_[pidx++];
            cur = tape_.affine(w, b, cur);
            shape = {a->out_dim()};
        } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
            Tape::NodeId k = param_nodes_[pidx++];
            Tape::NodeId b = param_nodes_[pidx++];
            Conv2dGeom g = c->geometry(shape);
            cur = tape_.conv2d(k, b, cur, g);
            shape = {g.out_c, g.out_h, g.out_w};
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            if (relu_pre) relu_pre->push_back(cur);
            cur = tape_.relu(cur);
        } else {
            shape = {Tensor::numel(shape)};
        }
    }
    return cur;
}

void NetGraph::interval_forward(
    const Tensor& input_lo, const Tensor& input_hi,
    std::vector<std::pair<Tape::NodeId, Tape::NodeId>>& relu_pre_bounds) {
    Tape::NodeId lo = tape_.constant(input_lo);
    Tape::NodeId hi = tape_.constant(input_hi);
    std::size_t pidx = 0;
    for (const Layer& layer : net_.layers()) {
        if (std::holds_alternative<AffineLayer>(layer)) {
            Tape::NodeId w = param_nodes_[pidx++];
            Tape::NodeId b = param_nodes_[pidx++];
            Tape::NodeId nlo = tape_.affine_interval_lower(w, b, lo, hi);
            Tape::NodeId nhi = tape_.affine_interval_upper(w, b, lo, hi);
            lo = nlo;
            hi = nhi;
        } else if (std::holds_alternative<Conv2dLayer>(layer)) {
            throw std::invalid_argument(
                "interval_forward: conv layers are not supported, lower the network first");
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            relu_pre_bounds.emplace_back(lo, hi);
            lo = tape_.relu(lo);
            hi = tape_.relu(hi);
        }
        // flatten: interval is already flat
    }
}

Tape::NodeId nbc_score_graph(Tape& tape, NetGraph& graph, Tape::NodeId x, Tape::NodeId xp,
                             const GammaFactors& gamma) {
    std::vector<Tape::NodeId> pre_x, pre_xp;
    Tape::NodeId logits_x = graph.forward(x, &pre_x);
    Tape::NodeId logits_xp = graph.forward(xp, &pre_xp);
    if (pre_x.size() != gamma.factors.size())
        throw std::invalid_argument("nbc_score: gamma does not match the ReLU layer count");

    std::vector<Tape::NodeId> terms;
    std::vector<double> coeffs;
    for (std::size_t i = 0; i < pre_x.size(); ++i) {
        terms.push_back(tape.cosine(pre_x[i], pre_xp[i]));
        coeffs.push_back(1.0 / gamma.factors[i]);
    }
    terms.push_back(tape.kl_softmax(logits_x, logits_xp));
    coeffs.push_back(-1.0);
    return tape.lincomb(terms, coeffs);
}

double nbc_score(const Network& net, const Tensor& x, const Tensor& xp,
                 const GammaFactors& gamma) {
    if (x.shape != xp.shape) throw std::invalid_argument("nbc_score: input shape mismatch");
    ActivationTrace tx = net.forward(x);
    ActivationTrace txp = net.forward(xp);
    if (tx.relu_pre.size() != gamma.factors.size())
        throw std::invalid_argument("nbc_score: gamma does not match the ReLU layer count");
    double s = 0.0;
    for (std::size_t i = 0; i < tx.relu_pre.size(); ++i)
        s += cosine_similarity(tx.relu_pre[i].data, txp.relu_pre[i].data) / gamma.factors[i];
    s -= kl_div(softmax(tx.logits.data), softmax(txp.logits.data));
    return s;
}

namespace {

// gradient of the consistency score w.r.t. x', with the clean-input branch
// frozen (its trace does not change across inner iterations)
Tensor nbc_grad_wrt_xp(const Network& net, const ActivationTrace& x_trace, const Tensor& xp,
                       const GammaFactors& gamma) {
    Tape tape;
    NetGraph graph(tape, net, /*params_require_grad=*/false);
    Tape::NodeId xp_id = tape.leaf_view(xp);
    std::vector<Tape::NodeId> pre_xp;
    Tape::NodeId logits_xp = graph.forward(xp_id, &pre_xp);

    std::vector<Tape::NodeId> terms;
    std::vector<double> coeffs;
    for (std::size_t i = 0; i < pre_xp.size(); ++i) {
        Tape::NodeId vx = tape.constant_view(x_trace.relu_pre[i]);
        terms.push_back(tape.cosine(vx, pre_xp[i]));
        coeffs.push_back(1.0 / gamma.factors[i]);
    }
    terms.push_back(tape.kl_softmax(tape.constant_view(x_trace.logits), logits_xp));
    coeffs.push_back(-1.0);
    Tape::NodeId score = tape.lincomb(terms, coeffs);
    tape.backward(score);
    return tape.gradient(xp_id);
}

// cross-entropy value and input gradient in one pass
std::pair<double, Tensor> ce_value_and_grad(const Network& net, const Tensor& xp,
                                            std::size_t label) {
    Tape tape;
    NetGraph graph(tape, net, /*params_require_grad=*/false);
    Tape::NodeId xp_id = tape.leaf_view(xp);
    Tape::NodeId ce = tape.ce_softmax(graph.forward(xp_id), label);
    double value = tape.value(ce)[0];
    tape.backward(ce);
    return {value, tape.gradient(xp_id)};
}

std::pair<double, Tensor> kl_value_and_grad(const Network& net, const Tensor& x_logits,
                                            const Tensor& xp) {
    Tape tape;
    NetGraph graph(tape, net, /*params_require_grad=*/false);
    Tape::NodeId xp_id = tape.leaf_view(xp);
    Tape::NodeId kl = tape.kl_softmax(tape.constant_view(x_logits), graph.forward(xp_id));
    double value = tape.value(kl)[0];
    tape.backward(kl);
    return {value, tape.gradient(xp_id)};
}

}  // namespace

Tensor find_adversary_nbc(const Network& net, const Tensor& x, const GammaFactors& gamma,
                          double eps, std::size_t k, double alpha, DomainBounds domain,
                          RngStream& rng) {
    if (eps < 0.0) throw std::invalid_argument("find_adversary_nbc: negative radius");
    Box box = ball_box(x, eps, domain);
    Tensor xp = uniform_in_box(box, rng);
    if (k == 0 || eps == 0.0) return xp;

    ActivationTrace x_trace = net.forward(x);
    for (std::size_t step = 0; step < k; ++step) {
        Tensor g = nbc_grad_wrt_xp(net, x_trace, xp, gamma);
        for (std::size_t i = 0; i < xp.size(); ++i) {
            double sg = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
            xp[i] -= alpha * sg;
        }
        clamp_into(xp, box);
    }
    return xp;
}

Tensor pgd_attack(const Network& net, const Tensor& x, std::size_t label, double eps,
                  std::size_t steps, double step_size, DomainBounds domain, RngStream& rng,
                  std::size_t random_restarts) {
    if (eps < 0.0) throw std::invalid_argument("pgd_attack: negative radius");
    Box box = ball_box(x, eps, domain);

    Tensor best = x;
    double best_ce = cross_entropy(net.forward(x).logits, label);

    for (std::size_t run = 0; run <= random_restarts; ++run) {
        Tensor xp = run == 0 ? x : uniform_in_box(box, rng);
        for (std::size_t s = 0; s < steps; ++s) {
            auto [ce, g] = ce_value_and_grad(net, xp, label);
            if (ce > best_ce) {
                best_ce = ce;
                best = xp;
            }
            for (std::size_t i = 0; i < xp.size(); ++i) {
                double sg = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
                xp[i] += step_size * sg;
            }
            clamp_into(xp, box);
        }
        double ce = cross_entropy(net.forward(xp).logits, label);
        if (ce > best_ce) {
            best_ce = ce;
            best = xp;
        }
    }
    return best;
}

LossValue nbc_loss(const Network& net, const Tensor& x, std::size_t y, const NbcLossConfig& cfg,
                   RngStream& rng) {
    LossValue lv;
    lv.ce = cross_entropy(net.forward(x).logits, y);
    if (cfg.beta == 0.0) {
        lv.total = lv.ce;
        return lv;
    }
    GammaFactors gamma = gamma_factors(net.hidden_layer_sizes(), cfg.gamma);
    Tensor xp = find_adversary_nbc(net, x, gamma, cfg.eps, cfg.k, cfg.alpha, cfg.domain, rng);
    ActivationTrace tx = net.forward(x);
    ActivationTrace txp = net.forward(xp);
    double s = 0.0;
    for (std::size_t i = 0; i < tx.relu_pre.size(); ++i)
        s += cosine_similarity(tx.relu_pre[i].data, txp.relu_pre[i].data) / gamma.factors[i];
    lv.kl = kl_div(softmax(tx.logits.data), softmax(txp.logits.data));
    s -= lv.kl;
    lv.nbc_score = s;
    lv.total = lv.ce - cfg.beta * s;
    return lv;
}

LossValue madry_loss(const Network& net, const Tensor& x, std::size_t y,
                     const BaselineConfig& cfg, RngStream& rng) {
    Tensor x_adv = pgd_attack(net, x, y, cfg.eps, cfg.k, cfg.alpha, cfg.domain, rng, 1);
    LossValue lv;
    lv.ce = cross_entropy(net.forward(x_adv).logits, y);
    lv.total = lv.ce;
    return lv;
}

Tensor find_adversary_kl(const Network& net, const Tensor& x, double eps, std::size_t k,
                         double alpha, DomainBounds domain, RngStream& rng) {
    Box box = ball_box(x, eps, domain);
    Tensor x_logits = net.forward(x).logits;
    Tensor xp = x;
    for (std::size_t i = 0; i < xp.size(); ++i) xp[i] += 0.001 * rng.normal();
    clamp_into(xp, box);
    for (std::size_t s = 0; s < k; ++s) {
        auto [kl, g] = kl_value_and_grad(net, x_logits, xp);
        (void)kl;
        for (std::size_t i = 0; i < xp.size(); ++i) {
            double sg = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
            xp[i] += alpha * sg;
        }
        clamp_into(xp, box);
    }
    return xp;
}

LossValue trades_loss(const Network& net, const Tensor& x, std::size_t y,
                      const BaselineConfig& cfg, RngStream& rng) {
    LossValue lv;
    Tensor x_logits = net.forward(x).logits;
    lv.ce = cross_entropy(x_logits, y);
    Tensor xp = find_adversary_kl(net, x, cfg.eps, cfg.k, cfg.alpha, cfg.domain, rng);
    lv.kl = kl_div(softmax(x_logits.data), softmax(net.forward(xp).logits.data));
    lv.total = lv.ce + cfg.trades_lambda * lv.kl;
    return lv;
}

LossValue rs_loss(const Network& net, const Tensor& x, std::size_t y, const BaselineConfig& cfg) {
    LossValue lv;
    lv.ce = cross_entropy(net.forward(x).logits, y);

    Box box = ball_box(x, cfg.eps, cfg.domain);
    Tape tape;
    NetGraph graph(tape, net, /*params_require_grad=*/false);
    std::vector<std::pair<Tape::NodeId, Tape::NodeId>> pre_bounds;
    graph.interval_forward(box.lo, box.hi, pre_bounds);
    double reg = 0.0;
    for (auto [lo, hi] : pre_bounds) {
        const Tensor& l = tape.value(lo);
        const Tensor& u = tape.value(hi);
        for (std::size_t i = 0; i < l.size(); ++i) reg -= std::tanh(1.0 + l[i] * u[i]);
    }
    lv.regularizer = reg;
    lv.total = lv.ce + cfg.rs_weight * reg;
    return lv;
}

}  // namespace nbcv
