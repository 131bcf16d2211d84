#include "nbcv/verifier.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "nbcv/losses.hpp"
#include "nbcv/lp.hpp"
#include "nbcv/rng.hpp"

namespace nbcv {

std::string verdict_status_name(VerdictStatus s) {
    switch (s) {
        case VerdictStatus::unsat: return "UNSAT";
        case VerdictStatus::sat: return "SAT";
        case VerdictStatus::unknown: return "UNKNOWN";
    }
    return "?";
}

void Budget::validate() const {
    if (wall_time_s <= 0.0 || max_branches == 0)
        throw std::invalid_argument("Budget: limits must be positive");
}

std::pair<std::size_t, std::size_t> select_branch_neuron(const BoundsMap& bounds,
                                                         const BranchConstraints& branch) {
    double best_score = -1.0;
    std::size_t best_layer = 0, best_neuron = 0;
    bool found = false;
    for (std::size_t k = 0; k < bounds.layers.size(); ++k) {
        const LayerBounds& lb = bounds.layers[k];
        for (std::size_t j = 0; j < lb.lo.size(); ++j) {
            double l = lb.lo[j], u = lb.hi[j];
            if (!(l < 0.0 && u > 0.0)) continue;  // stable
            if (branch.contains(k, j)) continue;
            double score = (-l * u) / (u - l);
            if (score > best_score) {  // strict keeps (layer, neuron) tie-break
                best_score = score;
                best_layer = k;
                best_neuron = j;
                found = true;
            }
        }
    }
    if (!found) throw std::runtime_error("select_branch_neuron: no unsplit unstable neuron");
    return {best_layer, best_neuron};
}

bool check_counterexample(const Network& net, const RobustnessProperty& prop, const Tensor& x) {
    if (x.shape != prop.x0.shape) return false;
    InputBox box = property_box(prop);
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] < box.lo[i] || x[i] > box.hi[i]) return false;
    Tensor logits = net.forward(x).logits;
    if (prop.label >= logits.size()) return false;
    double target = logits[prop.label];
    for (std::size_t i = 0; i < logits.size(); ++i)
        if (i != prop.label && logits[i] > target) return true;
    return false;
}

namespace {

struct NeuronState {
    enum class Kind { split_active, split_inactive, stable_active, stable_inactive, unstable };
    Kind kind;
};

NeuronState::Kind neuron_kind(double l, double u, std::optional<NeuronPhase> phase) {
    if (phase == NeuronPhase::active) return NeuronState::Kind::split_active;
    if (phase == NeuronPhase::inactive) return NeuronState::Kind::split_inactive;
    if (u <= 0.0) return NeuronState::Kind::stable_inactive;
    if (l >= 0.0) return NeuronState::Kind::stable_active;
    return NeuronState::Kind::unstable;
}

// The leaf LP over variables (x, pre_k, post_k per ReLU layer, y). Returns
// the problem plus the logit variable offset; empty optional when some split
// phase contradicts the bounds (the branch region is empty).
std::optional<LpProblem> build_leaf_lp(const LoweredNetwork& net, const InputBox& box,
                                       const BranchConstraints& branch, const BoundsMap& bounds,
                                       std::size_t& y_offset) {
    std::size_t n_in = net.input_dim;
    std::size_t K = net.relu_layer_count();
    std::size_t m_out = net.output_dim();

    std::vector<std::size_t> pre_off(K), post_off(K);
    std::size_t total = n_in;
    for (std::size_t k = 0; k < K; ++k) {
        pre_off[k] = total;
        total += net.affines[k].out_dim();
        post_off[k] = total;
        total += net.affines[k].out_dim();
    }
    y_offset = total;
    total += m_out;

    LpProblem p = LpProblem::with_vars(total);
    for (std::size_t i = 0; i < n_in; ++i) {
        p.lo[i] = box.lo[i];
        p.hi[i] = box.hi[i];
    }

    for (std::size_t k = 0; k < K; ++k) {
        const LayerBounds& lb = bounds.layers[k];
        for (std::size_t j = 0; j < lb.lo.size(); ++j) {
            double l = lb.lo[j], u = lb.hi[j];
            std::size_t pre = pre_off[k] + j, post = post_off[k] + j;
            switch (neuron_kind(l, u, branch.phase(k, j))) {
                case NeuronState::Kind::split_active: {
                    double plo = std::max(l, 0.0);
                    if (plo > u) return std::nullopt;  // contradicted phase
                    p.lo[pre] = plo;
                    p.hi[pre] = u;
                    p.lo[post] = plo;
                    p.hi[post] = u;
                    break;
                }
                case NeuronState::Kind::split_inactive: {
                    double phi = std::min(u, 0.0);
                    if (l > phi) return std::nullopt;
                    p.lo[pre] = l;
                    p.hi[pre] = phi;
                    p.lo[post] = 0.0;
                    p.hi[post] = 0.0;
                    break;
                }
                case NeuronState::Kind::stable_active:
                    p.lo[pre] = l;
                    p.hi[pre] = u;
                    p.lo[post] = l;
                    p.hi[post] = u;
                    break;
                case NeuronState::Kind::stable_inactive:
                    p.lo[pre] = l;
                    p.hi[pre] = u;
                    p.lo[post] = 0.0;
                    p.hi[post] = 0.0;
                    break;
                case NeuronState::Kind::unstable:
                    p.lo[pre] = l;
                    p.hi[pre] = u;
                    p.lo[post] = 0.0;
                    p.hi[post] = u;
                    break;
            }
        }
    }

    // affine equalities: pre_k - W_k in_k = b_k, and y - W_K post_{K-1} = b_K
    for (std::size_t k = 0; k <= K; ++k) {
        const AffineLayer& a = net.affines[k];
        std::size_t in_off = k == 0 ? 0 : post_off[k - 1];
        std::size_t out_off = k == K ? y_offset : pre_off[k];
        for (std::size_t r = 0; r < a.out_dim(); ++r) {
            std::vector<double> row(total, 0.0);
            row[out_off + r] = 1.0;
            const double* wrow = a.w.data.data() + r * a.in_dim();
            for (std::size_t cidx = 0; cidx < a.in_dim(); ++cidx)
                row[in_off + cidx] = -wrow[cidx];
            p.add_row(std::move(row), LpRelation::eq, a.b[r]);
        }
    }

    // ReLU coupling rows
    for (std::size_t k = 0; k < K; ++k) {
        const LayerBounds& lb = bounds.layers[k];
        for (std::size_t j = 0; j < lb.lo.size(); ++j) {
            double l = lb.lo[j], u = lb.hi[j];
            std::size_t pre = pre_off[k] + j, post = post_off[k] + j;
            NeuronState::Kind kind = neuron_kind(l, u, branch.phase(k, j));
            if (kind == NeuronState::Kind::split_active ||
                kind == NeuronState::Kind::stable_active) {
                std::vector<double> row(total, 0.0);
                row[post] = 1.0;
                row[pre] = -1.0;
                p.add_row(std::move(row), LpRelation::eq, 0.0);
            } else if (kind == NeuronState::Kind::unstable) {
                std::vector<double> row(total, 0.0);  // post >= pre
                row[post] = 1.0;
                row[pre] = -1.0;
                p.add_row(std::move(row), LpRelation::ge, 0.0);
                std::vector<double> chord(total, 0.0);  // (u-l) post - u pre <= -u l
                chord[post] = u - l;
                chord[pre] = -u;
                p.add_row(std::move(chord), LpRelation::le, -u * l);
            }
            // inactive: post is fixed to zero by its bounds
        }
    }
    return p;
}

bool branch_fully_split(const BoundsMap& bounds, const BranchConstraints& branch) {
    for (std::size_t k = 0; k < bounds.layers.size(); ++k) {
        const LayerBounds& lb = bounds.layers[k];
        for (std::size_t j = 0; j < lb.lo.size(); ++j)
            if (lb.lo[j] < 0.0 && lb.hi[j] > 0.0 && !branch.contains(k, j)) return false;
    }
    return true;
}

}  // namespace

LeafResult leaf_check(const LoweredNetwork& lowered, const Network& net,
                      const RobustnessProperty& prop, const BranchConstraints& branch,
                      const BoundsMap& bounds, const VerifyConfig& cfg) {
    LeafResult result;
    result.fully_split = branch_fully_split(bounds, branch);
    InputBox box = property_box(prop);
    std::size_t m_out = lowered.output_dim();
    if (prop.label >= m_out) throw std::invalid_argument("leaf_check: label out of range");

    std::vector<double> margins = margin_upper_bounds(lowered, box, branch, bounds, prop.label);

    bool any_lp_needed = false;
    for (std::size_t i = 0; i < m_out; ++i)
        if (i != prop.label && margins[i] > 0.0) any_lp_needed = true;
    if (!any_lp_needed) {
        result.status = LeafStatus::proved;
        return result;
    }

    std::size_t y_offset = 0;
    std::optional<LpProblem> base = build_leaf_lp(lowered, box, branch, bounds, y_offset);
    if (!base) {  // split phases contradict the bounds: empty region
        result.status = LeafStatus::proved;
        return result;
    }

    for (std::size_t i = 0; i < m_out; ++i) {
        if (i == prop.label || margins[i] <= 0.0) continue;
        LpProblem p = *base;
        p.objective[y_offset + i] = 1.0;
        p.objective[y_offset + prop.label] = -1.0;

        if (!cfg.lp_dump_dir.empty()) {
            std::ofstream dump(cfg.lp_dump_dir + "/leaf_" + std::to_string(branch.size()) + "_d" +
                               std::to_string(i) + ".lp");
            dump << lp_to_text(p);
        }

        LpOutcome lp = solve_lp(p);
        result.lp_calls += 1;

        if (lp.status == LpStatus::stalled) {
            std::fprintf(stderr, "leaf_check: LP stalled, treating branch as indeterminate\n");
            result.status = LeafStatus::indeterminate;
            return result;
        }
        if (lp.status == LpStatus::unbounded)
            throw std::logic_error("leaf_check: leaf LP cannot be unbounded");
        if (lp.status == LpStatus::infeasible) {
            // no point in the box satisfies this branch's phases at all
            result.status = LeafStatus::proved;
            return result;
        }
        if (lp.objective <= 0.0) continue;  // this direction is proved

        if (!result.fully_split) {
            result.status = LeafStatus::indeterminate;
            return result;
        }
        // fully split: the LP is exact, extract and validate the witness
        Tensor point = prop.x0;
        for (std::size_t d = 0; d < point.size(); ++d) {
            double v = lp.point[d];
            point[d] = std::min(std::max(v, box.lo[d]), box.hi[d]);
        }
        if (check_counterexample(net, prop, point)) {
            result.status = LeafStatus::feasible;
            result.point = std::move(point);
            return result;
        }
        std::fprintf(stderr,
                     "leaf_check: fully split leaf LP found max %.3e but the witness failed "
                     "concrete validation (relaxation artifact)\n",
                     lp.objective);
        result.status = LeafStatus::indeterminate;
        return result;
    }

    result.status = LeafStatus::proved;
    return result;
}

Verdict bab_verify(const Network& net, const RobustnessProperty& prop, const Budget& budget,
                   const VerifyConfig& cfg) {
    budget.validate();
    if (prop.label >= net.output_dim())
        throw std::invalid_argument("bab_verify: label out of range");
    auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    Verdict verdict;
    auto finish = [&](VerdictStatus s) {
        verdict.status = s;
        verdict.stats.wall_time_s = elapsed();
        return verdict;
    };

    // a misclassified center is already a counterexample
    if (check_counterexample(net, prop, prop.x0)) {
        verdict.counterexample = prop.x0;
        return finish(VerdictStatus::sat);
    }

    LoweredNetwork lowered = lower(net);
    InputBox box = property_box(prop);
    double attack_step =
        cfg.attack_steps > 0 ? cfg.attack_step_fraction * prop.epsilon /
                                   static_cast<double>(cfg.attack_steps)
                             : 0.0;

    struct Node {
        BranchConstraints branch;
        std::size_t depth = 0;
    };
    std::vector<Node> stack{{BranchConstraints{}, 0}};
    std::size_t node_counter = 0;
    bool root = true;
    bool had_unproved_leaf = false;

    while (!stack.empty()) {
        if (elapsed() > budget.wall_time_s) return finish(VerdictStatus::unknown);
        Node node = std::move(stack.back());
        stack.pop_back();
        verdict.stats.max_depth = std::max(verdict.stats.max_depth, node.depth);

        BoundsMap bounds = intersect_bounds(ibp_bounds(lowered, box, node.branch),
                                            linear_bounds(lowered, box, node.branch));
        if (root) {
            verdict.stats.stable_ratio_at_root = classify_neurons(bounds).stable_ratio;
            root = false;
        }

        // quick falsification inside the branch's box
        if (cfg.attack_steps > 0 && prop.epsilon > 0.0) {
            RngStream rng(cfg.seed, "bab/attack/" + std::to_string(node_counter));
            Tensor adv = pgd_attack(net, prop.x0, prop.label, prop.epsilon, cfg.attack_steps,
                                    attack_step, prop.domain, rng, cfg.attack_restarts);
            if (check_counterexample(net, prop, adv)) {
                verdict.counterexample = std::move(adv);
                return finish(VerdictStatus::sat);
            }
        }
        node_counter += 1;

        LeafResult leaf = leaf_check(lowered, net, prop, node.branch, bounds, cfg);
        verdict.stats.lp_calls += leaf.lp_calls;

        if (leaf.status == LeafStatus::proved) continue;
        if (leaf.status == LeafStatus::feasible) {
            verdict.counterexample = std::move(leaf.point);
            return finish(VerdictStatus::sat);
        }
        if (leaf.fully_split) {
            had_unproved_leaf = true;  // numerical corner; stay sound
            continue;
        }

        if (verdict.stats.branches_explored >= budget.max_branches)
            return finish(VerdictStatus::unknown);
        auto [layer, neuron] = select_branch_neuron(bounds, node.branch);
        verdict.stats.branches_explored += 1;
        stack.push_back({node.branch.with(layer, neuron, NeuronPhase::inactive), node.depth + 1});
        stack.push_back({node.branch.with(layer, neuron, NeuronPhase::active), node.depth + 1});
    }

    return finish(had_unproved_leaf ? VerdictStatus::unknown : VerdictStatus::unsat);
}

std::string verdict_to_json(const Verdict& verdict) {
    nlohmann::json doc;
    doc["status"] = verdict_status_name(verdict.status);
    if (verdict.counterexample)
        doc["counterexample"] = verdict.counterexample->data;
    else
        doc["counterexample"] = nullptr;
    doc["stats"] = {{"branches_explored", verdict.stats.branches_explored},
                    {"max_depth", verdict.stats.max_depth},
                    {"lp_calls", verdict.stats.lp_calls},
                    {"wall_time_s", verdict.stats.wall_time_s},
                    {"stable_ratio_at_root", verdict.stats.stable_ratio_at_root}};
    return doc.dump();
}

int verdict_exit_code(const Verdict& verdict) {
    switch (verdict.status) {
        case VerdictStatus::unsat: return 0;
        case VerdictStatus::sat: return 1;
        case VerdictStatus::unknown: return 2;
    }
    return 3;
}

}  // namespace nbcv
