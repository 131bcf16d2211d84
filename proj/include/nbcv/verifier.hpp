#ifndef NBCV_VERIFIER_HPP
#define NBCV_VERIFIER_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "nbcv/bounds.hpp"
#include "nbcv/network.hpp"
#include "nbcv/property.hpp"

namespace nbcv {

enum class VerdictStatus { unsat, sat, unknown };
std::string verdict_status_name(VerdictStatus s);

struct VerdictStats {
    std::size_t branches_explored = 0;  // neuron splits performed
    std::size_t max_depth = 0;
    std::size_t lp_calls = 0;
    double wall_time_s = 0.0;
    double stable_ratio_at_root = 0.0;
};

struct Verdict {
    VerdictStatus status = VerdictStatus::unknown;
    std::optional<Tensor> counterexample;  // present iff SAT, concretely validated
    VerdictStats stats;
};

struct Budget {
    double wall_time_s = 120.0;
    std::size_t max_branches = 1u << 20;  // limit on neuron splits

    void validate() const;
};

struct VerifyConfig {
    std::uint64_t seed = 0;
    std::size_t attack_steps = 20;
    std::size_t attack_restarts = 1;      // extra random-start runs
    double attack_step_fraction = 2.5;    // step size = fraction * eps / steps
    std::string lp_dump_dir;              // write leaf LPs here when nonempty
};

// Unsplit unstable neuron maximizing the triangle-relaxation area score
// (-l*u)/(u-l); ties by (layer, neuron) ascending. Throws without candidates.
std::pair<std::size_t, std::size_t> select_branch_neuron(const BoundsMap& bounds,
                                                         const BranchConstraints& branch);

// true iff x lies in the property box and is strictly misclassified
// (a tie at the argmax is not a counterexample)
bool check_counterexample(const Network& net, const RobustnessProperty& prop, const Tensor& x);

enum class LeafStatus { proved, feasible, indeterminate };

struct LeafResult {
    LeafStatus status = LeafStatus::indeterminate;
    Tensor point;  // validated counterexample when feasible
    std::size_t lp_calls = 0;
    bool fully_split = false;
};

// One LP per adversarial direction over (input, pre/post activations, logits):
// affine equalities, split neurons as fixed phases plus their half-space,
// unsplit unstable neurons via the triangle relaxation. Directions whose
// margin upper bound is already <= 0 are proved without an LP.
LeafResult leaf_check(const LoweredNetwork& lowered, const Network& net,
                      const RobustnessProperty& prop, const BranchConstraints& branch,
                      const BoundsMap& bounds, const VerifyConfig& cfg = {});

// Depth-first branch and bound: intersected bounds, falsification attack,
// LP leaf check, split on the highest-scoring unstable neuron (active child
// first). UNSAT when every branch is proved; UNKNOWN on budget exhaustion.
Verdict bab_verify(const Network& net, const RobustnessProperty& prop, const Budget& budget,
                   const VerifyConfig& cfg = {});

std::string verdict_to_json(const Verdict& verdict);
int verdict_exit_code(const Verdict& verdict);  // 0 UNSAT, 1 SAT, 2 UNKNOWN

}  // namespace nbcv

#endif
