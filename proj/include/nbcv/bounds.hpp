#ifndef NBCV_BOUNDS_HPP
#define NBCV_BOUNDS_HPP

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nbcv/network.hpp"
#include "nbcv/tensor.hpp"

namespace nbcv {

struct RobustnessProperty;

struct InputBox {
    Tensor lo, hi;
    void validate() const;
};

enum class BoundMethod { ibp, linear, intersected };
std::string bound_method_name(BoundMethod m);

struct LayerBounds {
    std::vector<double> lo, hi;
};

// Pre-activation intervals per ReLU layer, sound for every input in the box
// that respects the branch phases.
struct BoundsMap {
    BoundMethod method = BoundMethod::ibp;
    std::vector<LayerBounds> layers;
};

enum class NeuronPhase { active, inactive };

// Fixed activation-phase assignments; at most one phase per neuron.
class BranchConstraints {
public:
    std::optional<NeuronPhase> phase(std::size_t layer, std::size_t neuron) const {
        auto it = fixed_.find({layer, neuron});
        if (it == fixed_.end()) return std::nullopt;
        return it->second;
    }
    BranchConstraints with(std::size_t layer, std::size_t neuron, NeuronPhase p) const;
    bool contains(std::size_t layer, std::size_t neuron) const {
        return fixed_.count({layer, neuron}) != 0;
    }
    std::size_t size() const { return fixed_.size(); }
    bool empty() const { return fixed_.empty(); }
    const std::map<std::pair<std::size_t, std::size_t>, NeuronPhase>& entries() const {
        return fixed_;
    }

private:
    std::map<std::pair<std::size_t, std::size_t>, NeuronPhase> fixed_;
};

// Interval arithmetic pushed layer by layer. Branch-fixed neurons propagate
// identity (active) or zero (inactive); the pre-activation intervals
// themselves are not shrunk by the implied half-space.
BoundsMap ibp_bounds(const LoweredNetwork& net, const InputBox& box,
                     const BranchConstraints& branch = {});

// Backward substitution of symbolic affine bounds with the triangle
// relaxation per unstable ReLU (upper chord, lower slope 0/1 by u >= |l|).
BoundsMap linear_bounds(const LoweredNetwork& net, const InputBox& box,
                        const BranchConstraints& branch = {});

// Elementwise [max(l), min(u)]; a crossing beyond 1e-9 signals an unsound
// input map and aborts.
BoundsMap intersect_bounds(const BoundsMap& a, const BoundsMap& b);

struct LayerStability {
    std::size_t active = 0, inactive = 0, unstable = 0;
};

struct StabilityReport {
    std::vector<LayerStability> per_layer;
    std::size_t stable = 0, unstable = 0;
    double stable_ratio = 0.0;
};

// l >= 0 stably active, u <= 0 stably inactive (l = u = 0 counts inactive).
StabilityReport classify_neurons(const BoundsMap& bounds);
std::string stability_report_to_json(const StabilityReport& report);

// Upper bounds of the margins y_i - y_c over the box, one entry per class
// (entry c is 0), via backward substitution with the given relaxation bounds.
std::vector<double> margin_upper_bounds(const LoweredNetwork& net, const InputBox& box,
                                        const BranchConstraints& branch, const BoundsMap& bounds,
                                        std::size_t target_class);

// Mean stable-neuron percentage (0..100) over the properties' boxes, on
// intersected IBP and linear bounds.
double stable_percent(const Network& net, const std::vector<RobustnessProperty>& properties);

}  // namespace nbcv

#endif
