#ifndef NBCV_PROPERTY_HPP
#define NBCV_PROPERTY_HPP

#include <string>

#include "nbcv/bounds.hpp"
#include "nbcv/tensor.hpp"

namespace nbcv {

// Local robustness query: is every input within eps (l-inf, clipped to the
// domain) of x0 still classified as `label`?
struct RobustnessProperty {
    Tensor x0;
    double epsilon = 0.0;
    std::size_t label = 0;
    DomainBounds domain;
};

// Validates the fields; pass num_classes when the network is known.
RobustnessProperty encode_property(Tensor x0, double eps, std::size_t label, DomainBounds domain,
                                   std::size_t num_classes = 0);

// [max(x0 - eps, lo), min(x0 + eps, hi)] elementwise
InputBox property_box(const RobustnessProperty& prop);

std::string property_to_json(const RobustnessProperty& prop);
RobustnessProperty property_from_json(const std::string& text);

}  // namespace nbcv

#endif
