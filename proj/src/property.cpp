#include "nbcv/property.hpp"

#include <json.hpp>
#include <stdexcept>

namespace nbcv {

using nlohmann::json;

RobustnessProperty encode_property(Tensor x0, double eps, std::size_t label, DomainBounds domain,
                                   std::size_t num_classes) {
    if (eps < 0.0) throw std::invalid_argument("encode_property: negative radius");
    if (domain.lo > domain.hi) throw std::invalid_argument("encode_property: empty domain");
    if (num_classes != 0 && label >= num_classes)
        throw std::invalid_argument("encode_property: label out of range");
    for (double v : x0.data)
        if (v < domain.lo || v > domain.hi)
            throw std::invalid_argument("encode_property: x0 outside the input domain");
    RobustnessProperty prop;
    prop.x0 = std::move(x0);
    prop.epsilon = eps;
    prop.label = label;
    prop.domain = domain;
    return prop;
}

InputBox property_box(const RobustnessProperty& prop) {
    InputBox box;
    box.lo = prop.x0;
    box.hi = prop.x0;
    for (std::size_t i = 0; i < prop.x0.size(); ++i) {
        box.lo[i] = std::max(prop.x0[i] - prop.epsilon, prop.domain.lo);
        box.hi[i] = std::min(prop.x0[i] + prop.epsilon, prop.domain.hi);
    }
    return box;
}

std::string property_to_json(const RobustnessProperty& prop) {
    json doc;
    doc["x0"] = prop.x0.data;
    doc["epsilon"] = prop.epsilon;
    doc["label"] = prop.label;
    doc["domain"] = {prop.domain.lo, prop.domain.hi};
    return doc.dump();
}

RobustnessProperty property_from_json(const std::string& text) {
    json doc = json::parse(text);
    for (const char* f : {"x0", "epsilon", "label", "domain"})
        if (!doc.contains(f))
            throw std::runtime_error(std::string("property: missing field \"") + f + "\"");
    auto x0 = doc["x0"].get<std::vector<double>>();
    auto domain = doc["domain"].get<std::vector<double>>();
    if (domain.size() != 2) throw std::runtime_error("property: domain must be [lo, hi]");
    return encode_property(Tensor::vec(std::move(x0)), doc["epsilon"].get<double>(),
                           doc["label"].get<std::size_t>(), {domain[0], domain[1]});
}

}  // namespace nbcv
