#include "nbcv/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <stdexcept>

#include "nbcv/property.hpp"

namespace nbcv {

void InputBox::validate() const {
    if (lo.shape != hi.shape) throw std::invalid_argument("InputBox: lo/hi shape mismatch");
    for (std::size_t i = 0; i < lo.size(); ++i)
        if (lo[i] > hi[i]) throw std::invalid_argument("InputBox: lo > hi");
}

std::string bound_method_name(BoundMethod m) {
    switch (m) {
        case BoundMethod::ibp: return "ibp";
        case BoundMethod::linear: return "linear";
        case BoundMethod::intersected: return "intersected";
    }
    return "?";
}

BranchConstraints BranchConstraints::with(std::size_t layer, std::size_t neuron,
                                          NeuronPhase p) const {
    if (contains(layer, neuron))
        throw std::invalid_argument("BranchConstraints: neuron already split");
    BranchConstraints out = *this;
    out.fixed_[{layer, neuron}] = p;
    return out;
}

BoundsMap ibp_bounds(const LoweredNetwork& net, const InputBox& box,
                     const BranchConstraints& branch) {
    box.validate();
    if (box.lo.size() != net.input_dim)
        throw std::invalid_argument("ibp_bounds: box width does not match the network input");

    BoundsMap map;
    map.method = BoundMethod::ibp;
    std::vector<double> lo(box.lo.data), hi(box.hi.data);

    for (std::size_t k = 0; k + 1 < net.affines.size(); ++k) {
        const AffineLayer& a = net.affines[k];
        std::size_t out = a.out_dim(), in = a.in_dim();
        LayerBounds lb;
        lb.lo.resize(out);
        lb.hi.resize(out);
        for (std::size_t r = 0; r < out; ++r) {
            const double* row = a.w.data.data() + r * in;
            double accl = a.b[r], acch = a.b[r];
            for (std::size_t c = 0; c < in; ++c) {
                double w = row[c];
                accl += w > 0.0 ? w * lo[c] : w * hi[c];
                acch += w > 0.0 ? w * hi[c] : w * lo[c];
            }
            lb.lo[r] = accl;
            lb.hi[r] = acch;
        }

        lo.assign(out, 0.0);
        hi.assign(out, 0.0);
        for (std::size_t r = 0; r < out; ++r) {
            auto phase = branch.phase(k, r);
            if (phase == NeuronPhase::active) {  // identity under the split assumption
                lo[r] = lb.lo[r];
                hi[r] = lb.hi[r];
            } else if (phase == NeuronPhase::inactive) {
                lo[r] = 0.0;
                hi[r] = 0.0;
            } else {
                lo[r] = std::max(lb.lo[r], 0.0);
                hi[r] = std::max(lb.hi[r], 0.0);
            }
        }
        map.layers.push_back(std::move(lb));
    }
    return map;
}

namespace {

struct Relax {
    double du = 1.0, eu = 0.0, dl = 1.0;  // upper: du z + eu; lower: dl z
};

Relax relax_of(double l, double u, std::optional<NeuronPhase> phase) {
    if (phase == NeuronPhase::active) return {1.0, 0.0, 1.0};
    if (phase == NeuronPhase::inactive) return {0.0, 0.0, 0.0};
    if (u <= 0.0) return {0.0, 0.0, 0.0};
    if (l >= 0.0) return {1.0, 0.0, 1.0};
    double du = u / (u - l);
    double eu = -u * l / (u - l);
    double dl = u >= -l ? 1.0 : 0.0;
    return {du, eu, dl};
}

// Upper bounds of M * post_{j_top} + c over the box, substituting ReLU
// relaxations and affine layers back to the input. M is row-major r x width.
std::vector<double> backsub_upper(const LoweredNetwork& net, const InputBox& box,
                                  const BranchConstraints& branch,
                                  const std::vector<LayerBounds>& relax_bounds,
                                  std::size_t j_top,  // index of the deepest substituted ReLU + 1
                                  std::vector<double> M, std::vector<double> c) {
    std::size_t r = c.size();

    for (std::size_t jj = j_top; jj-- > 0;) {
        const LayerBounds& lb = relax_bounds[jj];
        std::size_t width = lb.lo.size();
        // post_j -> pre_j via the per-neuron relaxation, sign-split per entry
        for (std::size_t a = 0; a < r; ++a) {
            double* row = M.data() + a * width;
            for (std::size_t j = 0; j < width; ++j) {
                Relax rx = relax_of(lb.lo[j], lb.hi[j], branch.phase(jj, j));
                if (row[j] > 0.0) {
                    c[a] += row[j] * rx.eu;
                    row[j] *= rx.du;
                } else {
                    row[j] *= rx.dl;  // lower relaxation has zero offset
                }
            }
        }
        // pre_j = W_j post_{j-1} + b_j
        const AffineLayer& aff = net.affines[jj];
        std::size_t in = aff.in_dim();
        std::vector<double> M2(r * in, 0.0);
        for (std::size_t a = 0; a < r; ++a) {
            const double* row = M.data() + a * width;
            double* row2 = M2.data() + a * in;
            for (std::size_t j = 0; j < width; ++j) {
                double m = row[j];
                if (m == 0.0) continue;
                const double* wrow = aff.w.data.data() + j * in;
                for (std::size_t i = 0; i < in; ++i) row2[i] += m * wrow[i];
                c[a] += m * aff.b[j];
            }
        }
        M = std::move(M2);
    }

    std::vector<double> ub(r);
    std::size_t in = box.lo.size();
    for (std::size_t a = 0; a < r; ++a) {
        const double* row = M.data() + a * in;
        double acc = c[a];
        for (std::size_t i = 0; i < in; ++i)
            acc += row[i] > 0.0 ? row[i] * box.hi[i] : row[i] * box.lo[i];
        ub[a] = acc;
    }
    return ub;
}

// rows R (r x m_k) over pre_k folded through affine k: M = R W_k, c = t + R b_k
void fold_rows(const AffineLayer& aff, const std::vector<double>& R, std::vector<double>& t,
               std::vector<double>& M_out) {
    std::size_t m = aff.out_dim(), in = aff.in_dim();
    std::size_t r = t.size();
    M_out.assign(r * in, 0.0);
    for (std::size_t a = 0; a < r; ++a) {
        const double* rrow = R.data() + a * m;
        double* mrow = M_out.data() + a * in;
        for (std::size_t j = 0; j < m; ++j) {
            double coeff = rrow[j];
            if (coeff == 0.0) continue;
            const double* wrow = aff.w.data.data() + j * in;
            for (std::size_t i = 0; i < in; ++i) mrow[i] += coeff * wrow[i];
            t[a] += coeff * aff.b[j];
        }
    }
}

}  // namespace

BoundsMap linear_bounds(const LoweredNetwork& net, const InputBox& box,
                        const BranchConstraints& branch) {
    box.validate();
    if (box.lo.size() != net.input_dim)
        throw std::invalid_argument("linear_bounds: box width does not match the network input");

    BoundsMap map;
    map.method = BoundMethod::linear;

    for (std::size_t k = 0; k + 1 < net.affines.size(); ++k) {
        const AffineLayer& a = net.affines[k];
        std::size_t out = a.out_dim();

        // upper: start from the affine itself (identity rows over pre_k)
        std::vector<double> Mu(a.w.data), cu(a.b.data);
        std::vector<double> ub = backsub_upper(net, box, branch, map.layers, k, Mu, cu);

        std::vector<double> Ml(a.w.data), cl(a.b.data);
        for (double& v : Ml) v = -v;
        for (double& v : cl) v = -v;
        std::vector<double> neg_lb = backsub_upper(net, box, branch, map.layers, k, Ml, cl);

        LayerBounds lb;
        lb.lo.resize(out);
        lb.hi.resize(out);
        for (std::size_t i = 0; i < out; ++i) {
            lb.lo[i] = -neg_lb[i];
            lb.hi[i] = ub[i];
        }
        map.layers.push_back(std::move(lb));
    }
    return map;
}

BoundsMap intersect_bounds(const BoundsMap& a, const BoundsMap& b) {
    if (a.layers.size() != b.layers.size())
        throw std::invalid_argument("intersect_bounds: layer count mismatch");
    BoundsMap out;
    out.method = BoundMethod::intersected;
    for (std::size_t k = 0; k < a.layers.size(); ++k) {
        const LayerBounds& la = a.layers[k];
        const LayerBounds& lb = b.layers[k];
        if (la.lo.size() != lb.lo.size())
            throw std::invalid_argument("intersect_bounds: layer width mismatch");
        LayerBounds lo;
        lo.lo.resize(la.lo.size());
        lo.hi.resize(la.lo.size());
        for (std::size_t i = 0; i < la.lo.size(); ++i) {
            double l = std::max(la.lo[i], lb.lo[i]);
            double u = std::min(la.hi[i], lb.hi[i]);
            if (l > u) {
                if (l - u > 1e-9)
                    throw std::logic_error(
                        "intersect_bounds: crossing bounds, an input map is unsound");
                l = u = 0.5 * (l + u);  // rounding-level crossing
            }
            lo.lo[i] = l;
            lo.hi[i] = u;
        }
        out.layers.push_back(std::move(lo));
    }
    return out;
}

StabilityReport classify_neurons(const BoundsMap& bounds) {
    StabilityReport rep;
    std::size_t total = 0;
    for (const LayerBounds& lb : bounds.layers) {
        LayerStability ls;
        for (std::size_t i = 0; i < lb.lo.size(); ++i) {
            if (lb.hi[i] <= 0.0)
                ls.inactive += 1;
            else if (lb.lo[i] >= 0.0)
                ls.active += 1;
            else
                ls.unstable += 1;
        }
        total += lb.lo.size();
        rep.stable += ls.active + ls.inactive;
        rep.unstable += ls.unstable;
        rep.per_layer.push_back(ls);
    }
    rep.stable_ratio = total ? static_cast<double>(rep.stable) / static_cast<double>(total) : 0.0;
    return rep;
}

std::string stability_report_to_json(const StabilityReport& report) {
    nlohmann::json per_layer = nlohmann::json::array();
    for (const LayerStability& ls : report.per_layer)
        per_layer.push_back(
            {{"active", ls.active}, {"inactive", ls.inactive}, {"unstable", ls.unstable}});
    nlohmann::json doc{{"per_layer", per_layer}, {"stable_ratio", report.stable_ratio}};
    return doc.dump();
}

std::vector<double> margin_upper_bounds(const LoweredNetwork& net, const InputBox& box,
                                        const BranchConstraints& branch, const BoundsMap& bounds,
                                        std::size_t target_class) {
    std::size_t m_out = net.output_dim();
    if (target_class >= m_out)
        throw std::invalid_argument("margin_upper_bounds: class out of range");
    if (bounds.layers.size() != net.relu_layer_count())
        throw std::invalid_argument("margin_upper_bounds: bounds do not match the network");

    // rows e_i - e_c over the logits
    std::vector<double> R(m_out * m_out, 0.0);
    for (std::size_t i = 0; i < m_out; ++i) {
        R[i * m_out + i] += 1.0;
        R[i * m_out + target_class] -= 1.0;
    }
    std::vector<double> t(m_out, 0.0);
    std::vector<double> M;
    fold_rows(net.affines.back(), R, t, M);
    std::vector<double> ub =
        backsub_upper(net, box, branch, bounds.layers, net.relu_layer_count(), M, t);
    ub[target_class] = 0.0;
    return ub;
}

double stable_percent(const Network& net, const std::vector<RobustnessProperty>& properties) {
    if (properties.empty()) throw std::invalid_argument("stable_percent: no properties");
    LoweredNetwork low = lower(net);
    double acc = 0.0;
    for (const RobustnessProperty& prop : properties) {
        InputBox box = property_box(prop);
        BoundsMap bm = intersect_bounds(ibp_bounds(low, box), linear_bounds(low, box));
        acc += classify_neurons(bm).stable_ratio;
    }
    return 100.0 * acc / static_cast<double>(properties.size());
}

}  // namespace nbcv
