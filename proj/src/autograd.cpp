#include "nbcv/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nbcv {

namespace {

constexpr double kDegenerateNorm = 1e-12;

void softmax_log(const Tensor& logits, std::vector<double>& logp) {
    double m = logits[0];
    for (double v : logits.data) m = std::max(m, v);
    double acc = 0.0;
    for (double v : logits.data) acc += std::exp(v - m);
    double lse = m + std::log(acc);
    logp.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) logp[i] = logits[i] - lse;
}

}  // namespace

Tape::NodeId Tape::push_leaf(Tensor v, const Tensor* view, bool needs_grad) {
    Node n;
    n.op = Op::Leaf;
    if (view)
        n.view = view;
    else
        n.owned = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::push_op(Op op, std::vector<NodeId> inputs, Tensor value) {
    Node n;
    n.op = op;
    n.owned = std::move(value);
    for (NodeId in : inputs) {
        if (in < 0 || in >= static_cast<NodeId>(nodes_.size()))
            throw std::invalid_argument("Tape: bad node id");
        n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
    }
    n.inputs = std::move(inputs);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

const Tensor& Tape::val(NodeId id) const {
    const Node& n = nodes_[id];
    return n.view ? *n.view : n.owned;
}

const Tensor& Tape::value(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
        throw std::invalid_argument("Tape::value: bad node id");
    return val(id);
}

Tape::NodeId Tape::affine(NodeId w, NodeId b, NodeId x) {
    const Tensor& wt = val(w);
    const Tensor& bt = val(b);
    const Tensor& xt = val(x);
    if (wt.shape.size() != 2) throw std::invalid_argument("affine: W must be a matrix");
    std::size_t out = wt.shape[0], in = wt.shape[1];
    if (xt.size() != in || bt.size() != out)
        throw std::invalid_argument("affine: shape mismatch");
    Tensor y = Tensor::zeros({out});
    for (std::size_t r = 0; r < out; ++r) {
        double acc = bt[r];
        const double* row = wt.data.data() + r * in;
        for (std::size_t c = 0; c < in; ++c) acc += row[c] * xt[c];
        y[r] = acc;
    }
    return push_op(Op::Affine, {w, b, x}, std::move(y));
}

Tape::NodeId Tape::conv2d(NodeId kernels, NodeId bias, NodeId x, const Conv2dGeom& geom) {
    const Tensor& kt = val(kernels);
    const Tensor& bt = val(bias);
    const Tensor& xt = val(x);
    if (xt.size() != geom.in_size() || kt.size() != geom.out_c * geom.in_c * geom.kh * geom.kw ||
        bt.size() != geom.out_c)
        throw std::invalid_argument("conv2d: shape mismatch");
    Tensor y = Tensor::zeros({geom.out_size()});
    conv2d_apply(geom, kt.data.data(), bt.data.data(), xt.data.data(), y.data.data());
    NodeId id = push_op(Op::Conv2d, {kernels, bias, x}, std::move(y));
    nodes_[id].geom = geom;
    return id;
}

Tape::NodeId Tape::relu(NodeId x) {
    Tensor y = val(x);
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return push_op(Op::Relu, {x}, std::move(y));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& at = val(a);
    const Tensor& bt = val(b);
    if (at.size() != bt.size()) throw std::invalid_argument("add: size mismatch");
    Tensor y = at;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bt[i];
    return push_op(Op::Add, {a, b}, std::move(y));
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
    const Tensor& at = val(a);
    const Tensor& bt = val(b);
    if (at.size() != bt.size()) throw std::invalid_argument("sub: size mismatch");
    Tensor y = at;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bt[i];
    return push_op(Op::Sub, {a, b}, std::move(y));
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
    const Tensor& at = val(a);
    const Tensor& bt = val(b);
    if (at.size() != bt.size()) throw std::invalid_argument("mul: size mismatch");
    Tensor y = at;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bt[i];
    return push_op(Op::Mul, {a, b}, std::move(y));
}

Tape::NodeId Tape::tanh_of(NodeId x) {
    Tensor y = val(x);
    for (double& v : y.data) v = std::tanh(v);
    return push_op(Op::Tanh, {x}, std::move(y));
}

Tape::NodeId Tape::shift(NodeId x, double c) {
    Tensor y = val(x);
    for (double& v : y.data) v += c;
    NodeId id = push_op(Op::Shift, {x}, std::move(y));
    nodes_[id].cparam = c;
    return id;
}

Tape::NodeId Tape::sum(NodeId x) {
    double acc = 0.0;
    for (double v : val(x).data) acc += v;
    return push_op(Op::Sum, {x}, Tensor::scalar(acc));
}

Tape::NodeId Tape::dot(NodeId a, NodeId b) {
    const Tensor& at = val(a);
    const Tensor& bt = val(b);
    if (at.size() != bt.size()) throw std::invalid_argument("dot: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < at.size(); ++i) acc += at[i] * bt[i];
    return push_op(Op::Dot, {a, b}, Tensor::scalar(acc));
}

Tape::NodeId Tape::cosine(NodeId a, NodeId b) {
    const Tensor& at = val(a);
    const Tensor& bt = val(b);
    if (at.size() != bt.size()) throw std::invalid_argument("cosine: length mismatch");
    if (at.size() == 0) throw std::invalid_argument("cosine: empty vectors");
    double d = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < at.size(); ++i) {
        d += at[i] * bt[i];
        na += at[i] * at[i];
        nb += bt[i] * bt[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    double value = (na < kDegenerateNorm || nb < kDegenerateNorm) ? 0.0 : d / (na * nb);
    return push_op(Op::Cosine, {a, b}, Tensor::scalar(value));
}

Tape::NodeId Tape::ce_softmax(NodeId logits, std::size_t label) {
    const Tensor& lt = val(logits);
    if (label >= lt.size()) throw std::invalid_argument("ce_softmax: label out of range");
    std::vector<double> logp;
    softmax_log(lt, logp);
    NodeId id = push_op(Op::CeSoftmax, {logits}, Tensor::scalar(-logp[label]));
    nodes_[id].label = label;
    return id;
}

Tape::NodeId Tape::kl_softmax(NodeId a, NodeId b) {
    const Tensor& at = val(a);
    const Tensor& bt = val(b);
    if (at.size() != bt.size()) throw std::invalid_argument("kl_softmax: length mismatch");
    std::vector<double> logp, logq;
    softmax_log(at, logp);
    softmax_log(bt, logq);
    double kl = 0.0;
    for (std::size_t i = 0; i < at.size(); ++i) kl += std::exp(logp[i]) * (logp[i] - logq[i]);
    return push_op(Op::KlSoftmax, {a, b}, Tensor::scalar(kl));
}

Tape::NodeId Tape::lincomb(const std::vector<NodeId>& nodes, const std::vector<double>& coeffs,
                           double c0) {
    if (nodes.size() != coeffs.size()) throw std::invalid_argument("lincomb: arity mismatch");
    double acc = c0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!val(nodes[i]).is_scalar()) throw std::invalid_argument("lincomb: non-scalar term");
        acc += coeffs[i] * val(nodes[i])[0];
    }
    NodeId id = push_op(Op::Lincomb, nodes, Tensor::scalar(acc));
    nodes_[id].coeffs = coeffs;
    nodes_[id].cparam = c0;
    return id;
}

namespace {

void check_interval_args(const Tensor& wt, const Tensor& bt, const Tensor& lo, const Tensor& hi) {
    if (wt.shape.size() != 2) throw std::invalid_argument("affine_interval: W must be a matrix");
    if (lo.size() != wt.shape[1] || hi.size() != wt.shape[1] || bt.size() != wt.shape[0])
        throw std::invalid_argument("affine_interval: shape mismatch");
}

}  // namespace

Tape::NodeId Tape::affine_interval_lower(NodeId w, NodeId b, NodeId lo, NodeId hi) {
    const Tensor& wt = val(w);
    const Tensor& bt = val(b);
    const Tensor& lot = val(lo);
    const Tensor& hit = val(hi);
    check_interval_args(wt, bt, lot, hit);
    std::size_t out = wt.shape[0], in = wt.shape[1];
    Tensor y = Tensor::zeros({out});
    for (std::size_t r = 0; r < out; ++r) {
        double acc = bt[r];
        const double* row = wt.data.data() + r * in;
        for (std::size_t c = 0; c < in; ++c)
            acc += row[c] * (row[c] >= 0.0 ? lot[c] : hit[c]);
        y[r] = acc;
    }
    return push_op(Op::AffIntLo, {w, b, lo, hi}, std::move(y));
}

Tape::NodeId Tape::affine_interval_upper(NodeId w, NodeId b, NodeId lo, NodeId hi) {
    const Tensor& wt = val(w);
    const Tensor& bt = val(b);
    const Tensor& lot = val(lo);
    const Tensor& hit = val(hi);
    check_interval_args(wt, bt, lot, hit);
    std::size_t out = wt.shape[0], in = wt.shape[1];
    Tensor y = Tensor::zeros({out});
    for (std::size_t r = 0; r < out; ++r) {
        double acc = bt[r];
        const double* row = wt.data.data() + r * in;
        for (std::size_t c = 0; c < in; ++c)
            acc += row[c] * (row[c] >= 0.0 ? hit[c] : lot[c]);
        y[r] = acc;
    }
    return push_op(Op::AffIntHi, {w, b, lo, hi}, std::move(y));
}

Tensor& Tape::grad_buf(NodeId id) {
    if (grads_[id].data.empty()) grads_[id] = Tensor::zeros({val(id).size()});
    return grads_[id];
}

void Tape::backward(NodeId root) {
    if (root < 0 || root >= static_cast<NodeId>(nodes_.size()))
        throw std::invalid_argument("backward: bad root");
    if (!val(root).is_scalar())
        throw std::invalid_argument("backward: root must be a scalar");
    if (ran_backward_) throw std::logic_error("backward: tape already differentiated");
    ran_backward_ = true;

    grads_.assign(nodes_.size(), Tensor{});
    grad_buf(root)[0] = 1.0;
    for (NodeId id = root; id >= 0; --id) {
        if (grads_[id].data.empty()) continue;
        if (!nodes_[id].needs_grad) continue;
        backprop_node(id);
    }
}

void Tape::backprop_node(NodeId id) {
    const Node& n = nodes_[id];
    const Tensor& g = grads_[id];
    auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].needs_grad; };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Affine: {
            const Tensor& wt = val(n.inputs[0]);
            const Tensor& xt = val(n.inputs[2]);
            std::size_t out = wt.shape[0], in = wt.shape[1];
            if (wants(0)) {
                Tensor& gw = grad_buf(n.inputs[0]);
                for (std::size_t r = 0; r < out; ++r) {
                    double gr = g[r];
                    if (gr == 0.0) continue;
                    double* row = gw.data.data() + r * in;
                    for (std::size_t c = 0; c < in; ++c) row[c] += gr * xt[c];
                }
            }
            if (wants(1)) {
                Tensor& gb = grad_buf(n.inputs[1]);
                for (std::size_t r = 0; r < out; ++r) gb[r] += g[r];
            }
            if (wants(2)) {
                Tensor& gx = grad_buf(n.inputs[2]);
                for (std::size_t r = 0; r < out; ++r) {
                    double gr = g[r];
                    if (gr == 0.0) continue;
                    const double* row = wt.data.data() + r * in;
                    for (std::size_t c = 0; c < in; ++c) gx[c] += gr * row[c];
                }
            }
            break;
        }
        case Op::Conv2d: {
            const Conv2dGeom& gm = n.geom;
            const Tensor& kt = val(n.inputs[0]);
            const Tensor& xt = val(n.inputs[2]);
            Tensor* gk = wants(0) ? &grad_buf(n.inputs[0]) : nullptr;
            Tensor* gb = wants(1) ? &grad_buf(n.inputs[1]) : nullptr;
            Tensor* gx = wants(2) ? &grad_buf(n.inputs[2]) : nullptr;
            for (std::size_t oc = 0; oc < gm.out_c; ++oc) {
                for (std::size_t oy = 0; oy < gm.out_h; ++oy) {
                    for (std::size_t ox = 0; ox < gm.out_w; ++ox) {
                        double go = g[(oc * gm.out_h + oy) * gm.out_w + ox];
                        if (go == 0.0) continue;
                        if (gb) gb->data[oc] += go;
                        for (std::size_t ic = 0; ic < gm.in_c; ++ic) {
                            for (std::size_t ky = 0; ky < gm.kh; ++ky) {
                                std::ptrdiff_t iy =
                                    static_cast<std::ptrdiff_t>(oy * gm.stride_h + ky) -
                                    static_cast<std::ptrdiff_t>(gm.pad_h);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(gm.in_h)) continue;
                                for (std::size_t kx = 0; kx < gm.kw; ++kx) {
                                    std::ptrdiff_t ix =
                                        static_cast<std::ptrdiff_t>(ox * gm.stride_w + kx) -
                                        static_cast<std::ptrdiff_t>(gm.pad_w);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(gm.in_w))
                                        continue;
                                    std::size_t kidx =
                                        ((oc * gm.in_c + ic) * gm.kh + ky) * gm.kw + kx;
                                    std::size_t xidx = (ic * gm.in_h + iy) * gm.in_w + ix;
                                    if (gk) gk->data[kidx] += go * xt[xidx];
                                    if (gx) gx->data[xidx] += go * kt[kidx];
                                }
                            }
                        }
                    }
                }
            }
            break;
        }
        case Op::Relu: {
            if (!wants(0)) break;
            const Tensor& xt = val(n.inputs[0]);
            Tensor& gx = grad_buf(n.inputs[0]);
            for (std::size_t i = 0; i < xt.size(); ++i)
                if (xt[i] > 0.0) gx[i] += g[i];
            break;
        }
        case Op::Add: {
            for (std::size_t k = 0; k < 2; ++k) {
                if (!wants(k)) continue;
                Tensor& gi = grad_buf(n.inputs[k]);
                for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
            }
            break;
        }
        case Op::Sub: {
            if (wants(0)) {
                Tensor& ga = grad_buf(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (wants(1)) {
                Tensor& gb = grad_buf(n.inputs[1]);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
            break;
        }
        case Op::Mul: {
            const Tensor& at = val(n.inputs[0]);
            const Tensor& bt = val(n.inputs[1]);
            if (wants(0)) {
                Tensor& ga = grad_buf(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bt[i];
            }
            if (wants(1)) {
                Tensor& gb = grad_buf(n.inputs[1]);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * at[i];
            }
            break;
        }
        case Op::Tanh: {
            if (!wants(0)) break;
            Tensor& gx = grad_buf(n.inputs[0]);
            const Tensor& y = n.owned;
            for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
            break;
        }
        case Op::Shift: {
            if (!wants(0)) break;
            Tensor& gx = grad_buf(n.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            break;
        }
        case Op::Sum: {
            if (!wants(0)) break;
            Tensor& gx = grad_buf(n.inputs[0]);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
            break;
        }
        case Op::Dot: {
            const Tensor& at = val(n.inputs[0]);
            const Tensor& bt = val(n.inputs[1]);
            if (wants(0)) {
                Tensor& ga = grad_buf(n.inputs[0]);
                for (std::size_t i = 0; i < at.size(); ++i) ga[i] += g[0] * bt[i];
            }
            if (wants(1)) {
                Tensor& gb = grad_buf(n.inputs[1]);
                for (std::size_t i = 0; i < at.size(); ++i) gb[i] += g[0] * at[i];
            }
            break;
        }
        case Op::Cosine: {
            const Tensor& at = val(n.inputs[0]);
            const Tensor& bt = val(n.inputs[1]);
            double d = 0.0, na2 = 0.0, nb2 = 0.0;
            for (std::size_t i = 0; i < at.size(); ++i) {
                d += at[i] * bt[i];
                na2 += at[i] * at[i];
                nb2 += bt[i] * bt[i];
            }
            double na = std::sqrt(na2), nb = std::sqrt(nb2);
            if (na < kDegenerateNorm || nb < kDegenerateNorm) break;  // flat zero
            double inv = 1.0 / (na * nb);
            if (wants(0)) {
                Tensor& ga = grad_buf(n.inputs[0]);
                double s = d / na2;
                for (std::size_t i = 0; i < at.size(); ++i)
                    ga[i] += g[0] * inv * (bt[i] - s * at[i]);
            }
            if (wants(1)) {
                Tensor& gb = grad_buf(n.inputs[1]);
                double s = d / nb2;
                for (std::size_t i = 0; i < at.size(); ++i)
                    gb[i] += g[0] * inv * (at[i] - s * bt[i]);
            }
            break;
        }
        case Op::CeSoftmax: {
            if (!wants(0)) break;
            const Tensor& lt = val(n.inputs[0]);
            std::vector<double> logp;
            softmax_log(lt, logp);
            Tensor& gl = grad_buf(n.inputs[0]);
            for (std::size_t i = 0; i < lt.size(); ++i) {
                double p = std::exp(logp[i]);
                gl[i] += g[0] * (p - (i == n.label ? 1.0 : 0.0));
            }
            break;
        }
        case Op::KlSoftmax: {
            const Tensor& at = val(n.inputs[0]);
            const Tensor& bt = val(n.inputs[1]);
            std::vector<double> logp, logq;
            softmax_log(at, logp);
            softmax_log(bt, logq);
            double kl = n.owned[0];
            if (wants(0)) {
                Tensor& ga = grad_buf(n.inputs[0]);
                for (std::size_t i = 0; i < at.size(); ++i) {
                    double p = std::exp(logp[i]);
                    ga[i] += g[0] * p * ((logp[i] - logq[i]) - kl);
                }
            }
            if (wants(1)) {
                Tensor& gb = grad_buf(n.inputs[1]);
                for (std::size_t i = 0; i < at.size(); ++i)
                    gb[i] += g[0] * (std::exp(logq[i]) - std::exp(logp[i]));
            }
            break;
        }
        case Op::Lincomb: {
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                if (!wants(k)) continue;
                grad_buf(n.inputs[k])[0] += g[0] * n.coeffs[k];
            }
            break;
        }
        case Op::AffIntLo:
        case Op::AffIntHi: {
            bool upper = n.op == Op::AffIntHi;
            const Tensor& wt = val(n.inputs[0]);
            const Tensor& lot = val(n.inputs[2]);
            const Tensor& hit = val(n.inputs[3]);
            std::size_t out = wt.shape[0], in = wt.shape[1];
            Tensor* gw = wants(0) ? &grad_buf(n.inputs[0]) : nullptr;
            Tensor* gb = wants(1) ? &grad_buf(n.inputs[1]) : nullptr;
            Tensor* glo = wants(2) ? &grad_buf(n.inputs[2]) : nullptr;
            Tensor* ghi = wants(3) ? &grad_buf(n.inputs[3]) : nullptr;
            for (std::size_t r = 0; r < out; ++r) {
                double gr = g[r];
                if (gr == 0.0) continue;
                if (gb) gb->data[r] += gr;
                const double* row = wt.data.data() + r * in;
                for (std::size_t c = 0; c < in; ++c) {
                    // positive weights pick lo for the lower bound, hi for the upper
                    bool pick_lo = (row[c] >= 0.0) != upper;
                    if (gw) gw->data[r * in + c] += gr * (pick_lo ? lot[c] : hit[c]);
                    if (pick_lo) {
                        if (glo) glo->data[c] += gr * row[c];
                    } else {
                        if (ghi) ghi->data[c] += gr * row[c];
                    }
                }
            }
            break;
        }
    }
}

Tensor Tape::gradient(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
        throw std::invalid_argument("gradient: bad node id");
    if (!ran_backward_) throw std::logic_error("gradient: backward() has not run");
    if (static_cast<std::size_t>(id) < grads_.size() && !grads_[id].data.empty())
        return grads_[id];
    return Tensor::zeros({val(id).size()});
}

}  // namespace nbcv
