#ifndef NBCV_AUTOGRAD_HPP
#define NBCV_AUTOGRAD_HPP

#include <cstddef>
#include <vector>

#include "nbcv/network.hpp"
#include "nbcv/tensor.hpp"

namespace nbcv {

// Reverse-mode tape over whole tensors. Nodes are appended in topological
// order; backward() walks ids in reverse. Leaves may either own their value
// or view an external tensor (parameters stay in the Network, never copied).
//
// ReLU backward uses subgradient 0 at exactly 0.
class Tape {
public:
    using NodeId = int;

    NodeId constant(Tensor v) { return push_leaf(std::move(v), nullptr, false); }
    NodeId constant_view(const Tensor& v) { return push_leaf(Tensor{}, &v, false); }
    NodeId leaf(Tensor v) { return push_leaf(std::move(v), nullptr, true); }
    NodeId leaf_view(const Tensor& v) { return push_leaf(Tensor{}, &v, true); }

    // y = W x + b with W [out,in], b [out], x [in]
    NodeId affine(NodeId w, NodeId b, NodeId x);
    NodeId conv2d(NodeId kernels, NodeId bias, NodeId x, const Conv2dGeom& geom);
    NodeId relu(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);  // elementwise
    NodeId tanh_of(NodeId x);
    NodeId shift(NodeId x, double c);  // x + c elementwise
    NodeId sum(NodeId x);              // scalar
    NodeId dot(NodeId a, NodeId b);    // scalar

    // v.v' / (|v| |v'|); if either norm < 1e-12 the value and gradient are 0
    NodeId cosine(NodeId a, NodeId b);
    // cross-entropy of softmax(logits) against a one-hot label
    NodeId ce_softmax(NodeId logits, std::size_t label);
    // KL(softmax(a) || softmax(b)), computed in the log domain
    NodeId kl_softmax(NodeId a, NodeId b);
    // scalar c0 + sum_i coeff_i * node_i  (all nodes scalar)
    NodeId lincomb(const std::vector<NodeId>& nodes, const std::vector<double>& coeffs,
                   double c0 = 0.0);

    // interval arithmetic through an affine layer, differentiable in W, b and
    // the incoming interval; used by bound-based regularizers
    NodeId affine_interval_lower(NodeId w, NodeId b, NodeId lo, NodeId hi);
    NodeId affine_interval_upper(NodeId w, NodeId b, NodeId lo, NodeId hi);

    const Tensor& value(NodeId id) const;
    std::size_t node_count() const { return nodes_.size(); }

    // Accumulates reverse-mode gradients from a scalar root. May be called on
    // a fresh tape once; throws on a non-scalar root.
    void backward(NodeId root);

    // Gradient of the last backward() root w.r.t. the given node; zero tensor
    // of matching shape if the node is disconnected from the root.
    Tensor gradient(NodeId id) const;

private:
    enum class Op {
        Leaf,
        Affine,
        Conv2d,
        Relu,
        Add,
        Sub,
        Mul,
        Tanh,
        Shift,
        Sum,
        Dot,
        Cosine,
        CeSoftmax,
        KlSoftmax,
        Lincomb,
        AffIntLo,
        AffIntHi,
    };

    struct Node {
        Op op = Op::Leaf;
        Tensor owned;
        const Tensor* view = nullptr;
        std::vector<NodeId> inputs;
        std::vector<double> coeffs;  // lincomb
        double cparam = 0.0;         // shift offset / lincomb constant
        std::size_t label = 0;       // ce_softmax target
        Conv2dGeom geom;
        bool needs_grad = false;
    };

    NodeId push_leaf(Tensor v, const Tensor* view, bool needs_grad);
    NodeId push_op(Op op, std::vector<NodeId> inputs, Tensor value);
    const Tensor& val(NodeId id) const;
    Tensor& grad_buf(NodeId id);
    void backprop_node(NodeId id);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool ran_backward_ = false;
};

}  // namespace nbcv

#endif
