#include "nbcv/network.hpp"

#include <algorithm>
#include <stdexcept>

#include "nbcv/rng.hpp"

namespace nbcv {

Conv2dGeom Conv2dLayer::geometry(const std::vector<std::size_t>& input_shape) const {
    if (input_shape.size() != 3)
        throw std::invalid_argument("Conv2d expects a [c,h,w] input, got " +
                                    shape_str(input_shape));
    if (kernels.shape.size() != 4)
        throw std::invalid_argument("Conv2d kernels must be [out_c,in_c,kh,kw]");
    Conv2dGeom g;
    g.in_c = input_shape[0];
    g.in_h = input_shape[1];
    g.in_w = input_shape[2];
    g.out_c = kernels.shape[0];
    g.kh = kernels.shape[2];
    g.kw = kernels.shape[3];
    g.stride_h = stride_h;
    g.stride_w = stride_w;
    g.pad_h = pad_h;
    g.pad_w = pad_w;
    if (kernels.shape[1] != g.in_c)
        throw std::invalid_argument("Conv2d kernel channel mismatch");
    std::size_t span_h = g.in_h + 2 * g.pad_h;
    std::size_t span_w = g.in_w + 2 * g.pad_w;
    if (span_h < g.kh || span_w < g.kw)
        throw std::invalid_argument("Conv2d kernel larger than padded input");
    if ((span_h - g.kh) % g.stride_h != 0 || (span_w - g.kw) % g.stride_w != 0)
        throw std::invalid_argument("Conv2d stride does not tile the padded input");
    g.out_h = (span_h - g.kh) / g.stride_h + 1;
    g.out_w = (span_w - g.kw) / g.stride_w + 1;
    if (bias.size() != g.out_c)
        throw std::invalid_argument("Conv2d bias width mismatch");
    return g;
}

void conv2d_apply(const Conv2dGeom& g, const double* kernels, const double* bias,
                  const double* in, double* out) {
    for (std::size_t oc = 0; oc < g.out_c; ++oc) {
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                double acc = bias[oc];
                for (std::size_t ic = 0; ic < g.in_c; ++ic) {
                    for (std::size_t ky = 0; ky < g.kh; ++ky) {
                        std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * g.stride_h + ky) -
                            static_cast<std::ptrdiff_t>(g.pad_h);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                        for (std::size_t kx = 0; kx < g.kw; ++kx) {
                            std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * g.stride_w + kx) -
                                static_cast<std::ptrdiff_t>(g.pad_w);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                            double k = kernels[((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx];
                            double v = in[(ic * g.in_h + iy) * g.in_w + ix];
                            acc += k * v;
                        }
                    }
                }
                out[(oc * g.out_h + oy) * g.out_w + ox] = acc;
            }
        }
    }
}

Network::Network(std::vector<std::size_t> input_shape, std::vector<Layer> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    validate_and_infer();
}

void Network::validate_and_infer() {
    if (layers_.empty()) throw std::invalid_argument("Network: no layers");
    Tensor::numel(input_shape_);  // rejects zero extents

    std::vector<std::size_t> shape = input_shape_;
    output_shapes_.clear();
    hidden_sizes_.clear();
    bool prev_is_linear_map = false;  // affine or conv directly before this layer

    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer& layer = layers_[i];
        if (std::holds_alternative<AffineLayer>(layer)) {
            const auto& a = std::get<AffineLayer>(layer);
            if (shape.size() != 1 || shape[0] != a.in_dim())
                throw std::invalid_argument("layer " + std::to_string(i) +
                                            ": affine expects [" + std::to_string(a.in_dim()) +
                                            "], got " + shape_str(shape));
            if (a.b.size() != a.out_dim())
                throw std::invalid_argument("layer " + std::to_string(i) + ": bias width mismatch");
            shape = {a.out_dim()};
            prev_is_linear_map = true;
        } else if (std::holds_alternative<Conv2dLayer>(layer)) {
            const auto& c = std::get<Conv2dLayer>(layer);
            Conv2dGeom g = c.geometry(shape);
            shape = {g.out_c, g.out_h, g.out_w};
            prev_is_linear_map = true;
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            // pre-activation must be well defined
            if (!prev_is_linear_map)
                throw std::invalid_argument("layer " + std::to_string(i) +
                                            ": ReLU must follow an affine or conv layer");
            hidden_sizes_.push_back(Tensor::numel(shape));
            prev_is_linear_map = false;
        } else {
            shape = {Tensor::numel(shape)};
            prev_is_linear_map = false;
        }
        output_shapes_.push_back(shape);
    }

    if (!std::holds_alternative<AffineLayer>(layers_.back()))
        throw std::invalid_argument("Network: final layer must be affine (logits)");
    output_dim_ = Tensor::numel(shape);
}

std::vector<Tensor*> Network::parameters() {
    std::vector<Tensor*> ps;
    for (Layer& layer : layers_) {
        if (auto* a = std::get_if<AffineLayer>(&layer)) {
            ps.push_back(&a->w);
            ps.push_back(&a->b);
        } else if (auto* c = std::get_if<Conv2dLayer>(&layer)) {
            ps.push_back(&c->kernels);
            ps.push_back(&c->bias);
        }
    }
    return ps;
}

std::vector<const Tensor*> Network::parameters() const {
    std::vector<const Tensor*> ps;
    for (const Layer& layer : layers_) {
        if (const auto* a = std::get_if<AffineLayer>(&layer)) {
            ps.push_back(&a->w);
            ps.push_back(&a->b);
        } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
            ps.push_back(&c->kernels);
            ps.push_back(&c->bias);
        }
    }
    return ps;
}

ActivationTrace Network::forward(const Tensor& x) const {
    if (x.shape != input_shape_)
        throw std::invalid_argument("forward: input shape " + shape_str(x.shape) +
                                    " does not match network input " + shape_str(input_shape_));
    x.ensure_finite("forward input");

    ActivationTrace trace;
    Tensor cur = x;
    std::vector<std::size_t> shape = input_shape_;

    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer& layer = layers_[i];
        if (const auto* a = std::get_if<AffineLayer>(&layer)) {
            Tensor out = Tensor::zeros({a->out_dim()});
            const double* w = a->w.data.data();
            for (std::size_t r = 0; r < a->out_dim(); ++r) {
                double acc = a->b[r];
                const double* row = w + r * a->in_dim();
                for (std::size_t cidx = 0; cidx < a->in_dim(); ++cidx)
                    acc += row[cidx] * cur[cidx];
                out[r] = acc;
            }
            cur = std::move(out);
            shape = {a->out_dim()};
        } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
            Conv2dGeom g = c->geometry(shape);
            Tensor out = Tensor::zeros({g.out_c, g.out_h, g.out_w});
            conv2d_apply(g, c->kernels.data.data(), c->bias.data.data(), cur.data.data(),
                         out.data.data());
            cur = std::move(out);
            shape = {g.out_c, g.out_h, g.out_w};
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            Tensor pre = cur;
            pre.shape = {pre.size()};
            trace.relu_pre.push_back(pre);
            for (double& v : cur.data) v = v > 0.0 ? v : 0.0;
            Tensor post = cur;
            post.shape = {post.size()};
            trace.relu_post.push_back(post);
        } else {
            cur.shape = {cur.size()};
            shape = {cur.size()};
        }
        cur.ensure_finite("forward layer " + std::to_string(i));
        trace.layer_outputs.push_back(cur);
    }

    trace.logits = cur;
    trace.logits.shape = {trace.logits.size()};
    return trace;
}

std::vector<std::size_t> LoweredNetwork::hidden_sizes() const {
    std::vector<std::size_t> hs;
    for (std::size_t i = 0; i + 1 < affines.size(); ++i) hs.push_back(affines[i].out_dim());
    return hs;
}

Tensor LoweredNetwork::forward_flat(const Tensor& x) const {
    Tensor cur = x;
    for (std::size_t i = 0; i < affines.size(); ++i) {
        const AffineLayer& a = affines[i];
        Tensor out = Tensor::zeros({a.out_dim()});
        for (std::size_t r = 0; r < a.out_dim(); ++r) {
            double acc = a.b[r];
            const double* row = a.w.data.data() + r * a.in_dim();
            for (std::size_t c = 0; c < a.in_dim(); ++c) acc += row[c] * cur[c];
            out[r] = acc;
        }
        if (i + 1 < affines.size())
            for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        cur = std::move(out);
    }
    return cur;
}

AffineLayer lower_conv_to_affine(const Conv2dLayer& conv,
                                 const std::vector<std::size_t>& input_shape) {
    Conv2dGeom g = conv.geometry(input_shape);
    std::size_t n_in = g.in_size(), n_out = g.out_size();
    AffineLayer aff;
    aff.w = Tensor::zeros({n_out, n_in});
    aff.b = Tensor::zeros({n_out});

    const double* k = conv.kernels.data.data();
    for (std::size_t oc = 0; oc < g.out_c; ++oc) {
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                std::size_t row = (oc * g.out_h + oy) * g.out_w + ox;
                aff.b[row] = conv.bias[oc];
                for (std::size_t ic = 0; ic < g.in_c; ++ic) {
                    for (std::size_t ky = 0; ky < g.kh; ++ky) {
                        std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * g.stride_h + ky) -
                            static_cast<std::ptrdiff_t>(g.pad_h);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                        for (std::size_t kx = 0; kx < g.kw; ++kx) {
                            std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * g.stride_w + kx) -
                                static_cast<std::ptrdiff_t>(g.pad_w);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                            std::size_t col = (ic * g.in_h + iy) * g.in_w + ix;
                            aff.w.data[row * n_in + col] +=
                                k[((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx];
                        }
                    }
                }
            }
        }
    }
    return aff;
}

namespace {

// W2 (W1 x + b1) + b2
AffineLayer compose_affine(const AffineLayer& first, const AffineLayer& second) {
    std::size_t n_in = first.in_dim(), mid = first.out_dim(), n_out = second.out_dim();
    if (second.in_dim() != mid) throw std::logic_error("compose_affine: width mismatch");
    AffineLayer out;
    out.w = Tensor::zeros({n_out, n_in});
    out.b = second.b;
    for (std::size_t r = 0; r < n_out; ++r) {
        for (std::size_t m = 0; m < mid; ++m) {
            double w2 = second.w.data[r * mid + m];
            if (w2 == 0.0) continue;
            const double* row1 = first.w.data.data() + m * n_in;
            double* rowo = out.w.data.data() + r * n_in;
            for (std::size_t c = 0; c < n_in; ++c) rowo[c] += w2 * row1[c];
            out.b[r] += w2 * first.b[m];
        }
    }
    return out;
}

}  // namespace

LoweredNetwork lower(const Network& net) {
    LoweredNetwork low;
    low.input_dim = net.input_dim();

    std::vector<std::size_t> shape = net.input_shape();
    std::optional<AffineLayer> pending;

    auto absorb = [&](AffineLayer next) {
        if (pending)
            pending = compose_affine(*pending, std::move(next));
        else
            pending = std::move(next);
    };

    for (const Layer& layer : net.layers()) {
        if (const auto* a = std::get_if<AffineLayer>(&layer)) {
            absorb(*a);
            shape = {a->out_dim()};
        } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
            absorb(lower_conv_to_affine(*c, shape));
            Conv2dGeom g = c->geometry(shape);
            shape = {g.out_c, g.out_h, g.out_w};
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            if (!pending) throw std::logic_error("lower: ReLU without pending affine");
            low.affines.push_back(std::move(*pending));
            pending.reset();
        } else {
            shape = {Tensor::numel(shape)};
        }
    }
    if (!pending) throw std::logic_error("lower: network must end in an affine layer");
    low.affines.push_back(std::move(*pending));
    return low;
}

Network init_params(Network net, std::uint64_t seed) {
    std::size_t layer_idx = 0;
    for (Layer& layer : net.layers_mut()) {
        if (auto* a = std::get_if<AffineLayer>(&layer)) {
            RngStream rng(seed, "init/affine/" + std::to_string(layer_idx));
            double stddev = std::sqrt(2.0 / static_cast<double>(a->in_dim()));
            for (double& v : a->w.data) v = stddev * rng.normal();
            for (double& v : a->b.data) v = 0.0;
        } else if (auto* c = std::get_if<Conv2dLayer>(&layer)) {
            RngStream rng(seed, "init/conv/" + std::to_string(layer_idx));
            std::size_t fan_in = c->kernels.shape[1] * c->kernels.shape[2] * c->kernels.shape[3];
            double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (double& v : c->kernels.data) v = stddev * rng.normal();
            for (double& v : c->bias.data) v = 0.0;
        }
        ++layer_idx;
    }
    return net;
}

Network make_mlp(const std::vector<std::size_t>& dims) {
    if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least in/out dims");
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        AffineLayer a;
        a.w = Tensor::zeros({dims[i + 1], dims[i]});
        a.b = Tensor::zeros({dims[i + 1]});
        layers.emplace_back(std::move(a));
        if (i + 2 < dims.size()) layers.emplace_back(ReluLayer{});
    }
    return Network({dims[0]}, std::move(layers));
}

std::size_t argmax_index(const Tensor& logits) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = i;
    return best;
}

}  // namespace nbcv
