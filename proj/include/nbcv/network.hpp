#ifndef NBCV_NETWORK_HPP
#define NBCV_NETWORK_HPP

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "nbcv/tensor.hpp"

namespace nbcv {

// y = W x + b, W stored row-major [out, in]
struct AffineLayer {
    Tensor w;
    Tensor b;
    std::size_t out_dim() const { return w.shape.at(0); }
    std::size_t in_dim() const { return w.shape.at(1); }
};

struct Conv2dGeom {
    std::size_t in_c = 0, in_h = 0, in_w = 0;
    std::size_t out_c = 0, kh = 0, kw = 0;
    std::size_t stride_h = 1, stride_w = 1;
    std::size_t pad_h = 0, pad_w = 0;
    std::size_t out_h = 0, out_w = 0;

    std::size_t in_size() const { return in_c * in_h * in_w; }
    std::size_t out_size() const { return out_c * out_h * out_w; }
};

// kernels [out_c, in_c, kh, kw], bias [out_c]
struct Conv2dLayer {
    Tensor kernels;
    Tensor bias;
    std::size_t stride_h = 1, stride_w = 1;
    std::size_t pad_h = 0, pad_w = 0;

    // resolves output spatial extents against a concrete [c,h,w] input shape
    Conv2dGeom geometry(const std::vector<std::size_t>& input_shape) const;
};

struct ReluLayer {};
struct FlattenLayer {};

using Layer = std::variant<AffineLayer, Conv2dLayer, ReluLayer, FlattenLayer>;

// One forward pass, with per-ReLU-layer pre/post activations kept flat for
// consistency scoring and stability analysis.
struct ActivationTrace {
    std::vector<Tensor> layer_outputs;
    std::vector<Tensor> relu_pre;
    std::vector<Tensor> relu_post;
    Tensor logits;
};

// Immutable layer graph plus a mutable parameter store. Structure never
// changes after construction; parameters() exposes the trainable tensors.
class Network {
public:
    Network() = default;
    Network(std::vector<std::size_t> input_shape, std::vector<Layer> layers);

    const std::vector<std::size_t>& input_shape() const { return input_shape_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers_mut() { return layers_; }

    std::size_t input_dim() const { return Tensor::numel(input_shape_); }
    std::size_t output_dim() const { return output_dim_; }
    std::size_t relu_layer_count() const { return hidden_sizes_.size(); }
    // flattened pre-activation width of each ReLU layer, in layer order
    const std::vector<std::size_t>& hidden_layer_sizes() const { return hidden_sizes_; }
    const std::vector<std::vector<std::size_t>>& layer_output_shapes() const {
        return output_shapes_;
    }

    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;

    ActivationTrace forward(const Tensor& x) const;

private:
    void validate_and_infer();

    std::vector<std::size_t> input_shape_;
    std::vector<Layer> layers_;
    std::vector<std::vector<std::size_t>> output_shapes_;
    std::vector<std::size_t> hidden_sizes_;
    std::size_t output_dim_ = 0;
};

// Analysis form: strictly alternating affine / ReLU / ... / affine over flat
// vectors. Conv layers are unrolled, flattens dropped, adjacent affines fused.
struct LoweredNetwork {
    std::size_t input_dim = 0;
    std::vector<AffineLayer> affines;  // ReLU after every affine except the last

    std::size_t relu_layer_count() const { return affines.size() - 1; }
    std::size_t output_dim() const { return affines.back().out_dim(); }
    std::vector<std::size_t> hidden_sizes() const;
    Tensor forward_flat(const Tensor& x) const;
};

AffineLayer lower_conv_to_affine(const Conv2dLayer& conv,
                                 const std::vector<std::size_t>& input_shape);
LoweredNetwork lower(const Network& net);

// direct convolution on a flat [c*h*w] input; shared by forward and the tape
void conv2d_apply(const Conv2dGeom& g, const double* kernels, const double* bias,
                  const double* in, double* out);

// He/Kaiming fan-in normal weights, zero biases; deterministic in seed.
Network init_params(Network net, std::uint64_t seed);

// affine/ReLU MLP over dims[0] inputs, logits of width dims.back()
Network make_mlp(const std::vector<std::size_t>& dims);

std::size_t argmax_index(const Tensor& logits);

}  // namespace nbcv

#endif
