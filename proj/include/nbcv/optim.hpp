#ifndef NBCV_OPTIM_HPP
#define NBCV_OPTIM_HPP

#include <vector>

#include "nbcv/tensor.hpp"

namespace nbcv {

struct AdamParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::size_t t = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

// Standard Adam update with bias correction. Throws on a non-finite gradient.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamParams& hp);

}  // namespace nbcv

#endif
