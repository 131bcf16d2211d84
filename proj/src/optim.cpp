#include "nbcv/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace nbcv {

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamParams& hp) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: params/grads arity mismatch");
    if (state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.push_back(Tensor::zeros({p->size()}));
            state.v.push_back(Tensor::zeros({p->size()}));
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: state does not match params");

    state.t += 1;
    double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));

    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = grads[k];
        if (g.size() != p.size())
            throw std::invalid_argument("adam_step: gradient shape mismatch");
        g.ensure_finite("adam_step gradient");
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p.data[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
        }
    }
}

}  // namespace nbcv
