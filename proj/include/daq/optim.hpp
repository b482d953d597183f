#ifndef DAQ_OPTIM_HPP
#define DAQ_OPTIM_HPP

// SGD with momentum, Adam, and cosine learning-rate annealing. Free functions
// over (param, grad, state); the caller owns the state tensors.

#include <cmath>

#include "daq/tensor.hpp"

namespace daq {

// velocity <- momentum * velocity + grad + weight_decay * param
// param    <- param - lr * velocity
inline void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
                     double momentum = 0.0, double weight_decay = 0.0) {
    if (!param.same_shape(grad) || !param.same_shape(velocity))
        throw ShapeError("sgd_step: param " + shape_str(param.shape()) + ", grad " +
                         shape_str(grad.shape()));
    for (std::int64_t i = 0; i < param.numel(); ++i) {
        const double g = grad[i] + weight_decay * param[i];
        velocity[i] = momentum * velocity[i] + g;
        param[i] -= lr * velocity[i];
    }
}

struct AdamState {
    Tensor m;
    Tensor v;
    long t = 0;

    explicit AdamState(const Shape& shape) : m(Tensor::zeros(shape)), v(Tensor::zeros(shape)) {}
};

inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    if (!param.same_shape(grad) || !param.same_shape(state.m))
        throw ShapeError("adam_step: param " + shape_str(param.shape()) + ", grad " +
                         shape_str(grad.shape()));
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::int64_t i = 0; i < param.numel(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

inline double cosine_lr(long step, long total, double lr0) {
    return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) /
                                       static_cast<double>(total)));
}

} // namespace daq

#endif // DAQ_OPTIM_HPP
