#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "camds/tensor.hpp"

namespace camds {

// Classic SGD with momentum and coupled weight decay:
//   v <- momentum*v + grad + weight_decay*value
//   value <- value - lr*v
// The caller zeroes gradients after each step.
template <typename T>
struct SgdStateT {
    std::vector<std::vector<T>> velocity;  // aligned with the parameter registry
    int64_t iteration = 0;

    static SgdStateT for_params(const std::vector<ParameterT<T>>& params) {
        SgdStateT s;
        for (const auto& p : params)
            s.velocity.emplace_back(static_cast<size_t>(p.tensor.numel()), T(0));
        return s;
    }
};

using SgdState = SgdStateT<float>;

template <typename T>
void sgd_step(std::vector<ParameterT<T>>& params, SgdStateT<T>& state, double lr, double momentum,
              double weight_decay) {
    if (state.velocity.size() != params.size())
        throw std::invalid_argument("sgd_step: optimizer state does not match parameters");
    for (size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].tensor.mutable_data();
        const auto grads = params[i].tensor.grad();
        auto& v = state.velocity[i];
        if (v.size() != values.size())
            throw std::invalid_argument("sgd_step: velocity shape mismatch for " + params[i].name);
        for (size_t j = 0; j < values.size(); ++j) {
            v[j] = static_cast<T>(momentum) * v[j] + grads[j] +
                   static_cast<T>(weight_decay) * values[j];
            values[j] -= static_cast<T>(lr) * v[j];
        }
    }
    state.iteration += 1;
}

}  // namespace camds
