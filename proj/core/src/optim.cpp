#include "cda/optim.hpp"

#include "cda/error.hpp"

namespace cda {

void validate(const OptimizerConfig& cfg) {
    if (!(cfg.lr_vit > 0.0) || !(cfg.lr_cnn > 0.0) || (cfg.lr_classifiers && !(*cfg.lr_classifiers > 0.0))) {
        throw ConfigError("learning rates must be > 0");
    }
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
    if (cfg.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (cfg.batch_size < 2) throw ConfigError("batch_size must be >= 2");
}

template <typename T>
void sgd_update(std::span<T> params, std::span<const T> grads, std::span<T> velocity, const SgdSettings& s) {
    if (params.size() != grads.size() || params.size() != velocity.size()) {
        throw RejectedInput("sgd_update: shape mismatch");
    }
    const T lr = static_cast<T>(s.lr);
    const T mu = static_cast<T>(s.momentum);
    const T wd = static_cast<T>(s.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i] + wd * params[i];
        velocity[i] = mu * velocity[i] + g;
        params[i] -= lr * velocity[i];
    }
}

template <typename T>
void sgd_step(std::span<const nn::ParamRef<T>> params, const SgdSettings& s) {
    for (const auto& ref : params) {
        auto& p = *ref.param;
        const auto n = static_cast<std::size_t>(p.value.size());
        sgd_update<T>(std::span<T>(p.value.data(), n), std::span<const T>(p.grad.data(), n),
                      std::span<T>(p.velocity.data(), n), s);
        p.zero_grad();
    }
}

template void sgd_update<float>(std::span<float>, std::span<const float>, std::span<float>, const SgdSettings&);
template void sgd_update<double>(std::span<double>, std::span<const double>, std::span<double>, const SgdSettings&);
template void sgd_step<float>(std::span<const nn::ParamRef<float>>, const SgdSettings&);
template void sgd_step<double>(std::span<const nn::ParamRef<double>>, const SgdSettings&);

}  // namespace cda
