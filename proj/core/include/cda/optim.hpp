#pragma once

#include <optional>
#include <span>

#include "cda/models.hpp"

namespace cda {

struct OptimizerConfig {
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double lr_vit = 1e-4;
    double lr_cnn = 5e-4;
    // Unset: each classifier uses its branch encoder's rate.
    std::optional<double> lr_classifiers;
    int batch_size = 4;

    double encoder_lr(EncoderKind kind) const { return kind == EncoderKind::vit ? lr_vit : lr_cnn; }
    double classifier_lr(EncoderKind owner) const { return lr_classifiers.value_or(encoder_lr(owner)); }
};

void validate(const OptimizerConfig& cfg);

struct SgdSettings {
    double lr = 0.0;
    double momentum = 0.9;
    double weight_decay = 0.0;
};

/// Momentum SGD with coupled weight decay:
///   g <- grad + wd * p;  v <- mu * v + g;  p <- p - lr * v
template <typename T>
void sgd_update(std::span<T> params, std::span<const T> grads, std::span<T> velocity, const SgdSettings& s);

/// Applies sgd_update to every listed parameter, then zeroes its gradient.
template <typename T>
void sgd_step(std::span<const nn::ParamRef<T>> params, const SgdSettings& s);

}  // namespace cda
