#pragma once

// Shared fixtures: micro models for gradient checks, tiny datasets for
// end-to-end runs, scratch directories.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cda/datagen.hpp"
#include "cda/models.hpp"
#include "cda/rng.hpp"

namespace test {

inline std::filesystem::path scratch(const std::string& name) {
    const char* env = std::getenv("CDA_TEST_TMP");
    auto base = env ? std::filesystem::path(env) : std::filesystem::temp_directory_path() / "cda_unit";
    auto dir = base / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// 2^3 inputs, every layer at most 8 wide.
inline cda::ModelConfig micro_config() {
    cda::ModelConfig mc;
    mc.input_dims = {2, 2, 2};
    mc.vit = {1, 8, 1, 2, 1.0};
    mc.cnn.stage_channels = {4, 8};
    mc.cnn.embed_dim = 8;
    mc.classifier = {8, 3};
    return mc;
}

// Small but real shapes for quick training runs.
inline cda::ModelConfig tiny_config() {
    cda::ModelConfig mc;
    mc.input_dims = {8, 8, 8};
    mc.vit = {4, 16, 1, 2, 2.0};
    mc.cnn.stage_channels = {4, 8};
    mc.cnn.embed_dim = 16;
    mc.classifier = {16, 3};
    return mc;
}

inline cda::Volume random_volume(const cda::Dims& dims, std::uint64_t seed) {
    cda::Rng rng(seed);
    cda::Volume v(dims);
    for (auto& x : v.data) x = static_cast<float>(rng.normal());
    return v;
}

inline std::vector<cda::Volume> random_volumes(const cda::Dims& dims, int n, std::uint64_t seed) {
    std::vector<cda::Volume> out;
    for (int i = 0; i < n; ++i) out.push_back(random_volume(dims, cda::mix_seed({seed, static_cast<std::uint64_t>(i)})));
    return out;
}

inline cda::DomainSpec tiny_domain(std::vector<int> counts, bool target) {
    auto spec = target ? cda::default_target_spec() : cda::default_source_spec();
    spec.n_per_class = std::move(counts);
    spec.dims = {8, 8, 8};
    return spec;
}

// Central difference of `loss` along one entry, Richardson-extrapolated from
// steps h and h/2 so the O(h^2) truncation term cancels. Attention and
// layernorm have large third derivatives at micro sizes, where a plain
// h = 1e-4 difference is off by ~1e-6 absolute.
template <typename T>
double central_difference(T& entry, const std::function<double()>& loss, double h) {
    const T original = entry;
    auto diff = [&](double step) {
        entry = original + static_cast<T>(step);
        const double up = loss();
        entry = original - static_cast<T>(step);
        const double down = loss();
        entry = original;
        return (up - down) / (2.0 * step);
    };
    const double coarse = diff(h);
    const double fine = diff(h / 2);
    return (4.0 * fine - coarse) / 3.0;
}

// Worst relative error between analytic gradients already sitting in
// Parameter::grad and finite differences of `loss`, over every entry of
// every listed parameter. Structurally zero entries (attention key biases,
// for one) would otherwise divide roundoff by roundoff: the difference
// quotient carries ~eps_mach*|loss|/h of noise, so magnitudes below
// 1e-6*max(1, |loss|) are compared against that floor instead.
template <typename T>
double worst_gradient_error(const std::vector<cda::nn::ParamRef<T>>& params, const std::function<double()>& loss,
                            double eps = 1e-4, std::string* worst_name = nullptr) {
    double worst = 0.0;
    const double floor = 1e-6 * std::max(1.0, std::abs(loss()));
    for (const auto& p : params) {
        auto& value = p.param->value;
        for (Eigen::Index i = 0; i < value.size(); ++i) {
            const double numeric = central_difference(value.data()[i], loss, eps);
            const double analytic = static_cast<double>(p.param->grad.data()[i]);
            const double scale = std::max({std::abs(numeric), std::abs(analytic), floor});
            const double rel = std::abs(numeric - analytic) / scale;
            if (rel > worst) {
                worst = rel;
                if (worst_name) *worst_name = p.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return worst;
}

}  // namespace test
