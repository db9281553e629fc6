#include "cda/augment.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "cda/error.hpp"
#include "cda/rng.hpp"

namespace cda {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 multiply(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
}

Mat3 rotation(int axis, double radians) {
    const double c = std::cos(radians), s = std::sin(radians);
    const int p = (axis + 1) % 3, q = (axis + 2) % 3;
    Mat3 r{};
    r[axis][axis] = 1.0;
    r[p][p] = c;
    r[p][q] = -s;
    r[q][p] = s;
    r[q][q] = c;
    return r;
}

// Sample point outside [0, n-1] on any axis yields 0.
float sample_trilinear(const Volume& v, double x0, double x1, double x2) {
    const std::array<double, 3> x{x0, x1, x2};
    std::array<int, 3> lo{};
    std::array<double, 3> frac{};
    for (int a = 0; a < 3; ++a) {
        const double hi = static_cast<double>(v.dims[a] - 1);
        if (!(x[a] >= 0.0 && x[a] <= hi)) return 0.0f;
        lo[a] = std::min(static_cast<int>(std::floor(x[a])), v.dims[a] - 1);
        frac[a] = x[a] - lo[a];
    }
    double acc = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
        std::array<int, 3> idx{};
        double w = 1.0;
        for (int a = 0; a < 3; ++a) {
            const bool upper = (corner >> a) & 1;
            if (upper && frac[a] == 0.0) {
                w = 0.0;
                break;
            }
            idx[a] = upper ? lo[a] + 1 : lo[a];
            w *= upper ? frac[a] : 1.0 - frac[a];
        }
        if (w != 0.0) acc += w * v.at(idx[0], idx[1], idx[2]);
    }
    return static_cast<float>(acc);
}

struct ElasticField {
    int grid = 0;
    std::vector<std::array<double, 3>> nodes;  // grid^3 displacement vectors

    std::array<double, 3> at(const std::array<double, 3>& unit) const {
        // unit coordinates in [0,1] map onto the control lattice.
        std::array<int, 3> lo{};
        std::array<double, 3> frac{};
        for (int a = 0; a < 3; ++a) {
            const double g = std::clamp(unit[a], 0.0, 1.0) * (grid - 1);
            lo[a] = std::min(static_cast<int>(g), grid - 2);
            frac[a] = g - lo[a];
        }
        std::array<double, 3> d{};
        for (int corner = 0; corner < 8; ++corner) {
            double w = 1.0;
            std::array<int, 3> idx{};
            for (int a = 0; a < 3; ++a) {
                const bool upper = (corner >> a) & 1;
                idx[a] = lo[a] + (upper ? 1 : 0);
                w *= upper ? frac[a] : 1.0 - frac[a];
            }
            const auto& n = nodes[(static_cast<std::size_t>(idx[0]) * grid + idx[1]) * grid + idx[2]];
            for (int a = 0; a < 3; ++a) d[a] += w * n[a];
        }
        return d;
    }
};

}  // namespace

AugmentPolicy AugmentPolicy::weak_default() {
    AugmentPolicy p;
    p.kind = AugmentKind::weak;
    p.flip_prob = 0.5;
    p.affine = {5.0, 0.05, 2.0};
    p.elastic = {4, 0.0};
    return p;
}

AugmentPolicy AugmentPolicy::strong_default() {
    AugmentPolicy p;
    p.kind = AugmentKind::strong;
    p.flip_prob = 0.5;
    p.affine = {20.0, 0.15, 4.0};
    p.elastic = {4, 3.0};
    return p;
}

void validate(const AugmentPolicy& p) {
    if (!(p.flip_prob >= 0.0 && p.flip_prob <= 1.0)) {
        throw RejectedInput("flip_prob must lie in [0, 1]");
    }
    if (p.affine.max_rotation_deg < 0.0 || p.affine.max_scale_delta < 0.0 ||
        p.affine.max_scale_delta >= 1.0 || p.affine.max_translation_vox < 0.0) {
        throw RejectedInput("affine magnitudes must be >= 0 and scale delta < 1");
    }
    if (p.kind == AugmentKind::strong) {
        if (p.elastic.control_grid < 2) throw RejectedInput("elastic control_grid must be >= 2");
        if (p.elastic.max_displacement_vox < 0.0) {
            throw RejectedInput("elastic displacement must be >= 0");
        }
    }
}

Volume augment(const Volume& volume, const AugmentPolicy& policy, std::uint64_t seed) {
    validate(volume);
    validate(policy);
    Rng rng(seed);

    // Draw order is fixed: flips, rotations, scales, translations, elastic nodes.
    std::array<bool, 3> flip{};
    for (auto& f : flip) f = rng.bernoulli(policy.flip_prob);

    const double max_rot = policy.affine.max_rotation_deg * std::numbers::pi / 180.0;
    Mat3 forward{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    for (int axis = 0; axis < 3; ++axis) {
        forward = multiply(rotation(axis, rng.uniform(-max_rot, max_rot)), forward);
    }
    std::array<double, 3> scale{};
    for (auto& s : scale) s = 1.0 + rng.uniform(-policy.affine.max_scale_delta, policy.affine.max_scale_delta);
    std::array<double, 3> shift{};
    for (auto& t : shift) {
        t = rng.uniform(-policy.affine.max_translation_vox, policy.affine.max_translation_vox);
    }

    const bool elastic = policy.kind == AugmentKind::strong && policy.elastic.max_displacement_vox > 0.0;
    ElasticField field;
    if (elastic) {
        field.grid = policy.elastic.control_grid;
        field.nodes.resize(static_cast<std::size_t>(field.grid) * field.grid * field.grid);
        const double m = policy.elastic.max_displacement_vox;
        for (auto& n : field.nodes) {
            for (auto& c : n) c = rng.uniform(-m, m);
        }
    }

    Volume flipped = volume;
    if (flip[0] || flip[1] || flip[2]) {
        const auto& d = volume.dims;
        for (int i0 = 0; i0 < d[0]; ++i0)
            for (int i1 = 0; i1 < d[1]; ++i1)
                for (int i2 = 0; i2 < d[2]; ++i2) {
                    flipped.at(i0, i1, i2) = volume.at(flip[0] ? d[0] - 1 - i0 : i0,
                                                       flip[1] ? d[1] - 1 - i1 : i1,
                                                       flip[2] ? d[2] - 1 - i2 : i2);
                }
    }

    // Output voxel y pulls from x = S^-1 R^T (y - c - t) + c, plus elastic offset.
    Mat3 inverse{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) inverse[i][j] = forward[j][i] / scale[i];

    bool identity = !elastic;
    for (int i = 0; i < 3 && identity; ++i) {
        identity = shift[i] == 0.0;
        for (int j = 0; j < 3 && identity; ++j) identity = inverse[i][j] == (i == j ? 1.0 : 0.0);
    }
    if (identity) return flipped;

    Volume out(volume.dims, volume.spacing);
    const auto& d = volume.dims;
    const std::array<double, 3> centre{(d[0] - 1) / 2.0, (d[1] - 1) / 2.0, (d[2] - 1) / 2.0};
    for (int i0 = 0; i0 < d[0]; ++i0)
        for (int i1 = 0; i1 < d[1]; ++i1)
            for (int i2 = 0; i2 < d[2]; ++i2) {
                const std::array<double, 3> y{i0 - centre[0] - shift[0], i1 - centre[1] - shift[1],
                                              i2 - centre[2] - shift[2]};
                std::array<double, 3> x{};
                for (int a = 0; a < 3; ++a) {
                    x[a] = inverse[a][0] * y[0] + inverse[a][1] * y[1] + inverse[a][2] * y[2] + centre[a];
                }
                if (elastic) {
                    const std::array<double, 3> unit{
                        d[0] > 1 ? static_cast<double>(i0) / (d[0] - 1) : 0.0,
                        d[1] > 1 ? static_cast<double>(i1) / (d[1] - 1) : 0.0,
                        d[2] > 1 ? static_cast<double>(i2) / (d[2] - 1) : 0.0};
                    const auto disp = field.at(unit);
                    for (int a = 0; a < 3; ++a) x[a] += disp[a];
                }
                out.at(i0, i1, i2) = sample_trilinear(flipped, x[0], x[1], x[2]);
            }
    return out;
}

Volume weak_augment(const Volume& volume, std::uint64_t seed, const AugmentPolicy& policy) {
    return augment(volume, policy, seed);
}

Volume strong_augment(const Volume& volume, std::uint64_t seed, const AugmentPolicy& policy) {
    return augment(volume, policy, seed);
}

double mean_abs_change(const Volume& before, const Volume& after) {
    if (before.dims != after.dims) throw RejectedInput("mean_abs_change: dims differ");
    double sum = 0.0;
    for (std::size_t i = 0; i < before.data.size(); ++i) {
        sum += std::fabs(static_cast<double>(after.data[i]) - before.data[i]);
    }
    return before.data.empty() ? 0.0 : sum / static_cast<double>(before.data.size());
}

}  // namespace cda
