#pragma once

#include <cstdint>

#include "cda/volume.hpp"

namespace cda {

enum class AugmentKind { weak, strong };

struct AffineRange {
    double max_rotation_deg = 0.0;
    double max_scale_delta = 0.0;
    double max_translation_vox = 0.0;
};

struct ElasticRange {
    int control_grid = 4;
    double max_displacement_vox = 0.0;
};

struct AugmentPolicy {
    AugmentKind kind = AugmentKind::weak;
    double flip_prob = 0.0;  // per axis
    AffineRange affine;
    ElasticRange elastic;  // ignored for weak policies

    /// Flip 0.5 per axis, rotation <= 5 deg, scale +-5%, translation <= 2 voxels.
    static AugmentPolicy weak_default();
    /// Rotation <= 20 deg, scale +-15%, translation <= 4 voxels, 4^3 elastic
    /// control grid with displacement <= 3 voxels.
    static AugmentPolicy strong_default();
};

void validate(const AugmentPolicy& policy);

/// Flip, then affine about the volume centre, then elastic displacement.
/// Trilinear resampling; sample points outside the grid produce 0.
/// Deterministic in (volume, policy, seed); dims and spacing are preserved.
Volume augment(const Volume& volume, const AugmentPolicy& policy, std::uint64_t seed);

Volume weak_augment(const Volume& volume, std::uint64_t seed,
                    const AugmentPolicy& policy = AugmentPolicy::weak_default());
Volume strong_augment(const Volume& volume, std::uint64_t seed,
                      const AugmentPolicy& policy = AugmentPolicy::strong_default());

double mean_abs_change(const Volume& before, const Volume& after);

}  // namespace cda
