#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace cda {

using Dims = std::array<int, 3>;
using Spacing = std::array<double, 3>;

inline std::size_t voxel_count(const Dims& d) {
    return static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1]) *
           static_cast<std::size_t>(d[2]);
}

/// Dense 3D scalar grid. Index order is [i0][i1][i2] with i2 fastest.
struct Volume {
    Dims dims{0, 0, 0};
    Spacing spacing{1.0, 1.0, 1.0};
    std::vector<float> data;

    Volume() = default;
    Volume(const Dims& d, const Spacing& s = {1.0, 1.0, 1.0}, float fill = 0.0f)
        : dims(d), spacing(s), data(voxel_count(d), fill) {}

    std::size_t size() const { return data.size(); }

    std::size_t index(int i0, int i1, int i2) const {
        return (static_cast<std::size_t>(i0) * dims[1] + i1) * dims[2] + i2;
    }
    float& at(int i0, int i1, int i2) { return data[index(i0, i1, i2)]; }
    float at(int i0, int i1, int i2) const { return data[index(i0, i1, i2)]; }

    bool operator==(const Volume&) const = default;
};

/// Throws RejectedInput when dims are non-positive, the data length is wrong,
/// or any scalar is non-finite.
void validate(const Volume& v);

double mean_intensity(const Volume& v);

/// Headerless little-endian float32. Refuses volumes with NaN/Inf.
void save_volume(const Volume& v, const std::filesystem::path& path);

/// Throws FormatError when the byte count disagrees with dims, DataError on
/// non-finite values, IoError when the file cannot be read.
Volume load_volume(const std::filesystem::path& path, const Dims& dims,
                   const Spacing& spacing = {1.0, 1.0, 1.0});

}  // namespace cda
