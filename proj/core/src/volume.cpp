#include "cda/volume.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cda/error.hpp"

namespace cda {

namespace {

static_assert(sizeof(float) == 4);

void to_little_endian(std::span<float> values) {
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& v : values) {
            auto bits = std::bit_cast<std::uint32_t>(v);
            bits = __builtin_bswap32(bits);
            v = std::bit_cast<float>(bits);
        }
    }
}

}  // namespace

void validate(const Volume& v) {
    for (int d : v.dims) {
        if (d <= 0) throw RejectedInput("volume dims must be positive");
    }
    if (v.data.size() != voxel_count(v.dims)) {
        throw RejectedInput("volume data length does not match dims");
    }
    for (double s : v.spacing) {
        if (!(s > 0.0)) throw RejectedInput("volume spacing must be positive");
    }
    for (float x : v.data) {
        if (!std::isfinite(x)) throw RejectedInput("volume contains non-finite values");
    }
}

double mean_intensity(const Volume& v) {
    if (v.data.empty()) return 0.0;
    double sum = 0.0;
    for (float x : v.data) sum += x;
    return sum / static_cast<double>(v.data.size());
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
    validate(v);
    std::vector<float> buffer = v.data;
    to_little_endian(buffer);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(buffer.data()),
              static_cast<std::streamsize>(buffer.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + path.string());
}

Volume load_volume(const std::filesystem::path& path, const Dims& dims,
                   const Spacing& spacing) {
    for (int d : dims) {
        if (d <= 0) throw RejectedInput("volume dims must be positive");
    }
    std::error_code ec;
    const auto actual = std::filesystem::file_size(path, ec);
    if (ec) throw IoError("cannot stat " + path.string() + ": " + ec.message());
    const auto expected = voxel_count(dims) * sizeof(float);
    if (actual != expected) {
        std::ostringstream msg;
        msg << "size mismatch for " << path.string() << ": expected " << expected
            << " bytes, found " << actual;
        throw FormatError(msg.str());
    }
    Volume v(dims, spacing);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    in.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(expected));
    if (!in) throw IoError("read failed: " + path.string());
    to_little_endian(v.data);
    for (float x : v.data) {
        if (!std::isfinite(x)) throw DataError("non-finite voxel in " + path.string());
    }
    return v;
}

}  // namespace cda
