#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cda/volume.hpp"

namespace cda {

enum class Domain { source, target };

const char* to_string(Domain d);
Domain parse_domain(const std::string& s);

/// Acquisition-style perturbations applied after the anatomy is drawn, in the
/// fixed order gain, gamma, smooth, bias field, noise. Zero disables a knob;
/// for gain and gamma a non-zero value is the multiplicative factor and the
/// exponent respectively.
struct ShiftParams {
    double intensity_gain = 0.0;
    double intensity_gamma = 0.0;
    double bias_field_amp = 0.0;
    double noise_sigma = 0.0;
    double smooth_sigma = 0.0;
};

struct DomainSpec {
    std::vector<int> n_per_class;
    ShiftParams shift;
    Dims dims{32, 32, 32};
    std::uint64_t base_seed = 0;

    int num_classes() const { return static_cast<int>(n_per_class.size()); }
};

/// Rejects negative shift magnitudes, empty classes, non-positive dims.
void validate(const DomainSpec& spec);

/// Default imbalance profiles: three classes, 184 source and 117 target
/// subjects, with the target carrying the stronger acquisition shift.
DomainSpec default_source_spec();
DomainSpec default_target_spec();

struct Sample {
    std::string id;
    std::string volume_path;  // relative to the manifest directory
    Domain domain = Domain::source;
    std::optional<int> label;
    std::uint64_t generator_seed = 0;
};

struct DatasetManifest {
    int format_version = 1;
    Dims dims{32, 32, 32};
    Spacing spacing{1.0, 1.0, 1.0};
    std::vector<Sample> samples;

    std::size_t count(Domain d) const;
    int num_classes() const;
};

/// Per-sample seed; independent of generation order.
std::uint64_t sample_seed(std::uint64_t base_seed, Domain domain, int class_id, int sample_index);

/// Renders one phantom from explicit seeds. The structure seed fixes the
/// anatomy; the noise seed fixes the bias field direction and voxel noise.
Volume render_phantom(int class_id, int num_classes, const DomainSpec& spec,
                      std::uint64_t structure_seed, std::uint64_t noise_seed);

/// Deterministic in (spec.base_seed, domain, class_id, sample_index).
Volume generate_phantom(int class_id, const DomainSpec& spec, int sample_index,
                        Domain domain = Domain::source);

/// Writes volumes/<id>.f32raw for every sample plus manifest.json.
DatasetManifest generate_dataset(const DomainSpec& source_spec, const DomainSpec& target_spec,
                                 const std::filesystem::path& out_dir);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Manifest plus every volume resident in memory, in manifest order.
struct LoadedDataset {
    DatasetManifest manifest;
    std::filesystem::path root;
    std::vector<Volume> volumes;

    std::vector<std::size_t> indices(Domain d) const;
};

/// Accepts either a manifest file or the directory containing manifest.json.
LoadedDataset load_dataset(const std::filesystem::path& manifest_or_dir);

/// Mean intensity over a centred cube whose side is half the volume extent.
double central_mean_intensity(const Volume& v);

}  // namespace cda
