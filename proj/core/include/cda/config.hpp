#pragma once

// Experiment configuration: every field has a default, files are JSON, and
// `--set a.b.c=value` overrides address fields by their full dotted path.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cda/augment.hpp"
#include "cda/datagen.hpp"
#include "cda/models.hpp"
#include "cda/optim.hpp"
#include "cda/trainer.hpp"

namespace cda {

struct SeedConfig {
    std::uint64_t data = 1;  // phantom generation
    std::uint64_t init = 1;  // parameter init, batch order, augmentation
    std::uint64_t cv = 1;    // fold assignment
};

struct CvConfig {
    int k = 5;
    int repeats = 5;
    std::string baseline;  // variant trained on the same splits for p-values; empty: none
};

struct FocalConfig {
    double gamma = 2.0;
    // "inverse_frequency", "uniform", or explicit per-class weights
    std::string alpha_mode = "inverse_frequency";
    std::vector<double> alpha;
};

struct DataConfig {
    std::string manifest;  // manifest.json or its directory; empty until set
    DomainSpec source = default_source_spec();
    DomainSpec target = default_target_spec();
};

struct ExperimentConfig {
    DataConfig data;
    ModelConfig model;
    StagePlan plan;
    OptimizerConfig opt;
    FocalConfig focal;
    AugmentPolicy weak = AugmentPolicy::weak_default();
    AugmentPolicy strong = AugmentPolicy::strong_default();
    VariantId variant = VariantId::full;
    std::optional<InferenceBranch> inference_branch;  // unset: the variant's default
    CvConfig cv;
    SeedConfig seeds;
    bool verify_freeze = true;

    InferenceBranch resolved_inference() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);

/// Strict parse: missing keys keep their defaults, unknown keys are a
/// ConfigError naming the dotted path.
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Applies "a.b.c=value". The value is parsed as JSON when it parses, and
/// taken as a string otherwise. The path must name an existing field.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Defaults, then the file (if given), then the overrides in order.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides = {});

/// Focal parameters for a labelled source set under this config.
FocalParams resolve_focal(const FocalConfig& cfg, const std::vector<int>& source_labels, int num_classes);

nlohmann::json to_json(const DomainSpec& spec);
DomainSpec domain_spec_from_json(const nlohmann::json& j, const DomainSpec& defaults);

}  // namespace cda
