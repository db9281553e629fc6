#pragma once

// End-to-end commands behind the CLI: data generation, single training runs,
// cross-validation and report collation. Run directories are self-describing:
// config.json holds the fully resolved configuration.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cda/config.hpp"
#include "cda/datagen.hpp"
#include "cda/eval.hpp"
#include "cda/trainer.hpp"

namespace cda {

/// Writes the dataset for cfg.data.{source,target} under seeds.data, plus a
/// spec.json recording what was generated.
DatasetManifest generate_data(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Source samples plus the listed target ids (all targets when empty).
TrainData make_train_data(const LoadedDataset& data, const std::vector<std::string>& target_ids = {});

/// Target ids grouped by ground-truth class; unlabelled targets are an error.
std::vector<std::vector<std::string>> target_ids_by_class(const LoadedDataset& data);

struct Evaluation {
    MetricBundle metrics;
    std::vector<std::string> ids;
    std::vector<int> labels, predictions;
    std::vector<std::vector<double>> probabilities;
};

template <typename T>
Evaluation evaluate(const DualModel<T>& model, const LoadedDataset& data, const std::vector<std::string>& ids,
                    InferenceBranch branch);

struct RunOptions {
    bool checkpoints = true;
    bool quiet = true;  // no progress lines on stderr
};

/// One run of cfg.variant. Trains on all source plus `train_ids` targets and
/// evaluates on `test_ids` (both default to every target). Writes
/// config.json, log.jsonl, checkpoints/stage{n}/ and report.json into
/// run_dir and returns the report.
nlohmann::json train_run(const ExperimentConfig& cfg, const LoadedDataset& data, const std::filesystem::path& run_dir,
                         std::uint64_t init_seed, const std::vector<std::string>& train_ids = {},
                         const std::vector<std::string>& test_ids = {}, const RunOptions& options = {});

/// `cda train`: loads cfg.data.manifest and trains on every target sample,
/// evaluating against their stored labels.
nlohmann::json cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& run_dir,
                         const RunOptions& options = {});

struct CrossvalOptions {
    int jobs = 1;
    RunOptions run;
};

/// `cda crossval`: repeats x folds runs of cfg.variant (and cfg.cv.baseline
/// on the same splits). Writes config.json, runs/<variant>-r<r>-f<f>/,
/// report.json, report.csv and baselines/<variant>.json. Reports are
/// independent of job scheduling.
nlohmann::json cmd_crossval(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                            const CrossvalOptions& options = {});

/// Collates reports (run directories or report.json files) into one table.
/// With a baseline, every other variant gets paired t-test p-values.
nlohmann::json cmd_report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out_json,
                          const std::optional<std::filesystem::path>& out_csv, const std::string& baseline = "");

/// Flat rows, one per (variant, repeat, fold).
std::string report_csv(const std::vector<nlohmann::json>& reports);

/// Metric bundle back from its JSON form.
MetricBundle bundle_from_json(const nlohmann::json& j);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace cda
