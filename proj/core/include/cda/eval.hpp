#pragma once

// Cross-validation splits, classification metrics and the paired t-test.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cda {

struct FoldSplit {
    int fold_index = 0;
    std::vector<std::string> test_ids;
    std::vector<std::string> train_ids;
    std::uint64_t repeat_seed = 0;
};

/// Each class is shuffled and dealt round-robin over the folds, continuing
/// where the previous class stopped, so per-class and total test sizes both
/// differ by at most one across folds. Ids keep their input order inside
/// each list.
std::vector<FoldSplit> stratified_kfold(const std::vector<std::vector<std::string>>& ids_by_class, int k,
                                        std::uint64_t seed);

/// counts[true][predicted]
using ConfusionMatrix = std::vector<std::vector<long>>;

ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels, int num_classes);

struct BinaryMetrics {
    double acc = 0.0, sen = 0.0, spe = 0.0, f1 = 0.0;
    std::vector<std::string> undefined;  // metrics whose denominator was zero (reported as 0)
};

/// `positive` against the rest. With K = 2 and positive = 1 this is the
/// usual patient-vs-control table.
BinaryMetrics binary_metrics(const ConfusionMatrix& cm, int positive = 1);

/// Rank statistic: fraction of (positive, negative) pairs ordered
/// correctly, ties counted one half. labels are 0/1.
double auc(std::span<const double> scores, std::span<const int> labels);

struct OneVsRest {
    std::vector<double> acc_k;  // binary accuracy of the k-vs-rest decision
    std::vector<double> sen_k;  // recall of class k
    double acc = 0.0;           // multi-class accuracy
    double sen = 0.0;           // mean of sen_k
    std::vector<std::string> undefined;
};

OneVsRest one_vs_rest_metrics(std::span<const int> preds, std::span<const int> labels, int num_classes);

/// Metrics for one evaluation set. auc, spe and f1 are binary-only.
struct MetricBundle {
    double acc = 0.0;
    double sen = 0.0;
    std::optional<double> auc, spe, f1;
    std::vector<double> acc_k, sen_k;
    std::vector<std::string> undefined;
};

/// probs[i][k] are the predicted class probabilities of sample i.
MetricBundle evaluate_predictions(std::span<const int> preds, const std::vector<std::vector<double>>& probs,
                                  std::span<const int> labels, int num_classes);

nlohmann::json to_json(const MetricBundle& m);

struct PairedTTest {
    double t = 0.0;
    double p = 1.0;
    int df = 0;
    bool zero_variance = false;
};

/// Two-sided paired test on a - b with n - 1 degrees of freedom. All-zero
/// differences give p = 1; constant non-zero differences give p = 0 with
/// zero_variance set.
PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population
};

MeanStd mean_std(std::span<const double> values);

/// {metric: {mean, std}} over the bundles; optional metrics are aggregated
/// over the bundles that carry them.
nlohmann::json aggregate(const std::vector<MetricBundle>& bundles);

/// Series of one named metric ("acc", "sen", "auc", ...) across bundles.
std::vector<double> metric_series(const std::vector<MetricBundle>& bundles, const std::string& metric);

}  // namespace cda
