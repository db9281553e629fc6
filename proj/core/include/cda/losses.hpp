#pragma once

// Scalar objectives. Probability-level functions are the reference
// definitions; the *_from_logits forms fuse the softmax and return gradients
// with respect to the logits for training.

#include <optional>
#include <span>
#include <vector>

#include "cda/models.hpp"

namespace cda {

using ProbabilityVector = std::vector<double>;

/// Floor applied to probabilities before any logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

struct FocalParams {
    double gamma = 2.0;
    std::vector<double> alpha;  // per class; empty means all ones

    double alpha_for(int y) const { return alpha.empty() ? 1.0 : alpha.at(static_cast<std::size_t>(y)); }

    static FocalParams cross_entropy() { return {0.0, {}}; }
    /// alpha_k proportional to 1 / count_k, normalised to mean 1.
    static FocalParams inverse_frequency(std::span<const int> labels, int num_classes, double gamma = 2.0);
};

/// Throws RejectedInput unless p is non-negative, K >= 2 and sums to 1 within tol.
void check_simplex(std::span<const double> p, double tol = 1e-6);

/// -alpha_y (1 - p_y)^gamma ln p_y
double focal_loss(std::span<const double> p, int y, const FocalParams& fp);
/// (1/K) sum_k |a_k - b_k|
double discrepancy(std::span<const double> a, std::span<const double> b);
double kl_divergence(std::span<const double> p, std::span<const double> q);
/// Jensen-Shannon divergence, natural log, bounded by ln 2.
double jsd(std::span<const double> p1, std::span<const double> p2);
/// -sum_k t_k ln p_k
double soft_cross_entropy(std::span<const double> p, std::span<const double> t);
/// Average of the snapshot and current distributions.
ProbabilityVector pseudo_label(std::span<const double> f_star, std::span<const double> f_weak);
/// max(y_hat) > theta, strictly.
bool confidence_mask(std::span<const double> y_hat, double theta);

template <typename T>
double focal_from_logits(const nn::Row<T>& logits, int y, const FocalParams& fp, nn::Row<T>* dlogits);
template <typename T>
double discrepancy_from_logits(const nn::Row<T>& a, const nn::Row<T>& b, nn::Row<T>* da, nn::Row<T>* db);
template <typename T>
double soft_cross_entropy_from_logits(const nn::Row<T>& logits, std::span<const double> target,
                                      nn::Row<T>* dlogits);

template <typename T>
ProbabilityVector to_probabilities(const nn::Row<T>& logits);

// ---- stage composites -------------------------------------------------------
//
// Each returns the batch-mean objective. With accumulate set, gradients are
// added into Parameter::grad for the groups the objective trains and no
// others.

struct LabeledItem {
    const Volume* volume;
    int label;
};

/// Focal loss of one branch on labelled source data (trains the whole branch).
template <typename T>
double stage1_loss(Branch<T>& branch, std::span<const LabeledItem> batch, const FocalParams& fp, bool accumulate);

/// Features for the boundary objective. Encoders are frozen, so the features
/// are constants of the objective.
template <typename T>
struct BoundaryBatch {
    std::vector<nn::Row<T>> target_features;    // explorer encoder on target
    std::vector<nn::Row<T>> source_features_v;  // E_V on source
    std::vector<nn::Row<T>> source_features_c;  // E_C on source
    std::vector<int> source_labels;
};

struct BoundaryTerms {
    double total = 0.0;
    double discrepancy = 0.0;  // mean target DL (enters the total negated)
    double focal_v = 0.0;
    double focal_c = 0.0;
};

/// -mean_t DL(F_V(h), F_C(h)) + mean_s FL(F_V) + mean_s FL(F_C); trains F_V, F_C.
template <typename T>
BoundaryTerms stage2_boundary_loss(DualModel<T>& model, const BoundaryBatch<T>& batch, const FocalParams& fp,
                                   bool accumulate);

/// mean_t DL(F_V(E(x)), F_C(E(x))) for the consolidated encoder E; trains E only.
template <typename T>
double stage2_consolidation_loss(DualModel<T>& model, Group consolidated, std::span<const Volume* const> targets,
                                 bool accumulate);

enum class Direction { vit_to_cnn, cnn_to_vit };

const char* to_string(Direction d);

struct CrossBranchResult {
    double value = 0.0;
    int passing = 0;  // samples whose pseudo-label cleared the confidence mask
};

/// Mean over confident samples of CE(student(strong view), pseudo label).
/// vit_to_cnn trains the C branch, cnn_to_vit the V branch. Pseudo labels are
/// plain probability vectors, so no gradient reaches the teacher.
template <typename T>
CrossBranchResult cross_branch_loss(Direction dir, DualModel<T>& model, std::span<const Volume* const> strong_views,
                                    std::span<const ProbabilityVector> pseudo_labels, double theta,
                                    bool accumulate);

}  // namespace cda
