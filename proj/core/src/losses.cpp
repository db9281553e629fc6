#include "cda/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cda/error.hpp"

namespace cda {

using nn::Row;

FocalParams FocalParams::inverse_frequency(std::span<const int> labels, int num_classes, double gamma) {
    if (num_classes < 2) throw RejectedInput("inverse_frequency: need at least two classes");
    std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
    for (int y : labels) {
        if (y < 0 || y >= num_classes) throw RejectedInput("inverse_frequency: label out of range");
        counts[static_cast<std::size_t>(y)] += 1.0;
    }
    FocalParams fp{gamma, std::vector<double>(counts.size(), 1.0)};
    double sum = 0.0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        // Absent classes get the weight of a singleton class.
        fp.alpha[k] = 1.0 / std::max(counts[k], 1.0);
        sum += fp.alpha[k];
    }
    for (auto& a : fp.alpha) a *= static_cast<double>(counts.size()) / sum;
    return fp;
}

void check_simplex(std::span<const double> p, double tol) {
    if (p.size() < 2) throw RejectedInput("probability vector needs K >= 2");
    double sum = 0.0;
    for (double x : p) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw RejectedInput("probability entries must be finite and >= 0");
        sum += x;
    }
    if (std::fabs(sum - 1.0) > tol) throw RejectedInput("probability vector does not sum to 1");
}

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw RejectedInput("probability vectors differ in length");
    check_simplex(a);
    check_simplex(b);
}

double safe_log(double p) { return std::log(std::max(p, kProbabilityFloor)); }

}  // namespace

double focal_loss(std::span<const double> p, int y, const FocalParams& fp) {
    check_simplex(p);
    if (y < 0 || static_cast<std::size_t>(y) >= p.size()) throw RejectedInput("focal_loss: label out of range");
    const double py = std::max(p[static_cast<std::size_t>(y)], kProbabilityFloor);
    const double modulator = fp.gamma == 0.0 ? 1.0 : std::pow(1.0 - py, fp.gamma);
    return -fp.alpha_for(y) * modulator * std::log(py);
}

double discrepancy(std::span<const double> a, std::span<const double> b) {
    check_pair(a, b);
    double sum = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) sum += std::fabs(a[k] - b[k]);
    return sum / static_cast<double>(a.size());
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    check_pair(p, q);
    double kl = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] > 0.0) kl += p[k] * (safe_log(p[k]) - safe_log(q[k]));
    }
    return std::max(kl, 0.0);
}

double jsd(std::span<const double> p1, std::span<const double> p2) {
    check_pair(p1, p2);
    std::vector<double> m(p1.size());
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = 0.5 * (p1[k] + p2[k]);
    return 0.5 * kl_divergence(p1, m) + 0.5 * kl_divergence(p2, m);
}

double soft_cross_entropy(std::span<const double> p, std::span<const double> t) {
    check_pair(p, t);
    double ce = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) ce -= t[k] * safe_log(p[k]);
    return ce;
}

ProbabilityVector pseudo_label(std::span<const double> f_star, std::span<const double> f_weak) {
    check_pair(f_star, f_weak);
    ProbabilityVector y(f_star.size());
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = 0.5 * (f_star[k] + f_weak[k]);
    return y;
}

bool confidence_mask(std::span<const double> y_hat, double theta) {
    check_simplex(y_hat);
    return *std::max_element(y_hat.begin(), y_hat.end()) > theta;
}

// ---- logits-level forms -------------------------------------------------------

template <typename T>
ProbabilityVector to_probabilities(const Row<T>& logits) {
    const Row<T> p = softmax<T>(logits);
    return ProbabilityVector(p.data(), p.data() + p.size());
}

template <typename T>
double focal_from_logits(const Row<T>& logits, int y, const FocalParams& fp, Row<T>* dlogits) {
    if (y < 0 || y >= logits.size()) throw RejectedInput("focal: label out of range");
    const Row<T> p = softmax<T>(logits);
    const double p_raw = static_cast<double>(p[y]);
    const double py = std::max(p_raw, kProbabilityFloor);
    const double alpha = fp.alpha_for(y);
    const double one_minus = 1.0 - py;
    const double modulator = fp.gamma == 0.0 ? 1.0 : std::pow(one_minus, fp.gamma);
    const double log_py = std::log(py);
    const double value = -alpha * modulator * log_py;
    if (dlogits) {
        // s = p_y * dL/dp_y; zero inside the clamp.
        double s = 0.0;
        if (p_raw >= kProbabilityFloor) {
            double pull = modulator;
            if (fp.gamma != 0.0 && log_py != 0.0 && one_minus > 0.0) {
                pull -= fp.gamma * std::pow(one_minus, fp.gamma - 1.0) * py * log_py;
            }
            s = -alpha * pull;
        }
        *dlogits = -static_cast<T>(s) * p;
        (*dlogits)[y] += static_cast<T>(s);
    }
    return value;
}

template <typename T>
double discrepancy_from_logits(const Row<T>& a, const Row<T>& b, Row<T>* da, Row<T>* db) {
    if (a.size() != b.size()) throw RejectedInput("discrepancy: logits differ in length");
    const Row<T> pa = softmax<T>(a);
    const Row<T> pb = softmax<T>(b);
    const auto k = static_cast<double>(a.size());
    double value = 0.0;
    Row<T> sign(a.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double diff = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
        value += std::fabs(diff);
        sign[i] = static_cast<T>(diff > 0.0 ? 1.0 / k : (diff < 0.0 ? -1.0 / k : 0.0));
    }
    if (da) *da = (pa.array() * (sign.array() - sign.dot(pa))).matrix();
    if (db) *db = (pb.array() * (-sign.array() + sign.dot(pb))).matrix();
    return value / k;
}

template <typename T>
double soft_cross_entropy_from_logits(const Row<T>& logits, std::span<const double> target, Row<T>* dlogits) {
    if (static_cast<std::size_t>(logits.size()) != target.size()) {
        throw RejectedInput("soft_cross_entropy: target length mismatch");
    }
    const Row<T> p = softmax<T>(logits);
    double value = 0.0;
    Row<T> u(logits.size());
    for (Eigen::Index k = 0; k < logits.size(); ++k) {
        const double pk = static_cast<double>(p[k]);
        const double tk = target[static_cast<std::size_t>(k)];
        value -= tk * safe_log(pk);
        u[k] = static_cast<T>(pk >= kProbabilityFloor ? -tk : 0.0);
    }
    if (dlogits) *dlogits = u - u.sum() * p;
    return value;
}

// ---- stage composites -----------------------------------------------------------

template <typename T>
double stage1_loss(Branch<T>& branch, std::span<const LabeledItem> batch, const FocalParams& fp, bool accumulate) {
    if (batch.empty()) return 0.0;
    const T scale = T(1) / static_cast<T>(batch.size());
    double total = 0.0;
    for (const auto& item : batch) {
        EncoderTrace<T> enc_trace;
        typename Classifier<T>::Trace cls_trace;
        const Row<T> feature = branch.encode(*item.volume, accumulate ? &enc_trace : nullptr);
        const Row<T> logits = branch.classifier.forward(feature, accumulate ? &cls_trace : nullptr);
        Row<T> dlogits;
        total += focal_from_logits<T>(logits, item.label, fp, accumulate ? &dlogits : nullptr);
        if (accumulate) {
            const Row<T> dfeature = branch.classifier.backward(cls_trace, dlogits * scale, true);
            branch.encoder_backward(enc_trace, dfeature);
        }
    }
    return total / static_cast<double>(batch.size());
}

template <typename T>
BoundaryTerms stage2_boundary_loss(DualModel<T>& model, const BoundaryBatch<T>& batch, const FocalParams& fp,
                                   bool accumulate) {
    auto& f_v = model.v.classifier;
    auto& f_c = model.c.classifier;
    BoundaryTerms terms;

    const auto nt = batch.target_features.size();
    for (const auto& h : batch.target_features) {
        typename Classifier<T>::Trace tv, tc;
        const Row<T> la = f_v.forward(h, accumulate ? &tv : nullptr);
        const Row<T> lb = f_c.forward(h, accumulate ? &tc : nullptr);
        Row<T> da, db;
        terms.discrepancy += discrepancy_from_logits<T>(la, lb, accumulate ? &da : nullptr,
                                                         accumulate ? &db : nullptr);
        if (accumulate) {
            const T scale = T(-1) / static_cast<T>(nt);
            f_v.backward(tv, da * scale, true);
            f_c.backward(tc, db * scale, true);
        }
    }
    if (nt > 0) terms.discrepancy /= static_cast<double>(nt);

    const auto ns = batch.source_labels.size();
    if (batch.source_features_v.size() != ns || batch.source_features_c.size() != ns) {
        throw RejectedInput("boundary batch: source features and labels disagree in length");
    }
    for (std::size_t i = 0; i < ns; ++i) {
        const int y = batch.source_labels[i];
        for (auto [cls, feature, acc] : {std::tuple{&f_v, &batch.source_features_v[i], &terms.focal_v},
                                         std::tuple{&f_c, &batch.source_features_c[i], &terms.focal_c}}) {
            typename Classifier<T>::Trace trace;
            const Row<T> logits = cls->forward(*feature, accumulate ? &trace : nullptr);
            Row<T> dlogits;
            *acc += focal_from_logits<T>(logits, y, fp, accumulate ? &dlogits : nullptr);
            if (accumulate) cls->backward(trace, dlogits / static_cast<T>(ns), true);
        }
    }
    if (ns > 0) {
        terms.focal_v /= static_cast<double>(ns);
        terms.focal_c /= static_cast<double>(ns);
    }
    terms.total = -terms.discrepancy + terms.focal_v + terms.focal_c;
    return terms;
}

template <typename T>
double stage2_consolidation_loss(DualModel<T>& model, Group consolidated, std::span<const Volume* const> targets,
                                 bool accumulate) {
    if (consolidated != Group::encoder_v && consolidated != Group::encoder_c) {
        throw RejectedInput("consolidation trains an encoder group");
    }
    if (targets.empty()) return 0.0;
    auto& branch = model.branch(consolidated);
    auto& f_v = model.v.classifier;
    auto& f_c = model.c.classifier;
    const T scale = T(1) / static_cast<T>(targets.size());
    double total = 0.0;
    for (const Volume* x : targets) {
        EncoderTrace<T> enc_trace;
        typename Classifier<T>::Trace tv, tc;
        const Row<T> h = branch.encode(*x, accumulate ? &enc_trace : nullptr);
        const Row<T> la = f_v.forward(h, accumulate ? &tv : nullptr);
        const Row<T> lb = f_c.forward(h, accumulate ? &tc : nullptr);
        Row<T> da, db;
        total += discrepancy_from_logits<T>(la, lb, accumulate ? &da : nullptr, accumulate ? &db : nullptr);
        if (accumulate) {
            // Classifiers are frozen here: propagate through them without
            // touching their gradients.
            Row<T> dh = f_v.backward(tv, da * scale, false);
            dh += f_c.backward(tc, db * scale, false);
            branch.encoder_backward(enc_trace, dh);
        }
    }
    return total / static_cast<double>(targets.size());
}

const char* to_string(Direction d) { return d == Direction::vit_to_cnn ? "v2c" : "c2v"; }

template <typename T>
CrossBranchResult cross_branch_loss(Direction dir, DualModel<T>& model, std::span<const Volume* const> strong_views,
                                    std::span<const ProbabilityVector> pseudo_labels, double theta,
                                    bool accumulate) {
    if (strong_views.size() != pseudo_labels.size()) {
        throw RejectedInput("cross_branch_loss: views and pseudo labels differ in length");
    }
    auto& student = dir == Direction::vit_to_cnn ? model.c : model.v;
    std::vector<std::size_t> passing;
    for (std::size_t i = 0; i < pseudo_labels.size(); ++i) {
        if (confidence_mask(pseudo_labels[i], theta)) passing.push_back(i);
    }
    CrossBranchResult result;
    result.passing = static_cast<int>(passing.size());
    if (passing.empty()) return result;
    const T scale = T(1) / static_cast<T>(passing.size());
    for (std::size_t i : passing) {
        EncoderTrace<T> enc_trace;
        typename Classifier<T>::Trace cls_trace;
        const Row<T> h = student.encode(*strong_views[i], accumulate ? &enc_trace : nullptr);
        const Row<T> logits = student.classifier.forward(h, accumulate ? &cls_trace : nullptr);
        Row<T> dlogits;
        result.value += soft_cross_entropy_from_logits<T>(logits, pseudo_labels[i], accumulate ? &dlogits : nullptr);
        if (accumulate) {
            const Row<T> dh = student.classifier.backward(cls_trace, dlogits * scale, true);
            student.encoder_backward(enc_trace, dh);
        }
    }
    result.value /= static_cast<double>(passing.size());
    return result;
}

#define CDA_LOSSES_INSTANTIATE(T)                                                                              \
    template ProbabilityVector to_probabilities<T>(const Row<T>&);                                             \
    template double focal_from_logits<T>(const Row<T>&, int, const FocalParams&, Row<T>*);                     \
    template double discrepancy_from_logits<T>(const Row<T>&, const Row<T>&, Row<T>*, Row<T>*);                \
    template double soft_cross_entropy_from_logits<T>(const Row<T>&, std::span<const double>, Row<T>*);        \
    template double stage1_loss<T>(Branch<T>&, std::span<const LabeledItem>, const FocalParams&, bool);        \
    template BoundaryTerms stage2_boundary_loss<T>(DualModel<T>&, const BoundaryBatch<T>&, const FocalParams&, \
                                                   bool);                                                      \
    template double stage2_consolidation_loss<T>(DualModel<T>&, Group, std::span<const Volume* const>, bool);  \
    template CrossBranchResult cross_branch_loss<T>(Direction, DualModel<T>&, std::span<const Volume* const>,  \
                                                    std::span<const ProbabilityVector>, double, bool);

CDA_LOSSES_INSTANTIATE(float)
CDA_LOSSES_INSTANTIATE(double)

#undef CDA_LOSSES_INSTANTIATE

}  // namespace cda
