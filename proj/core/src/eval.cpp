#include "cda/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <boost/math/distributions/students_t.hpp>

#include "cda/error.hpp"
#include "cda/rng.hpp"

namespace cda {

std::vector<FoldSplit> stratified_kfold(const std::vector<std::vector<std::string>>& ids_by_class, int k,
                                        std::uint64_t seed) {
    if (k < 2) throw RejectedInput("stratified_kfold: k must be >= 2");
    std::vector<std::unordered_set<std::string>> test(static_cast<std::size_t>(k));
    std::vector<std::string> all;
    std::size_t dealt = 0;
    for (std::size_t c = 0; c < ids_by_class.size(); ++c) {
        std::vector<std::string> ids = ids_by_class[c];
        Rng rng(mix_seed({seed, c}));
        rng.shuffle(ids);
        for (const auto& id : ids) {
            if (!test[dealt % static_cast<std::size_t>(k)].insert(id).second) {
                throw RejectedInput("stratified_kfold: duplicate id " + id);
            }
            ++dealt;
        }
        all.insert(all.end(), ids_by_class[c].begin(), ids_by_class[c].end());
    }
    std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
        auto& fold = folds[static_cast<std::size_t>(f)];
        fold.fold_index = f;
        fold.repeat_seed = seed;
        const auto& t = test[static_cast<std::size_t>(f)];
        for (const auto& id : all) (t.count(id) ? fold.test_ids : fold.train_ids).push_back(id);
    }
    return folds;
}

ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels, int num_classes) {
    if (preds.empty()) throw UndefinedMetric("confusion matrix of an empty prediction set");
    if (preds.size() != labels.size()) throw RejectedInput("predictions and labels differ in length");
    ConfusionMatrix cm(static_cast<std::size_t>(num_classes), std::vector<long>(static_cast<std::size_t>(num_classes)));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || preds[i] >= num_classes || labels[i] < 0 || labels[i] >= num_classes) {
            throw RejectedInput("class index out of range");
        }
        ++cm[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
    }
    return cm;
}

namespace {

double ratio(long num, long den, const char* name, std::vector<std::string>& undefined) {
    if (den == 0) {
        undefined.emplace_back(name);
        return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}

long total(const ConfusionMatrix& cm) {
    long n = 0;
    for (const auto& row : cm) n = std::accumulate(row.begin(), row.end(), n);
    return n;
}

}  // namespace

BinaryMetrics binary_metrics(const ConfusionMatrix& cm, int positive) {
    const auto K = cm.size();
    if (positive < 0 || static_cast<std::size_t>(positive) >= K) throw RejectedInput("positive class out of range");
    const long n = total(cm);
    if (n == 0) throw UndefinedMetric("binary metrics of an empty confusion matrix");
    const auto p = static_cast<std::size_t>(positive);
    long tp = cm[p][p], fn = 0, fp = 0;
    for (std::size_t j = 0; j < K; ++j) {
        if (j == p) continue;
        fn += cm[p][j];
        fp += cm[j][p];
    }
    const long tn = n - tp - fn - fp;
    BinaryMetrics m;
    m.acc = static_cast<double>(tp + tn) / static_cast<double>(n);
    m.sen = ratio(tp, tp + fn, "sen", m.undefined);
    m.spe = ratio(tn, tn + fp, "spe", m.undefined);
    m.f1 = ratio(2 * tp, 2 * tp + fp + fn, "f1", m.undefined);
    return m;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw RejectedInput("auc: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    // Mann-Whitney: sum of positive ranks, ties sharing their average rank.
    double rank_sum = 0.0;
    long pos = 0, neg = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t r = i; r < j; ++r) {
            if (labels[order[r]] == 1) {
                rank_sum += avg_rank;
                ++pos;
            } else if (labels[order[r]] == 0) {
                ++neg;
            } else {
                throw RejectedInput("auc: labels must be 0 or 1");
            }
        }
        i = j;
    }
    if (pos == 0 || neg == 0) throw UndefinedMetric("auc needs both positive and negative samples");
    const double pd = static_cast<double>(pos);
    return (rank_sum - pd * (pd + 1.0) / 2.0) / (pd * static_cast<double>(neg));
}

OneVsRest one_vs_rest_metrics(std::span<const int> preds, std::span<const int> labels, int num_classes) {
    const auto cm = confusion_matrix(preds, labels, num_classes);
    OneVsRest r;
    long correct = 0;
    for (int k = 0; k < num_classes; ++k) {
        correct += cm[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)];
        const auto b = binary_metrics(cm, k);
        r.acc_k.push_back(b.acc);
        r.sen_k.push_back(b.sen);
        if (std::find(b.undefined.begin(), b.undefined.end(), "sen") != b.undefined.end()) {
            r.undefined.push_back("sen_" + std::to_string(k));
        }
    }
    r.acc = static_cast<double>(correct) / static_cast<double>(preds.size());
    r.sen = std::accumulate(r.sen_k.begin(), r.sen_k.end(), 0.0) / num_classes;
    return r;
}

MetricBundle evaluate_predictions(std::span<const int> preds, const std::vector<std::vector<double>>& probs,
                                  std::span<const int> labels, int num_classes) {
    const auto ovr = one_vs_rest_metrics(preds, labels, num_classes);
    MetricBundle m;
    m.acc = ovr.acc;
    m.sen = ovr.sen;
    m.acc_k = ovr.acc_k;
    m.sen_k = ovr.sen_k;
    m.undefined = ovr.undefined;
    if (num_classes == 2) {
        const auto b = binary_metrics(confusion_matrix(preds, labels, 2), 1);
        m.sen = b.sen;
        m.spe = b.spe;
        m.f1 = b.f1;
        for (const auto& u : b.undefined) m.undefined.push_back(u);
        if (probs.size() != preds.size()) throw RejectedInput("probabilities and predictions differ in length");
        std::vector<double> scores;
        for (const auto& p : probs) scores.push_back(p.at(1));
        try {
            m.auc = auc(scores, labels);
        } catch (const UndefinedMetric&) {
            m.auc = 0.0;
            m.undefined.emplace_back("auc");
        }
    }
    return m;
}

nlohmann::json to_json(const MetricBundle& m) {
    nlohmann::json j = {{"acc", m.acc}, {"sen", m.sen}, {"acc_k", m.acc_k}, {"sen_k", m.sen_k}};
    j["auc"] = m.auc ? nlohmann::json(*m.auc) : nlohmann::json(nullptr);
    j["spe"] = m.spe ? nlohmann::json(*m.spe) : nlohmann::json(nullptr);
    j["f1"] = m.f1 ? nlohmann::json(*m.f1) : nlohmann::json(nullptr);
    if (!m.undefined.empty()) j["undefined"] = m.undefined;
    return j;
}

PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw RejectedInput("paired_t_test: series differ in length");
    if (a.size() < 2) throw RejectedInput("paired_t_test: need at least two pairs");
    const auto n = static_cast<double>(a.size());
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    PairedTTest r;
    r.df = static_cast<int>(a.size()) - 1;
    const bool all_zero = std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; });
    if (all_zero) return r;  // p = 1 by convention
    if (ss == 0.0) {
        r.zero_variance = true;
        r.t = mean > 0 ? INFINITY : -INFINITY;
        r.p = 0.0;
        return r;
    }
    const double se = std::sqrt(ss / (n - 1.0) / n);
    r.t = mean / se;
    boost::math::students_t dist(n - 1.0);
    r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
    return r;
}

MeanStd mean_std(std::span<const double> values) {
    if (values.empty()) throw UndefinedMetric("mean of an empty series");
    const auto n = static_cast<double>(values.size());
    MeanStd r;
    r.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / n);
    return r;
}

std::vector<double> metric_series(const std::vector<MetricBundle>& bundles, const std::string& metric) {
    std::vector<double> out;
    for (const auto& m : bundles) {
        if (metric == "acc") {
            out.push_back(m.acc);
        } else if (metric == "sen") {
            out.push_back(m.sen);
        } else if (metric == "auc" || metric == "spe" || metric == "f1") {
            const auto& v = metric == "auc" ? m.auc : metric == "spe" ? m.spe : m.f1;
            if (v) out.push_back(*v);
        } else if (metric.rfind("acc_", 0) == 0 || metric.rfind("sen_", 0) == 0) {
            const auto k = static_cast<std::size_t>(std::stoul(metric.substr(4)));
            const auto& src = metric[0] == 'a' ? m.acc_k : m.sen_k;
            if (k < src.size()) out.push_back(src[k]);
        } else {
            throw RejectedInput("unknown metric '" + metric + "'");
        }
    }
    return out;
}

nlohmann::json aggregate(const std::vector<MetricBundle>& bundles) {
    nlohmann::json out = nlohmann::json::object();
    if (bundles.empty()) return out;
    std::vector<std::string> names{"acc", "sen", "auc", "spe", "f1"};
    for (std::size_t k = 0; k < bundles.front().acc_k.size(); ++k) {
        names.push_back("acc_" + std::to_string(k));
        names.push_back("sen_" + std::to_string(k));
    }
    for (const auto& name : names) {
        const auto series = metric_series(bundles, name);
        if (series.empty()) continue;
        const auto ms = mean_std(series);
        out[name] = {{"mean", ms.mean}, {"std", ms.std}};
    }
    return out;
}

}  // namespace cda
