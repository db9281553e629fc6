#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cda/error.hpp"
#include "cda/eval.hpp"
#include "cda/rng.hpp"

using namespace cda;

namespace {

// Exhaustive pair counting, ties worth one half.
double auc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
    double good = 0.0;
    long pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) continue;
            ++pairs;
            good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    }
    return good / static_cast<double>(pairs);
}

// Two-sided Student-t tail by composite Simpson quadrature of the density.
double t_pvalue_quadrature(double t, double nu) {
    const double c = std::exp(std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2)) / std::sqrt(nu * M_PI);
    auto pdf = [&](double x) { return c * std::pow(1.0 + x * x / nu, -(nu + 1) / 2); };
    const int n = 20000;
    const double h = std::abs(t) / n;
    double s = pdf(0.0) + pdf(std::abs(t));
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
    const double central = s * h / 3.0;  // integral over [0, |t|]
    return 1.0 - 2.0 * central;
}

std::vector<std::vector<std::string>> default_target_classes() {
    std::vector<std::vector<std::string>> ids(3);
    const int counts[3] = {34, 66, 17};
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < counts[c]; ++i) ids[static_cast<std::size_t>(c)].push_back("t" + std::to_string(c) + "_" + std::to_string(i));
    return ids;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("auc equals exhaustive pair counting") {
    Rng rng(2024);
    int checked = 0;
    while (checked < 1000) {
        const std::size_t n = 2 + rng.below(11);
        std::vector<double> s(n);
        std::vector<int> y(n);
        const bool coarse = rng.bernoulli(0.5);  // many ties
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = coarse ? static_cast<double>(rng.below(3)) / 2.0 : rng.uniform();
            y[i] = static_cast<int>(rng.below(2));
        }
        const bool both = std::count(y.begin(), y.end(), 1) > 0 && std::count(y.begin(), y.end(), 0) > 0;
        if (!both) {
            CHECK_THROWS_AS(auc(s, y), UndefinedMetric);
            continue;
        }
        CHECK(auc(s, y) == doctest::Approx(auc_pairs(s, y)).epsilon(1e-12));
        ++checked;
    }
    const std::vector<double> ties{0.5, 0.5, 0.5, 0.5};
    const std::vector<int> lab{0, 1, 0, 1};
    CHECK(auc(ties, lab) == 0.5);
    const std::vector<double> perfect{0.1, 0.2, 0.8, 0.9};
    const std::vector<int> lab2{0, 0, 1, 1};
    CHECK(auc(perfect, lab2) == 1.0);
}

TEST_CASE("binary metrics hand values") {
    // TP=8, FN=2, TN=7, FP=3
    const ConfusionMatrix cm{{7, 3}, {2, 8}};
    const auto m = binary_metrics(cm, 1);
    CHECK(m.acc == 0.75);
    CHECK(m.sen == 0.8);
    CHECK(m.spe == 0.7);
    CHECK(m.f1 == 16.0 / 21.0);
    CHECK(m.undefined.empty());
}

TEST_CASE("zero denominators are reported, not hidden") {
    const ConfusionMatrix cm{{5, 0}, {0, 0}};
    const auto m = binary_metrics(cm, 1);
    CHECK(m.sen == 0.0);
    CHECK(std::find(m.undefined.begin(), m.undefined.end(), "sen") != m.undefined.end());
    const std::vector<int> none;
    CHECK_THROWS_AS(confusion_matrix(none, none, 2), UndefinedMetric);
}

TEST_CASE("one-vs-rest and macro sensitivity") {
    // rows are true classes: [[2,1,0],[0,3,0],[1,0,1]]
    const std::vector<int> labels{0, 0, 0, 1, 1, 1, 2, 2};
    const std::vector<int> preds{0, 0, 1, 1, 1, 1, 0, 2};
    const auto cm = confusion_matrix(preds, labels, 3);
    CHECK(cm == ConfusionMatrix{{2, 1, 0}, {0, 3, 0}, {1, 0, 1}});
    const auto r = one_vs_rest_metrics(preds, labels, 3);
    CHECK(r.sen_k[0] == doctest::Approx(2.0 / 3.0));
    CHECK(r.sen_k[1] == 1.0);
    CHECK(r.sen_k[2] == 0.5);
    CHECK(r.sen == doctest::Approx((2.0 / 3.0 + 1.0 + 0.5) / 3.0));
    CHECK(r.acc == doctest::Approx(6.0 / 8.0));
    CHECK(r.acc_k[2] == doctest::Approx(7.0 / 8.0));
}

TEST_CASE("metric bundle: binary extras only for two classes") {
    const std::vector<int> labels{0, 1, 1, 0}, preds{0, 1, 0, 0};
    const std::vector<std::vector<double>> probs{{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}, {0.7, 0.3}};
    const auto b = evaluate_predictions(preds, probs, labels, 2);
    REQUIRE(b.auc);
    CHECK(*b.auc == 1.0);
    CHECK(b.sen == 0.5);
    CHECK(*b.spe == 1.0);
    const std::vector<int> l3{0, 1, 2}, p3{0, 1, 1};
    const std::vector<std::vector<double>> q3{{0.8, 0.1, 0.1}, {0.1, 0.8, 0.1}, {0.1, 0.5, 0.4}};
    const auto m = evaluate_predictions(p3, q3, l3, 3);
    CHECK_FALSE(m.auc);
    CHECK_FALSE(m.f1);
    const auto j = to_json(m);
    CHECK(j["auc"].is_null());
    CHECK(j["sen"].get<double>() == doctest::Approx((1.0 + 1.0 + 0.0) / 3.0));
}

TEST_CASE("stratified folds on the default target profile") {
    const auto ids = default_target_classes();
    const auto folds = stratified_kfold(ids, 5, 42);
    REQUIRE(folds.size() == 5);
    std::set<std::string> seen;
    std::vector<std::size_t> totals;
    for (const auto& f : folds) {
        for (const auto& id : f.test_ids) CHECK(seen.insert(id).second);  // disjoint
        CHECK(f.test_ids.size() + f.train_ids.size() == 117);
        std::set<std::string> test(f.test_ids.begin(), f.test_ids.end());
        for (const auto& id : f.train_ids) CHECK_FALSE(test.count(id));
        totals.push_back(f.test_ids.size());
    }
    CHECK(seen.size() == 117);  // coverage
    CHECK(*std::max_element(totals.begin(), totals.end()) - *std::min_element(totals.begin(), totals.end()) <= 1);
    for (std::size_t c = 0; c < 3; ++c) {
        std::multiset<std::size_t> sizes;
        for (const auto& f : folds) {
            sizes.insert(static_cast<std::size_t>(std::count_if(f.test_ids.begin(), f.test_ids.end(), [&](const auto& id) {
                return id.rfind("t" + std::to_string(c) + "_", 0) == 0;
            })));
        }
        CHECK(*sizes.rbegin() - *sizes.begin() <= 1);
        if (c == 2) CHECK(sizes == std::multiset<std::size_t>{3, 3, 3, 4, 4});
    }
    // deterministic in the seed, different across seeds
    CHECK(stratified_kfold(ids, 5, 42)[0].test_ids == folds[0].test_ids);
    CHECK(stratified_kfold(ids, 5, 43)[0].test_ids != folds[0].test_ids);
    CHECK_THROWS_AS(stratified_kfold(ids, 1, 1), RejectedInput);
}

TEST_CASE("paired t-test against quadrature") {
    const std::vector<double> a{1, 2, 3, 4, 5}, zero{0, 0, 0, 0, 0};
    const auto r = paired_t_test(a, zero);
    CHECK(r.df == 4);
    CHECK(r.t == doctest::Approx(3.0 / std::sqrt(2.5 / 5.0)));
    const double oracle = t_pvalue_quadrature(r.t, 4.0);
    CHECK(std::abs(oracle - 0.0132) < 0.0005);
    CHECK(std::abs(r.p - oracle) < 1e-8);
    CHECK(paired_t_test(a, a).p == 1.0);
    const std::vector<double> shifted{2, 3, 4, 5, 6};
    const auto c = paired_t_test(shifted, a);
    CHECK(c.zero_variance);
    CHECK(c.p == 0.0);
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(8), y(8);
        for (int i = 0; i < 8; ++i) {
            x[static_cast<std::size_t>(i)] = rng.normal();
            y[static_cast<std::size_t>(i)] = rng.normal();
        }
        const auto q = paired_t_test(x, y);
        CHECK(q.p == doctest::Approx(t_pvalue_quadrature(q.t, 7.0)).epsilon(1e-7));
    }
}

TEST_CASE("aggregate uses the population standard deviation") {
    const std::vector<double> v{1.0, 3.0};
    const auto ms = mean_std(v);
    CHECK(ms.mean == 2.0);
    CHECK(ms.std == 1.0);
    MetricBundle a, b;
    a.acc = 0.5;
    b.acc = 0.7;
    a.sen_k = b.sen_k = {0.1, 0.2};
    a.acc_k = b.acc_k = {0.3, 0.4};
    const auto j = aggregate({a, b});
    CHECK(j["acc"]["mean"].get<double>() == doctest::Approx(0.6));
    CHECK(j["acc"]["std"].get<double>() == doctest::Approx(0.1));
    CHECK_FALSE(j.contains("auc"));
    CHECK(j.contains("sen_1"));
}

}  // TEST_SUITE
