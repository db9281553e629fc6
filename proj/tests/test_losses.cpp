#include <doctest.h>

#include <cmath>
#include <vector>

#include "cda/error.hpp"
#include "cda/losses.hpp"
#include "cda/rng.hpp"

using namespace cda;

namespace {

// Written out long-hand, independent of the library code.
double jsd_oracle(const std::vector<double>& p, const std::vector<double>& q) {
    long double total = 0.0L;
    for (std::size_t k = 0; k < p.size(); ++k) {
        const long double m = 0.5L * (static_cast<long double>(p[k]) + q[k]);
        if (p[k] > 0) total += 0.5L * p[k] * std::log(p[k] / m);
        if (q[k] > 0) total += 0.5L * q[k] * std::log(q[k] / m);
    }
    return static_cast<double>(total);
}

std::vector<double> random_simplex(Rng& rng, int k) {
    std::vector<double> p(static_cast<std::size_t>(k));
    double s = 0.0;
    for (auto& x : p) {
        x = -std::log(1.0 - rng.uniform());
        s += x;
    }
    for (auto& x : p) x /= s;
    return p;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("focal loss closed forms") {
    const std::vector<double> perfect{0.0, 1.0};
    CHECK(focal_loss(perfect, 1, {2.0, {}}) == 0.0);
    const std::vector<double> quarter{0.25, 0.75};
    CHECK(focal_loss(quarter, 0, FocalParams::cross_entropy()) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    const std::vector<double> half{0.5, 0.5};
    CHECK(focal_loss(half, 0, {2.0, {}}) == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
    CHECK(focal_loss(half, 1, {0.0, {1.0, 3.0}}) == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(focal_loss(half, 2, {2.0, {}}), RejectedInput);
}

TEST_CASE("focal with gamma 0 and unit alpha is cross-entropy") {
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(5));
        const auto p = random_simplex(rng, k);
        const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
        CHECK(std::abs(focal_loss(p, y, FocalParams::cross_entropy()) + std::log(p[static_cast<std::size_t>(y)])) <
              1e-9);
    }
}

TEST_CASE("inverse frequency alpha has mean one") {
    const std::vector<int> labels{0, 0, 0, 1, 2, 2};
    const auto fp = FocalParams::inverse_frequency(labels, 3);
    REQUIRE(fp.alpha.size() == 3);
    CHECK((fp.alpha[0] + fp.alpha[1] + fp.alpha[2]) / 3.0 == doctest::Approx(1.0));
    // proportional to 1/3, 1/1, 1/2
    CHECK(fp.alpha[1] / fp.alpha[0] == doctest::Approx(3.0));
    CHECK(fp.alpha[2] / fp.alpha[0] == doctest::Approx(1.5));
}

TEST_CASE("discrepancy examples") {
    const std::vector<double> a{0.3, 0.7};
    CHECK(discrepancy(a, a) == 0.0);
    const std::vector<double> x{1.0, 0.0}, y{0.0, 1.0};
    CHECK(discrepancy(x, y) == 1.0);
    const std::vector<double> u{0.6, 0.4}, v{0.2, 0.8};
    CHECK(std::abs(discrepancy(u, v) - 0.4) < 1e-15);
    const std::vector<double> three{0.2, 0.3, 0.5};
    CHECK_THROWS_AS(discrepancy(u, three), RejectedInput);
}

TEST_CASE("jsd against the long-hand oracle") {
    const std::vector<double> p{0.9, 0.1}, q{0.7, 0.3};
    const double oracle = jsd_oracle(p, q);
    CHECK(std::abs(jsd(p, q) - oracle) < 1e-5);
    CHECK(std::abs(jsd(p, q) - oracle) < 1e-12);
    const std::vector<double> x{1.0, 0.0}, y{0.0, 1.0};
    CHECK(jsd(x, y) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(jsd(p, p) == 0.0);
}

TEST_CASE("kl divergence") {
    const std::vector<double> p{0.5, 0.5}, q{0.25, 0.75};
    CHECK(kl_divergence(p, q) == doctest::Approx(0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0)));
    CHECK(kl_divergence(p, p) == 0.0);
}

TEST_CASE("discrepancy and jsd properties on random pairs") {
    Rng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(6));
        const auto a = random_simplex(rng, k);
        const auto b = random_simplex(rng, k);
        const double dl = discrepancy(a, b);
        const double js = jsd(a, b);
        CHECK(dl == discrepancy(b, a));
        CHECK(std::abs(js - jsd(b, a)) < 1e-15);
        CHECK(dl >= 0.0);
        CHECK(dl <= 2.0 / k + 1e-12);
        CHECK(js >= 0.0);
        CHECK(js <= std::log(2.0) + 1e-12);
        CHECK(discrepancy(a, a) < 1e-9);
        CHECK(jsd(a, a) < 1e-9);
        if (dl > 1e-6) CHECK(js > 0.0);
    }
}

TEST_CASE("soft cross-entropy hand values") {
    const std::vector<double> one_hot{0.0, 1.0}, p{0.2, 0.8};
    CHECK(std::abs(soft_cross_entropy(p, one_hot) + std::log(0.8)) < 1e-9);
    const std::vector<double> half{0.5, 0.5};
    CHECK(std::abs(soft_cross_entropy(half, half) - std::log(2.0)) < 1e-9);
    // -(0.8 ln 0.6 + 0.2 ln 0.4), evaluated by hand
    const double hand = -(0.8 * -0.51082562376599068 + 0.2 * -0.91629073187415511);
    const std::vector<double> t{0.8, 0.2}, q{0.6, 0.4};
    CHECK(std::abs(soft_cross_entropy(q, t) - hand) < 1e-9);
    CHECK(std::abs(hand - 0.591918645) < 1e-9);
}

TEST_CASE("pseudo label and confidence mask") {
    const std::vector<double> a{0.9, 0.1}, b{0.7, 0.3};
    const auto y = pseudo_label(a, b);
    CHECK(y[0] == doctest::Approx(0.8));
    CHECK(y[1] == doctest::Approx(0.2));
    CHECK(pseudo_label(a, a) == a);
    const std::vector<double> x{1.0, 0.0}, z{0.0, 1.0};
    const auto flat = pseudo_label(x, z);
    CHECK(flat[0] == 0.5);
    CHECK_FALSE(confidence_mask(flat, 0.5));
    const std::vector<double> c{0.8, 0.2};
    CHECK(confidence_mask(c, 0.5));
    CHECK_FALSE(confidence_mask(c, 0.8));  // strict
    const std::vector<double> u{1.0 / 3, 1.0 / 3, 1.0 / 3};
    CHECK_FALSE(confidence_mask(u, 1.0 / 3));
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto p = random_simplex(rng, 4), q = random_simplex(rng, 4);
        CHECK_NOTHROW(check_simplex(pseudo_label(p, q)));
    }
}

TEST_CASE("simplex intake is checked") {
    const std::vector<double> bad{0.5, 0.6};
    CHECK_THROWS_AS(check_simplex(bad), RejectedInput);
    const std::vector<double> neg{1.2, -0.2};
    CHECK_THROWS_AS(check_simplex(neg), RejectedInput);
    const std::vector<double> single{1.0};
    CHECK_THROWS_AS(check_simplex(single), RejectedInput);
}

}  // TEST_SUITE
