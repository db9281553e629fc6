#include <doctest.h>

#include "cda/error.hpp"
#include "cda/losses.hpp"
#include "cda/optim.hpp"
#include "support.hpp"

using namespace cda;

TEST_SUITE("optim") {

TEST_CASE("one-step arithmetic") {
    std::vector<double> p{1.0}, g{0.5}, v{0.0};
    sgd_update<double>(p, g, v, {0.1, 0.9, 0.0});
    CHECK(v[0] == 0.5);
    CHECK(p[0] == doctest::Approx(0.95).epsilon(1e-15));
    // second step carries momentum
    sgd_update<double>(p, g, v, {0.1, 0.9, 0.0});
    CHECK(v[0] == doctest::Approx(0.95));
    CHECK(p[0] == doctest::Approx(0.855));
}

TEST_CASE("zero gradient and zero velocity leave parameters alone") {
    std::vector<double> p{1.0, -2.0}, g{0.0, 0.0}, v{0.0, 0.0};
    sgd_update<double>(p, g, v, {0.1, 0.9, 0.0});
    CHECK(p == std::vector<double>{1.0, -2.0});
}

TEST_CASE("decay-only step") {
    std::vector<double> p{1.0}, g{0.0}, v{0.0};
    sgd_update<double>(p, g, v, {0.1, 0.9, 0.5});
    CHECK(p[0] == doctest::Approx(0.95).epsilon(1e-15));
}

TEST_CASE("sgd_step clears gradients") {
    auto m = init_params<float>(test::tiny_config(), 1);
    auto ps = m.parameters(Group::classifier_c);
    for (auto& p : ps) p.param->grad.setConstant(1.0f);
    sgd_step<float>(ps, {0.01, 0.9, 0.0});
    for (auto& p : ps) CHECK(p.param->grad.isZero());
}

TEST_CASE("optimizer config validation") {
    OptimizerConfig c;
    CHECK_NOTHROW(validate(c));
    c.batch_size = 1;
    CHECK_THROWS(validate(c));
    c = {};
    c.lr_vit = 0.0;
    CHECK_THROWS(validate(c));
    c = {};
    CHECK(c.classifier_lr(EncoderKind::cnn) == 5e-4);
    c.lr_classifiers = 1e-3;
    CHECK(c.classifier_lr(EncoderKind::vit) == 1e-3);
}

TEST_CASE("L1 decreases over 50 steps on a fixed batch") {
    const auto cfg = test::tiny_config();
    auto m = init_params<float>(cfg, 2);
    auto spec = test::tiny_domain({3, 3, 2}, false);
    std::vector<Volume> vols;
    std::vector<LabeledItem> batch;
    for (int i = 0; i < 8; ++i) vols.push_back(generate_phantom(i % 3, spec, i));
    for (int i = 0; i < 8; ++i) batch.push_back({&vols[static_cast<std::size_t>(i)], i % 3});
    FocalParams fp{2.0, {}};
    OptimizerConfig opt;
    const double before = stage1_loss<float>(m.v, batch, fp, false);
    for (int step = 0; step < 50; ++step) {
        m.zero_grad();
        stage1_loss<float>(m.v, batch, fp, true);
        auto ps = m.parameters(Group::encoder_v);
        auto cl = m.parameters(Group::classifier_v);
        ps.insert(ps.end(), cl.begin(), cl.end());
        sgd_step<float>(ps, {opt.lr_vit, opt.momentum, opt.weight_decay});
    }
    CHECK(stage1_loss<float>(m.v, batch, fp, false) < before);
}

}  // TEST_SUITE
