#include <doctest.h>

#include <cmath>
#include <set>

#include "cda/checkpoint.hpp"
#include "cda/error.hpp"
#include "cda/trainer.hpp"
#include "support.hpp"

using namespace cda;

namespace {

struct TinyData {
    std::vector<Volume> source, target;
    TrainData data;

    TinyData(std::vector<int> src_counts = {4, 4, 2}, std::vector<int> tgt_counts = {3, 3, 2}) {
        auto s = test::tiny_domain(src_counts, false);
        auto t = test::tiny_domain(tgt_counts, true);
        s.base_seed = t.base_seed = 4;
        std::vector<int> labels;
        for (int c = 0; c < s.num_classes(); ++c)
            for (int i = 0; i < s.n_per_class[static_cast<std::size_t>(c)]; ++i) {
                source.push_back(generate_phantom(c, s, i, Domain::source));
                labels.push_back(c);
            }
        for (int c = 0; c < t.num_classes(); ++c)
            for (int i = 0; i < t.n_per_class[static_cast<std::size_t>(c)]; ++i)
                target.push_back(generate_phantom(c, t, i, Domain::target));
        for (auto& v : source) data.source.push_back(&v);
        for (auto& v : target) data.target.push_back(&v);
        data.source_labels = labels;
        for (std::size_t i = 0; i < target.size(); ++i) data.target_ids.push_back("t" + std::to_string(i));
    }
};

TrainContext tiny_context(StageCounters* counters, int e1 = 1, int e2 = 1, int e3 = 1) {
    TrainContext ctx;
    ctx.plan.epochs_stage1 = e1;
    ctx.plan.epochs_stage2 = e2;
    ctx.plan.epochs_stage3 = e3;
    ctx.focal = {2.0, {}};
    ctx.seed = 7;
    ctx.counters = counters;
    return ctx;
}

void perturb(Classifier<float>& c, double scale, std::uint64_t seed) {
    std::vector<nn::ParamRef<float>> ps;
    c.collect(ps, "");
    Rng rng(seed);
    for (auto& p : ps)
        for (Eigen::Index i = 0; i < p.param->value.size(); ++i) p.param->value.data()[i] += static_cast<float>(scale * rng.normal());
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("balanced batches") {
    const auto b = balanced_batches(3, 5, 4, 1, 0);
    CHECK(b.size() == 2);
    std::set<std::size_t> targets;
    for (const auto& mb : b) {
        CHECK(mb.source.size() == 2);
        CHECK(mb.target.size() == 2);
        for (auto t : mb.target) CHECK(targets.insert(t).second);
        for (auto s : mb.source) CHECK(s < 3);
    }
    const auto odd = balanced_batches(10, 10, 5, 1, 0);
    for (const auto& mb : odd) {
        CHECK(mb.source.size() == 3);
        CHECK(mb.target.size() == 2);
    }
    CHECK(balanced_batches(184, 117, 4, 3, 2).size() == 58);
    const auto again = balanced_batches(3, 5, 4, 1, 0);
    CHECK(again[0].source == b[0].source);
    CHECK(again[1].target == b[1].target);
    const auto next = balanced_batches(3, 5, 4, 1, 1);
    bool differs = false;
    for (std::size_t i = 0; i < next.size(); ++i) differs = differs || next[i].target != b[i].target;
    CHECK(differs);
}

TEST_CASE("shuffled batches cover every index once") {
    const auto b = shuffled_batches(10, 4, 3, 0);
    CHECK(b.size() == 3);
    CHECK(b.back().size() == 2);
    std::set<std::size_t> seen;
    for (const auto& x : b)
        for (auto i : x) CHECK(seen.insert(i).second);
    CHECK(seen.size() == 10);
}

TEST_CASE("freeze guard notices any change") {
    auto m = init_params<float>(test::tiny_config(), 1);
    snapshot_classifiers(m);
    FreezeGuard<float> g(m, {Group::encoder_v}, "test", true);
    CHECK_NOTHROW(g.check());
    CHECK_NOTHROW(g.check());
    m.parameters(Group::encoder_v)[0].param->value(0, 0) += 1e-6f;
    CHECK_THROWS_AS(g.check(), InvariantViolation);
}

TEST_CASE("stage 1 lowers both losses and leaves snapshots equal to the heads") {
    TinyData d({3, 3, 2}, {2, 2, 1});
    auto m = init_params<float>(test::tiny_config(), 3);
    StageCounters counters;
    auto ctx = tiny_context(&counters, 2);
    const auto s = run_stage1(m, d.data, ctx);
    REQUIRE(s.loss_v.size() == 2);
    CHECK(s.loss_v[1] < s.loss_v[0]);
    CHECK(s.loss_c[1] < s.loss_c[0]);
    REQUIRE(m.snapshots);
    CHECK(fingerprint(m.snapshots->f_v) == fingerprint(m.v.classifier));
    CHECK(fingerprint(m.snapshots->f_c) == fingerprint(m.c.classifier));
    CHECK(counters.stage1_steps == 2 * 2);

    std::vector<nlohmann::json> log1, log2;
    auto a = init_params<float>(test::tiny_config(), 3), b = init_params<float>(test::tiny_config(), 3);
    auto c1 = tiny_context(nullptr, 2), c2 = tiny_context(nullptr, 2);
    c1.log = [&](const nlohmann::json& j) { log1.push_back(j); };
    c2.log = [&](const nlohmann::json& j) { log2.push_back(j); };
    run_stage1(a, d.data, c1);
    run_stage1(b, d.data, c2);
    CHECK(log1 == log2);

    TrainData empty;
    CHECK_THROWS_AS(run_stage1(m, empty, ctx), ConfigError);
}

TEST_CASE("stage 2 freeze contracts and dynamics") {
    TinyData d;
    auto m = init_params<float>(test::tiny_config(), 5);
    StageCounters counters;
    auto ctx = tiny_context(&counters, 2, 1);
    run_stage1(m, d.data, ctx);
    const auto ev = fingerprint(m, Group::encoder_v);
    const auto sv = fingerprint(m.snapshots->f_v), sc = fingerprint(m.snapshots->f_c);
    const auto s = run_stage2(m, d.data, ctx);
    CHECK(fingerprint(m, Group::encoder_v) == ev);
    CHECK(fingerprint(m.snapshots->f_v) == sv);
    CHECK(fingerprint(m.snapshots->f_c) == sc);
    CHECK(counters.boundary_steps == 4);
    CHECK(counters.consolidation_steps == 4);
    CHECK(counters.freeze_checks == 8);
    CHECK(s.probe_dl_end > s.probe_dl_start);
    CHECK(s.l4_delta_sum < 0.0);

    // reversed: E_C is the frozen explorer
    auto r = init_params<float>(test::tiny_config(), 5);
    run_stage1(r, d.data, ctx);
    const auto ec = fingerprint(r, Group::encoder_c);
    std::vector<nlohmann::json> log;
    auto rctx = ctx;
    rctx.log = [&](const nlohmann::json& j) { log.push_back(j); };
    run_stage2(r, d.data, rctx, true);
    CHECK(fingerprint(r, Group::encoder_c) == ec);
    REQUIRE_FALSE(log.empty());
    CHECK(log.back()["explorer"] == "E_C");
    CHECK(log.back()["frozen"]["consolidation"] == nlohmann::json({"F_V", "F_C", "E_C"}));

    TrainData no_target = d.data;
    no_target.target.clear();
    CHECK_THROWS_AS(run_stage2(m, no_target, ctx), ConfigError);
}

TEST_CASE("boundary objective raises target discrepancy over 30 steps") {
    TinyData d;
    auto m = init_params<float>(test::tiny_config(), 6);
    BoundaryBatch<float> bb;
    for (int i = 0; i < 4; ++i) bb.target_features.push_back(m.v.encode(d.target[static_cast<std::size_t>(i)]));
    for (int i = 0; i < 4; ++i) {
        bb.source_features_v.push_back(m.v.encode(d.source[static_cast<std::size_t>(i)]));
        bb.source_features_c.push_back(m.c.encode(d.source[static_cast<std::size_t>(i)]));
        bb.source_labels.push_back(d.data.source_labels[static_cast<std::size_t>(i)]);
    }
    const double before = mean_discrepancy(m, bb.target_features);
    OptimizerConfig opt;
    for (int i = 0; i < 30; ++i) {
        m.zero_grad();
        stage2_boundary_loss(m, bb, FocalParams{2.0, {}}, true);
        auto ps = m.parameters(Group::classifier_v);
        auto pc = m.parameters(Group::classifier_c);
        sgd_step<float>(ps, {opt.lr_vit, opt.momentum, 0.0});
        sgd_step<float>(pc, {opt.lr_cnn, opt.momentum, 0.0});
    }
    CHECK(mean_discrepancy(m, bb.target_features) > before);
}

TEST_CASE("consolidation lowers L4 over 30 steps") {
    TinyData d;
    auto m = init_params<float>(test::tiny_config(), 6);
    std::vector<const Volume*> t(d.data.target.begin(), d.data.target.begin() + 4);
    const double before = stage2_consolidation_loss(m, Group::encoder_c, std::span<const Volume* const>(t), false);
    for (int i = 0; i < 30; ++i) {
        m.zero_grad();
        stage2_consolidation_loss(m, Group::encoder_c, std::span<const Volume* const>(t), true);
        auto ps = m.parameters(Group::encoder_c);
        sgd_step<float>(ps, {5e-4, 0.9, 0.0});
    }
    CHECK(stage2_consolidation_loss(m, Group::encoder_c, std::span<const Volume* const>(t), false) < before);
    // identical heads: nothing to consolidate
    auto same = init_params<float>(test::tiny_config(), 6);
    same.c.classifier = same.v.classifier;
    CHECK(stage2_consolidation_loss(same, Group::encoder_c, std::span<const Volume* const>(t), false) == 0.0);
}

TEST_CASE("stage 3 gate extremes") {
    TinyData d;
    auto m = init_params<float>(test::tiny_config(), 8);
    snapshot_classifiers(m);
    // untouched heads: snapshot and current agree bit for bit
    for (const Volume* x : d.data.target) {
        const auto g = stage3_gate(m, *x, 1e-9);
        CHECK(g.pass_v);
        CHECK(g.pass_c);
        CHECK(g.jsd_v == 0.0);
    }
    perturb(m.v.classifier, 0.05, 1);
    perturb(m.c.classifier, 0.05, 2);
    int passed = 0;
    for (const Volume* x : d.data.target) {
        const auto g = stage3_gate(m, *x, 1e-9);
        passed += g.pass_v + g.pass_c;
        const auto open = stage3_gate(m, *x, std::log(2.0) + 1e-12);
        CHECK(open.pass_v);
        CHECK(open.pass_c);
    }
    CHECK(passed == 0);
    auto bare = init_params<float>(test::tiny_config(), 8);
    CHECK_THROWS_AS(stage3_gate(bare, *d.data.target[0], 0.1), InvariantViolation);
}

TEST_CASE("stage 3 keeps snapshots fixed and logs both directions") {
    TinyData d;
    auto m = init_params<float>(test::tiny_config(), 9);
    StageCounters counters;
    auto ctx = tiny_context(&counters, 1, 0, 2);
    std::vector<nlohmann::json> log;
    ctx.log = [&](const nlohmann::json& j) { log.push_back(j); };
    run_stage1(m, d.data, ctx);
    const auto sv = fingerprint(m.snapshots->f_v);
    ctx.plan.tau = std::log(2.0);
    const auto s = run_stage3(m, d.data, ctx);
    CHECK(fingerprint(m.snapshots->f_v) == sv);
    CHECK(s.gate_rate_v.size() == 2);
    CHECK(s.gate_rate_v[0] == 1.0);
    CHECK(counters.v2c_evaluations == 2 * 2);
    CHECK(counters.c2v_evaluations == 2 * 2);
    CHECK(log.back().contains("mask_pass_rate_v2c"));
    CHECK(log.back().contains("gate_pass_rate_c"));
}

TEST_CASE("variant stage subsets") {
    TinyData d({2, 2, 2}, {2, 2, 1});
    auto cfg = test::tiny_config();
    auto run = [&](VariantId v) {
        StageCounters c;
        auto ctx = tiny_context(&c);
        std::vector<int> stages;
        std::vector<nlohmann::json> log;
        ctx.log = [&](const nlohmann::json& j) { log.push_back(j); };
        auto m = run_variant<float>(v, cfg, d.data, ctx, 3, [&](int s, DualModel<float>&) { stages.push_back(s); });
        return std::tuple{c, stages, m.snapshots->supervised, log};
    };
    {
        auto [c, stages, sup, log] = run(VariantId::s1);
        CHECK(c.boundary_steps == 0);
        CHECK(c.consolidation_steps == 0);
        CHECK(c.stage3_steps == 0);
        CHECK(stages == std::vector<int>{1});
        CHECK(sup);
    }
    {
        auto [c, stages, sup, log] = run(VariantId::v2c);
        CHECK(c.c2v_evaluations == 0);
        CHECK(c.v2c_evaluations > 0);
        CHECK(stages == std::vector<int>{1, 2, 3});
    }
    {
        auto [c, stages, sup, log] = run(VariantId::c2v);
        CHECK(c.v2c_evaluations == 0);
        CHECK(c.c2v_evaluations > 0);
    }
    {
        auto [c, stages, sup, log] = run(VariantId::s23);
        CHECK(c.stage1_steps == 0);
        CHECK_FALSE(sup);
        CHECK(stages == std::vector<int>{2, 3});
        bool flagged = false;
        for (const auto& j : log) flagged = flagged || (j.value("event", "") == "snapshot" && j["supervised"] == false);
        CHECK(flagged);
    }
    {
        auto [c, stages, sup, log] = run(VariantId::s13);
        CHECK(c.boundary_steps == 0);
        CHECK(c.stage3_steps > 0);
    }
    {
        auto [c, stages, sup, log] = run(VariantId::s12);
        CHECK(c.stage3_steps == 0);
        CHECK(c.boundary_steps > 0);
    }
    {
        StageCounters c;
        auto ctx = tiny_context(&c, 1, 0, 0);
        auto m = run_variant<float>(VariantId::cnn_cnn, cfg, d.data, ctx, 3);
        CHECK(m.v.kind == EncoderKind::cnn);
        CHECK(m.c.kind == EncoderKind::cnn);
    }
}

TEST_CASE("same seeds, same model") {
    TinyData d({2, 2, 1}, {2, 1, 1});
    auto ctx = tiny_context(nullptr, 1, 1, 1);
    auto a = run_variant<float>(VariantId::full, test::tiny_config(), d.data, ctx, 4);
    auto b = run_variant<float>(VariantId::full, test::tiny_config(), d.data, ctx, 4);
    for (Group g : {Group::encoder_v, Group::classifier_v, Group::encoder_c, Group::classifier_c}) {
        CHECK(fingerprint(a, g) == fingerprint(b, g));
    }
}

TEST_CASE("stages resume from checkpoints and variants share their prefixes") {
    TinyData d({2, 2, 1}, {2, 1, 1});
    auto ctx = tiny_context(nullptr, 1, 1, 1);
    const auto cfg = test::tiny_config();
    auto same = [](DualModel<float>& a, DualModel<float>& b) {
        for (Group g : {Group::encoder_v, Group::classifier_v, Group::encoder_c, Group::classifier_c}) {
            if (fingerprint(a, g) != fingerprint(b, g)) return false;
        }
        return true;
    };
    std::optional<DualModel<float>> after1, after2;
    auto full = run_variant<float>(VariantId::full, cfg, d.data, ctx, 4, [&](int stage, DualModel<float>& m) {
        if (stage == 1) after1 = m;
        if (stage == 2) after2 = m;
    });
    REQUIRE(after1);
    REQUIRE(after2);

    // stage 2 and 3 from reloaded checkpoints (no optimizer state on disk)
    const auto dir = test::scratch("resume");
    save_checkpoint(*after1, dir / "s1");
    auto resumed = init_params<float>(cfg, 99);
    load_checkpoint(resumed, dir / "s1");
    run_stage2(resumed, d.data, ctx);
    save_checkpoint(resumed, dir / "s2");
    auto resumed3 = init_params<float>(cfg, 98);
    load_checkpoint(resumed3, dir / "s2");
    CHECK(same(resumed3, *after2));
    run_stage3(resumed3, d.data, ctx);
    CHECK(same(resumed3, full));

    auto s1 = run_variant<float>(VariantId::s1, cfg, d.data, ctx, 4);
    CHECK(same(s1, *after1));
    auto v2c = run_variant<float>(VariantId::v2c, cfg, d.data, ctx, 4);
    auto shared = *after2;
    run_stage3(shared, d.data, ctx, true, false);
    CHECK(same(v2c, shared));
}

TEST_CASE("prediction tie rule") {
    auto m = init_params<float>(test::tiny_config(), 1);
    std::vector<nn::ParamRef<float>> ps;
    m.c.classifier.collect(ps, "");
    for (auto& p : ps) p.param->value.setZero();
    const auto p = predict(m, test::random_volume({8, 8, 8}, 1), InferenceBranch::cnn);
    CHECK(p.category == 0);
    CHECK(p.probabilities[0] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("plan validation") {
    StagePlan p;
    CHECK_NOTHROW(validate(p, 3));
    p.tau = std::log(2.0);
    CHECK_NOTHROW(validate(p, 3));
    p.tau = 0.7;
    CHECK_THROWS(validate(p, 3));
    p = {};
    p.theta1 = 1.0 / 3.0;
    CHECK_THROWS(validate(p, 3));
    p = {};
    p.theta2 = 1.0;
    CHECK_THROWS(validate(p, 3));
}

}  // TEST_SUITE
