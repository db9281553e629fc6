#include <doctest.h>

#include <string>
#include <vector>

#include "cda/losses.hpp"
#include "cda/trainer.hpp"
#include "support.hpp"

using namespace cda;

namespace {

constexpr double kTolerance = 1e-4;

std::vector<nn::ParamRef<double>> groups(DualModel<double>& m, std::initializer_list<Group> gs) {
    std::vector<nn::ParamRef<double>> out;
    for (Group g : gs) {
        auto p = m.parameters(g);
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

bool all_zero(const std::vector<nn::ParamRef<double>>& ps) {
    for (const auto& p : ps) {
        if (!p.param->grad.isZero(0.0)) return false;
    }
    return true;
}

struct Fixture {
    DualModel<double> model = init_params<double>(test::micro_config(), 5);
    std::vector<Volume> volumes = test::random_volumes({2, 2, 2}, 6, 9);
    FocalParams focal{2.0, {1.0, 0.6, 1.4}};
};

}  // namespace

TEST_SUITE("gradients") {

TEST_CASE("L1 and L2: focal loss through each branch") {
    Fixture f;
    const std::vector<LabeledItem> batch{{&f.volumes[0], 0}, {&f.volumes[1], 2}, {&f.volumes[2], 1}};
    for (bool vit : {true, false}) {
        CAPTURE(vit);
        auto& branch = vit ? f.model.v : f.model.c;
        const auto trained = vit ? groups(f.model, {Group::encoder_v, Group::classifier_v})
                                 : groups(f.model, {Group::encoder_c, Group::classifier_c});
        const auto other = vit ? groups(f.model, {Group::encoder_c, Group::classifier_c})
                               : groups(f.model, {Group::encoder_v, Group::classifier_v});
        f.model.zero_grad();
        stage1_loss<double>(branch, batch, f.focal, true);
        CHECK(all_zero(other));
        std::string where;
        const double err = test::worst_gradient_error<double>(
            trained, [&] { return stage1_loss<double>(branch, batch, f.focal, false); }, 1e-4, &where);
        CAPTURE(where);
        CHECK(err < kTolerance);
    }
}

TEST_CASE("L3: boundary objective trains only the classifiers") {
    Fixture f;
    BoundaryBatch<double> b;
    for (int i = 0; i < 2; ++i) b.target_features.push_back(f.model.v.encode(f.volumes[static_cast<std::size_t>(i)]));
    for (int i = 2; i < 4; ++i) {
        b.source_features_v.push_back(f.model.v.encode(f.volumes[static_cast<std::size_t>(i)]));
        b.source_features_c.push_back(f.model.c.encode(f.volumes[static_cast<std::size_t>(i)]));
    }
    b.source_labels = {1, 2};
    f.model.zero_grad();
    stage2_boundary_loss<double>(f.model, b, f.focal, true);
    CHECK(all_zero(groups(f.model, {Group::encoder_v, Group::encoder_c})));
    std::string where;
    const double err = test::worst_gradient_error<double>(
        groups(f.model, {Group::classifier_v, Group::classifier_c}),
        [&] { return stage2_boundary_loss<double>(f.model, b, f.focal, false).total; }, 1e-4, &where);
    CAPTURE(where);
    CHECK(err < kTolerance);
}

TEST_CASE("L4: consolidation objective trains only the consolidated encoder") {
    Fixture f;
    const std::vector<const Volume*> targets{&f.volumes[0], &f.volumes[3], &f.volumes[5]};
    for (Group enc : {Group::encoder_c, Group::encoder_v}) {
        CAPTURE(to_string(enc));
        f.model.zero_grad();
        stage2_consolidation_loss<double>(f.model, enc, targets, true);
        const Group other = enc == Group::encoder_c ? Group::encoder_v : Group::encoder_c;
        CHECK(all_zero(groups(f.model, {other, Group::classifier_v, Group::classifier_c})));
        std::string where;
        const double err = test::worst_gradient_error<double>(
            groups(f.model, {enc}), [&] { return stage2_consolidation_loss<double>(f.model, enc, targets, false); },
            1e-4, &where);
        CAPTURE(where);
        CHECK(err < kTolerance);
    }
}

TEST_CASE("cross-branch losses train only the student branch") {
    Fixture f;
    const std::vector<const Volume*> strong{&f.volumes[1], &f.volumes[2], &f.volumes[4]};
    const std::vector<ProbabilityVector> labels{{0.1, 0.85, 0.05}, {0.7, 0.2, 0.1}, {0.05, 0.05, 0.9}};
    for (Direction dir : {Direction::vit_to_cnn, Direction::cnn_to_vit}) {
        CAPTURE(to_string(dir));
        const bool to_cnn = dir == Direction::vit_to_cnn;
        const auto student = to_cnn ? groups(f.model, {Group::encoder_c, Group::classifier_c})
                                    : groups(f.model, {Group::encoder_v, Group::classifier_v});
        const auto teacher = to_cnn ? groups(f.model, {Group::encoder_v, Group::classifier_v})
                                    : groups(f.model, {Group::encoder_c, Group::classifier_c});
        f.model.zero_grad();
        const auto r = cross_branch_loss<double>(dir, f.model, strong, labels, 0.5, true);
        CHECK(r.passing == 3);
        CHECK(all_zero(teacher));
        std::string where;
        const double err = test::worst_gradient_error<double>(
            student, [&] { return cross_branch_loss<double>(dir, f.model, strong, labels, 0.5, false).value; }, 1e-4,
            &where);
        CAPTURE(where);
        CHECK(err < kTolerance);
    }
}

TEST_CASE("teacher detachment: perturbing the teacher leaves the student gradient unchanged") {
    Fixture f;
    auto snap = snapshot_classifiers(f.model);
    const Volume& weak = f.volumes[0];
    const std::vector<const Volume*> strong{&f.volumes[1]};
    // The pseudo-label is produced once from the teacher and handed over as a
    // plain vector; the student gradient must not see the teacher at all.
    const auto gate = stage3_gate(f.model, weak, std::log(2.0) + 1e-9);
    const std::vector<ProbabilityVector> labels{gate.label_v};
    auto student_grad = [&] {
        f.model.zero_grad();
        cross_branch_loss<double>(Direction::vit_to_cnn, f.model, strong, labels, 0.0 + 1e-9, true);
        std::vector<double> g;
        for (const auto& p : groups(f.model, {Group::encoder_c, Group::classifier_c})) {
            g.insert(g.end(), p.param->grad.data(), p.param->grad.data() + p.param->grad.size());
        }
        return g;
    };
    const auto base = student_grad();
    for (const auto& p : groups(f.model, {Group::encoder_v, Group::classifier_v})) {
        for (Eigen::Index i = 0; i < p.param->value.size(); i += 3) {
            const double original = p.param->value.data()[i];
            p.param->value.data()[i] = original + 1e-3;
            const auto moved = student_grad();
            p.param->value.data()[i] = original;
            double diff = 0.0;
            for (std::size_t j = 0; j < base.size(); ++j) diff = std::max(diff, std::abs(moved[j] - base[j]));
            REQUIRE(diff < 1e-8);
        }
    }
    // and the teacher groups never receive gradient
    f.model.zero_grad();
    cross_branch_loss<double>(Direction::vit_to_cnn, f.model, strong, labels, 1e-9, true);
    CHECK(all_zero(groups(f.model, {Group::encoder_v, Group::classifier_v})));
}

}  // TEST_SUITE
