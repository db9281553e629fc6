#include "cda/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "cda/error.hpp"
#include "cda/rng.hpp"

namespace cda {

using nn::Row;

void validate(const StagePlan& plan, int num_classes) {
    if (plan.epochs_stage1 < 0 || plan.epochs_stage2 < 0 || plan.epochs_stage3 < 0) {
        throw ConfigError("stage epochs must be >= 0");
    }
    if (!(plan.tau > 0.0) || plan.tau > std::numbers::ln2) throw ConfigError("tau must lie in (0, ln 2]");
    const double floor = 1.0 / num_classes;
    for (double theta : {plan.theta1, plan.theta2}) {
        if (!(theta > floor) || !(theta < 1.0)) throw ConfigError("theta must lie in (1/K, 1)");
    }
}

namespace {

struct VariantEntry {
    VariantId id;
    const char* name;
};

constexpr std::array<VariantEntry, 11> kVariants{{
    {VariantId::full, "full"},
    {VariantId::s1, "s1"},
    {VariantId::s12, "s12"},
    {VariantId::s13, "s13"},
    {VariantId::s23, "s23"},
    {VariantId::v2c, "v2c"},
    {VariantId::c2v, "c2v"},
    {VariantId::reversed, "reversed"},
    {VariantId::infer_vit, "infer_vit"},
    {VariantId::cnn_cnn, "cnn_cnn"},
    {VariantId::vit_vit, "vit_vit"},
}};

}  // namespace

const char* to_string(VariantId v) {
    for (const auto& e : kVariants) {
        if (e.id == v) return e.name;
    }
    return "?";
}

VariantId parse_variant(const std::string& s) {
    std::string valid;
    for (const auto& e : kVariants) {
        if (s == e.name) return e.id;
        valid += valid.empty() ? "" : ", ";
        valid += e.name;
    }
    throw ConfigError("unknown variant '" + s + "' (valid: " + valid + ")");
}

const std::vector<VariantId>& all_variants() {
    static const std::vector<VariantId> ids = [] {
        std::vector<VariantId> out;
        for (const auto& e : kVariants) out.push_back(e.id);
        return out;
    }();
    return ids;
}

const char* to_string(InferenceBranch b) { return b == InferenceBranch::cnn ? "cnn" : "vit"; }

InferenceBranch parse_inference_branch(const std::string& s) {
    if (s == "cnn") return InferenceBranch::cnn;
    if (s == "vit") return InferenceBranch::vit;
    throw ConfigError("unknown inference branch '" + s + "' (valid: cnn, vit)");
}

VariantSpec describe(VariantId v) {
    VariantSpec s;
    switch (v) {
        case VariantId::full: break;
        case VariantId::s1: s.stage2 = s.stage3 = false; break;
        case VariantId::s12: s.stage3 = false; break;
        case VariantId::s13: s.stage2 = false; break;
        case VariantId::s23: s.stage1 = false; break;
        case VariantId::v2c: s.c2v = false; break;
        case VariantId::c2v: s.v2c = false; break;
        case VariantId::reversed: s.reversed = true; break;
        case VariantId::infer_vit: s.inference = InferenceBranch::vit; break;
        case VariantId::cnn_cnn: s.slot_v = EncoderKind::cnn; break;
        case VariantId::vit_vit: s.slot_c = EncoderKind::vit; break;
    }
    return s;
}

nlohmann::json to_json(const StageCounters& c) {
    return {{"stage1_steps", c.stage1_steps},
            {"boundary_steps", c.boundary_steps},
            {"consolidation_steps", c.consolidation_steps},
            {"stage3_steps", c.stage3_steps},
            {"v2c_evaluations", c.v2c_evaluations},
            {"c2v_evaluations", c.c2v_evaluations},
            {"freeze_checks", c.freeze_checks}};
}

namespace {

// `count` indices drawn as back-to-back permutations of [0, n).
std::vector<std::size_t> recycled_stream(std::size_t n, std::size_t count, Rng& rng) {
    std::vector<std::size_t> out;
    out.reserve(count);
    std::vector<std::size_t> perm(n);
    while (out.size() < count && n > 0) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm);
        const auto take = std::min(n, count - out.size());
        out.insert(out.end(), perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(take));
    }
    return out;
}

}  // namespace

std::vector<MixedBatch> balanced_batches(std::size_t n_source, std::size_t n_target, int batch_size,
                                         std::uint64_t seed, int epoch) {
    if (batch_size < 2) throw ConfigError("balanced batches need batch_size >= 2");
    if (n_source == 0 || n_target == 0) throw ConfigError("balanced batches need source and target samples");
    const auto half_t = static_cast<std::size_t>(batch_size / 2);
    const auto half_s = static_cast<std::size_t>(batch_size) - half_t;
    const std::size_t batches = std::max<std::size_t>(1, n_target / half_t);
    const auto e = static_cast<std::uint64_t>(epoch);
    Rng rng_s(mix_seed({seed, e, tag_hash("source")}));
    Rng rng_t(mix_seed({seed, e, tag_hash("target")}));
    const auto src = recycled_stream(n_source, batches * half_s, rng_s);
    const auto tgt = recycled_stream(n_target, batches * half_t, rng_t);
    std::vector<MixedBatch> out(batches);
    for (std::size_t b = 0; b < batches; ++b) {
        out[b].source.assign(src.begin() + static_cast<std::ptrdiff_t>(b * half_s),
                             src.begin() + static_cast<std::ptrdiff_t>((b + 1) * half_s));
        out[b].target.assign(tgt.begin() + static_cast<std::ptrdiff_t>(b * half_t),
                             tgt.begin() + static_cast<std::ptrdiff_t>((b + 1) * half_t));
    }
    return out;
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, int batch_size, std::uint64_t seed,
                                                       int epoch) {
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    Rng rng(mix_seed({seed, static_cast<std::uint64_t>(epoch)}));
    const auto order = recycled_stream(n, n, rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size)) {
        const auto end = std::min(n, i + static_cast<std::size_t>(batch_size));
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

// ---- freeze guard -------------------------------------------------------------

template <typename T>
FreezeGuard<T>::FreezeGuard(DualModel<T>& model, std::vector<Group> frozen, std::string context, bool snapshots)
    : model_(&model), groups_(std::move(frozen)), snapshots_(snapshots), context_(std::move(context)) {
    for (Group g : groups_) digests_.push_back(fingerprint(model, g));
    if (snapshots_) {
        if (!model.snapshots) throw InvariantViolation(context_ + ": no classifier snapshots to guard");
        snapshot_v_ = fingerprint(model.snapshots->f_v);
        snapshot_c_ = fingerprint(model.snapshots->f_c);
    }
}

template <typename T>
void FreezeGuard<T>::check() {
    for (std::size_t i = 0; i < groups_.size(); ++i) {
        if (fingerprint(*model_, groups_[i]) != digests_[i]) {
            throw InvariantViolation(context_ + ": frozen group " + to_string(groups_[i]) + " changed");
        }
    }
    if (snapshots_) {
        if (fingerprint(model_->snapshots->f_v) != snapshot_v_ || fingerprint(model_->snapshots->f_c) != snapshot_c_) {
            throw InvariantViolation(context_ + ": classifier snapshot changed");
        }
    }
}

namespace {

bool is_encoder(Group g) { return g == Group::encoder_v || g == Group::encoder_c; }

template <typename T>
void step(DualModel<T>& model, std::initializer_list<Group> groups, const OptimizerConfig& opt) {
    for (Group g : groups) {
        const EncoderKind kind = model.branch(g).kind;
        const SgdSettings s{is_encoder(g) ? opt.encoder_lr(kind) : opt.classifier_lr(kind), opt.momentum,
                            opt.weight_decay};
        const auto params = model.parameters(g);
        sgd_step<T>(params, s);
    }
}

// Every stage starts its optimizers from rest, so a stage resumed from the
// previous stage's checkpoint behaves exactly like an uninterrupted run.
template <typename T>
void reset_momentum(DualModel<T>& model) {
    for (auto& p : model.parameters()) p.param->velocity.setZero();
}

void emit(const TrainContext& ctx, const nlohmann::json& record) {
    if (ctx.log) ctx.log(record);
}

StageCounters& counters(const TrainContext& ctx) {
    thread_local StageCounters scratch;
    return ctx.counters ? *ctx.counters : scratch;
}

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

// ---- stage 1 --------------------------------------------------------------------

template <typename T>
Stage1Summary run_stage1(DualModel<T>& model, const TrainData& data, const TrainContext& ctx) {
    if (data.source.empty()) throw ConfigError("stage 1 needs labelled source samples");
    if (data.source_labels.size() != data.source.size()) throw ConfigError("source labels and volumes differ");
    auto& count = counters(ctx);
    reset_momentum(model);
    const std::uint64_t seed = mix_seed({ctx.seed, tag_hash("stage1")});
    Stage1Summary summary;
    for (int epoch = 0; epoch < ctx.plan.epochs_stage1; ++epoch) {
        std::vector<double> lv, lc;
        for (const auto& idx : shuffled_batches(data.source.size(), ctx.opt.batch_size, seed, epoch)) {
            std::vector<LabeledItem> batch;
            for (auto i : idx) batch.push_back({data.source[i], data.source_labels[i]});
            model.zero_grad();
            lv.push_back(stage1_loss(model.v, std::span<const LabeledItem>(batch), ctx.focal, true));
            step(model, {Group::encoder_v, Group::classifier_v}, ctx.opt);
            lc.push_back(stage1_loss(model.c, std::span<const LabeledItem>(batch), ctx.focal, true));
            step(model, {Group::encoder_c, Group::classifier_c}, ctx.opt);
            ++count.stage1_steps;
        }
        summary.loss_v.push_back(mean_of(lv));
        summary.loss_c.push_back(mean_of(lc));
        emit(ctx, {{"stage", 1}, {"epoch", epoch}, {"loss_v", summary.loss_v.back()}, {"loss_c", summary.loss_c.back()}});
    }
    snapshot_classifiers(model, true);
    emit(ctx, {{"stage", 1}, {"event", "snapshot"}, {"supervised", true}});
    return summary;
}

// ---- stage 2 --------------------------------------------------------------------

template <typename T>
double mean_discrepancy(const DualModel<T>& model, const std::vector<Row<T>>& features) {
    if (features.empty()) return 0.0;
    double total = 0.0;
    for (const auto& h : features) {
        total += discrepancy(to_probabilities<T>(classify(model.v.classifier, h)),
                             to_probabilities<T>(classify(model.c.classifier, h)));
    }
    return total / static_cast<double>(features.size());
}

template <typename T>
Stage2Summary run_stage2(DualModel<T>& model, const TrainData& data, const TrainContext& ctx, bool reversed) {
    if (data.target.empty()) throw ConfigError("stage 2 needs target samples");
    if (data.source.empty()) throw ConfigError("stage 2 needs labelled source samples");
    auto& count = counters(ctx);
    reset_momentum(model);
    const Group explorer = reversed ? Group::encoder_c : Group::encoder_v;
    const Group consolidated = reversed ? Group::encoder_v : Group::encoder_c;
    const Branch<T>& ex = model.branch(explorer);
    const Branch<T>& co = model.branch(consolidated);

    // The explorer encoder is frozen for the whole stage, so its features are
    // computed once.
    std::vector<Row<T>> target_feat, source_feat;
    for (const Volume* x : data.target) target_feat.push_back(ex.encode(*x));
    for (const Volume* x : data.source) source_feat.push_back(ex.encode(*x));

    std::optional<FreezeGuard<T>> stage_guard;
    if (ctx.verify_freeze) stage_guard.emplace(model, std::vector<Group>{explorer}, "stage 2");

    Stage2Summary summary;
    summary.probe_dl_start = mean_discrepancy(model, target_feat);
    const std::uint64_t seed = mix_seed({ctx.seed, tag_hash("stage2")});
    const nlohmann::json frozen = {{"boundary", {"E_V", "E_C"}},
                                   {"consolidation", {"F_V", "F_C", to_string(explorer)}}};

    for (int epoch = 0; epoch < ctx.plan.epochs_stage2; ++epoch) {
        double boundary = 0, focal_v = 0, focal_c = 0, dl_before = 0, dl_after = 0, l4_before = 0, l4_after = 0;
        const auto batches = balanced_batches(data.source.size(), data.target.size(), ctx.opt.batch_size, seed, epoch);
        for (const auto& mb : batches) {
            // Boundary exploration: both encoders fixed, classifiers move.
            BoundaryBatch<T> bb;
            for (auto t : mb.target) bb.target_features.push_back(target_feat[t]);
            for (auto s : mb.source) {
                Row<T> live = co.encode(*data.source[s]);
                bb.source_features_v.push_back(reversed ? live : source_feat[s]);
                bb.source_features_c.push_back(reversed ? source_feat[s] : live);
                bb.source_labels.push_back(data.source_labels[s]);
            }
            std::optional<FreezeGuard<T>> g1;
            if (ctx.verify_freeze) g1.emplace(model, std::vector<Group>{Group::encoder_v, Group::encoder_c}, "boundary step");
            model.zero_grad();
            const BoundaryTerms terms = stage2_boundary_loss(model, bb, ctx.focal, true);
            step(model, {Group::classifier_v, Group::classifier_c}, ctx.opt);
            const double after = mean_discrepancy(model, bb.target_features);
            if (g1) {
                g1->check();
                ++count.freeze_checks;
            }
            ++count.boundary_steps;
            boundary += terms.total;
            focal_v += terms.focal_v;
            focal_c += terms.focal_c;
            dl_before += terms.discrepancy;
            dl_after += after;

            // Feature consolidation on the target half: classifiers fixed.
            std::vector<const Volume*> targets;
            for (auto t : mb.target) targets.push_back(data.target[t]);
            std::optional<FreezeGuard<T>> g2;
            if (ctx.verify_freeze) {
                g2.emplace(model, std::vector<Group>{Group::classifier_v, Group::classifier_c, explorer},
                           "consolidation step");
            }
            model.zero_grad();
            const double l4 = stage2_consolidation_loss(model, consolidated, std::span<const Volume* const>(targets), true);
            step(model, {consolidated}, ctx.opt);
            const double l4_new = stage2_consolidation_loss(model, consolidated, std::span<const Volume* const>(targets), false);
            if (g2) {
                g2->check();
                ++count.freeze_checks;
            }
            ++count.consolidation_steps;
            l4_before += l4;
            l4_after += l4_new;
        }
        if (stage_guard) stage_guard->check();
        const double n = static_cast<double>(batches.size());
        summary.dl_delta_sum += dl_after - dl_before;
        summary.l4_delta_sum += l4_after - l4_before;
        summary.steps += static_cast<long>(batches.size());
        emit(ctx, {{"stage", 2},
                   {"epoch", epoch},
                   {"explorer", to_string(explorer)},
                   {"consolidated", to_string(consolidated)},
                   {"frozen", frozen},
                   {"boundary_loss", boundary / n},
                   {"focal_v", focal_v / n},
                   {"focal_c", focal_c / n},
                   {"dl_before", dl_before / n},
                   {"dl_after", dl_after / n},
                   {"l4_before", l4_before / n},
                   {"l4_after", l4_after / n},
                   {"probe_dl", mean_discrepancy(model, target_feat)}});
    }
    summary.probe_dl_end = mean_discrepancy(model, target_feat);
    return summary;
}

// ---- stage 3 --------------------------------------------------------------------

namespace {

struct BranchGate {
    double jsd = 0.0;
    bool pass = false;
    ProbabilityVector label;
};

template <typename T>
BranchGate gate_branch(const Branch<T>& branch, const Classifier<T>& snapshot, const Volume& weak, double tau) {
    const Row<T> h = branch.encode(weak);
    const auto current = to_probabilities<T>(classify(branch.classifier, h));
    const auto frozen = to_probabilities<T>(classify(snapshot, h));
    BranchGate g;
    g.jsd = jsd(frozen, current);
    g.pass = g.jsd < tau;
    g.label = pseudo_label(frozen, current);
    return g;
}

}  // namespace

template <typename T>
GateResult stage3_gate(const DualModel<T>& model, const Volume& weak_view, double tau) {
    if (!model.snapshots) throw InvariantViolation("stage 3 gate needs classifier snapshots");
    const auto v = gate_branch(model.v, model.snapshots->f_v, weak_view, tau);
    const auto c = gate_branch(model.c, model.snapshots->f_c, weak_view, tau);
    return {v.jsd, c.jsd, v.pass, c.pass, v.label, c.label};
}

template <typename T>
Stage3Summary run_stage3(DualModel<T>& model, const TrainData& data, const TrainContext& ctx, bool v2c, bool c2v) {
    if (!model.snapshots) throw InvariantViolation("stage 3 needs classifier snapshots");
    if (data.target_ids.size() != data.target.size()) throw ConfigError("target ids and volumes differ");
    auto& count = counters(ctx);
    reset_momentum(model);
    const auto& snaps = *model.snapshots;
    std::optional<FreezeGuard<T>> snap_guard;
    if (ctx.verify_freeze) snap_guard.emplace(model, std::vector<Group>{}, "stage 3", true);

    const std::uint64_t seed = mix_seed({ctx.seed, tag_hash("stage3")});
    Stage3Summary summary;
    for (int epoch = 0; epoch < ctx.plan.epochs_stage3; ++epoch) {
        long total = 0, gated_v = 0, gated_c = 0, labelled_v2c = 0, labelled_c2v = 0;
        std::vector<double> loss_v2c, loss_c2v;
        const auto e = static_cast<std::uint64_t>(epoch);
        for (const auto& idx : shuffled_batches(data.target.size(), ctx.opt.batch_size, seed, epoch)) {
            // Teacher side: weak views, gate and fused labels per branch.
            std::vector<std::size_t> to_c, to_v;  // samples supervising C (from V) and V (from C)
            std::vector<ProbabilityVector> labels_c, labels_v;
            for (auto i : idx) {
                const auto sid = tag_hash(data.target_ids[i]);
                const Volume weak = augment(*data.target[i], ctx.weak, mix_seed({seed, e, sid, 1}));
                ++total;
                if (v2c) {
                    auto g = gate_branch(model.v, snaps.f_v, weak, ctx.plan.tau);
                    if (g.pass) {
                        ++gated_v;
                        if (confidence_mask(g.label, ctx.plan.theta1)) {
                            to_c.push_back(i);
                            labels_c.push_back(std::move(g.label));
                        }
                    }
                }
                if (c2v) {
                    auto g = gate_branch(model.c, snaps.f_c, weak, ctx.plan.tau);
                    if (g.pass) {
                        ++gated_c;
                        if (confidence_mask(g.label, ctx.plan.theta2)) {
                            to_v.push_back(i);
                            labels_v.push_back(std::move(g.label));
                        }
                    }
                }
            }
            // Student side: strong views only where some label survived.
            std::vector<std::optional<Volume>> strong(data.target.size());
            auto strong_view = [&](std::size_t i) -> const Volume* {
                if (!strong[i]) {
                    const auto sid = tag_hash(data.target_ids[i]);
                    strong[i] = augment(*data.target[i], ctx.strong, mix_seed({seed, e, sid, 2}));
                }
                return &*strong[i];
            };
            model.zero_grad();
            if (v2c) {
                std::vector<const Volume*> views;
                for (auto i : to_c) views.push_back(strong_view(i));
                const auto r = cross_branch_loss(Direction::vit_to_cnn, model, std::span<const Volume* const>(views),
                                                 std::span<const ProbabilityVector>(labels_c), ctx.plan.theta1, true);
                ++count.v2c_evaluations;
                labelled_v2c += r.passing;
                loss_v2c.push_back(r.value);
                if (r.passing > 0) step(model, {Group::encoder_c, Group::classifier_c}, ctx.opt);
            }
            if (c2v) {
                std::vector<const Volume*> views;
                for (auto i : to_v) views.push_back(strong_view(i));
                const auto r = cross_branch_loss(Direction::cnn_to_vit, model, std::span<const Volume* const>(views),
                                                 std::span<const ProbabilityVector>(labels_v), ctx.plan.theta2, true);
                ++count.c2v_evaluations;
                labelled_c2v += r.passing;
                loss_c2v.push_back(r.value);
                if (r.passing > 0) step(model, {Group::encoder_v, Group::classifier_v}, ctx.opt);
            }
            if (snap_guard) {
                snap_guard->check();
                ++count.freeze_checks;
            }
            ++count.stage3_steps;
        }
        const double n = total > 0 ? static_cast<double>(total) : 1.0;
        summary.gate_rate_v.push_back(gated_v / n);
        summary.gate_rate_c.push_back(gated_c / n);
        summary.label_rate_v2c.push_back(labelled_v2c / n);
        summary.label_rate_c2v.push_back(labelled_c2v / n);
        nlohmann::json rec = {{"stage", 3}, {"epoch", epoch}};
        if (v2c) {
            rec["gate_pass_rate_v"] = gated_v / n;
            rec["mask_pass_rate_v2c"] = gated_v > 0 ? static_cast<double>(labelled_v2c) / gated_v : 0.0;
            rec["label_rate_v2c"] = labelled_v2c / n;
            rec["loss_v2c"] = mean_of(loss_v2c);
        }
        if (c2v) {
            rec["gate_pass_rate_c"] = gated_c / n;
            rec["mask_pass_rate_c2v"] = gated_c > 0 ? static_cast<double>(labelled_c2v) / gated_c : 0.0;
            rec["label_rate_c2v"] = labelled_c2v / n;
            rec["loss_c2v"] = mean_of(loss_c2v);
        }
        emit(ctx, rec);
    }
    return summary;
}

// ---- variants and inference -----------------------------------------------------

template <typename T>
DualModel<T> run_variant(VariantId variant, ModelConfig model_cfg, const TrainData& data, const TrainContext& ctx,
                         std::uint64_t init_seed, const std::function<void(int, DualModel<T>&)>& on_stage) {
    const VariantSpec spec = describe(variant);
    model_cfg.slot_v = spec.slot_v;
    model_cfg.slot_c = spec.slot_c;
    validate(model_cfg);
    validate(ctx.opt);
    validate(ctx.plan, model_cfg.classifier.num_classes);
    DualModel<T> model = init_params<T>(model_cfg, init_seed);
    emit(ctx, {{"event", "start"}, {"variant", to_string(variant)}});
    if (spec.stage1) {
        run_stage1(model, data, ctx);
        if (on_stage) on_stage(1, model);
    } else {
        // No supervised phase: the snapshots are the initial heads.
        snapshot_classifiers(model, false);
        emit(ctx, {{"stage", 0}, {"event", "snapshot"}, {"supervised", false}});
    }
    if (spec.stage2) {
        run_stage2(model, data, ctx, spec.reversed);
        if (on_stage) on_stage(2, model);
    }
    if (spec.stage3) {
        run_stage3(model, data, ctx, spec.v2c, spec.c2v);
        if (on_stage) on_stage(3, model);
    }
    return model;
}

template <typename T>
Prediction predict(const DualModel<T>& model, const Volume& volume, InferenceBranch which) {
    const Branch<T>& b = which == InferenceBranch::vit ? model.v : model.c;
    Prediction p;
    p.probabilities = to_probabilities<T>(classify(b.classifier, b.encode(volume)));
    // max_element returns the first maximum, which is the tie rule.
    p.category = static_cast<int>(std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                                  p.probabilities.begin());
    return p;
}

#define CDA_TRAINER_INSTANTIATE(T)                                                                               \
    template class FreezeGuard<T>;                                                                               \
    template Stage1Summary run_stage1<T>(DualModel<T>&, const TrainData&, const TrainContext&);                  \
    template Stage2Summary run_stage2<T>(DualModel<T>&, const TrainData&, const TrainContext&, bool);            \
    template GateResult stage3_gate<T>(const DualModel<T>&, const Volume&, double);                              \
    template Stage3Summary run_stage3<T>(DualModel<T>&, const TrainData&, const TrainContext&, bool, bool);      \
    template DualModel<T> run_variant<T>(VariantId, ModelConfig, const TrainData&, const TrainContext&,          \
                                         std::uint64_t, const std::function<void(int, DualModel<T>&)>&);         \
    template Prediction predict<T>(const DualModel<T>&, const Volume&, InferenceBranch);                         \
    template double mean_discrepancy<T>(const DualModel<T>&, const std::vector<Row<T>>&);

CDA_TRAINER_INSTANTIATE(float)
CDA_TRAINER_INSTANTIATE(double)

#undef CDA_TRAINER_INSTANTIATE

}  // namespace cda
