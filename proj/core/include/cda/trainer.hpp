#pragma once

// Three-stage training: supervised source training, boundary exploration /
// feature consolidation, and gated cross-branch pseudo-labelling.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cda/augment.hpp"
#include "cda/losses.hpp"
#include "cda/models.hpp"
#include "cda/optim.hpp"

namespace cda {

struct StagePlan {
    int epochs_stage1 = 20;
    int epochs_stage2 = 10;  // one boundary and one consolidation step per batch
    int epochs_stage3 = 10;
    double tau = 0.1;
    double theta1 = 0.5;  // mask for ViT-generated labels (V -> C)
    double theta2 = 0.8;  // mask for CNN-generated labels (C -> V)
};

/// tau in (0, ln 2], thetas in (1/K, 1), epochs >= 0.
void validate(const StagePlan& plan, int num_classes);

enum class VariantId { full, s1, s12, s13, s23, v2c, c2v, reversed, infer_vit, cnn_cnn, vit_vit };

const char* to_string(VariantId v);
/// Throws ConfigError listing the valid ids.
VariantId parse_variant(const std::string& s);
const std::vector<VariantId>& all_variants();

enum class InferenceBranch { cnn, vit };  // the C slot or the V slot

const char* to_string(InferenceBranch b);
InferenceBranch parse_inference_branch(const std::string& s);

struct VariantSpec {
    bool stage1 = true;
    bool stage2 = true;
    bool stage3 = true;
    bool v2c = true;
    bool c2v = true;
    bool reversed = false;  // Stage 2: E_C explores (frozen), E_V consolidates
    EncoderKind slot_v = EncoderKind::vit;
    EncoderKind slot_c = EncoderKind::cnn;
    InferenceBranch inference = InferenceBranch::cnn;
};

VariantSpec describe(VariantId v);

/// How often each code path ran; the ablation contracts are stated in these.
struct StageCounters {
    long stage1_steps = 0;
    long boundary_steps = 0;
    long consolidation_steps = 0;
    long stage3_steps = 0;
    long v2c_evaluations = 0;
    long c2v_evaluations = 0;
    long freeze_checks = 0;
};

nlohmann::json to_json(const StageCounters& c);

struct MixedBatch {
    std::vector<std::size_t> source;  // positions in the source list
    std::vector<std::size_t> target;
};

/// One epoch of balanced batches: ceil(B/2) source and floor(B/2) target per
/// batch. The epoch length is set by the target stream (leftover targets wait
/// for the next reshuffle); the source stream recycles when it runs short.
std::vector<MixedBatch> balanced_batches(std::size_t n_source, std::size_t n_target, int batch_size,
                                         std::uint64_t seed, int epoch);

/// Shuffled single-stream batches; the last one may be short.
std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, int batch_size, std::uint64_t seed,
                                                       int epoch);

/// Training data by reference. Target labels are never read by the trainer.
struct TrainData {
    std::vector<const Volume*> source;
    std::vector<int> source_labels;
    std::vector<const Volume*> target;
    std::vector<std::string> target_ids;  // seeds the per-sample augmentation
};

using LogSink = std::function<void(const nlohmann::json&)>;

struct TrainContext {
    OptimizerConfig opt;
    StagePlan plan;
    FocalParams focal;
    AugmentPolicy weak = AugmentPolicy::weak_default();
    AugmentPolicy strong = AugmentPolicy::strong_default();
    std::uint64_t seed = 0;  // batch order and augmentation
    bool verify_freeze = true;
    LogSink log;
    StageCounters* counters = nullptr;
};

/// Fingerprints the given groups (and the snapshot heads, if asked) on
/// construction; check() throws InvariantViolation naming the first group
/// that changed.
template <typename T>
class FreezeGuard {
public:
    FreezeGuard(DualModel<T>& model, std::vector<Group> frozen, std::string context, bool snapshots = false);
    void check();

private:
    DualModel<T>* model_;
    std::vector<Group> groups_;
    std::vector<std::string> digests_;
    std::string snapshot_v_, snapshot_c_;
    bool snapshots_;
    std::string context_;
};

struct Stage1Summary {
    std::vector<double> loss_v, loss_c;  // per-epoch batch means
};

struct Stage2Summary {
    // Discrepancy over all target samples on explorer features, before and
    // after the stage. Only boundary steps can move it.
    double probe_dl_start = 0.0;
    double probe_dl_end = 0.0;
    // Per-step changes measured on the step's own batch.
    double dl_delta_sum = 0.0;
    double l4_delta_sum = 0.0;
    long steps = 0;
};

struct Stage3Summary {
    std::vector<double> gate_rate_v, gate_rate_c;      // per epoch
    std::vector<double> label_rate_v2c, label_rate_c2v;  // gated and confident, over all samples
};

/// Focal loss on labelled source data, each branch with its own optimizer.
/// Ends by taking the classifier snapshots.
template <typename T>
Stage1Summary run_stage1(DualModel<T>& model, const TrainData& data, const TrainContext& ctx);

/// Alternates a boundary step (classifiers only) and a consolidation step
/// (consolidated encoder only) per balanced batch.
template <typename T>
Stage2Summary run_stage2(DualModel<T>& model, const TrainData& data, const TrainContext& ctx, bool reversed = false);

/// Per-branch gate and pseudo-labels for one weak view.
struct GateResult {
    double jsd_v = 0.0, jsd_c = 0.0;
    bool pass_v = false, pass_c = false;
    ProbabilityVector label_v, label_c;  // fused half-and-half label per branch
};

template <typename T>
GateResult stage3_gate(const DualModel<T>& model, const Volume& weak_view, double tau);

/// Gated cross-branch pseudo-labelling on target data. Requires snapshots.
template <typename T>
Stage3Summary run_stage3(DualModel<T>& model, const TrainData& data, const TrainContext& ctx, bool v2c = true,
                         bool c2v = true);

/// Builds the model for the variant and runs its stage subset. `on_stage`
/// fires after each executed stage.
template <typename T>
DualModel<T> run_variant(VariantId variant, ModelConfig model_cfg, const TrainData& data, const TrainContext& ctx,
                         std::uint64_t init_seed,
                         const std::function<void(int, DualModel<T>&)>& on_stage = {});

struct Prediction {
    int category = 0;
    ProbabilityVector probabilities;
};

/// Argmax of the chosen branch's softmax; ties go to the lower index.
template <typename T>
Prediction predict(const DualModel<T>& model, const Volume& volume, InferenceBranch branch);

/// Mean discrepancy of F_V and F_C over `features`.
template <typename T>
double mean_discrepancy(const DualModel<T>& model, const std::vector<nn::Row<T>>& features);

}  // namespace cda
