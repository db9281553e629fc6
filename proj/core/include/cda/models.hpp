#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cda/nn.hpp"
#include "cda/volume.hpp"

namespace cda {

struct EncoderConfigV {
    int patch_size = 8;
    int embed_dim = 128;
    int depth = 4;
    int heads = 4;
    double mlp_ratio = 2.0;
};

struct EncoderConfigC {
    std::vector<int> stage_channels{16, 32, 64, 128};
    int blocks_per_stage = 1;
    int embed_dim = 128;
};

struct ClassifierConfig {
    int hidden_dim = 64;
    int num_classes = 3;
};

enum class EncoderKind { vit, cnn };

const char* to_string(EncoderKind k);

struct ModelConfig {
    EncoderConfigV vit;
    EncoderConfigC cnn;
    ClassifierConfig classifier;
    Dims input_dims{32, 32, 32};
    // Encoder architecture in each branch slot; homogeneous-backbone variants
    // put the same kind in both.
    EncoderKind slot_v = EncoderKind::vit;
    EncoderKind slot_c = EncoderKind::cnn;

    int embed_dim() const;
};

/// Throws ConfigError on indivisible patch sizes, mismatched latent widths,
/// heads not dividing embed_dim, or fewer than two classes.
void validate(const ModelConfig& cfg);

/// Parameter groups: encoder and classifier of the V slot and the C slot.
enum class Group { encoder_v, classifier_v, encoder_c, classifier_c };

const char* to_string(Group g);  // "E_V", "F_V", "E_C", "F_C"

template <typename T>
class VitEncoder {
public:
    struct Trace {
        typename nn::Linear<T>::Cache embed;
        std::vector<typename nn::TransformerBlock<T>::Cache> blocks;
        typename nn::LayerNorm<T>::Cache norm;
    };

    VitEncoder(const EncoderConfigV& cfg, const Dims& input_dims);

    void init(Rng& rng);
    /// Mean-pooled final token sequence, length embed_dim.
    nn::Row<T> forward(const Volume& volume, Trace* trace) const;
    void backward(const Trace& trace, const nn::Row<T>& dfeature, bool param_grads = true);
    void collect(std::vector<nn::ParamRef<T>>& out, const std::string& prefix);

    int token_count() const { return tokens_; }
    int feature_dim() const { return cfg_.embed_dim; }

    /// [tokens, patch^3] with patches and in-patch voxels in row-major order.
    nn::Matrix<T> patchify(const Volume& volume) const;

private:
    EncoderConfigV cfg_;
    Dims dims_;
    int tokens_ = 0;
    nn::Linear<T> embed_;
    nn::Parameter<T> position_;
    std::vector<nn::TransformerBlock<T>> blocks_;
    nn::LayerNorm<T> norm_;
};

template <typename T>
class CnnEncoder {
public:
    struct BlockTrace {
        typename nn::Conv3d<T>::Cache conv1, conv2, shortcut;
        nn::Matrix<T> hidden;  // relu(conv1)
        nn::Matrix<T> output;  // relu(conv2 + shortcut)
    };
    struct Trace {
        std::vector<BlockTrace> blocks;
        typename nn::Linear<T>::Cache projection;
        typename nn::LayerNorm<T>::Cache norm;
        Eigen::Index pooled_voxels = 0;
    };

    CnnEncoder(const EncoderConfigC& cfg, const Dims& input_dims);

    void init(Rng& rng);
    /// Residual stages, global average pool, linear projection to embed_dim,
    /// layer norm (so both encoders hand the heads features on one scale).
    nn::Row<T> forward(const Volume& volume, Trace* trace) const;
    void backward(const Trace& trace, const nn::Row<T>& dfeature, bool param_grads = true);
    void collect(std::vector<nn::ParamRef<T>>& out, const std::string& prefix);

    int feature_dim() const { return cfg_.embed_dim; }
    Dims final_grid() const { return final_dims_; }

private:
    struct Block {
        nn::Conv3d<T> conv1, conv2;
        std::optional<nn::Conv3d<T>> shortcut;
        Dims in_dims{}, out_dims{};
    };

    EncoderConfigC cfg_;
    std::vector<Block> blocks_;
    nn::Linear<T> projection_;
    nn::LayerNorm<T> norm_;
    Dims final_dims_{};
};

/// Two fully connected layers with a ReLU between; outputs logits.
template <typename T>
class Classifier {
public:
    struct Trace {
        typename nn::Linear<T>::Cache fc1, fc2;
        nn::Matrix<T> hidden;
    };

    Classifier() = default;
    Classifier(const ClassifierConfig& cfg, int input_dim);

    void init(Rng& rng);
    nn::Row<T> forward(const nn::Row<T>& feature, Trace* trace) const;
    /// Returns d loss / d feature.
    nn::Row<T> backward(const Trace& trace, const nn::Row<T>& dlogits, bool param_grads = true);
    void collect(std::vector<nn::ParamRef<T>>& out, const std::string& prefix);

    int input_dim() const { return fc1_.in_features(); }
    int num_classes() const { return fc2_.out_features(); }

private:
    nn::Linear<T> fc1_, fc2_;
};

template <typename T>
using Encoder = std::variant<VitEncoder<T>, CnnEncoder<T>>;
template <typename T>
using EncoderTrace = std::variant<typename VitEncoder<T>::Trace, typename CnnEncoder<T>::Trace>;

template <typename T>
struct Branch {
    EncoderKind kind = EncoderKind::vit;
    Encoder<T> encoder;
    Classifier<T> classifier;

    nn::Row<T> encode(const Volume& volume, EncoderTrace<T>* trace = nullptr) const;
    void encoder_backward(const EncoderTrace<T>& trace, const nn::Row<T>& dfeature);
};

/// Immutable copies of both classifiers taken at the end of supervised training.
template <typename T>
struct ClassifierSnapshots {
    Classifier<T> f_v;
    Classifier<T> f_c;
    bool supervised = true;  // false when taken at initialisation (no Stage 1)
};

template <typename T>
struct DualModel {
    ModelConfig config;
    Branch<T> v;
    Branch<T> c;
    std::shared_ptr<const ClassifierSnapshots<T>> snapshots;

    Branch<T>& branch(Group g) { return (g == Group::encoder_v || g == Group::classifier_v) ? v : c; }

    std::vector<nn::ParamRef<T>> parameters();
    std::vector<nn::ParamRef<T>> parameters(Group g);
    void zero_grad();
};

/// Deterministic in (cfg, seed); each group draws from its own sub-seed.
template <typename T>
DualModel<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Stores deep copies of F_V and F_C on the model and returns them.
template <typename T>
std::shared_ptr<const ClassifierSnapshots<T>> snapshot_classifiers(DualModel<T>& model, bool supervised = true);

template <typename T>
nn::Row<T> classify(const Classifier<T>& classifier, const nn::Row<T>& feature);

/// Max-subtracted softmax.
template <typename T>
nn::Row<T> softmax(const nn::Row<T>& logits);
std::vector<double> softmax(std::span<const double> logits);

/// SHA-256 over names, shapes and raw values of a group's parameters.
template <typename T>
std::string fingerprint(DualModel<T>& model, Group g);
template <typename T>
std::string fingerprint(const Classifier<T>& classifier);

/// Converts every parameter value between precisions (shapes preserved).
template <typename To, typename From>
DualModel<To> cast_model(const DualModel<From>& model);

}  // namespace cda
