#include "cda/models.hpp"

#include <algorithm>
#include <cmath>

#include "cda/error.hpp"
#include "cda/fingerprint.hpp"

namespace cda {

using nn::Matrix;
using nn::Row;

const char* to_string(EncoderKind k) { return k == EncoderKind::vit ? "vit" : "cnn"; }

const char* to_string(Group g) {
    switch (g) {
        case Group::encoder_v: return "E_V";
        case Group::classifier_v: return "F_V";
        case Group::encoder_c: return "E_C";
        case Group::classifier_c: return "F_C";
    }
    return "?";
}

int ModelConfig::embed_dim() const { return vit.embed_dim; }

void validate(const ModelConfig& cfg) {
    for (int a = 0; a < 3; ++a) {
        if (cfg.input_dims[a] <= 0) throw ConfigError("input dims must be positive");
    }
    const bool uses_vit = cfg.slot_v == EncoderKind::vit || cfg.slot_c == EncoderKind::vit;
    const bool uses_cnn = cfg.slot_v == EncoderKind::cnn || cfg.slot_c == EncoderKind::cnn;
    if (uses_vit) {
        const auto& v = cfg.vit;
        if (v.patch_size <= 0) throw ConfigError("patch_size must be positive");
        for (int a = 0; a < 3; ++a) {
            if (cfg.input_dims[a] % v.patch_size != 0) {
                throw ConfigError("input dim " + std::to_string(cfg.input_dims[a]) +
                                  " not divisible by patch_size " + std::to_string(v.patch_size));
            }
        }
        if (v.heads <= 0 || v.embed_dim % v.heads != 0) {
            throw ConfigError("vit embed_dim must be divisible by heads");
        }
        if (v.depth < 0 || !(v.mlp_ratio > 0.0)) throw ConfigError("vit depth/mlp_ratio invalid");
    }
    if (uses_cnn) {
        if (cfg.cnn.stage_channels.empty()) throw ConfigError("cnn needs at least one stage");
        if (cfg.cnn.blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be >= 1");
        for (int c : cfg.cnn.stage_channels) {
            if (c <= 0) throw ConfigError("stage channels must be positive");
        }
    }
    if (cfg.cnn.embed_dim != cfg.vit.embed_dim) {
        throw ConfigError("cnn embed_dim (" + std::to_string(cfg.cnn.embed_dim) +
                          ") must equal vit embed_dim (" + std::to_string(cfg.vit.embed_dim) + ")");
    }
    if (cfg.classifier.num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (cfg.classifier.hidden_dim < 1) throw ConfigError("classifier hidden_dim must be >= 1");
}

// ---- VitEncoder -------------------------------------------------------------

template <typename T>
VitEncoder<T>::VitEncoder(const EncoderConfigV& cfg, const Dims& input_dims)
    : cfg_(cfg), dims_(input_dims), norm_("norm", cfg.embed_dim) {
    for (int a = 0; a < 3; ++a) {
        if (cfg.patch_size <= 0 || input_dims[a] % cfg.patch_size != 0) {
            throw ConfigError("input dims not divisible by patch_size " + std::to_string(cfg.patch_size));
        }
    }
    const int p = cfg.patch_size;
    tokens_ = (input_dims[0] / p) * (input_dims[1] / p) * (input_dims[2] / p);
    embed_ = nn::Linear<T>("patch_embed", p * p * p, cfg.embed_dim);
    position_.allocate("position", tokens_, cfg.embed_dim);
    const int hidden = std::max(1, static_cast<int>(std::lround(cfg.embed_dim * cfg.mlp_ratio)));
    for (int b = 0; b < cfg.depth; ++b) {
        blocks_.emplace_back("blocks." + std::to_string(b), cfg.embed_dim, cfg.heads, hidden);
    }
}

template <typename T>
void VitEncoder<T>::init(Rng& rng) {
    const int p = cfg_.patch_size;
    embed_.init(rng, 1.0 / std::sqrt(static_cast<double>(p * p * p)));
    position_.fill_normal(rng, 0.02);
    const double residual_scale = 1.0 / std::sqrt(2.0 * std::max(cfg_.depth, 1));
    for (auto& b : blocks_) b.init(rng, residual_scale);
}

template <typename T>
Matrix<T> VitEncoder<T>::patchify(const Volume& volume) const {
    if (volume.dims != dims_) throw ConfigError("vit: volume dims do not match encoder input dims");
    const int p = cfg_.patch_size;
    const int g1 = dims_[1] / p, g2 = dims_[2] / p;
    Matrix<T> patches(tokens_, p * p * p);
    for (int t = 0; t < tokens_; ++t) {
        const int b0 = t / (g1 * g2), b1 = (t / g2) % g1, b2 = t % g2;
        T* row = patches.row(t).data();
        for (int o0 = 0; o0 < p; ++o0)
            for (int o1 = 0; o1 < p; ++o1) {
                const float* src = &volume.data[volume.index(b0 * p + o0, b1 * p + o1, b2 * p)];
                for (int o2 = 0; o2 < p; ++o2) *row++ = static_cast<T>(src[o2]);
            }
    }
    return patches;
}

template <typename T>
Row<T> VitEncoder<T>::forward(const Volume& volume, Trace* trace) const {
    Matrix<T> x = embed_.forward(patchify(volume), trace ? &trace->embed : nullptr);
    x += position_.value;
    if (trace) trace->blocks.resize(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        x = blocks_[b].forward(x, trace ? &trace->blocks[b] : nullptr);
    }
    x = norm_.forward(x, trace ? &trace->norm : nullptr);
    return x.colwise().mean();
}

template <typename T>
void VitEncoder<T>::backward(const Trace& trace, const Row<T>& dfeature, bool param_grads) {
    Matrix<T> dx = (dfeature / static_cast<T>(tokens_)).replicate(tokens_, 1);
    dx = norm_.backward(trace.norm, dx, param_grads);
    for (std::size_t b = blocks_.size(); b-- > 0;) {
        dx = blocks_[b].backward(trace.blocks[b], dx, param_grads);
    }
    if (param_grads) position_.grad += dx;
    embed_.backward(trace.embed, dx, param_grads, /*input_grad=*/false);
}

template <typename T>
void VitEncoder<T>::collect(std::vector<nn::ParamRef<T>>& out, const std::string& prefix) {
    embed_.collect(out, prefix);
    out.push_back({prefix + position_.name, &position_});
    for (auto& b : blocks_) b.collect(out, prefix);
    norm_.collect(out, prefix);
}

// ---- CnnEncoder -------------------------------------------------------------

template <typename T>
CnnEncoder<T>::CnnEncoder(const EncoderConfigC& cfg, const Dims& input_dims) : cfg_(cfg) {
    if (cfg.stage_channels.empty() || cfg.blocks_per_stage < 1) {
        throw ConfigError("cnn: need at least one stage and one block per stage");
    }
    Dims dims = input_dims;
    int channels = 1;
    for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
        for (int b = 0; b < cfg.blocks_per_stage; ++b) {
            const int out = cfg.stage_channels[s];
            const int stride = b == 0 ? 2 : 1;
            const std::string name = "stages." + std::to_string(s) + "." + std::to_string(b);
            Block block{nn::Conv3d<T>(name + ".conv1", channels, out, 3, stride),
                        nn::Conv3d<T>(name + ".conv2", out, out, 3, 1), std::nullopt, dims, {}};
            if (stride != 1 || channels != out) {
                block.shortcut.emplace(name + ".shortcut", channels, out, 1, stride);
            }
            block.out_dims = block.conv1.output_dims(dims);
            dims = block.out_dims;
            channels = out;
            blocks_.push_back(std::move(block));
        }
    }
    final_dims_ = dims;
    projection_ = nn::Linear<T>("projection", channels, cfg.embed_dim);
    norm_ = nn::LayerNorm<T>("norm", cfg.embed_dim);
}

template <typename T>
void CnnEncoder<T>::init(Rng& rng) {
    for (auto& b : blocks_) {
        b.conv1.init(rng, std::sqrt(2.0 / b.conv1.fan_in()));
        // Residual branch starts damped so un-normalised stacks keep unit scale.
        b.conv2.init(rng, 0.5 * std::sqrt(2.0 / b.conv2.fan_in()));
        if (b.shortcut) b.shortcut->init(rng, std::sqrt(1.0 / b.shortcut->fan_in()));
    }
    projection_.init(rng, std::sqrt(1.0 / projection_.in_features()));
}

template <typename T>
Row<T> CnnEncoder<T>::forward(const Volume& volume, Trace* trace) const {
    Matrix<T> x(1, static_cast<Eigen::Index>(volume.size()));
    for (std::size_t i = 0; i < volume.size(); ++i) x.data()[i] = static_cast<T>(volume.data[i]);
    if (trace) trace->blocks.resize(blocks_.size());
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto& b = blocks_[i];
        BlockTrace* bt = trace ? &trace->blocks[i] : nullptr;
        Matrix<T> h = nn::relu<T>(b.conv1.forward(x, b.in_dims, bt ? &bt->conv1 : nullptr));
        Matrix<T> y = b.conv2.forward(h, b.out_dims, bt ? &bt->conv2 : nullptr);
        if (b.shortcut) {
            y += b.shortcut->forward(x, b.in_dims, bt ? &bt->shortcut : nullptr);
        } else {
            y += x;
        }
        x = nn::relu<T>(y);
        if (bt) {
            bt->hidden = std::move(h);
            bt->output = x;
        }
    }
    Matrix<T> pooled = x.rowwise().mean().transpose();
    if (trace) trace->pooled_voxels = x.cols();
    Matrix<T> feature = projection_.forward(pooled, trace ? &trace->projection : nullptr);
    return norm_.forward(feature, trace ? &trace->norm : nullptr);
}

template <typename T>
void CnnEncoder<T>::backward(const Trace& trace, const Row<T>& dfeature, bool param_grads) {
    Matrix<T> dpooled = projection_.backward(trace.projection, norm_.backward(trace.norm, dfeature, param_grads),
                                             param_grads);
    Matrix<T> dx = (dpooled.transpose() / static_cast<T>(trace.pooled_voxels))
                       .replicate(1, trace.pooled_voxels);
    for (std::size_t i = blocks_.size(); i-- > 0;) {
        auto& b = blocks_[i];
        const auto& bt = trace.blocks[i];
        const bool need_input = i > 0;
        Matrix<T> dy = nn::relu_backward<T>(bt.output, dx);
        Matrix<T> dh = b.conv2.backward(bt.conv2, dy, param_grads, true);
        dh = nn::relu_backward<T>(bt.hidden, dh);
        Matrix<T> din = b.conv1.backward(bt.conv1, dh, param_grads, need_input);
        if (b.shortcut) {
            Matrix<T> ds = b.shortcut->backward(bt.shortcut, dy, param_grads, need_input);
            if (need_input) din += ds;
        } else if (need_input) {
            din += dy;
        }
        dx = std::move(din);
    }
}

template <typename T>
void CnnEncoder<T>::collect(std::vector<nn::ParamRef<T>>& out, const std::string& prefix) {
    for (auto& b : blocks_) {
        b.conv1.collect(out, prefix);
        b.conv2.collect(out, prefix);
        if (b.shortcut) b.shortcut->collect(out, prefix);
    }
    projection_.collect(out, prefix);
    norm_.collect(out, prefix);
}

// ---- Classifier -------------------------------------------------------------

template <typename T>
Classifier<T>::Classifier(const ClassifierConfig& cfg, int input_dim)
    : fc1_("fc1", input_dim, cfg.hidden_dim), fc2_("fc2", cfg.hidden_dim, cfg.num_classes) {}

template <typename T>
void Classifier<T>::init(Rng& rng) {
    fc1_.init(rng, std::sqrt(2.0 / fc1_.in_features()), 0.01);
    // Random, never zero: two zero heads would agree everywhere.
    fc2_.init(rng, std::sqrt(1.0 / fc2_.in_features()), 0.01);
}

template <typename T>
Row<T> Classifier<T>::forward(const Row<T>& feature, Trace* trace) const {
    Matrix<T> h = nn::relu<T>(fc1_.forward(feature, trace ? &trace->fc1 : nullptr));
    Matrix<T> logits = fc2_.forward(h, trace ? &trace->fc2 : nullptr);
    if (trace) trace->hidden = std::move(h);
    return logits;
}

template <typename T>
Row<T> Classifier<T>::backward(const Trace& trace, const Row<T>& dlogits, bool param_grads) {
    Matrix<T> dh = fc2_.backward(trace.fc2, dlogits, param_grads);
    dh = nn::relu_backward<T>(trace.hidden, dh);
    return fc1_.backward(trace.fc1, dh, param_grads);
}

template <typename T>
void Classifier<T>::collect(std::vector<nn::ParamRef<T>>& out, const std::string& prefix) {
    fc1_.collect(out, prefix);
    fc2_.collect(out, prefix);
}

// ---- Branch / DualModel -----------------------------------------------------

template <typename T>
Row<T> Branch<T>::encode(const Volume& volume, EncoderTrace<T>* trace) const {
    return std::visit(
        [&](const auto& enc) -> Row<T> {
            using Enc = std::decay_t<decltype(enc)>;
            if (!trace) return enc.forward(volume, nullptr);
            auto& t = trace->template emplace<typename Enc::Trace>();
            return enc.forward(volume, &t);
        },
        encoder);
}

template <typename T>
void Branch<T>::encoder_backward(const EncoderTrace<T>& trace, const Row<T>& dfeature) {
    std::visit(
        [&](auto& enc) {
            using Enc = std::decay_t<decltype(enc)>;
            enc.backward(std::get<typename Enc::Trace>(trace), dfeature, true);
        },
        encoder);
}

template <typename T>
std::vector<nn::ParamRef<T>> DualModel<T>::parameters() {
    std::vector<nn::ParamRef<T>> out;
    for (Group g : {Group::encoder_v, Group::classifier_v, Group::encoder_c, Group::classifier_c}) {
        auto part = parameters(g);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

template <typename T>
std::vector<nn::ParamRef<T>> DualModel<T>::parameters(Group g) {
    std::vector<nn::ParamRef<T>> out;
    const std::string prefix = std::string(to_string(g)) + ".";
    auto& b = branch(g);
    if (g == Group::encoder_v || g == Group::encoder_c) {
        std::visit([&](auto& enc) { enc.collect(out, prefix); }, b.encoder);
    } else {
        b.classifier.collect(out, prefix);
    }
    return out;
}

template <typename T>
void DualModel<T>::zero_grad() {
    for (auto& p : parameters()) p.param->zero_grad();
}

namespace {

template <typename T>
Encoder<T> make_encoder(EncoderKind kind, const ModelConfig& cfg) {
    if (kind == EncoderKind::vit) return VitEncoder<T>(cfg.vit, cfg.input_dims);
    return CnnEncoder<T>(cfg.cnn, cfg.input_dims);
}

template <typename T>
void hash_params(Sha256& h, std::vector<nn::ParamRef<T>>& params) {
    for (const auto& p : params) {
        h.update(p.name);
        const std::int64_t shape[2] = {p.param->value.rows(), p.param->value.cols()};
        h.update(std::as_bytes(std::span(shape)));
        h.update(std::as_bytes(std::span(p.param->value.data(), static_cast<std::size_t>(p.param->value.size()))));
    }
}

}  // namespace

template <typename T>
DualModel<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    DualModel<T> m{cfg,
                   {cfg.slot_v, make_encoder<T>(cfg.slot_v, cfg), Classifier<T>(cfg.classifier, cfg.embed_dim())},
                   {cfg.slot_c, make_encoder<T>(cfg.slot_c, cfg), Classifier<T>(cfg.classifier, cfg.embed_dim())},
                   nullptr};
    Rng ev(mix_seed({seed, tag_hash("E_V")}));
    Rng fv(mix_seed({seed, tag_hash("F_V")}));
    Rng ec(mix_seed({seed, tag_hash("E_C")}));
    Rng fc(mix_seed({seed, tag_hash("F_C")}));
    std::visit([&](auto& e) { e.init(ev); }, m.v.encoder);
    std::visit([&](auto& e) { e.init(ec); }, m.c.encoder);
    m.v.classifier.init(fv);
    m.c.classifier.init(fc);
    return m;
}

template <typename T>
std::shared_ptr<const ClassifierSnapshots<T>> snapshot_classifiers(DualModel<T>& model, bool supervised) {
    auto snap = std::make_shared<const ClassifierSnapshots<T>>(
        ClassifierSnapshots<T>{model.v.classifier, model.c.classifier, supervised});
    model.snapshots = snap;
    return snap;
}

template <typename T>
Row<T> classify(const Classifier<T>& classifier, const Row<T>& feature) {
    if (feature.size() != classifier.input_dim()) {
        throw ConfigError("classifier expects width " + std::to_string(classifier.input_dim()) +
                          ", got " + std::to_string(feature.size()));
    }
    return classifier.forward(feature, nullptr);
}

template <typename T>
Row<T> softmax(const Row<T>& logits) {
    const T m = logits.maxCoeff();
    Row<T> p = (logits.array() - m).exp().matrix();
    return p / p.sum();
}

std::vector<double> softmax(std::span<const double> logits) {
    Row<double> row(static_cast<Eigen::Index>(logits.size()));
    for (std::size_t i = 0; i < logits.size(); ++i) row[static_cast<Eigen::Index>(i)] = logits[i];
    const Row<double> p = softmax<double>(row);
    return {p.data(), p.data() + p.size()};
}

template <typename T>
std::string fingerprint(DualModel<T>& model, Group g) {
    Sha256 h;
    auto params = model.parameters(g);
    hash_params(h, params);
    return h.hex_digest();
}

template <typename T>
std::string fingerprint(const Classifier<T>& classifier) {
    Sha256 h;
    auto copy = classifier;  // collect() needs mutable access
    std::vector<nn::ParamRef<T>> params;
    copy.collect(params, "");
    hash_params(h, params);
    return h.hex_digest();
}

template <typename To, typename From>
DualModel<To> cast_model(const DualModel<From>& model) {
    auto src = model;
    DualModel<To> out = init_params<To>(model.config, 0);
    auto from = src.parameters();
    auto to = out.parameters();
    for (std::size_t i = 0; i < from.size(); ++i) {
        to[i].param->value = from[i].param->value.template cast<To>();
    }
    if (model.snapshots) {
        ClassifierSnapshots<To> snap{Classifier<To>(model.config.classifier, model.config.embed_dim()),
                                     Classifier<To>(model.config.classifier, model.config.embed_dim()),
                                     model.snapshots->supervised};
        for (auto [dst, srcc] : {std::pair{&snap.f_v, &model.snapshots->f_v},
                                 std::pair{&snap.f_c, &model.snapshots->f_c}}) {
            auto copy = *srcc;
            std::vector<nn::ParamRef<From>> a;
            std::vector<nn::ParamRef<To>> b;
            copy.collect(a, "");
            dst->collect(b, "");
            for (std::size_t i = 0; i < a.size(); ++i) b[i].param->value = a[i].param->value.template cast<To>();
        }
        out.snapshots = std::make_shared<const ClassifierSnapshots<To>>(std::move(snap));
    }
    return out;
}

#define CDA_MODELS_INSTANTIATE(T)                                                                   \
    template class VitEncoder<T>;                                                                   \
    template class CnnEncoder<T>;                                                                   \
    template class Classifier<T>;                                                                   \
    template struct Branch<T>;                                                                      \
    template struct DualModel<T>;                                                                   \
    template DualModel<T> init_params<T>(const ModelConfig&, std::uint64_t);                        \
    template std::shared_ptr<const ClassifierSnapshots<T>> snapshot_classifiers<T>(DualModel<T>&, bool); \
    template Row<T> classify<T>(const Classifier<T>&, const Row<T>&);                               \
    template Row<T> softmax<T>(const Row<T>&);                                                      \
    template std::string fingerprint<T>(DualModel<T>&, Group);                                      \
    template std::string fingerprint<T>(const Classifier<T>&);

CDA_MODELS_INSTANTIATE(float)
CDA_MODELS_INSTANTIATE(double)

template DualModel<double> cast_model<double, float>(const DualModel<float>&);
template DualModel<float> cast_model<float, double>(const DualModel<double>&);

#undef CDA_MODELS_INSTANTIATE

}  // namespace cda
