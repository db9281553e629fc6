#include "cda/config.hpp"

#include <fstream>

#include "cda/error.hpp"

namespace cda {

using nlohmann::json;

InferenceBranch ExperimentConfig::resolved_inference() const {
    return inference_branch.value_or(describe(variant).inference);
}

namespace {

json dims_json(const Dims& d) { return json::array({d[0], d[1], d[2]}); }

json to_json(const AugmentPolicy& p) {
    return {{"flip_prob", p.flip_prob},
            {"affine",
             {{"max_rotation_deg", p.affine.max_rotation_deg},
              {"max_scale_delta", p.affine.max_scale_delta},
              {"max_translation_vox", p.affine.max_translation_vox}}},
            {"elastic",
             {{"control_grid", p.elastic.control_grid}, {"max_displacement_vox", p.elastic.max_displacement_vox}}}};
}

AugmentPolicy augment_from_json(const json& j, AugmentPolicy p) {
    p.flip_prob = j.at("flip_prob").get<double>();
    p.affine.max_rotation_deg = j.at("affine").at("max_rotation_deg").get<double>();
    p.affine.max_scale_delta = j.at("affine").at("max_scale_delta").get<double>();
    p.affine.max_translation_vox = j.at("affine").at("max_translation_vox").get<double>();
    p.elastic.control_grid = j.at("elastic").at("control_grid").get<int>();
    p.elastic.max_displacement_vox = j.at("elastic").at("max_displacement_vox").get<double>();
    return p;
}

Dims dims_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw ConfigError("dims must be a list of three integers");
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

// Merges `user` into `base`, refusing keys the defaults do not have. A null
// default marks an optional field that accepts any value.
void merge_strict(json& base, const json& user, const std::string& path) {
    if (!user.is_object()) throw ConfigError("config" + (path.empty() ? "" : " at " + path) + " must be an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string here = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + here + "'");
        json& slot = base[it.key()];
        if (slot.is_object() && !slot.empty()) {
            merge_strict(slot, it.value(), here);
        } else {
            slot = it.value();
        }
    }
}

std::vector<std::string> split_path(const std::string& key) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        parts.push_back(key.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (const auto& p : parts) {
        if (p.empty()) throw ConfigError("malformed override key '" + key + "'");
    }
    return parts;
}

}  // namespace

json to_json(const DomainSpec& spec) {
    return {{"n_per_class", spec.n_per_class},
            {"dims", dims_json(spec.dims)},
            {"shift",
             {{"intensity_gain", spec.shift.intensity_gain},
              {"intensity_gamma", spec.shift.intensity_gamma},
              {"bias_field_amp", spec.shift.bias_field_amp},
              {"noise_sigma", spec.shift.noise_sigma},
              {"smooth_sigma", spec.shift.smooth_sigma}}}};
}

DomainSpec domain_spec_from_json(const json& j, const DomainSpec& defaults) {
    json base = to_json(defaults);
    merge_strict(base, j, "");
    DomainSpec s = defaults;
    s.n_per_class = base.at("n_per_class").get<std::vector<int>>();
    s.dims = dims_from_json(base.at("dims"));
    const auto& sh = base.at("shift");
    s.shift.intensity_gain = sh.at("intensity_gain").get<double>();
    s.shift.intensity_gamma = sh.at("intensity_gamma").get<double>();
    s.shift.bias_field_amp = sh.at("bias_field_amp").get<double>();
    s.shift.noise_sigma = sh.at("noise_sigma").get<double>();
    s.shift.smooth_sigma = sh.at("smooth_sigma").get<double>();
    return s;
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["data"] = {{"manifest", c.data.manifest}, {"source", to_json(c.data.source)}, {"target", to_json(c.data.target)}};
    j["model"] = {{"vit",
                   {{"patch_size", c.model.vit.patch_size},
                    {"embed_dim", c.model.vit.embed_dim},
                    {"depth", c.model.vit.depth},
                    {"heads", c.model.vit.heads},
                    {"mlp_ratio", c.model.vit.mlp_ratio}}},
                  {"cnn",
                   {{"stage_channels", c.model.cnn.stage_channels},
                    {"blocks_per_stage", c.model.cnn.blocks_per_stage},
                    {"embed_dim", c.model.cnn.embed_dim}}},
                  {"classifier",
                   {{"hidden_dim", c.model.classifier.hidden_dim}, {"num_classes", c.model.classifier.num_classes}}}};
    j["plan"] = {{"epochs_stage1", c.plan.epochs_stage1}, {"epochs_stage2", c.plan.epochs_stage2},
                 {"epochs_stage3", c.plan.epochs_stage3}, {"tau", c.plan.tau},
                 {"theta1", c.plan.theta1},               {"theta2", c.plan.theta2}};
    j["opt"] = {{"momentum", c.opt.momentum},
                {"weight_decay", c.opt.weight_decay},
                {"lr_vit", c.opt.lr_vit},
                {"lr_cnn", c.opt.lr_cnn},
                {"lr_classifiers", c.opt.lr_classifiers ? json(*c.opt.lr_classifiers) : json(nullptr)},
                {"batch_size", c.opt.batch_size}};
    j["focal"] = {{"gamma", c.focal.gamma},
                  {"alpha", c.focal.alpha_mode == "explicit" ? json(c.focal.alpha) : json(c.focal.alpha_mode)}};
    j["augment"] = {{"weak", to_json(c.weak)}, {"strong", to_json(c.strong)}};
    j["variant"] = to_string(c.variant);
    j["inference_branch"] = c.inference_branch ? json(to_string(*c.inference_branch)) : json(nullptr);
    j["cv"] = {{"k", c.cv.k}, {"repeats", c.cv.repeats}, {"baseline", c.cv.baseline}};
    j["seeds"] = {{"data", c.seeds.data}, {"init", c.seeds.init}, {"cv", c.seeds.cv}};
    j["verify_freeze"] = c.verify_freeze;
    return j;
}

ExperimentConfig config_from_json(const json& user) {
    const ExperimentConfig defaults;
    json j = to_json(defaults);
    merge_strict(j, user, "");
    ExperimentConfig c;
    try {
        c.data.manifest = j.at("data").at("manifest").get<std::string>();
        c.data.source = domain_spec_from_json(j.at("data").at("source"), defaults.data.source);
        c.data.target = domain_spec_from_json(j.at("data").at("target"), defaults.data.target);

        const auto& m = j.at("model");
        c.model.vit.patch_size = m.at("vit").at("patch_size").get<int>();
        c.model.vit.embed_dim = m.at("vit").at("embed_dim").get<int>();
        c.model.vit.depth = m.at("vit").at("depth").get<int>();
        c.model.vit.heads = m.at("vit").at("heads").get<int>();
        c.model.vit.mlp_ratio = m.at("vit").at("mlp_ratio").get<double>();
        c.model.cnn.stage_channels = m.at("cnn").at("stage_channels").get<std::vector<int>>();
        c.model.cnn.blocks_per_stage = m.at("cnn").at("blocks_per_stage").get<int>();
        c.model.cnn.embed_dim = m.at("cnn").at("embed_dim").get<int>();
        c.model.classifier.hidden_dim = m.at("classifier").at("hidden_dim").get<int>();
        c.model.classifier.num_classes = m.at("classifier").at("num_classes").get<int>();

        const auto& p = j.at("plan");
        c.plan.epochs_stage1 = p.at("epochs_stage1").get<int>();
        c.plan.epochs_stage2 = p.at("epochs_stage2").get<int>();
        c.plan.epochs_stage3 = p.at("epochs_stage3").get<int>();
        c.plan.tau = p.at("tau").get<double>();
        c.plan.theta1 = p.at("theta1").get<double>();
        c.plan.theta2 = p.at("theta2").get<double>();

        const auto& o = j.at("opt");
        c.opt.momentum = o.at("momentum").get<double>();
        c.opt.weight_decay = o.at("weight_decay").get<double>();
        c.opt.lr_vit = o.at("lr_vit").get<double>();
        c.opt.lr_cnn = o.at("lr_cnn").get<double>();
        if (!o.at("lr_classifiers").is_null()) c.opt.lr_classifiers = o.at("lr_classifiers").get<double>();
        c.opt.batch_size = o.at("batch_size").get<int>();

        c.focal.gamma = j.at("focal").at("gamma").get<double>();
        const auto& alpha = j.at("focal").at("alpha");
        if (alpha.is_array()) {
            c.focal.alpha_mode = "explicit";
            c.focal.alpha = alpha.get<std::vector<double>>();
        } else {
            c.focal.alpha_mode = alpha.get<std::string>();
            if (c.focal.alpha_mode != "inverse_frequency" && c.focal.alpha_mode != "uniform") {
                throw ConfigError("focal.alpha must be \"inverse_frequency\", \"uniform\" or a list");
            }
        }

        c.weak = augment_from_json(j.at("augment").at("weak"), defaults.weak);
        c.strong = augment_from_json(j.at("augment").at("strong"), defaults.strong);
        c.variant = parse_variant(j.at("variant").get<std::string>());
        if (!j.at("inference_branch").is_null()) {
            c.inference_branch = parse_inference_branch(j.at("inference_branch").get<std::string>());
        }
        c.cv.k = j.at("cv").at("k").get<int>();
        c.cv.repeats = j.at("cv").at("repeats").get<int>();
        c.cv.baseline = j.at("cv").at("baseline").get<std::string>();
        if (!c.cv.baseline.empty()) parse_variant(c.cv.baseline);
        c.seeds.data = j.at("seeds").at("data").get<std::uint64_t>();
        c.seeds.init = j.at("seeds").at("init").get<std::uint64_t>();
        c.seeds.cv = j.at("seeds").at("cv").get<std::uint64_t>();
        c.verify_freeze = j.at("verify_freeze").get<bool>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    if (c.cv.k < 2) throw ConfigError("cv.k must be >= 2");
    if (c.cv.repeats < 1) throw ConfigError("cv.repeats must be >= 1");
    validate(c.opt);
    validate(c.plan, c.model.classifier.num_classes);
    validate(c.weak);
    validate(c.strong);
    validate(c.data.source);
    validate(c.data.target);
    return c;
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
    const auto parts = split_path(assignment.substr(0, eq));
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    const json defaults = to_json(ExperimentConfig{});
    const json* schema = &defaults;
    json* node = &j;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& key = parts[i];
        if (!schema->is_object() || !schema->contains(key)) {
            throw ConfigError("unknown config key '" + assignment.substr(0, eq) + "'");
        }
        schema = &(*schema)[key];
        if (!node->is_object()) *node = json::object();
        node = &(*node)[key];
    }
    *node = std::move(value);
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides) {
    json j = json::object();
    if (file) {
        std::ifstream in(*file);
        if (!in) throw IoError("cannot open config " + file->string());
        j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw ConfigError("config " + file->string() + " is not valid JSON");
    }
    for (const auto& o : overrides) apply_override(j, o);
    return config_from_json(j);
}

FocalParams resolve_focal(const FocalConfig& cfg, const std::vector<int>& source_labels, int num_classes) {
    if (cfg.alpha_mode == "inverse_frequency") {
        return FocalParams::inverse_frequency(source_labels, num_classes, cfg.gamma);
    }
    if (cfg.alpha_mode == "uniform") return {cfg.gamma, {}};
    if (static_cast<int>(cfg.alpha.size()) != num_classes) {
        throw ConfigError("focal.alpha needs one weight per class");
    }
    return {cfg.gamma, cfg.alpha};
}

}  // namespace cda
