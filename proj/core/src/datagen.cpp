#include "cda/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "cda/error.hpp"
#include "cda/rng.hpp"

namespace cda {

using nlohmann::json;

const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
    if (s == "source") return Domain::source;
    if (s == "target") return Domain::target;
    throw FormatError("unknown domain '" + s + "'");
}

void validate(const DomainSpec& spec) {
    if (spec.n_per_class.size() < 2) throw RejectedInput("a domain needs at least two classes");
    for (int n : spec.n_per_class) {
        if (n < 1) throw RejectedInput("n_per_class entries must be >= 1");
    }
    for (int d : spec.dims) {
        if (d <= 0) throw RejectedInput("dims must be positive");
    }
    const auto& s = spec.shift;
    for (double x : {s.intensity_gain, s.intensity_gamma, s.bias_field_amp, s.noise_sigma,
                     s.smooth_sigma}) {
        if (!(x >= 0.0) || !std::isfinite(x)) {
            throw RejectedInput("shift magnitudes must be finite and >= 0");
        }
    }
}

DomainSpec default_source_spec() {
    DomainSpec spec;
    spec.n_per_class = {56, 110, 18};
    spec.shift.noise_sigma = 0.05;
    spec.base_seed = 0;
    return spec;
}

DomainSpec default_target_spec() {
    DomainSpec spec;
    spec.n_per_class = {34, 66, 17};
    // contrast curve, coil-like bias field, more noise and blur; gain stays
    // off so both branches keep above-chance target accuracy after stage 1
    spec.shift.intensity_gamma = 1.6;
    spec.shift.bias_field_amp = 0.4;
    spec.shift.noise_sigma = 0.12;
    spec.shift.smooth_sigma = 1.0;
    spec.base_seed = 0;
    return spec;
}

std::size_t DatasetManifest::count(Domain d) const {
    return static_cast<std::size_t>(std::count_if(
        samples.begin(), samples.end(), [d](const Sample& s) { return s.domain == d; }));
}

int DatasetManifest::num_classes() const {
    int k = 0;
    for (const auto& s : samples) {
        if (s.label) k = std::max(k, *s.label + 1);
    }
    return k;
}

std::uint64_t sample_seed(std::uint64_t base_seed, Domain domain, int class_id, int sample_index) {
    return mix_seed({base_seed, static_cast<std::uint64_t>(domain),
                     static_cast<std::uint64_t>(class_id), static_cast<std::uint64_t>(sample_index)});
}

namespace {

struct Ellipsoid {
    std::array<double, 3> center{};
    std::array<double, 3> radii{};

    // Smoothed indicator, ~1 inside and ~0 outside with a one-voxel-wide edge.
    double weight(const std::array<double, 3>& u, double edge) const {
        double r2 = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double z = (u[a] - center[a]) / radii[a];
            r2 += z * z;
        }
        const double signed_dist = (std::sqrt(r2) - 1.0) / edge;
        return 1.0 / (1.0 + std::exp(4.0 * signed_dist));
    }
};

void gaussian_smooth(Volume& v, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        norm += kernel[i + radius];
    }
    for (auto& k : kernel) k /= norm;

    std::vector<float> tmp(v.data.size());
    const auto& d = v.dims;
    for (int axis = 0; axis < 3; ++axis) {
        for (int i0 = 0; i0 < d[0]; ++i0)
            for (int i1 = 0; i1 < d[1]; ++i1)
                for (int i2 = 0; i2 < d[2]; ++i2) {
                    std::array<int, 3> idx{i0, i1, i2};
                    double acc = 0.0;
                    for (int o = -radius; o <= radius; ++o) {
                        auto j = idx;
                        // Clamp-to-edge boundary.
                        j[axis] = std::clamp(idx[axis] + o, 0, d[axis] - 1);
                        acc += kernel[o + radius] * v.at(j[0], j[1], j[2]);
                    }
                    tmp[v.index(i0, i1, i2)] = static_cast<float>(acc);
                }
        v.data.swap(tmp);
    }
}

}  // namespace

Volume render_phantom(int class_id, int num_classes, const DomainSpec& spec,
                      std::uint64_t structure_seed, std::uint64_t noise_seed) {
    if (num_classes < 2) throw RejectedInput("num_classes must be >= 2");
    if (class_id < 0 || class_id >= num_classes) {
        throw RejectedInput("class_id " + std::to_string(class_id) + " outside [0, " +
                            std::to_string(num_classes) + ")");
    }
    for (int d : spec.dims) {
        if (d <= 0) throw RejectedInput("dims must be positive");
    }

    Rng anatomy(structure_seed);
    const double t = static_cast<double>(class_id) / (num_classes - 1);

    Ellipsoid head;
    for (int a = 0; a < 3; ++a) {
        head.center[a] = anatomy.uniform(-0.04, 0.04);
        head.radii[a] = 0.82 * (1.0 + 0.04 * anatomy.normal());
    }
    Ellipsoid core;
    const double core_scale = 0.46 * (1.0 - 0.45 * t) * (1.0 + 0.06 * anatomy.normal());
    for (int a = 0; a < 3; ++a) {
        core.center[a] = head.center[a] + anatomy.uniform(-0.05, 0.05);
        core.radii[a] = core_scale * (1.0 + 0.05 * anatomy.normal());
    }
    Ellipsoid blob;  // class-independent nuisance structure
    for (int a = 0; a < 3; ++a) {
        blob.center[a] = anatomy.uniform(-0.45, 0.45);
        blob.radii[a] = anatomy.uniform(0.08, 0.16);
    }
    const double tissue = 0.45 + 0.03 * anatomy.normal();
    const double core_level = 1.0 - 0.40 * t + 0.04 * anatomy.normal();
    const double blob_level = anatomy.uniform(-0.15, 0.15);
    std::array<std::array<double, 3>, 3> waves{};
    for (auto& w : waves) {
        for (auto& f : w) f = anatomy.uniform(1.0, 3.0);
    }
    std::array<double, 3> phases{anatomy.uniform(0, 6.283), anatomy.uniform(0, 6.283),
                                 anatomy.uniform(0, 6.283)};

    Volume v(spec.dims);
    const auto& d = spec.dims;
    const double edge = 2.0 / std::max({d[0], d[1], d[2]});
    for (int i0 = 0; i0 < d[0]; ++i0)
        for (int i1 = 0; i1 < d[1]; ++i1)
            for (int i2 = 0; i2 < d[2]; ++i2) {
                const std::array<double, 3> u{
                    d[0] > 1 ? 2.0 * i0 / (d[0] - 1) - 1.0 : 0.0,
                    d[1] > 1 ? 2.0 * i1 / (d[1] - 1) - 1.0 : 0.0,
                    d[2] > 1 ? 2.0 * i2 / (d[2] - 1) - 1.0 : 0.0};
                double texture = 0.0;
                for (int k = 0; k < 3; ++k) {
                    texture += std::cos(waves[k][0] * u[0] + waves[k][1] * u[1] +
                                        waves[k][2] * u[2] + phases[k]);
                }
                const double w_head = head.weight(u, edge);
                const double w_core = core.weight(u, edge);
                const double w_blob = blob.weight(u, edge);
                double value = w_head * (tissue + 0.03 * texture);
                value += w_core * (core_level - tissue);
                value += w_blob * w_head * blob_level;
                v.at(i0, i1, i2) = static_cast<float>(value);
            }

    const auto& s = spec.shift;
    if (s.intensity_gain > 0.0) {
        for (auto& x : v.data) x = static_cast<float>(x * s.intensity_gain);
    }
    if (s.intensity_gamma > 0.0) {
        for (auto& x : v.data) {
            x = x > 0.0f ? static_cast<float>(std::pow(static_cast<double>(x), s.intensity_gamma))
                         : 0.0f;
        }
    }
    if (s.smooth_sigma > 0.0) gaussian_smooth(v, s.smooth_sigma);

    Rng acquisition(noise_seed);
    if (s.bias_field_amp > 0.0) {
        // Smooth multiplicative field: random linear ramp plus a radial term.
        std::array<double, 3> dir{acquisition.normal(), acquisition.normal(), acquisition.normal()};
        const double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
        for (auto& c : dir) c /= n;
        const double radial = acquisition.uniform(-0.5, 0.5);
        for (int i0 = 0; i0 < d[0]; ++i0)
            for (int i1 = 0; i1 < d[1]; ++i1)
                for (int i2 = 0; i2 < d[2]; ++i2) {
                    const std::array<double, 3> u{
                        d[0] > 1 ? 2.0 * i0 / (d[0] - 1) - 1.0 : 0.0,
                        d[1] > 1 ? 2.0 * i1 / (d[1] - 1) - 1.0 : 0.0,
                        d[2] > 1 ? 2.0 * i2 / (d[2] - 1) - 1.0 : 0.0};
                    const double ramp = dir[0] * u[0] + dir[1] * u[1] + dir[2] * u[2];
                    const double r2 = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]) / 3.0;
                    const double field = 1.0 + s.bias_field_amp * (ramp + radial * r2);
                    auto& x = v.at(i0, i1, i2);
                    x = static_cast<float>(x * std::max(field, 0.0));
                }
    }
    if (s.noise_sigma > 0.0) {
        for (auto& x : v.data) x = static_cast<float>(x + s.noise_sigma * acquisition.normal());
    }
    return v;
}

Volume generate_phantom(int class_id, const DomainSpec& spec, int sample_index, Domain domain) {
    validate(spec);
    if (sample_index < 0) throw RejectedInput("sample_index must be >= 0");
    const auto seed = sample_seed(spec.base_seed, domain, class_id, sample_index);
    return render_phantom(class_id, spec.num_classes(), spec, mix_seed({seed, tag_hash("structure")}),
                          mix_seed({seed, tag_hash("noise")}));
}

DatasetManifest generate_dataset(const DomainSpec& source_spec, const DomainSpec& target_spec,
                                 const std::filesystem::path& out_dir) {
    validate(source_spec);
    validate(target_spec);
    if (source_spec.dims != target_spec.dims) {
        throw RejectedInput("source and target dims must agree");
    }
    if (source_spec.num_classes() != target_spec.num_classes()) {
        throw RejectedInput("source and target must have the same number of classes");
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "volumes", ec);
    if (ec) throw IoError("cannot create " + (out_dir / "volumes").string() + ": " + ec.message());

    DatasetManifest manifest;
    manifest.dims = source_spec.dims;
    for (const auto* spec : {&source_spec, &target_spec}) {
        const Domain domain = spec == &source_spec ? Domain::source : Domain::target;
        const char* prefix = domain == Domain::source ? "src" : "tgt";
        for (int c = 0; c < spec->num_classes(); ++c) {
            for (int i = 0; i < spec->n_per_class[c]; ++i) {
                char id[64];
                std::snprintf(id, sizeof(id), "%s-c%d-%04d", prefix, c, i);
                Sample s;
                s.id = id;
                s.volume_path = "volumes/" + s.id + ".f32raw";
                s.domain = domain;
                s.label = c;
                s.generator_seed = sample_seed(spec->base_seed, domain, c, i);
                save_volume(generate_phantom(c, *spec, i, domain), out_dir / s.volume_path);
                manifest.samples.push_back(std::move(s));
            }
        }
    }
    write_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    json samples = json::array();
    for (const auto& s : manifest.samples) {
        samples.push_back({{"id", s.id},
                           {"path", s.volume_path},
                           {"domain", to_string(s.domain)},
                           {"label", s.label ? json(*s.label) : json(nullptr)},
                           {"seed", s.generator_seed}});
    }
    const json doc{{"format_version", manifest.format_version},
                   {"dims", manifest.dims},
                   {"spacing", manifest.spacing},
                   {"samples", samples}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    DatasetManifest m;
    try {
        const json doc = json::parse(in);
        m.format_version = doc.at("format_version").get<int>();
        m.dims = doc.at("dims").get<Dims>();
        m.spacing = doc.at("spacing").get<Spacing>();
        for (const auto& js : doc.at("samples")) {
            Sample s;
            s.id = js.at("id").get<std::string>();
            s.volume_path = js.at("path").get<std::string>();
            s.domain = parse_domain(js.at("domain").get<std::string>());
            if (!js.at("label").is_null()) s.label = js.at("label").get<int>();
            s.generator_seed = js.at("seed").get<std::uint64_t>();
            m.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw FormatError("malformed manifest " + path.string() + ": " + e.what());
    }
    if (m.format_version != 1) {
        throw FormatError("unsupported manifest format_version " + std::to_string(m.format_version));
    }
    for (const auto& s : m.samples) {
        if (s.domain == Domain::source && !s.label) {
            throw FormatError("source sample '" + s.id + "' has no label");
        }
    }
    return m;
}

std::vector<std::size_t> LoadedDataset::indices(Domain d) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        if (manifest.samples[i].domain == d) out.push_back(i);
    }
    return out;
}

LoadedDataset load_dataset(const std::filesystem::path& manifest_or_dir) {
    auto manifest_path = manifest_or_dir;
    if (std::filesystem::is_directory(manifest_path)) manifest_path /= "manifest.json";
    LoadedDataset ds;
    ds.manifest = read_manifest(manifest_path);
    ds.root = manifest_path.parent_path();
    ds.volumes.reserve(ds.manifest.samples.size());
    for (const auto& s : ds.manifest.samples) {
        ds.volumes.push_back(load_volume(ds.root / s.volume_path, ds.manifest.dims, ds.manifest.spacing));
    }
    return ds;
}

double central_mean_intensity(const Volume& v) {
    std::array<int, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
        lo[a] = v.dims[a] / 4;
        hi[a] = std::max(lo[a] + 1, v.dims[a] - v.dims[a] / 4);
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (int i0 = lo[0]; i0 < hi[0]; ++i0)
        for (int i1 = lo[1]; i1 < hi[1]; ++i1)
            for (int i2 = lo[2]; i2 < hi[2]; ++i2) {
                sum += v.at(i0, i1, i2);
                ++n;
            }
    return sum / static_cast<double>(n);
}

}  // namespace cda
