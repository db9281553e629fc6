#include "cda/checkpoint.hpp"

#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "cda/error.hpp"
#include "cda/fingerprint.hpp"

namespace cda {

using nlohmann::json;

namespace {

template <typename T>
constexpr const char* dtype_name() {
    return sizeof(T) == 4 ? "float32" : "float64";
}

template <typename T>
std::vector<nn::ParamRef<T>> all_tensors(DualModel<T>& model, ClassifierSnapshots<T>* snapshots) {
    auto refs = model.parameters();
    if (snapshots) {
        snapshots->f_v.collect(refs, "snapshot.F_V.");
        snapshots->f_c.collect(refs, "snapshot.F_C.");
    }
    return refs;
}

std::span<const std::byte> bytes_of(const auto& matrix) {
    return std::as_bytes(std::span(matrix.data(), static_cast<std::size_t>(matrix.size())));
}

}  // namespace

template <typename T>
void save_checkpoint(DualModel<T>& model, const std::filesystem::path& dir) {
    static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian host");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    std::optional<ClassifierSnapshots<T>> snap;
    if (model.snapshots) snap = *model.snapshots;
    json tensors = json::array();
    for (const auto& ref : all_tensors(model, snap ? &*snap : nullptr)) {
        const auto& value = ref.param->value;
        const std::string file = ref.name + ".bin";
        std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + (dir / file).string());
        const auto bytes = bytes_of(value);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed: " + (dir / file).string());
        tensors.push_back({{"name", ref.name},
                           {"shape", {value.rows(), value.cols()}},
                           {"dtype", dtype_name<T>()},
                           {"sha256", sha256_hex(bytes)},
                           {"file", file}});
    }
    json index{{"format_version", 1}, {"tensors", tensors}};
    if (snap) index["snapshot_supervised"] = snap->supervised;
    std::ofstream out(dir / "index.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "index.json").string());
    out << index.dump(2) << '\n';
}

template <typename T>
void load_checkpoint(DualModel<T>& model, const std::filesystem::path& dir) {
    std::ifstream in(dir / "index.json");
    if (!in) throw IoError("cannot open " + (dir / "index.json").string());
    json index;
    try {
        index = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError("malformed checkpoint index: " + std::string(e.what()));
    }
    std::map<std::string, json> entries;
    for (const auto& t : index.at("tensors")) entries[t.at("name").get<std::string>()] = t;

    std::optional<ClassifierSnapshots<T>> snap;
    if (index.contains("snapshot_supervised")) {
        snap = ClassifierSnapshots<T>{model.v.classifier, model.c.classifier,
                                      index["snapshot_supervised"].get<bool>()};
    }
    for (const auto& ref : all_tensors(model, snap ? &*snap : nullptr)) {
        const auto it = entries.find(ref.name);
        if (it == entries.end()) throw FormatError("checkpoint lacks tensor " + ref.name);
        const auto& e = it->second;
        auto& value = ref.param->value;
        const auto shape = e.at("shape").template get<std::vector<Eigen::Index>>();
        if (shape.size() != 2 || shape[0] != value.rows() || shape[1] != value.cols()) {
            throw FormatError("shape mismatch for " + ref.name);
        }
        if (e.at("dtype").template get<std::string>() != dtype_name<T>()) {
            throw FormatError("dtype mismatch for " + ref.name);
        }
        const auto path = dir / e.at("file").template get<std::string>();
        std::ifstream bin(path, std::ios::binary);
        if (!bin) throw IoError("cannot open " + path.string());
        bin.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(value.size() * sizeof(T)));
        if (!bin || bin.peek() != std::char_traits<char>::eof()) {
            throw FormatError("byte count mismatch in " + path.string());
        }
        if (sha256_hex(bytes_of(value)) != e.at("sha256").template get<std::string>()) {
            throw DataError("sha256 mismatch for " + ref.name);
        }
    }
    if (snap) {
        model.snapshots = std::make_shared<const ClassifierSnapshots<T>>(std::move(*snap));
    } else {
        model.snapshots.reset();
    }
}

template void save_checkpoint<float>(DualModel<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(DualModel<double>&, const std::filesystem::path&);
template void load_checkpoint<float>(DualModel<float>&, const std::filesystem::path&);
template void load_checkpoint<double>(DualModel<double>&, const std::filesystem::path&);

}  // namespace cda
