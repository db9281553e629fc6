// cda: data generation, training, cross-validation and reporting.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cda/config.hpp"
#include "cda/error.hpp"
#include "cda/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

enum exit_code { ok = 0, failure = 1, usage = 2, data_error = 3, invariant = 4 };

fs::path runs_root() {
    const char* env = std::getenv("CDA_RUNS_DIR");
    return env && *env ? fs::path(env) : fs::path("runs");
}

struct common_args {
    std::string config;
    std::string data;
    std::string out;
    std::string variant;
    std::vector<std::string> sets;
    bool progress = false;
};

void add_common(CLI::App* cmd, common_args& a) {
    cmd->add_option("--config", a.config, "experiment config (JSON)");
    cmd->add_option("--data", a.data, "dataset directory or manifest.json");
    cmd->add_option("--out", a.out, "output directory (default: $CDA_RUNS_DIR/...)");
    cmd->add_option("--variant", a.variant, "variant id, e.g. full, s1, v2c, c2v, reversed");
    cmd->add_option("--set", a.sets, "override a config field: key.path=value")->take_all();
    cmd->add_flag("--progress", a.progress, "print training log lines to stderr");
}

cda::ExperimentConfig resolve(const common_args& a, std::vector<std::string> extra) {
    std::vector<std::string> sets;
    if (!a.data.empty()) sets.push_back("data.manifest=" + nlohmann::json(a.data).dump());
    if (!a.variant.empty()) sets.push_back("variant=" + nlohmann::json(a.variant).dump());
    sets.insert(sets.end(), extra.begin(), extra.end());
    sets.insert(sets.end(), a.sets.begin(), a.sets.end());
    std::optional<fs::path> file;
    if (!a.config.empty()) file = a.config;
    return cda::load_config(file, sets);
}

int gen_data(const std::string& spec, const std::string& out, std::optional<std::uint64_t> seed) {
    cda::ExperimentConfig cfg;
    if (!spec.empty()) {
        const auto j = cda::read_json(spec);
        for (const auto& [key, _] : j.items()) {
            if (key != "source" && key != "target" && key != "seed") {
                throw cda::ConfigError("unknown data spec key '" + key + "'");
            }
        }
        if (j.contains("source")) cfg.data.source = cda::domain_spec_from_json(j["source"], cfg.data.source);
        if (j.contains("target")) cfg.data.target = cda::domain_spec_from_json(j["target"], cfg.data.target);
        if (j.contains("seed")) cfg.seeds.data = j["seed"].get<std::uint64_t>();
    }
    if (seed) cfg.seeds.data = *seed;
    const fs::path dir = out.empty() ? runs_root() / ("data-" + std::to_string(cfg.seeds.data)) : fs::path(out);
    const auto manifest = cda::generate_data(cfg, dir);
    std::cout << dir.string() << ": " << manifest.samples.size() << " samples\n";
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Collaborative domain adaptation on synthetic 3D volumes"};
    app.require_subcommand(1);

    std::string spec, gen_out;
    std::optional<std::uint64_t> gen_seed;
    auto* gen = app.add_subcommand("gen-data", "generate a phantom dataset");
    gen->add_option("--spec", spec, "JSON with optional source/target/seed entries");
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--seed", gen_seed, "data seed");

    common_args train_args;
    auto* train = app.add_subcommand("train", "train one variant on all target samples");
    add_common(train, train_args);

    common_args cv_args;
    std::optional<int> folds, repeats;
    std::optional<std::string> baseline;
    int jobs = 1;
    auto* crossval = app.add_subcommand("crossval", "repeated stratified k-fold over the target domain");
    add_common(crossval, cv_args);
    crossval->add_option("--folds", folds, "number of folds (cv.k)");
    crossval->add_option("--repeats", repeats, "number of repeats (cv.repeats)");
    crossval->add_option("--baseline", baseline, "variant trained on the same splits for p-values (cv.baseline)");
    crossval->add_option("--jobs", jobs, "concurrent (repeat, fold) runs")->check(CLI::PositiveNumber);

    std::vector<std::string> runs;
    std::string report_out, report_csv, ttest;
    auto* report = app.add_subcommand("report", "collate run or crossval reports");
    report->add_option("--runs", runs, "run directories or report.json files")->required();
    report->add_option("--out", report_out, "output JSON")->required();
    report->add_option("--csv", report_csv, "output CSV");
    report->add_option("--ttest", ttest, "baseline variant for paired t-tests");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : usage;
    }

    try {
        if (*gen) return gen_data(spec, gen_out, gen_seed);
        if (*train) {
            const auto cfg = resolve(train_args, {});
            const fs::path dir = train_args.out.empty()
                                     ? runs_root() / (std::string(cda::to_string(cfg.variant)) + "-" +
                                                      std::to_string(cfg.seeds.init))
                                     : fs::path(train_args.out);
            const auto rep = cda::cmd_train(cfg, dir, {.checkpoints = true, .quiet = !train_args.progress});
            std::cout << dir.string() << ": acc " << rep["metrics"]["acc"] << " sen " << rep["metrics"]["sen"]
                      << '\n';
            return ok;
        }
        if (*crossval) {
            std::vector<std::string> extra;
            if (folds) extra.push_back("cv.k=" + std::to_string(*folds));
            if (repeats) extra.push_back("cv.repeats=" + std::to_string(*repeats));
            if (baseline) extra.push_back("cv.baseline=" + nlohmann::json(*baseline).dump());
            const auto cfg = resolve(cv_args, extra);
            const fs::path dir = cv_args.out.empty()
                                     ? runs_root() / ("crossval-" + std::string(cda::to_string(cfg.variant)))
                                     : fs::path(cv_args.out);
            cda::CrossvalOptions opts;
            opts.jobs = jobs;
            opts.run.quiet = !cv_args.progress;
            const auto rep = cda::cmd_crossval(cfg, dir, opts);
            std::cout << dir.string() << ": " << rep["aggregate"].dump() << '\n';
            return ok;
        }
        if (*report) {
            std::vector<fs::path> paths(runs.begin(), runs.end());
            std::optional<fs::path> csv;
            if (!report_csv.empty()) csv = report_csv;
            cda::cmd_report(paths, report_out, csv, ttest);
            return ok;
        }
    } catch (const cda::ConfigError& e) {
        std::cerr << "cda: " << e.what() << '\n';
        return usage;
    } catch (const cda::RejectedInput& e) {
        std::cerr << "cda: " << e.what() << '\n';
        return usage;
    } catch (const cda::InvariantViolation& e) {
        std::cerr << "cda: invariant violated: " << e.what() << '\n';
        return invariant;
    } catch (const cda::Error& e) {
        // data, format and I/O problems
        std::cerr << "cda: " << e.what() << '\n';
        return data_error;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "cda: malformed JSON: " << e.what() << '\n';
        return data_error;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "cda: " << e.what() << '\n';
        return data_error;
    } catch (const std::exception& e) {
        std::cerr << "cda: " << e.what() << '\n';
        return failure;
    }
    return usage;
}
