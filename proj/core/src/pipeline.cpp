#include "cda/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "cda/checkpoint.hpp"
#include "cda/error.hpp"
#include "cda/rng.hpp"

namespace cda {

namespace fs = std::filesystem;
using nlohmann::json;

void write_json(const json& j, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw FormatError(path.string() + " is not valid JSON");
    return j;
}

DatasetManifest generate_data(const ExperimentConfig& cfg, const fs::path& out_dir) {
    DomainSpec source = cfg.data.source;
    DomainSpec target = cfg.data.target;
    source.base_seed = target.base_seed = cfg.seeds.data;
    auto manifest = generate_dataset(source, target, out_dir);
    write_json({{"seed", cfg.seeds.data}, {"source", to_json(source)}, {"target", to_json(target)}},
               out_dir / "spec.json");
    return manifest;
}

TrainData make_train_data(const LoadedDataset& data, const std::vector<std::string>& target_ids) {
    const std::set<std::string> wanted(target_ids.begin(), target_ids.end());
    TrainData td;
    for (std::size_t i = 0; i < data.manifest.samples.size(); ++i) {
        const auto& s = data.manifest.samples[i];
        if (s.domain == Domain::source) {
            if (!s.label) throw DataError("source sample " + s.id + " has no label");
            td.source.push_back(&data.volumes[i]);
            td.source_labels.push_back(*s.label);
        } else if (wanted.empty() || wanted.count(s.id)) {
            td.target.push_back(&data.volumes[i]);
            td.target_ids.push_back(s.id);
        }
    }
    if (!wanted.empty() && td.target.size() != wanted.size()) {
        throw DataError("some requested target ids are not in the manifest");
    }
    return td;
}

std::vector<std::vector<std::string>> target_ids_by_class(const LoadedDataset& data) {
    std::vector<std::vector<std::string>> out(static_cast<std::size_t>(data.manifest.num_classes()));
    for (const auto& s : data.manifest.samples) {
        if (s.domain != Domain::target) continue;
        if (!s.label) throw DataError("target sample " + s.id + " has no ground-truth label");
        out.at(static_cast<std::size_t>(*s.label)).push_back(s.id);
    }
    return out;
}

template <typename T>
Evaluation evaluate(const DualModel<T>& model, const LoadedDataset& data, const std::vector<std::string>& ids,
                    InferenceBranch branch) {
    std::unordered_map<std::string, std::size_t> where;
    for (std::size_t i = 0; i < data.manifest.samples.size(); ++i) where[data.manifest.samples[i].id] = i;
    Evaluation ev;
    for (const auto& id : ids) {
        const auto it = where.find(id);
        if (it == where.end()) throw DataError("unknown sample id " + id);
        const auto& s = data.manifest.samples[it->second];
        if (!s.label) throw DataError("sample " + id + " has no ground-truth label");
        const auto p = predict(model, data.volumes[it->second], branch);
        ev.ids.push_back(id);
        ev.labels.push_back(*s.label);
        ev.predictions.push_back(p.category);
        ev.probabilities.push_back(p.probabilities);
    }
    ev.metrics = evaluate_predictions(ev.predictions, ev.probabilities, ev.labels, data.manifest.num_classes());
    return ev;
}

template Evaluation evaluate<float>(const DualModel<float>&, const LoadedDataset&, const std::vector<std::string>&,
                                    InferenceBranch);
template Evaluation evaluate<double>(const DualModel<double>&, const LoadedDataset&, const std::vector<std::string>&,
                                     InferenceBranch);

namespace {

std::vector<std::string> all_target_ids(const LoadedDataset& data) {
    std::vector<std::string> ids;
    for (const auto& s : data.manifest.samples) {
        if (s.domain == Domain::target) ids.push_back(s.id);
    }
    return ids;
}

json predictions_json(const Evaluation& ev) {
    json out = json::array();
    for (std::size_t i = 0; i < ev.ids.size(); ++i) {
        out.push_back({{"id", ev.ids[i]},
                       {"label", ev.labels[i]},
                       {"prediction", ev.predictions[i]},
                       {"probabilities", ev.probabilities[i]}});
    }
    return out;
}

ExperimentConfig with_absolute_manifest(ExperimentConfig cfg) {
    if (cfg.data.manifest.empty()) throw ConfigError("no data manifest given (--data or data.manifest)");
    fs::path p = cfg.data.manifest;
    if (fs::is_directory(p)) p /= "manifest.json";
    if (!fs::exists(p)) throw IoError("manifest not found: " + p.string());
    cfg.data.manifest = fs::weakly_canonical(p).string();
    return cfg;
}

}  // namespace

json train_run(const ExperimentConfig& cfg, const LoadedDataset& data, const fs::path& run_dir,
               std::uint64_t init_seed, const std::vector<std::string>& train_ids,
               const std::vector<std::string>& test_ids, const RunOptions& options) {
    const int K = data.manifest.num_classes();
    if (cfg.model.classifier.num_classes != K) {
        throw ConfigError("model.classifier.num_classes is " + std::to_string(cfg.model.classifier.num_classes) +
                          " but the data has " + std::to_string(K) + " classes");
    }
    fs::create_directories(run_dir);
    write_json(to_json(cfg), run_dir / "config.json");

    std::ofstream log(run_dir / "log.jsonl", std::ios::binary);
    if (!log) throw IoError("cannot write " + (run_dir / "log.jsonl").string());
    const TrainData train = make_train_data(data, train_ids);

    StageCounters counters;
    TrainContext ctx;
    ctx.opt = cfg.opt;
    ctx.plan = cfg.plan;
    ctx.focal = resolve_focal(cfg.focal, train.source_labels, K);
    ctx.weak = cfg.weak;
    ctx.strong = cfg.strong;
    ctx.seed = init_seed;
    ctx.verify_freeze = cfg.verify_freeze;
    ctx.counters = &counters;
    const std::string tag = run_dir.filename().string();
    ctx.log = [&](const json& rec) {
        log << rec.dump() << '\n';
        if (!options.quiet) std::cerr << tag << ' ' << rec.dump() << '\n';
    };

    ModelConfig model_cfg = cfg.model;
    model_cfg.input_dims = data.manifest.dims;
    std::function<void(int, DualModel<float>&)> on_stage;
    if (options.checkpoints) {
        on_stage = [&](int stage, DualModel<float>& m) {
            save_checkpoint(m, run_dir / "checkpoints" / ("stage" + std::to_string(stage)));
        };
    }
    const DualModel<float> model = run_variant<float>(cfg.variant, model_cfg, train, ctx, init_seed, on_stage);

    const auto test = test_ids.empty() ? all_target_ids(data) : test_ids;
    const InferenceBranch branch = cfg.resolved_inference();
    const InferenceBranch other = branch == InferenceBranch::cnn ? InferenceBranch::vit : InferenceBranch::cnn;
    const Evaluation ev = evaluate(model, data, test, branch);
    const Evaluation ev_other = evaluate(model, data, test, other);

    json report;
    report["variant"] = to_string(cfg.variant);
    report["inference_branch"] = to_string(branch);
    report["seeds"] = {{"data", cfg.seeds.data}, {"init", init_seed}, {"cv", cfg.seeds.cv}};
    report["snapshot_supervised"] = model.snapshots ? model.snapshots->supervised : false;
    report["counters"] = to_json(counters);
    report["n_train_target"] = train.target.size();
    report["n_test"] = test.size();
    report["metrics"] = to_json(ev.metrics);
    report["metrics_other_branch"] = {{"branch", to_string(other)}, {"metrics", to_json(ev_other.metrics)}};
    report["predictions"] = predictions_json(ev);
    // Same layout as a cross-validation report with one repeat of one fold.
    report["repeats"] = json::array({{{"repeat", 0}, {"seed", init_seed}, {"folds", json::array({{{"fold", 0}, {"metrics", to_json(ev.metrics)}}})}}});
    report["aggregate"] = aggregate({ev.metrics});
    report["std"] = "population";
    write_json(report, run_dir / "report.json");
    return report;
}

json cmd_train(const ExperimentConfig& in, const fs::path& run_dir, const RunOptions& options) {
    const ExperimentConfig cfg = with_absolute_manifest(in);
    const LoadedDataset data = load_dataset(cfg.data.manifest);
    return train_run(cfg, data, run_dir, cfg.seeds.init, {}, {}, options);
}

MetricBundle bundle_from_json(const json& j) {
    MetricBundle m;
    m.acc = j.at("acc").get<double>();
    m.sen = j.at("sen").get<double>();
    m.acc_k = j.at("acc_k").get<std::vector<double>>();
    m.sen_k = j.at("sen_k").get<std::vector<double>>();
    for (const char* key : {"auc", "spe", "f1"}) {
        if (j.contains(key) && !j.at(key).is_null()) {
            auto& slot = std::string(key) == "auc" ? m.auc : std::string(key) == "spe" ? m.spe : m.f1;
            slot = j.at(key).get<double>();
        }
    }
    if (j.contains("undefined")) m.undefined = j.at("undefined").get<std::vector<std::string>>();
    return m;
}

namespace {

std::vector<MetricBundle> fold_bundles(const json& report) {
    std::vector<MetricBundle> out;
    for (const auto& r : report.at("repeats")) {
        for (const auto& f : r.at("folds")) out.push_back(bundle_from_json(f.at("metrics")));
    }
    return out;
}

json p_values(const std::vector<MetricBundle>& a, const std::vector<MetricBundle>& b) {
    json out = json::object();
    for (const char* metric : {"acc", "sen", "auc", "spe", "f1"}) {
        const auto sa = metric_series(a, metric);
        const auto sb = metric_series(b, metric);
        if (sa.size() != sb.size() || sa.size() < 2) continue;
        out[metric] = paired_t_test(sa, sb).p;
    }
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::string report_csv(const std::vector<json>& reports) {
    std::size_t K = 0;
    for (const auto& rep : reports) {
        for (const auto& m : fold_bundles(rep)) K = std::max(K, m.acc_k.size());
    }
    std::ostringstream out;
    out << "variant,repeat,seed,fold,acc,sen,spe,f1,auc";
    for (std::size_t k = 0; k < K; ++k) out << ",acc_" << k << ",sen_" << k;
    out << '\n';
    for (const auto& rep : reports) {
        for (const auto& r : rep.at("repeats")) {
            for (const auto& f : r.at("folds")) {
                const auto m = bundle_from_json(f.at("metrics"));
                out << rep.at("variant").get<std::string>() << ',' << r.at("repeat").get<int>() << ','
                    << r.at("seed").get<std::uint64_t>() << ',' << f.at("fold").get<int>() << ',' << fmt(m.acc) << ','
                    << fmt(m.sen) << ',' << (m.spe ? fmt(*m.spe) : "") << ',' << (m.f1 ? fmt(*m.f1) : "") << ','
                    << (m.auc ? fmt(*m.auc) : "");
                for (std::size_t k = 0; k < K; ++k) {
                    out << ',' << (k < m.acc_k.size() ? fmt(m.acc_k[k]) : "") << ','
                        << (k < m.sen_k.size() ? fmt(m.sen_k[k]) : "");
                }
                out << '\n';
            }
        }
    }
    return out.str();
}

json cmd_crossval(const ExperimentConfig& in, const fs::path& out_dir, const CrossvalOptions& options) {
    const ExperimentConfig cfg = with_absolute_manifest(in);
    const LoadedDataset data = load_dataset(cfg.data.manifest);
    fs::create_directories(out_dir);
    write_json(to_json(cfg), out_dir / "config.json");

    const auto by_class = target_ids_by_class(data);
    std::vector<std::vector<FoldSplit>> splits;
    for (int r = 0; r < cfg.cv.repeats; ++r) {
        splits.push_back(stratified_kfold(by_class, cfg.cv.k, mix_seed({cfg.seeds.cv, static_cast<std::uint64_t>(r)})));
    }

    std::vector<VariantId> variants{cfg.variant};
    if (!cfg.cv.baseline.empty()) {
        const VariantId b = parse_variant(cfg.cv.baseline);
        if (b != cfg.variant) variants.push_back(b);
    }

    struct Job {
        VariantId variant;
        int repeat, fold;
    };
    std::vector<Job> jobs;
    for (VariantId v : variants)
        for (int r = 0; r < cfg.cv.repeats; ++r)
            for (int f = 0; f < cfg.cv.k; ++f) jobs.push_back({v, r, f});

    std::vector<json> results(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            const Job& job = jobs[i];
            try {
                ExperimentConfig run_cfg = cfg;
                run_cfg.variant = job.variant;
                run_cfg.cv.baseline.clear();
                const auto& split = splits[static_cast<std::size_t>(job.repeat)][static_cast<std::size_t>(job.fold)];
                const auto seed = mix_seed({cfg.seeds.init, static_cast<std::uint64_t>(job.repeat),
                                            static_cast<std::uint64_t>(job.fold)});
                const auto dir = out_dir / "runs" /
                                 (std::string(to_string(job.variant)) + "-r" + std::to_string(job.repeat) + "-f" +
                                  std::to_string(job.fold));
                results[i] = train_run(run_cfg, data, dir, seed, split.train_ids, split.test_ids, options.run);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int n_threads = std::max(1, std::min<int>(options.jobs, static_cast<int>(jobs.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    const int K = data.manifest.num_classes();
    std::map<VariantId, json> reports;
    std::size_t i = 0;
    for (VariantId v : variants) {
        json rep;
        rep["variant"] = to_string(v);
        rep["inference_branch"] = to_string(cfg.inference_branch.value_or(describe(v).inference));
        rep["k"] = cfg.cv.k;
        rep["std"] = "population";
        rep["seeds"] = {{"data", cfg.seeds.data}, {"init", cfg.seeds.init}, {"cv", cfg.seeds.cv}};
        rep["repeats"] = json::array();
        std::vector<MetricBundle> all;
        for (int r = 0; r < cfg.cv.repeats; ++r) {
            json folds = json::array();
            std::vector<int> preds, labels;
            std::vector<std::vector<double>> probs;
            for (int f = 0; f < cfg.cv.k; ++f, ++i) {
                const json& run = results[i];
                folds.push_back({{"fold", f}, {"n_test", run.at("n_test")}, {"init_seed", run.at("seeds").at("init")},
                                 {"metrics", run.at("metrics")}});
                all.push_back(bundle_from_json(run.at("metrics")));
                for (const auto& p : run.at("predictions")) {
                    preds.push_back(p.at("prediction").get<int>());
                    labels.push_back(p.at("label").get<int>());
                    probs.push_back(p.at("probabilities").get<std::vector<double>>());
                }
            }
            rep["repeats"].push_back({{"repeat", r},
                                      {"seed", mix_seed({cfg.seeds.cv, static_cast<std::uint64_t>(r)})},
                                      {"folds", folds},
                                      {"pooled", to_json(evaluate_predictions(preds, probs, labels, K))}});
        }
        rep["aggregate"] = aggregate(all);
        rep["p_values"] = json::object();
        reports[v] = rep;
    }
    if (variants.size() > 1) {
        auto& main = reports[variants[0]];
        main["p_values"][to_string(variants[1])] =
            p_values(fold_bundles(main), fold_bundles(reports[variants[1]]));
        write_json(reports[variants[1]], out_dir / "baselines" / (std::string(to_string(variants[1])) + ".json"));
    }
    write_json(reports[variants[0]], out_dir / "report.json");
    std::vector<json> all_reports;
    for (VariantId v : variants) all_reports.push_back(reports[v]);
    std::ofstream csv(out_dir / "report.csv", std::ios::binary);
    csv << report_csv(all_reports);
    if (!csv) throw IoError("failed writing report.csv");
    return reports[variants[0]];
}

json cmd_report(const std::vector<fs::path>& runs, const fs::path& out_json, const std::optional<fs::path>& out_csv,
                const std::string& baseline) {
    if (runs.empty()) throw ConfigError("report needs at least one run");
    std::vector<json> reports;
    for (const auto& p : runs) {
        if (!fs::is_directory(p)) {
            reports.push_back(read_json(p));
            continue;
        }
        reports.push_back(read_json(p / "report.json"));
        // a crossval directory carries its baseline alongside
        if (fs::is_directory(p / "baselines")) {
            std::vector<fs::path> extra;
            for (const auto& e : fs::directory_iterator(p / "baselines")) {
                if (e.path().extension() == ".json") extra.push_back(e.path());
            }
            std::sort(extra.begin(), extra.end());
            for (const auto& e : extra) reports.push_back(read_json(e));
        }
    }

    const json* base = nullptr;
    if (!baseline.empty()) {
        parse_variant(baseline);
        for (const auto& r : reports) {
            if (r.at("variant") == baseline) {
                base = &r;
                break;
            }
        }
        if (!base) throw ConfigError("baseline variant '" + baseline + "' is not among the given runs");
    }
    json table;
    table["baseline"] = baseline.empty() ? json(nullptr) : json(baseline);
    table["rows"] = json::array();
    for (const auto& r : reports) {
        const auto bundles = fold_bundles(r);
        json row = {{"variant", r.at("variant")}, {"n", bundles.size()}, {"aggregate", aggregate(bundles)}};
        if (base && &r != base) row["p_value"] = p_values(bundles, fold_bundles(*base));
        table["rows"].push_back(row);
    }
    write_json(table, out_json);
    if (out_csv) {
        std::ofstream csv(*out_csv, std::ios::binary);
        if (!csv) throw IoError("cannot write " + out_csv->string());
        csv << report_csv(reports);
    }
    return table;
}

}  // namespace cda
