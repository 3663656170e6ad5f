#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "sphereloss/io.hpp"

namespace sphereloss::experiments {

namespace fs = std::filesystem;
using io::json;

inline const std::vector<std::string> kKinds = {
    "logit-curves", "overlap-map", "flops",   "train", "margin-sweep",
    "two-stage",    "distill",     "eval",    "report"};

struct ExperimentConfig {
    std::string kind;
    json doc;  // effective document, seed override already applied
    fs::path out_dir;
    std::uint64_t seed = 0;
    std::string config_hash;
};

// Loads and validates a config document; the optional seed argument
// overrides the document's seed, and the hash covers the effective
// document.
inline ExperimentConfig load_config(const fs::path& config_path, const fs::path& out_dir,
                                    std::optional<std::uint64_t> seed_override = {}) {
    ExperimentConfig cfg;
    cfg.doc = io::read_json_file(config_path);
    if (!cfg.doc.contains("kind") || !cfg.doc["kind"].is_string())
        throw ConfigParseError("config needs a string 'kind'");
    cfg.kind = cfg.doc["kind"].get<std::string>();
    if (std::find(kKinds.begin(), kKinds.end(), cfg.kind) == kKinds.end())
        throw ConfigParseError("unknown experiment kind: " + cfg.kind);
    if (seed_override)
        cfg.doc["seed"] = *seed_override;
    if (!cfg.doc.contains("seed") || !cfg.doc["seed"].is_number_unsigned())
        throw ConfigParseError("config needs an unsigned 'seed' (or pass --seed)");
    cfg.seed = cfg.doc["seed"].get<std::uint64_t>();
    cfg.out_dir = out_dir;
    cfg.config_hash = io::hash_hex(io::fnv1a(cfg.doc.dump()));
    return cfg;
}

namespace detail {

inline MarginLossSpec parse_loss(const json& j) {
    MarginLossSpec spec;
    spec.variant = loss_variant_from_string(j.at("variant").get<std::string>());
    spec.s = j.value("s", 64.0);
    spec.m = j.value("m", 0.0);
    spec.m1 = j.value("m1", 1.0);
    spec.m2 = j.value("m2", 0.0);
    spec.m3 = j.value("m3", 0.0);
    spec.arcface_clip = j.value("arcface_clip", false);
    spec.validate();
    return spec;
}

inline json loss_to_json(const MarginLossSpec& spec) {
    json j;
    j["variant"] = to_string(spec.variant);
    j["s"] = spec.s;
    j["m"] = spec.m;
    if (spec.variant == LossVariant::CombinedMargin) {
        j["m1"] = spec.m1;
        j["m2"] = spec.m2;
        j["m3"] = spec.m3;
    }
    if (spec.variant == LossVariant::ArcFace) j["arcface_clip"] = spec.arcface_clip;
    return j;
}

inline SphereDatasetSpec parse_dataset(const json& j, std::uint64_t default_seed) {
    SphereDatasetSpec spec;
    spec.classes = j.value("classes", 50);
    spec.dim = j.value("dim", 8);
    spec.samples_per_class = j.value("samples_per_class", 20);
    spec.noise_sigma = j.value("noise_sigma", 0.1);
    spec.seed = j.value("seed", default_seed);
    spec.validate();
    return spec;
}

inline TrainConfig parse_train(const json& j, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.batch_size = j.value("batch_size", 64);
    cfg.max_steps = j.value("max_steps", 2000);
    cfg.momentum = j.value("momentum", 0.9);
    cfg.weight_decay = j.value("weight_decay", 5e-4);
    cfg.wd_mult = {{"embedding", 10.0}};
    if (j.contains("wd_mult")) {
        cfg.wd_mult.clear();
        for (const auto& [group, mult] : j.at("wd_mult").items())
            cfg.wd_mult[group] = mult.get<double>();
    }
    cfg.lr_schedule.clear();
    if (j.contains("lr_schedule"))
        for (const auto& point : j.at("lr_schedule"))
            cfg.lr_schedule.push_back({point.at(0).get<int>(), point.at(1).get<double>()});
    else
        cfg.lr_schedule = {{0, 0.1}};
    return cfg;
}

struct TrainSetup {
    SphereDataset full;
    Dataset train;             // training split
    Tensor train_teacher;      // class-center teacher rows for the split
    Dataset holdout;           // empty when no eval was requested
    PairProtocol holdout_pairs;
    int eval_every = 0;
};

// Splits the generated dataset class-wise: the last holdout_per_class
// samples of each class form the verification holdout.
inline TrainSetup prepare_training_data(const json& doc, std::uint64_t seed) {
    TrainSetup setup;
    auto dspec = parse_dataset(doc.value("dataset", json::object()), seed);
    setup.full = gen_sphere_dataset(dspec);

    int holdout_per_class = 0;
    if (doc.contains("eval")) {
        const auto& ej = doc.at("eval");
        holdout_per_class = ej.value("holdout_per_class", 4);
        setup.eval_every = ej.value("every", 100);
        if (holdout_per_class >= dspec.samples_per_class)
            throw ConfigInvalidError("holdout_per_class leaves no training data");
    }
    const int train_per_class = dspec.samples_per_class - holdout_per_class;
    const int n_train = dspec.classes * train_per_class;
    const int n_hold = dspec.classes * holdout_per_class;

    setup.train.features = Tensor({n_train, dspec.dim});
    setup.train.labels.resize(static_cast<std::size_t>(n_train));
    setup.train.num_classes = dspec.classes;
    setup.train_teacher = Tensor({n_train, dspec.dim});
    if (n_hold > 0) {
        setup.holdout.features = Tensor({n_hold, dspec.dim});
        setup.holdout.labels.resize(static_cast<std::size_t>(n_hold));
        setup.holdout.num_classes = dspec.classes;
    }
    int tr = 0, ho = 0;
    for (int c = 0; c < dspec.classes; ++c)
        for (int s = 0; s < dspec.samples_per_class; ++s) {
            const int src = c * dspec.samples_per_class + s;
            if (s < train_per_class) {
                for (int k = 0; k < dspec.dim; ++k) {
                    setup.train.features(tr, k) = setup.full.data.features(src, k);
                    setup.train_teacher(tr, k) = setup.full.centers_per_sample(src, k);
                }
                setup.train.labels[static_cast<std::size_t>(tr)] = c;
                ++tr;
            } else {
                for (int k = 0; k < dspec.dim; ++k)
                    setup.holdout.features(ho, k) = setup.full.data.features(src, k);
                setup.holdout.labels[static_cast<std::size_t>(ho)] = c;
                ++ho;
            }
        }
    if (n_hold > 0) {
        const auto& ej = doc.at("eval");
        setup.holdout_pairs =
            gen_pair_protocol(setup.holdout.labels, ej.value("n_pos", 50), ej.value("n_neg", 50),
                              ej.value("folds", 5), seed);
    }
    return setup;
}

inline double cosine(const Tensor& emb, int i, int j) {
    const int d = emb.dim(1);
    double aa = 0.0, bb = 0.0, ab = 0.0;
    for (int k = 0; k < d; ++k) {
        aa += emb(i, k) * emb(i, k);
        bb += emb(j, k) * emb(j, k);
        ab += emb(i, k) * emb(j, k);
    }
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

inline ScoredPairs score_pairs(const Tensor& emb, const PairProtocol& proto) {
    ScoredPairs scored;
    for (const auto& p : proto.pairs) {
        scored.scores.push_back(std::clamp(cosine(emb, p.index_a, p.index_b), -1.0, 1.0));
        scored.labels.push_back(p.same_identity ? 1 : 0);
        scored.folds.push_back(p.fold);
    }
    return scored;
}

struct TrainRunResult {
    TrainHistory history;
    std::vector<std::pair<int, double>> verification;  // (step, tenfold accuracy)
};

inline TrainRunResult run_training(const json& doc, const std::vector<LossStage>& stages,
                                   std::uint64_t seed, std::optional<DistillSpec> distill_spec) {
    TrainSetup setup = prepare_training_data(doc, seed);
    const auto& mj = doc.value("model", json::object());
    const int hidden = mj.value("hidden", 32);
    const int dim = setup.train.features.dim(1);
    const int embed = mj.value("embed_dim", dim);
    auto model = make_dense_model(dim, hidden, embed, seed);

    TrainConfig cfg = parse_train(doc.value("train", json::object()), seed);
    cfg.stages = stages;
    cfg.max_steps = stages.empty() ? 0 : stages.back().end;
    if (distill_spec) {
        if (embed != dim)
            throw ConfigInvalidError("distillation teacher lives in the data dimension");
        cfg.distill = DistillPlan{*distill_spec, setup.train_teacher};
    }

    TrainRunResult result;
    Trainer trainer(model, setup.train, cfg);
    StepHook hook;
    if (setup.eval_every > 0 && setup.holdout.size() > 0) {
        hook = [&](int step, nn::Sequential& m) {
            Tensor emb = m.forward(setup.holdout.features, false);
            auto scored = score_pairs(emb, setup.holdout_pairs);
            result.verification.emplace_back(step, tenfold_verification(scored).accuracy);
        };
    }
    result.history = trainer.run(hook, setup.eval_every > 0 ? setup.eval_every : 0);
    return result;
}

inline std::string verification_csv(const std::vector<std::pair<int, double>>& rows) {
    std::string out = "step,verification_accuracy\n";
    for (const auto& [step, acc] : rows)
        out += std::to_string(step) + "," + io::fmt_double(acc) + "\n";
    return out;
}

inline json train_summary(const ExperimentConfig& cfg, const MarginLossSpec& final_loss,
                          const TrainRunResult& run) {
    json j = io::history_summary_json(run.history);
    j["config"] = cfg.config_hash;
    j["seed"] = cfg.seed;
    j["variant"] = to_string(final_loss.variant);
    j["m"] = final_loss.m;
    j["s"] = final_loss.s;
    if (!run.verification.empty())
        j["verification_accuracy"] = run.verification.back().second;
    else
        j["verification_accuracy"] = nullptr;
    return j;
}

inline void write_stamped_csv(const ExperimentConfig& cfg, const std::string& name,
                              const std::string& body) {
    io::write_file(cfg.out_dir / name, io::csv_stamp(cfg.config_hash, cfg.seed) + body);
}

inline void write_stamped_json(const ExperimentConfig& cfg, const std::string& name,
                               const json& j) {
    io::write_file(cfg.out_dir / name,
                   io::json_stamp(cfg.config_hash, cfg.seed) + j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// individual experiment kinds

inline void run_logit_curves(const ExperimentConfig& cfg) {
    const int n_points = cfg.doc.value("n_points", 1001);
    if (!cfg.doc.contains("losses")) throw ConfigParseError("logit-curves needs 'losses'");
    int idx = 0;
    for (const auto& lj : cfg.doc.at("losses")) {
        const MarginLossSpec spec = parse_loss(lj);
        const auto rows = logit_curve_table(spec, n_points);
        write_stamped_csv(cfg,
                          "logit_curve_" + std::to_string(idx) + "_" + to_string(spec.variant) +
                              ".csv",
                          io::logit_curve_csv(rows));
        ++idx;
    }
}

inline void run_overlap_map(const ExperimentConfig& cfg) {
    const MarginLossSpec spec = parse_loss(cfg.doc.at("loss"));
    const int grid_n = cfg.doc.value("grid_n", 200);
    const auto map = overlap_map(spec, grid_n);
    write_stamped_csv(cfg, "overlap_grid.csv", io::overlap_map_csv(spec, grid_n));
    write_stamped_json(cfg, "overlap.json",
                       json{{"overlap_fraction", map.overlap_fraction},
                            {"overlap_count", map.overlap_count},
                            {"grid_n", map.grid_n},
                            {"variant", to_string(spec.variant)},
                            {"m", spec.m}});
}

inline void run_flops(const ExperimentConfig& cfg) {
    airface::ArchSpec arch;
    const std::string which = cfg.doc.value("arch", "default");
    if (which == "default") {
        arch = airface::build_default_arch();
    } else {
        if (!fs::exists(which)) throw ConfigInvalidError("arch file not found: " + which);
        arch = io::arch_from_json(io::read_json_file(which));
    }
    if (cfg.doc.contains("width_mult") || cfg.doc.contains("input_size"))
        arch = airface::scale_arch(arch, cfg.doc.value("width_mult", 1.0),
                                   cfg.doc.value("input_size", 112));
    const auto report = airface::count_flops_params(arch);
    write_stamped_csv(cfg, "flops.csv", io::flops_csv(report));
    write_stamped_json(cfg, "flops_totals.json", io::flops_totals_json(report));
    write_stamped_json(cfg, "arch.json", io::arch_to_json(arch));
}

inline void run_train_kind(const ExperimentConfig& cfg) {
    const MarginLossSpec spec = parse_loss(cfg.doc.at("loss"));
    const int max_steps = cfg.doc.value("train", json::object()).value("max_steps", 2000);
    std::optional<DistillSpec> distill_spec;
    if (cfg.doc.contains("distill")) {
        const auto& dj = cfg.doc.at("distill");
        distill_spec = DistillSpec{distill_mode_from_string(dj.value("mode", "cosine_gap")),
                                   dj.value("weight", 0.0)};
    }
    if (cfg.kind == "distill" && !distill_spec)
        throw ConfigParseError("distill experiment needs a 'distill' object");
    auto run = run_training(cfg.doc, {{spec, 0, max_steps}}, cfg.seed, distill_spec);
    write_stamped_csv(cfg, "history.csv", io::history_csv(run.history));
    write_stamped_json(cfg, "summary.json", train_summary(cfg, spec, run));
    if (!run.verification.empty())
        write_stamped_csv(cfg, "verification.csv", verification_csv(run.verification));
}

inline void run_two_stage(const ExperimentConfig& cfg) {
    if (!cfg.doc.contains("stages")) throw ConfigParseError("two-stage needs 'stages'");
    std::vector<LossStage> stages;
    int begin = 0;
    for (const auto& sj : cfg.doc.at("stages")) {
        const MarginLossSpec spec = parse_loss(sj.at("loss"));
        const int steps = sj.at("steps").get<int>();
        stages.push_back({spec, begin, begin + steps});
        begin += steps;
    }
    auto run = run_training(cfg.doc, stages, cfg.seed, std::nullopt);
    write_stamped_csv(cfg, "history.csv", io::history_csv(run.history));
    write_stamped_json(cfg, "summary.json", train_summary(cfg, stages.back().spec, run));
    if (!run.verification.empty())
        write_stamped_csv(cfg, "verification.csv", verification_csv(run.verification));
}

inline void emit_reports(const fs::path& dir);  // defined below

inline void run_margin_sweep(const ExperimentConfig& cfg) {
    std::vector<double> margins{0.35, 0.40, 0.45, 0.50};
    if (cfg.doc.contains("margins"))
        margins = cfg.doc.at("margins").get<std::vector<double>>();
    MarginLossSpec base = cfg.doc.contains("loss")
                              ? parse_loss(cfg.doc.at("loss"))
                              : MarginLossSpec{LossVariant::LiArcFace, 64.0, 0.4};
    const int max_steps = cfg.doc.value("train", json::object()).value("max_steps", 600);
    int idx = 0;
    for (double m : margins) {
        MarginLossSpec spec = base;
        spec.m = m;
        spec.validate();
        auto run = run_training(cfg.doc, {{spec, 0, max_steps}}, cfg.seed, std::nullopt);
        write_stamped_csv(cfg, "history_" + std::to_string(idx) + ".csv",
                          io::history_csv(run.history));
        write_stamped_json(cfg, "summary_" + std::to_string(idx) + ".json",
                           train_summary(cfg, spec, run));
        ++idx;
    }
    emit_reports(cfg.out_dir);
}

inline void run_eval(const ExperimentConfig& cfg) {
    auto dspec = parse_dataset(cfg.doc.value("dataset", json::object()), cfg.seed);
    auto ds = gen_sphere_dataset(dspec);
    const auto& pj = cfg.doc.value("pairs", json::object());
    auto proto = gen_pair_protocol(ds.data.labels, pj.value("n_pos", 100),
                                   pj.value("n_neg", 100), pj.value("folds", 10), cfg.seed);
    auto scored = score_pairs(ds.data.features, proto);

    write_stamped_csv(cfg, "dataset.csv", io::dataset_csv(ds.data));
    write_stamped_csv(cfg, "pairs.csv", io::pair_protocol_csv(proto));
    write_stamped_json(cfg, "verification.json",
                       io::verification_json(tenfold_verification(scored)));
    const double far = cfg.doc.value("far", 1e-3);
    write_stamped_json(cfg, "tar.json",
                       io::tar_json(tar_at_far(scored.scores, scored.labels, far), far));
    write_stamped_csv(cfg, "roc.csv", io::roc_csv(roc_table(scored.scores, scored.labels)));

    // rank-1 with the first sample of each class as gallery
    const auto& rj = cfg.doc.value("rank1", json::object());
    const int per_gallery = rj.value("gallery_per_class", 1);
    const int n_distract = rj.value("distractors", 1000);
    if (per_gallery >= dspec.samples_per_class)
        throw ConfigInvalidError("gallery_per_class leaves no probes");
    const int n_gallery = dspec.classes * per_gallery;
    const int n_probe = ds.data.size() - n_gallery;
    Tensor gallery({n_gallery, dspec.dim}), probes({n_probe, dspec.dim});
    std::vector<int> gallery_labels, probe_labels;
    int gi = 0, pi = 0;
    for (int row = 0; row < ds.data.size(); ++row) {
        const int within = row % dspec.samples_per_class;
        if (within < per_gallery) {
            for (int k = 0; k < dspec.dim; ++k) gallery(gi, k) = ds.data.features(row, k);
            gallery_labels.push_back(ds.data.labels[static_cast<std::size_t>(row)]);
            ++gi;
        } else {
            for (int k = 0; k < dspec.dim; ++k) probes(pi, k) = ds.data.features(row, k);
            probe_labels.push_back(ds.data.labels[static_cast<std::size_t>(row)]);
            ++pi;
        }
    }
    Tensor distractors;
    if (n_distract > 0) {
        distractors = Tensor({n_distract, dspec.dim});
        Rng drng = Rng(cfg.seed).split(stream_tag::kDistractors);
        for (int i = 0; i < n_distract; ++i) {
            Rng row = drng.split(i);
            double n2 = 0.0;
            std::vector<double> v(static_cast<std::size_t>(dspec.dim));
            for (auto& x : v) {
                x = row.next_gaussian();
                n2 += x * x;
            }
            const double n = std::sqrt(n2);
            for (int k = 0; k < dspec.dim; ++k) distractors(i, k) = v[static_cast<std::size_t>(k)] / n;
        }
    }
    const double rate =
        rank1_identification(probes, probe_labels, gallery, gallery_labels, distractors);
    write_stamped_json(cfg, "rank1.json", json{{"rank1", rate}, {"distractors", n_distract}});
}

// Merges every summary*.json in a directory into report.csv, keyed by
// (loss variant, m, s, seed) and sorted by m ascending.
inline void emit_reports(const fs::path& dir) {
    struct Row {
        std::string variant;
        double m, s;
        std::uint64_t seed;
        json summary;
    };
    std::vector<Row> rows;
    std::vector<fs::path> files;
    if (fs::is_directory(dir))
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("summary", 0) == 0 && name.size() > 5 &&
                name.substr(name.size() - 5) == ".json")
                files.push_back(entry.path());
        }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        json j = io::read_json_file(f);
        rows.push_back({j.value("variant", "?"), j.value("m", 0.0), j.value("s", 0.0),
                        j.value("seed", std::uint64_t{0}), j});
    }
    if (rows.empty()) throw NoRunsFoundError("no summary*.json files in " + dir.string());

    std::map<std::tuple<std::string, double, double, std::uint64_t>, int> seen;
    for (const auto& r : rows) {
        auto key = std::make_tuple(r.variant, r.m, r.s, r.seed);
        if (++seen[key] > 1)
            throw DuplicateRunError("duplicate run id: " + r.variant + " m=" +
                                    io::fmt_double(r.m) + " s=" + io::fmt_double(r.s) +
                                    " seed=" + std::to_string(r.seed));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.m != b.m) return a.m < b.m;
        if (a.variant != b.variant) return a.variant < b.variant;
        if (a.s != b.s) return a.s < b.s;
        return a.seed < b.seed;
    });

    std::uint64_t merged = 0xcbf29ce484222325ull;
    for (const auto& r : rows) merged ^= io::fnv1a(r.summary.value("config", ""));
    const std::uint64_t seed = rows.size() == 1 ? rows[0].seed : 0;

    std::string body =
        "variant,m,s,seed,steps,final_loss,final_train_acc,diverged,divergence_step,"
        "verification_acc\n";
    for (const auto& r : rows) {
        const json& j = r.summary;
        body += r.variant + "," + io::fmt_double(r.m) + "," + io::fmt_double(r.s) + "," +
                std::to_string(r.seed) + "," + std::to_string(j.value("steps", 0)) + "," +
                io::fmt_double(j.value("final_loss", 0.0)) + "," +
                io::fmt_double(j.value("final_train_accuracy", 0.0)) + "," +
                (j.value("diverged", false) ? "1" : "0") + ",";
        body += j.contains("divergence_step") && !j["divergence_step"].is_null()
                    ? std::to_string(j["divergence_step"].get<int>())
                    : "";
        body += ",";
        body += j.contains("verification_accuracy") && !j["verification_accuracy"].is_null()
                    ? io::fmt_double(j["verification_accuracy"].get<double>())
                    : "";
        body += "\n";
    }
    io::write_file(dir / "report.csv",
                   io::csv_stamp(io::hash_hex(merged), seed) + body);
}

}  // namespace detail

// Runs one experiment, writing its artifacts under out_dir. Throws on
// configuration or module errors; the CLI maps those to a nonzero exit.
inline void run_experiment(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    if (cfg.kind == "logit-curves")
        detail::run_logit_curves(cfg);
    else if (cfg.kind == "overlap-map")
        detail::run_overlap_map(cfg);
    else if (cfg.kind == "flops")
        detail::run_flops(cfg);
    else if (cfg.kind == "train" || cfg.kind == "distill")
        detail::run_train_kind(cfg);
    else if (cfg.kind == "two-stage")
        detail::run_two_stage(cfg);
    else if (cfg.kind == "margin-sweep")
        detail::run_margin_sweep(cfg);
    else if (cfg.kind == "eval")
        detail::run_eval(cfg);
    else if (cfg.kind == "report")
        detail::emit_reports(cfg.out_dir);
    else
        throw ConfigParseError("unknown experiment kind: " + cfg.kind);
}

inline void emit_reports(const fs::path& dir) { detail::emit_reports(dir); }

}  // namespace sphereloss::experiments
