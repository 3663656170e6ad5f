#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sphereloss/airface.hpp"
#include "sphereloss/datagen.hpp"
#include "sphereloss/errors.hpp"
#include "sphereloss/eval.hpp"
#include "sphereloss/margin_loss.hpp"
#include "sphereloss/train.hpp"

namespace sphereloss::io {

using nlohmann::json;

// Shortest decimal representation that round-trips the double exactly.
inline std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// Nine significant digits, used by the logit-curve and overlap tables.
inline std::string fmt_sig9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

// FNV-1a over the canonical (key-sorted) JSON dump.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Artifact files begin with a comment line carrying the config hash and
// seed: '#' for CSV, '//' for JSON (parse those with comments ignored).
inline std::string csv_stamp(const std::string& config_hash, std::uint64_t seed) {
    return "# config=" + config_hash + " seed=" + std::to_string(seed) + "\n";
}

inline std::string json_stamp(const std::string& config_hash, std::uint64_t seed) {
    return "// config=" + config_hash + " seed=" + std::to_string(seed) + "\n";
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << content;
}

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigParseError("cannot open " + path.string());
    try {
        return json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigParseError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// margin-losses tables

inline std::string logit_curve_csv(const std::vector<LogitCurvePoint>& rows) {
    std::string out = "theta,target_logit\n";
    for (const auto& r : rows)
        out += fmt_sig9(r.theta) + "," + fmt_sig9(r.target_logit) + "\n";
    return out;
}

inline std::string overlap_map_csv(const MarginLossSpec& spec, int grid_n) {
    const auto map = overlap_map(spec, grid_n);
    std::vector<char> flag(static_cast<std::size_t>(grid_n) * grid_n, 0);
    std::vector<double> theta(static_cast<std::size_t>(grid_n));
    for (int i = 0; i < grid_n; ++i) theta[i] = kPi * i / (grid_n - 1);
    for (const auto& [t1, t2] : map.overlap_cells) {
        const int i = static_cast<int>(std::llround(t1 * (grid_n - 1) / kPi));
        const int j = static_cast<int>(std::llround(t2 * (grid_n - 1) / kPi));
        flag[static_cast<std::size_t>(i) * grid_n + j] = 1;
    }
    std::string out = "theta1,theta2,in_overlap\n";
    for (int i = 0; i < grid_n; ++i)
        for (int j = 0; j < grid_n; ++j)
            out += fmt_sig9(theta[i]) + "," + fmt_sig9(theta[j]) + "," +
                   (flag[static_cast<std::size_t>(i) * grid_n + j] ? "1" : "0") + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// training history

inline std::string history_csv(const TrainHistory& hist) {
    std::string out = "step,loss,train_acc,mean_target_angle,diverged\n";
    for (const auto& r : hist.steps)
        out += std::to_string(r.step) + "," + fmt_double(r.loss) + "," + fmt_double(r.train_acc) +
               "," + fmt_double(r.mean_target_angle) + "," + (r.diverged ? "1" : "0") + "\n";
    return out;
}

inline json history_summary_json(const TrainHistory& hist) {
    json j;
    j["steps"] = hist.steps.size();
    j["final_loss"] = hist.final_loss;
    j["final_train_accuracy"] = hist.final_train_accuracy;
    j["diverged"] = hist.diverged;
    if (hist.diverged)
        j["divergence_step"] = hist.divergence_step;
    else
        j["divergence_step"] = nullptr;
    json boundaries = json::array();
    for (const auto& [step, acc] : hist.stage_boundary_accuracy)
        boundaries.push_back({{"step", step}, {"accuracy", acc}});
    j["stage_boundaries"] = boundaries;
    return j;
}

// ---------------------------------------------------------------------------
// flops report

inline std::string flops_csv(const airface::FlopsReport& report) {
    std::string out = "layer,out_h,out_w,out_c,params,macs\n";
    for (const auto& r : report.rows)
        out += r.name + "," + std::to_string(r.out_h) + "," + std::to_string(r.out_w) + "," +
               std::to_string(r.out_c) + "," + std::to_string(r.params) + "," +
               std::to_string(r.macs) + "\n";
    return out;
}

inline json flops_totals_json(const airface::FlopsReport& report) {
    return json{{"params_total", report.params_total},
                {"macs_total", report.macs_total},
                {"flops_total", report.flops_total}};
}

// ---------------------------------------------------------------------------
// ArchSpec <-> JSON; layer rows carry exactly operator,t,c,n,s (t only
// where it means something)

inline json arch_to_json(const airface::ArchSpec& arch) {
    json j;
    j["input_shape"] = {arch.input_h, arch.input_w, arch.input_c};
    j["use_cbam"] = arch.use_cbam;
    j["cbam_reduction"] = arch.cbam_reduction;
    j["cbam_gate"] = airface::to_string(arch.cbam_gate);
    j["cbam_spatial_only"] = arch.cbam_spatial_only;
    j["use_batchnorm"] = arch.use_batchnorm;
    json layers = json::array();
    for (const auto& l : arch.layers) {
        json row;
        row["operator"] = airface::to_string(l.op);
        if (l.op == airface::Operator::Bottleneck) row["t"] = l.t;
        row["c"] = l.c;
        row["n"] = l.n;
        row["s"] = l.s;
        layers.push_back(row);
    }
    j["layers"] = layers;
    return j;
}

inline airface::ArchSpec arch_from_json(const json& j) {
    airface::ArchSpec arch;
    try {
        const auto& shape = j.at("input_shape");
        arch.input_h = shape.at(0).get<int>();
        arch.input_w = shape.at(1).get<int>();
        arch.input_c = shape.at(2).get<int>();
        arch.use_cbam = j.value("use_cbam", true);
        arch.cbam_reduction = j.value("cbam_reduction", 16);
        arch.cbam_gate = airface::gate_from_string(j.value("cbam_gate", "one_plus_tanh"));
        arch.cbam_spatial_only = j.value("cbam_spatial_only", false);
        arch.use_batchnorm = j.value("use_batchnorm", false);
        for (const auto& row : j.at("layers")) {
            airface::LayerSpec l;
            l.op = airface::operator_from_string(row.at("operator").get<std::string>());
            l.t = row.value("t", 1);
            l.c = row.at("c").get<int>();
            l.n = row.value("n", 1);
            l.s = row.value("s", 1);
            arch.layers.push_back(l);
        }
    } catch (const json::exception& e) {
        throw ConfigParseError(std::string("arch json: ") + e.what());
    }
    arch.validate();
    return arch;
}

// ---------------------------------------------------------------------------
// datasets and pair protocols

inline std::string dataset_csv(const Dataset& ds) {
    std::string out = "label";
    const int d = ds.features.dim(1);
    for (int k = 0; k < d; ++k) out += ",f" + std::to_string(k);
    out += "\n";
    for (int i = 0; i < ds.size(); ++i) {
        out += std::to_string(ds.labels[static_cast<std::size_t>(i)]);
        for (int k = 0; k < d; ++k) out += "," + fmt_double(ds.features(i, k));
        out += "\n";
    }
    return out;
}

inline std::string pair_protocol_csv(const PairProtocol& proto) {
    std::string out = "fold,idx_a,idx_b,same\n";
    for (const auto& p : proto.pairs)
        out += std::to_string(p.fold) + "," + std::to_string(p.index_a) + "," +
               std::to_string(p.index_b) + "," + (p.same_identity ? "1" : "0") + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// evaluation results

inline json verification_json(const VerificationResult& r) {
    json j;
    j["accuracy"] = r.accuracy;
    j["thresholds"] = r.fold_thresholds;
    return j;
}

inline json tar_json(double tar, double far) { return json{{"tar", tar}, {"far", far}}; }

inline std::string roc_csv(const std::vector<RocPoint>& table) {
    std::string out = "threshold,far,tar\n";
    for (const auto& r : table)
        out += fmt_double(r.threshold) + "," + fmt_double(r.far) + "," + fmt_double(r.tar) + "\n";
    return out;
}

}  // namespace sphereloss::io
