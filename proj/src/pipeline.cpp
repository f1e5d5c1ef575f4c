#include "leak/pipeline.hpp"

#include "leak/log.hpp"
#include "leak/protobank.hpp"
#include "leak/synthdata.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace leak::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr int kPhaseCount = 5;

// Keys inside manifest.json, in phase order.
const char* const kPhaseKeys[kPhaseCount] = {"gen-data", "train-baseline", "cluster",
                                             "train-leak", "report"};

void write_text(const fs::path& path, const std::string& text, const char* what) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error(std::string(what) + ": cannot write " + path.string());
    }
    out << text;
}

// The micro-level bank stored in a checkpoint, if any.
std::optional<protobank::PrototypeBank> micro_bank_of(const segmodel::Checkpoint& checkpoint) {
    for (const auto& snapshot : checkpoint.banks) {
        if (snapshot.level == 0) {
            return protobank::from_snapshot(snapshot);
        }
    }
    return std::nullopt;
}

void require_file(const fs::path& path, const std::string& command, Phase missing_phase) {
    if (!fs::exists(path)) {
        throw std::runtime_error(command + ": missing " + path.string() + "; run the " +
                                 phase_command(missing_phase) + " command first");
    }
}

} // namespace

const char* phase_command(Phase phase) {
    switch (phase) {
    case Phase::gen_data: return "gen-data";
    case Phase::train_baseline: return "train";
    case Phase::cluster: return "cluster";
    case Phase::train_leak: return "train --hierarchy";
    case Phase::report: return "report";
    }
    throw std::invalid_argument("manifest: unknown phase");
}

void ExperimentManifest::validate() const {
    for (int i = 1; i < kPhaseCount; ++i) {
        if (phases[i] && !phases[i - 1]) {
            throw std::runtime_error(std::string("manifest: phase '") + kPhaseKeys[i] +
                                     "' is marked done before '" + kPhaseKeys[i - 1] + "'");
        }
    }
}

void ExperimentManifest::mark(Phase phase) {
    const int index = static_cast<int>(phase);
    for (int i = 0; i < index; ++i) {
        if (!phases[i]) {
            throw std::runtime_error(std::string("manifest: phase '") + kPhaseKeys[index] +
                                     "' cannot complete before '" + kPhaseKeys[i] + "'");
        }
    }
    phases[index] = true;
    // Anything downstream was computed against the old artifacts.
    for (int i = index + 1; i < kPhaseCount; ++i) {
        phases[i] = false;
    }
}

void ExperimentManifest::require(Phase phase, const std::string& command) const {
    if (!done(phase)) {
        throw std::runtime_error(command + ": requires the " + phase_command(phase) +
                                 " command to run first");
    }
}

ExperimentManifest load_manifest(const fs::path& root) {
    ExperimentManifest manifest;
    manifest.root = root;
    std::ifstream in(manifest.manifest_file());
    if (!in) {
        return manifest;   // fresh experiment directory
    }
    try {
        const nlohmann::json j = nlohmann::json::parse(in);
        const auto& phases = j.at("phases");
        for (int i = 0; i < kPhaseCount; ++i) {
            manifest.phases[i] = phases.value(kPhaseKeys[i], false);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest: cannot parse " +
                                 manifest.manifest_file().string() + ": " + e.what());
    }
    manifest.validate();
    return manifest;
}

void save_manifest(const ExperimentManifest& manifest) {
    manifest.validate();
    nlohmann::json phases;
    for (int i = 0; i < kPhaseCount; ++i) {
        phases[kPhaseKeys[i]] = manifest.phases[i];
    }
    const nlohmann::json j = {{"phases", phases}};
    write_text(manifest.manifest_file(), j.dump(2) + "\n", "manifest");
}

trainer::TrainConfig apply_overrides(trainer::TrainConfig config, const TrainOverrides& overrides) {
    if (overrides.lambda_pm) config.lambda_pm = *overrides.lambda_pm;
    if (overrides.lambda_pM) config.lambda_pM = *overrides.lambda_pM;
    if (overrides.lambda_f) config.lambda_f = *overrides.lambda_f;
    if (overrides.seed) config.seed = *overrides.seed;
    config.validate();
    return config;
}

void run_gen_data(const fs::path& spec_file, const fs::path& root, double train_fraction) {
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0)) {
        throw std::invalid_argument("gen-data: train fraction must lie in (0, 1)");
    }
    const synthdata::DatasetSpec spec = synthdata::load_spec(spec_file);
    const synthdata::Dataset dataset = synthdata::generate(spec);
    const auto splits =
        synthdata::split(dataset, {train_fraction, 1.0 - train_fraction}, spec.seed);

    ExperimentManifest manifest = load_manifest(root);
    fs::create_directories(root);
    synthdata::save_spec(spec, manifest.data_spec());
    synthdata::save(splits[0], manifest.train_split());
    synthdata::save(splits[1], manifest.val_split());
    manifest.mark(Phase::gen_data);
    save_manifest(manifest);
}

fs::path run_train(const fs::path& config_file, const fs::path& root,
                   const std::optional<fs::path>& hierarchy_file,
                   const TrainOverrides& overrides) {
    ExperimentManifest manifest = load_manifest(root);
    manifest.require(Phase::gen_data, "train");
    require_file(manifest.train_split(), "train", Phase::gen_data);
    require_file(manifest.val_split(), "train", Phase::gen_data);

    const trainer::TrainConfig config =
        apply_overrides(trainer::load_config(config_file), overrides);
    const synthdata::Dataset train = synthdata::load(manifest.train_split());
    const synthdata::Dataset val = synthdata::load(manifest.val_split());

    trainer::TrainResult result;
    fs::path checkpoint;
    if (hierarchy_file.has_value()) {
        // Regularized phase; an empty override means the mined hierarchy.
        manifest.require(Phase::cluster, "train --hierarchy");
        const fs::path h_path =
            hierarchy_file->empty() ? manifest.hierarchy_file() : *hierarchy_file;
        require_file(h_path, "train", Phase::cluster);
        const hierarchy::Hierarchy h = hierarchy::load_hierarchy(h_path);
        checkpoint = manifest.leak_checkpoint();
        fs::create_directories(checkpoint.parent_path() / "checkpoints");
        result = trainer::train_leak(config, train, val, h,
                                     checkpoint.parent_path() / "checkpoints");
        trainer::save_config(config, manifest.leak_config());
        result.log.save(manifest.leak_log());
        manifest.mark(Phase::train_leak);
    } else {
        checkpoint = manifest.baseline_checkpoint();
        fs::create_directories(checkpoint.parent_path() / "checkpoints");
        result = trainer::train_baseline(config, train, val,
                                         checkpoint.parent_path() / "checkpoints");
        trainer::save_config(config, manifest.baseline_config());
        result.log.save(manifest.baseline_log());
        manifest.mark(Phase::train_baseline);
    }
    const auto snapshots = result.bank_snapshots();
    segmodel::save_checkpoint(result.model, snapshots, checkpoint);
    save_manifest(manifest);
    if (result.aborted) {
        log::warn("train: run diverged; the checkpoint holds the last completed epoch");
    }
    return checkpoint;
}

hierarchy::Hierarchy run_cluster(const fs::path& root,
                                 const std::optional<fs::path>& checkpoint_file,
                                 const std::optional<fs::path>& val_file, std::uint64_t seed) {
    ExperimentManifest manifest = load_manifest(root);
    const fs::path ckpt_path = checkpoint_file.value_or(manifest.baseline_checkpoint());
    if (!checkpoint_file.has_value()) {
        manifest.require(Phase::train_baseline, "cluster");
    }
    require_file(ckpt_path, "cluster", Phase::train_baseline);
    const fs::path val_path = val_file.value_or(manifest.val_split());
    require_file(val_path, "cluster", Phase::gen_data);

    const segmodel::Checkpoint checkpoint = segmodel::load_checkpoint(ckpt_path);
    const synthdata::Dataset val = synthdata::load(val_path);

    // Counts first (they go to the CSV either way), then the grouping.
    const trainer::EvalOutputs eval = trainer::evaluate_split(checkpoint.model, val);
    const synthdata::DatasetSpec spec = synthdata::load_spec(manifest.data_spec());
    std::ostringstream csv;
    hierarchy::write_confusion_csv(eval.cm, spec.catalog.names, csv);
    write_text(manifest.confusion_file(), csv.str(), "cluster");

    const hierarchy::Hierarchy h = trainer::extract_hierarchy(checkpoint.model, val, seed);
    hierarchy::save_hierarchy(h, manifest.hierarchy_file());
    manifest.mark(Phase::cluster);
    save_manifest(manifest);
    return h;
}

metrics::MetricsReport run_eval(const fs::path& checkpoint_file, const fs::path& data_file,
                                const std::optional<fs::path>& hierarchy_file,
                                const std::optional<fs::path>& out_file) {
    if (!fs::exists(checkpoint_file)) {
        throw std::runtime_error("eval: checkpoint " + checkpoint_file.string() + " not found");
    }
    if (!fs::exists(data_file)) {
        throw std::runtime_error("eval: dataset " + data_file.string() + " not found");
    }
    const segmodel::Checkpoint checkpoint = segmodel::load_checkpoint(checkpoint_file);
    const synthdata::Dataset data = synthdata::load(data_file);
    const trainer::EvalOutputs eval = trainer::evaluate_split(checkpoint.model, data);

    const auto bank = micro_bank_of(checkpoint);
    std::optional<hierarchy::Hierarchy> h;
    if (hierarchy_file.has_value()) {
        h = hierarchy::load_hierarchy(*hierarchy_file);
    }
    const metrics::MetricsReport report =
        metrics::compute_report(eval.cm, &eval.features, &eval.predictions,
                                bank.has_value() ? &*bank : nullptr,
                                h.has_value() ? &*h : nullptr);
    if (out_file.has_value()) {
        write_text(*out_file, report.to_json() + "\n", "eval");
    }
    return report;
}

std::vector<ComparisonRow> compare_reports(const metrics::MetricsReport& baseline,
                                           const metrics::MetricsReport& leak) {
    std::vector<ComparisonRow> rows;
    const auto push = [&](const char* metric, double b, double l) {
        rows.push_back({metric, b, l, l - b});
    };
    push("miou", baseline.miou, leak.miou);
    push("fwiou", baseline.fwiou, leak.fwiou);
    push("hiou", baseline.hiou, leak.hiou);
    push("theta_gamma", baseline.theta_gamma, leak.theta_gamma);
    push("ccd", baseline.ccd, leak.ccd);
    push("pd", baseline.pd, leak.pd);
    push("pcd", baseline.pcd, leak.pcd);
    push("sigma", baseline.sigma, leak.sigma);
    push("mse", baseline.mse, leak.mse);
    push("entropy", baseline.entropy, leak.entropy);
    push("fairness", baseline.fairness, leak.fairness);
    return rows;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "metric,baseline,leak,delta\n";
    for (const auto& row : rows) {
        out << row.metric << ',' << row.baseline << ',' << row.leak << ',' << row.delta << '\n';
    }
    return out.str();
}

std::string comparison_text(const std::vector<ComparisonRow>& rows) {
    std::ostringstream out;
    out << std::left << std::setw(14) << "metric" << std::right << std::setw(12) << "baseline"
        << std::setw(12) << "leak" << std::setw(12) << "delta" << '\n';
    out << std::string(50, '-') << '\n';
    out << std::fixed << std::setprecision(4);
    for (const auto& row : rows) {
        out << std::left << std::setw(14) << row.metric << std::right;
        for (double v : {row.baseline, row.leak, row.delta}) {
            if (std::isnan(v)) {
                out << std::setw(12) << "-";
            } else {
                out << std::setw(12) << v;
            }
        }
        out << '\n';
    }
    return out.str();
}

std::string run_report(const fs::path& root, const std::optional<fs::path>& baseline_log,
                       const std::optional<fs::path>& leak_log) {
    ExperimentManifest manifest = load_manifest(root);
    manifest.require(Phase::train_leak, "report");
    const fs::path base_path = baseline_log.value_or(manifest.baseline_log());
    const fs::path leak_path = leak_log.value_or(manifest.leak_log());
    require_file(base_path, "report", Phase::train_baseline);
    require_file(leak_path, "report", Phase::train_leak);

    const trainer::TrainLog base = trainer::TrainLog::load(base_path);
    const trainer::TrainLog leak = trainer::TrainLog::load(leak_path);
    if (base.records.empty() || leak.records.empty()) {
        throw std::runtime_error("report: a training log has no completed epochs");
    }

    const auto rows =
        compare_reports(base.records.back().validation, leak.records.back().validation);
    write_text(manifest.report_csv(), comparison_csv(rows), "report");
    const std::string text = comparison_text(rows);
    write_text(manifest.report_text(), text, "report");
    manifest.mark(Phase::report);
    save_manifest(manifest);
    return text;
}

} // namespace leak::pipeline
