#pragma once

#include "leak/hierarchy.hpp"
#include "leak/metrics.hpp"
#include "leak/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace leak::pipeline {

// The five pipeline phases in their mandatory order. A later phase can only
// start once everything before it has completed inside the same experiment
// directory.
enum class Phase { gen_data = 0, train_baseline, cluster, train_leak, report };

// The command a user has to run to complete the phase; used verbatim in
// prerequisite error messages.
const char* phase_command(Phase phase);

// State of one experiment directory. The manifest pins where every artifact
// lives (all paths relative to the root) and which phases have completed, so
// each command can find its prerequisites without extra flags.
struct ExperimentManifest {
    std::filesystem::path root;
    bool phases[5] = {false, false, false, false, false};

    bool done(Phase phase) const { return phases[static_cast<int>(phase)]; }

    // Flags must be monotone along the phase order.
    void validate() const;

    // Marks a phase complete; every earlier phase has to be done already.
    void mark(Phase phase);

    // Throws unless the phase is done, telling the caller which command to
    // run first.
    void require(Phase phase, const std::string& command) const;

    std::filesystem::path manifest_file() const { return root / "manifest.json"; }
    std::filesystem::path data_spec() const { return root / "data_spec.json"; }
    std::filesystem::path train_split() const { return root / "train.bin"; }
    std::filesystem::path val_split() const { return root / "val.bin"; }
    std::filesystem::path baseline_config() const { return root / "baseline" / "config.json"; }
    std::filesystem::path baseline_checkpoint() const { return root / "baseline" / "model.ckpt"; }
    std::filesystem::path baseline_log() const { return root / "baseline" / "train_log.jsonl"; }
    std::filesystem::path hierarchy_file() const { return root / "hierarchy.json"; }
    std::filesystem::path confusion_file() const { return root / "confusion.csv"; }
    std::filesystem::path leak_config() const { return root / "leak" / "config.json"; }
    std::filesystem::path leak_checkpoint() const { return root / "leak" / "model.ckpt"; }
    std::filesystem::path leak_log() const { return root / "leak" / "train_log.jsonl"; }
    std::filesystem::path report_csv() const { return root / "report.csv"; }
    std::filesystem::path report_text() const { return root / "report.txt"; }
};

// A missing manifest file is a fresh experiment, not an error.
ExperimentManifest load_manifest(const std::filesystem::path& root);
void save_manifest(const ExperimentManifest& manifest);

// Command-line overrides applied on top of the config file.
struct TrainOverrides {
    std::optional<double> lambda_pm;
    std::optional<double> lambda_pM;
    std::optional<double> lambda_f;
    std::optional<std::uint64_t> seed;
};

trainer::TrainConfig apply_overrides(trainer::TrainConfig config, const TrainOverrides& overrides);

// Generate the dataset described by the spec file and split it scene-wise
// into train/val inside the experiment directory.
void run_gen_data(const std::filesystem::path& spec_file, const std::filesystem::path& root,
                  double train_fraction = 0.75);

// Train inside the experiment directory: without a hierarchy this is the
// baseline phase, with one it is the regularized phase (which insists the
// hierarchy was mined first). An empty hierarchy path selects the
// experiment's own mined hierarchy. Returns the written checkpoint's path.
std::filesystem::path run_train(const std::filesystem::path& config_file,
                                const std::filesystem::path& root,
                                const std::optional<std::filesystem::path>& hierarchy_file,
                                const TrainOverrides& overrides);

// Mine the class hierarchy from the baseline checkpoint's validation
// confusions; writes hierarchy JSON plus the confusion counts as CSV.
hierarchy::Hierarchy run_cluster(const std::filesystem::path& root,
                                 const std::optional<std::filesystem::path>& checkpoint_file,
                                 const std::optional<std::filesystem::path>& val_file,
                                 std::uint64_t seed);

// Evaluate a checkpoint on a dataset file; independent of any experiment
// directory. The hierarchy unlocks the grouped metrics. Writes the report as
// JSON when an output path is given.
metrics::MetricsReport run_eval(const std::filesystem::path& checkpoint_file,
                                const std::filesystem::path& data_file,
                                const std::optional<std::filesystem::path>& hierarchy_file,
                                const std::optional<std::filesystem::path>& out_file);

// One comparison line per scalar metric; delta is leak minus baseline.
struct ComparisonRow {
    std::string metric;
    double baseline = 0.0;
    double leak = 0.0;
    double delta = 0.0;
};

std::vector<ComparisonRow> compare_reports(const metrics::MetricsReport& baseline,
                                           const metrics::MetricsReport& leak);

// `metric,baseline,leak,delta` with full double precision (plot-ready).
std::string comparison_csv(const std::vector<ComparisonRow>& rows);

// Fixed-width table for the terminal.
std::string comparison_text(const std::vector<ComparisonRow>& rows);

// Compare the final validation metrics of the two training logs and write
// both report files. Returns the rendered text table.
std::string run_report(const std::filesystem::path& root,
                       const std::optional<std::filesystem::path>& baseline_log,
                       const std::optional<std::filesystem::path>& leak_log);

} // namespace leak::pipeline
