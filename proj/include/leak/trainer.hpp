#pragma once

#include "leak/autodiff.hpp"
#include "leak/batch.hpp"
#include "leak/hierarchy.hpp"
#include "leak/metrics.hpp"
#include "leak/protobank.hpp"
#include "leak/segmodel.hpp"
#include "leak/synthdata.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace leak::trainer {

enum class Weighting { inverse, sqrt_inverse, none };

// Everything a training run depends on besides the data itself. Two runs with
// equal configs on equal datasets produce bit-identical weights and logs
// (wall-clock fields aside).
struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_scenes = 1;          // scenes folded into one step
    double learning_rate = 0.05;
    double poly_power = 0.95;              // lr = lr0 * (1 - step/total)^power
    double momentum = 0.9;                 // 0 falls back to plain SGD
    double lambda_pm = 0.0;                // micro prototype loss weight
    double lambda_pM = 0.0;                // macro prototype loss weight
    double lambda_f = 0.0;                 // fairness loss weight
    Weighting weighting = Weighting::inverse;
    std::uint64_t seed = 0;
    std::size_t class_count = 0;           // 0: infer from the labels
    std::size_t feature_dim = 16;
    std::vector<std::size_t> hidden = {64, 64};

    void validate() const;
};

std::string to_json(const TrainConfig& config);
TrainConfig config_from_json(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
void save_config(const TrainConfig& config, const std::filesystem::path& path);

// Per-class loss weights from training-set label frequencies, rescaled to
// mean one over the classes that actually occur; absent classes get zero.
std::vector<double> class_weights(const synthdata::Dataset& train, Weighting weighting,
                                  std::size_t class_count);

// Weighted negative log-likelihood of the true class, averaged over points.
// Probabilities are clipped at 1e-12 before the log.
autodiff::NodePtr base_loss(const autodiff::NodePtr& probabilities,
                            std::span<const std::uint16_t> labels,
                            std::span<const double> weights);

// One training epoch as logged: mean step losses, the validation report, and
// the elapsed wall time. The total always recombines from the parts and the
// configured weights.
struct EpochRecord {
    std::size_t epoch = 0;
    double base = 0.0;
    double proto_micro = 0.0;
    double proto_macro = 0.0;
    double fairness = 0.0;
    double total = 0.0;
    double wall_seconds = 0.0;
    metrics::MetricsReport validation;
};

struct TrainLog {
    std::vector<EpochRecord> records;

    std::string to_jsonl() const;
    static TrainLog from_jsonl(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static TrainLog load(const std::filesystem::path& path);
};

struct TrainResult {
    segmodel::SegModel model;
    protobank::PrototypeBank micro_bank;
    std::optional<protobank::PrototypeBank> macro_bank;
    TrainLog log;
    bool aborted = false;   // training diverged; state is the last good epoch

    std::vector<segmodel::BankSnapshot> bank_snapshots() const;
};

// Supervised training with the weighted base loss only; all regularizer
// weights must be zero. Writes a checkpoint per epoch when a directory is
// given. A step that produces non-finite values aborts the run and returns
// the state saved after the last completed epoch.
TrainResult train_baseline(const TrainConfig& config, const synthdata::Dataset& train,
                           const synthdata::Dataset& val,
                           const std::filesystem::path& checkpoint_dir = {});

// The full objective: per step the features fold into the running prototype
// banks first, then the weighted sum of base, prototype and fairness losses
// backpropagates through one optimizer update. With all weights zero this
// reproduces the baseline trainer's weight trajectory bit for bit.
TrainResult train_leak(const TrainConfig& config, const synthdata::Dataset& train,
                       const synthdata::Dataset& val, const hierarchy::Hierarchy& h,
                       const std::filesystem::path& checkpoint_dir = {});

// Forward pass over a whole split: pooled confusion counts, feature rows and
// probability rows, positionally aligned with the concatenated labels.
struct EvalOutputs {
    hierarchy::ConfusionMatrix cm;
    FeatureBatch features;
    PredictionBatch predictions;
};

EvalOutputs evaluate_split(const segmodel::SegModel& model, const synthdata::Dataset& split);

// Mine the macro grouping from validation mistakes: confusion counts to a
// mutual-misclassification graph, scan for the cluster count, then partition
// spectrally. A model with no validation mistakes warns and yields the
// identity hierarchy.
hierarchy::Hierarchy extract_hierarchy(const segmodel::SegModel& model,
                                       const synthdata::Dataset& val,
                                       std::uint64_t seed = 0x5EED);

} // namespace leak::trainer
