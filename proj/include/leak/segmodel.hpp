#pragma once

#include "leak/autodiff.hpp"
#include "leak/batch.hpp"
#include "leak/synthdata.hpp"
#include "leak/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace leak::segmodel {

// Pointwise MLP over raw xyz coordinates: widths[0] = 3 inputs, then hidden
// ReLU layers, a ReLU feature layer of width F, and a softmax head of width m.
// Weights live in reusable autodiff leaves; per-step graphs are built on top
// of them and discarded after the update.
struct SegModel {
    std::vector<std::size_t> widths;            // {3, hidden..., F, m}
    std::vector<autodiff::NodePtr> weights;     // layer l: widths[l] x widths[l+1]
    std::vector<autodiff::NodePtr> biases;      // layer l: 1 x widths[l+1]

    std::size_t layer_count() const { return weights.size(); }
    std::size_t feature_dim() const { return widths[widths.size() - 2]; }
    std::size_t class_count() const { return widths.back(); }

    // Update order for the optimizer: W0, b0, W1, b1, ...
    std::vector<autodiff::NodePtr> parameters() const;
};

SegModel make_model(std::size_t class_count, std::size_t feature_dim = 16,
                    const std::vector<std::size_t>& hidden = {64, 64});

// He-scaled normal weights, zero biases; one derived stream per layer.
void init_weights(SegModel& model, std::uint64_t seed);

struct ForwardNodes {
    autodiff::NodePtr features;        // n x F, post-activation
    autodiff::NodePtr probabilities;   // n x m
};

// Graph-building forward pass over an n x 3 coordinate node.
ForwardNodes forward_graph(const SegModel& model, const autodiff::NodePtr& points);

// Value-only forward (no graph); bit-identical to the graph path because both
// run the same kernels in the same order.
std::pair<Tensor, Tensor> forward_values(const SegModel& model, const Tensor& points);

struct ForwardResult {
    FeatureBatch features;
    PredictionBatch predictions;
};

ForwardResult forward(const SegModel& model, const synthdata::PointCloudSample& sample);

// Random point dropout that keeps features and labels positionally aligned.
// keep_ratio in (0,1]; a result of zero points is an error; ratio 1 is the
// identity.
synthdata::PointCloudSample downsample_with_labels(const synthdata::PointCloudSample& sample,
                                                   double keep_ratio, std::uint64_t seed);

// Plain-data prototype snapshot embedded in checkpoints so a saved model can
// be evaluated without retracing training.
struct BankSnapshot {
    std::uint8_t level = 0;                // 0 = per-class, 1 = per-macro-class
    std::vector<std::uint64_t> visits;     // per row
    Tensor centroids;                      // rows x F
};

// Binary container (magic LEAKW). Version 1 carries the weights; version 2
// appends prototype banks. load accepts both.
struct Checkpoint {
    SegModel model;
    std::vector<BankSnapshot> banks;
};

void save_checkpoint(const SegModel& model, std::span<const BankSnapshot> banks,
                     const std::filesystem::path& path);
void save_checkpoint(const SegModel& model, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace leak::segmodel
