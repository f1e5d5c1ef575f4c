#pragma once

#include "leak/batch.hpp"
#include "leak/hierarchy.hpp"
#include "leak/protobank.hpp"

#include <span>
#include <string>
#include <vector>

namespace leak::metrics {

// Per-class intersection-over-union plus the two standard aggregates. Classes
// that are never seen nor predicted have an undefined IoU, carried as NaN and
// excluded from the mean; the frequency-weighted variant weights by
// ground-truth share, so such classes drop out of it naturally.
struct IouSuite {
    std::vector<double> per_class;
    double miou = 0.0;
    double fwiou = 0.0;
};

IouSuite iou_suite(const hierarchy::ConfusionMatrix& cm);

// Collapse both axes of a confusion matrix through the micro-to-macro map.
hierarchy::ConfusionMatrix fold_confusion(const hierarchy::ConfusionMatrix& cm,
                                          const hierarchy::Hierarchy& h);

// Mean IoU of the folded matrix: mistakes between classes that share a macro
// class stop counting, so this scores hierarchy-level coherence.
double hiou(const hierarchy::ConfusionMatrix& cm, const hierarchy::Hierarchy& h);

// Mean cosine over ordered pairs of distinct visited, nonzero prototypes.
// Fewer than two such prototypes is an error.
double inter_proto_angle(const protobank::PrototypeBank& bank);

// Feature-space compactness: mean distance to the class mean (ccd) and to the
// class prototype (pd), both averaged within each class and then across
// classes, plus the mean gap between class means and prototypes (pcd).
// Classes without eval features are skipped. Without a bank, pd and pcd are
// NaN.
struct FeatureGeometry {
    double ccd = 0.0;
    double pd = 0.0;
    double pcd = 0.0;
};

FeatureGeometry feature_geometry(const FeatureBatch& batch,
                                 const protobank::PrototypeBank* bank);

// Spread statistics over per-class IoUs: population standard deviation, its
// square, and the Shannon entropy (natural log) of the IoUs normalized to sum
// one. An all-zero input has entropy zero by convention.
struct BalanceStats {
    double sigma = 0.0;
    double mse = 0.0;
    double entropy = 0.0;
};

BalanceStats balance_stats(std::span<const double> per_class_iou);

// Everything the evaluation pass reports for one model on one split. Fields
// whose inputs were unavailable (no hierarchy, no bank, ...) hold NaN, which
// serializes to null.
struct MetricsReport {
    double miou = 0.0;
    double fwiou = 0.0;
    double hiou = 0.0;
    std::vector<double> per_class_iou;
    double theta_gamma = 0.0;
    double ccd = 0.0;
    double pd = 0.0;
    double pcd = 0.0;
    double sigma = 0.0;
    double mse = 0.0;
    double entropy = 0.0;
    double fairness = 0.0;

    std::string to_json() const;
    static std::string csv_header();
    std::string csv_row() const;
};

MetricsReport parse_report(const std::string& json_text);

// Assemble a full report from whatever is available. The confusion matrix is
// required; features enable the geometry block, the bank enables prototype
// metrics, the hierarchy enables hiou and fairness (fairness also needs the
// pooled prediction rows). A bank with fewer than two usable prototypes
// degrades the angle to NaN with a warning instead of failing the pass.
MetricsReport compute_report(const hierarchy::ConfusionMatrix& cm,
                             const FeatureBatch* features,
                             const PredictionBatch* predictions,
                             const protobank::PrototypeBank* bank,
                             const hierarchy::Hierarchy* h);

} // namespace leak::metrics
