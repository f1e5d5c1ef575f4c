#pragma once

#include "leak/batch.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace leak::hierarchy {

// Row = ground-truth class, column = predicted class, integer point counts.
struct ConfusionMatrix {
    std::size_t class_count = 0;
    std::vector<std::uint64_t> counts;   // m x m row-major

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::size_t m) : class_count(m), counts(m * m, 0) {}

    std::uint64_t& at(std::size_t truth, std::size_t predicted) {
        return counts[truth * class_count + predicted];
    }
    std::uint64_t at(std::size_t truth, std::size_t predicted) const {
        return counts[truth * class_count + predicted];
    }
    std::uint64_t row_total(std::size_t truth) const;
    std::uint64_t total() const;

    // Argmax decision per probability row; ties broken toward the lowest
    // class index so accumulation stays deterministic.
    void add(const PredictionBatch& batch);
};

ConfusionMatrix accumulate_confusion(std::span<const PredictionBatch> batches);

// Mutual-misclassification graph over micro classes: symmetric, zero
// diagonal, weights in [0,1].
struct ConfusionGraph {
    std::size_t node_count = 0;
    std::vector<double> weights;   // m x m row-major

    ConfusionGraph() = default;
    explicit ConfusionGraph(std::size_t m) : node_count(m), weights(m * m, 0.0) {}

    double& at(std::size_t i, std::size_t j) { return weights[i * node_count + j]; }
    double at(std::size_t i, std::size_t j) const { return weights[i * node_count + j]; }

    double degree(std::size_t i) const;
    double total_weight() const;   // sum over unordered pairs
    void validate() const;
};

// Row-normalize the confusion counts to conditional mistake rates, symmetrize
// with the transpose, zero the diagonal. Classes unseen in validation (empty
// rows) contribute zero-weight edges and a warning.
ConfusionGraph to_graph(const ConfusionMatrix& cm);

// Two-level class grouping: mapping[micro] = macro.
struct Hierarchy {
    std::size_t macro_count = 0;
    std::vector<std::uint16_t> mapping;        // size m
    std::vector<std::string> macro_names;      // optional; size macro_count when present

    std::size_t class_count() const { return mapping.size(); }
    std::uint16_t macro_of(std::size_t micro) const { return mapping[micro]; }
    std::vector<std::vector<std::uint16_t>> members() const;
    void validate() const;                     // total, surjective onto [0, M)

    static Hierarchy identity(std::size_t m);

    bool operator==(const Hierarchy&) const = default;
};

// K-way partition via the symmetric normalized Laplacian: embed into the K
// smallest eigenvectors, row-normalize, round with seeded k-means (20
// restarts, best inertia). Isolated nodes are split off as singleton macro
// classes before the embedding. Macro ids are relabeled so they appear in
// order of their smallest member micro id.
Hierarchy spectral_cluster(const ConfusionGraph& g, std::size_t k, std::uint64_t seed = 0x5EED);

// min over macro classes S of cut(S, rest) / min(vol(S), vol(rest)).
// A zero-volume side makes that cut count as 1; a single-cluster partition is
// defined as 1.
double conductance(const ConfusionGraph& g, const Hierarchy& h);

// Pick the macro class count for a mined hierarchy by scanning K = 2..m-1 and
// scoring each spectral partition on how much edge mass it cuts versus how
// internally cohesive its clusters stay; degenerate (flat or zero-mass)
// score curves fall back to 2 with a warning. Result always lies in [2, m-1].
std::size_t select_cluster_count(const ConfusionGraph& g, std::uint64_t seed = 0x5EED);

// JSON round trip: {"M": int, "mapping": [...], "names": [...]}.
void save_hierarchy(const Hierarchy& h, const std::filesystem::path& path);
Hierarchy load_hierarchy(const std::filesystem::path& path);

// Header row of class names, then one row of counts per ground-truth class.
void write_confusion_csv(const ConfusionMatrix& cm, std::span<const std::string> class_names,
                         std::ostream& out);

} // namespace leak::hierarchy
