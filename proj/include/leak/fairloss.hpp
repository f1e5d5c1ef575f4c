#pragma once

#include "leak/autodiff.hpp"
#include "leak/batch.hpp"
#include "leak/hierarchy.hpp"
#include "leak/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace leak::fairloss {

// Mean probability row per ground-truth class over one batch. Rows of classes
// the batch never shows stay zero and are flagged by a zero count.
struct AveragePredictions {
    Tensor pi;                           // m x m; row c averages the rows labeled c
    std::vector<std::uint64_t> counts;   // rows seen per class

    std::size_t class_count() const { return counts.size(); }
    bool present(std::size_t c) const { return counts[c] > 0; }
};

AveragePredictions average_predictions(const PredictionBatch& batch);

// Jain index computed separately inside each macro class over the average
// self-probabilities of its present members, then aggregated.
struct FairnessBreakdown {
    std::vector<double> macro_terms;          // per macro; NaN when no member is present
    std::vector<std::size_t> macro_present;   // present member count per macro
    double aggregate = 0.0;                   // F
    std::vector<double> self_probability;     // diagonal of pi; 0 for absent classes
    std::vector<std::uint64_t> counts;        // rows seen per class

    std::string to_json() const;
};

// Per macro class: (sum of member self-probabilities)^2 over the present
// member count times the sum of squares. Macros with no present member are
// skipped; a macro whose present members all average zero counts as fully
// fair. With normalize on (default) the aggregate is the mean term over
// non-empty macros, otherwise their raw sum.
FairnessBreakdown jain_fairness(const AveragePredictions& averages, const hierarchy::Hierarchy& h,
                                bool normalize = true);

// One minus the normalized Jain aggregate, built as a graph over the
// probability rows so balance pressure reaches the model through the
// per-class averages. Vacuously fair macros enter as constants.
autodiff::NodePtr fairness_loss(const autodiff::NodePtr& probabilities,
                                std::span<const std::uint16_t> labels,
                                const hierarchy::Hierarchy& h);

} // namespace leak::fairloss
