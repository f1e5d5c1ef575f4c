#pragma once

#include "leak/autodiff.hpp"
#include "leak/batch.hpp"
#include "leak/hierarchy.hpp"
#include "leak/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace leak::segmodel {
struct BankSnapshot;
}

namespace leak::protobank {

enum class BankLevel : std::uint8_t { micro = 0, macro = 1 };

// Per-class running-mean feature centroids. A row with no visits stays exactly
// zero; after any sequence of updates, row c is the arithmetic mean of every
// class-c feature row presented so far.
struct PrototypeBank {
    BankLevel level = BankLevel::micro;
    Tensor centroids;                     // class-count x F
    std::vector<std::uint64_t> visits;    // per class

    std::size_t class_count() const { return visits.size(); }
    std::size_t feature_dim() const { return centroids.cols(); }

    // Shape consistency plus the zero-visits-means-zero-row invariant.
    void validate() const;
};

PrototypeBank make_bank(BankLevel level, std::size_t class_count, std::size_t feature_dim);

// Fold a batch into the running means: row c becomes
// (visits_c * old + sum of new class-c rows) / (visits_c + n_c), and visits_c
// grows by n_c. Classes absent from the batch are untouched. A macro bank
// requires a hierarchy and aggregates over mapped labels. Rows are summed per
// class in a canonical order, so any permutation of the batch produces a
// bit-identical bank.
void update(PrototypeBank& bank, const FeatureBatch& batch,
            const hierarchy::Hierarchy* h = nullptr);

// Mean L1 distance from each feature row to its class centroid, averaged
// within each class and then across the classes present in the batch. The
// centroids enter the graph as constants: gradients flow only into the
// feature rows, at sign(feature - centroid) / (present classes * class rows)
// per entry. An empty batch warns and contributes a constant zero.
autodiff::NodePtr proto_loss(const PrototypeBank& bank, const autodiff::NodePtr& features,
                             std::span<const std::uint16_t> labels,
                             const hierarchy::Hierarchy* h = nullptr);

// One header line, then one row per class: class,k,g0..g{F-1}.
void write_bank_csv(const PrototypeBank& bank, std::ostream& out);

segmodel::BankSnapshot to_snapshot(const PrototypeBank& bank);
PrototypeBank from_snapshot(const segmodel::BankSnapshot& snap);

} // namespace leak::protobank
