#pragma once

#include "leak/tensor.hpp"

#include <cstdint>
#include <vector>

namespace leak {

// Per-point feature rows paired positionally with ground-truth labels.
struct FeatureBatch {
    Tensor features;                    // n x F
    std::vector<std::uint16_t> labels;  // size n

    std::size_t size() const { return labels.size(); }
    std::size_t feature_dim() const { return features.cols(); }
    void validate() const;
};

// Per-point class probability rows paired positionally with labels.
struct PredictionBatch {
    Tensor probabilities;               // n x m, rows on the simplex
    std::vector<std::uint16_t> labels;  // size n

    std::size_t size() const { return labels.size(); }
    std::size_t class_count() const { return probabilities.cols(); }
    void validate() const;
};

} // namespace leak
