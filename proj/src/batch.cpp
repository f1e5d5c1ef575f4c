#include "leak/batch.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace leak {

namespace {

void check_labels(const char* what, const Tensor& rows, const std::vector<std::uint16_t>& labels,
                  std::size_t label_range) {
    if (rows.ndim() != 2) {
        throw std::invalid_argument(std::string(what) + ": expected a 2-D matrix, got " +
                                    shape_string(rows));
    }
    if (rows.rows() != labels.size()) {
        throw std::invalid_argument(std::string(what) + ": " + std::to_string(rows.rows()) +
                                    " rows but " + std::to_string(labels.size()) + " labels");
    }
    for (std::uint16_t l : labels) {
        if (l >= label_range) {
            throw std::invalid_argument(std::string(what) + ": label " + std::to_string(l) +
                                        " out of range " + std::to_string(label_range));
        }
    }
}

} // namespace

void FeatureBatch::validate() const {
    check_labels("feature batch", features, labels, 65536);
    if (!features.all_finite()) throw std::invalid_argument("feature batch: non-finite feature values");
}

void PredictionBatch::validate() const {
    check_labels("prediction batch", probabilities, labels, probabilities.cols());
    const std::size_t n = probabilities.rows(), m = probabilities.cols();
    for (std::size_t r = 0; r < n; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            const double p = probabilities.at(r, c);
            if (!(p >= 0.0) || !std::isfinite(p)) {
                throw std::invalid_argument("prediction batch: probability out of range at row " +
                                            std::to_string(r));
            }
            total += p;
        }
        if (std::fabs(total - 1.0) > 1e-9) {
            throw std::invalid_argument("prediction batch: row " + std::to_string(r) +
                                        " sums to " + std::to_string(total));
        }
    }
}

} // namespace leak
