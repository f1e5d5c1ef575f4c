#include "leak/protobank.hpp"

#include "leak/log.hpp"
#include "leak/segmodel.hpp"

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

namespace leak::protobank {

namespace {

// Bank-level labels for a batch: micro labels pass through, macro banks fold
// them through the hierarchy first.
std::vector<std::size_t> bank_labels(const PrototypeBank& bank, const char* who,
                                     std::span<const std::uint16_t> labels,
                                     const hierarchy::Hierarchy* h) {
    std::vector<std::size_t> mapped(labels.size());
    if (bank.level == BankLevel::macro) {
        if (h == nullptr) {
            throw std::invalid_argument(std::string(who) + ": macro bank requires a hierarchy");
        }
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] >= h->class_count()) {
                throw std::invalid_argument(std::string(who) + ": label " +
                                            std::to_string(labels[i]) +
                                            " outside the hierarchy's " +
                                            std::to_string(h->class_count()) + " classes");
            }
            mapped[i] = h->macro_of(labels[i]);
        }
    } else {
        std::copy(labels.begin(), labels.end(), mapped.begin());
    }
    for (std::size_t c : mapped) {
        if (c >= bank.class_count()) {
            throw std::invalid_argument(std::string(who) + ": class " + std::to_string(c) +
                                        " outside the bank's " +
                                        std::to_string(bank.class_count()) + " rows");
        }
    }
    return mapped;
}

void check_width(const PrototypeBank& bank, const char* who, std::size_t width) {
    if (width != bank.feature_dim()) {
        throw std::invalid_argument(std::string(who) + ": feature width " +
                                    std::to_string(width) + " does not match bank width " +
                                    std::to_string(bank.feature_dim()));
    }
}

} // namespace

void PrototypeBank::validate() const {
    if (centroids.ndim() != 2 || centroids.rows() != visits.size()) {
        throw std::runtime_error("prototype bank: centroid shape " + shape_string(centroids) +
                                 " does not match " + std::to_string(visits.size()) +
                                 " visit counters");
    }
    for (std::size_t c = 0; c < visits.size(); ++c) {
        if (visits[c] != 0) {
            continue;
        }
        for (std::size_t f = 0; f < feature_dim(); ++f) {
            if (centroids.at(c, f) != 0.0) {
                throw std::runtime_error("prototype bank: class " + std::to_string(c) +
                                         " has no visits but a nonzero centroid");
            }
        }
    }
}

PrototypeBank make_bank(BankLevel level, std::size_t class_count, std::size_t feature_dim) {
    if (class_count == 0 || feature_dim == 0) {
        throw std::invalid_argument("prototype bank: class count and feature width must be positive");
    }
    PrototypeBank bank;
    bank.level = level;
    bank.centroids = Tensor({class_count, feature_dim});
    bank.visits.assign(class_count, 0);
    return bank;
}

void update(PrototypeBank& bank, const FeatureBatch& batch, const hierarchy::Hierarchy* h) {
    batch.validate();
    check_width(bank, "prototype update", batch.feature_dim());
    const std::vector<std::size_t> mapped = bank_labels(bank, "prototype update", batch.labels, h);

    const std::size_t width = bank.feature_dim();
    std::vector<std::vector<std::size_t>> rows_of(bank.class_count());
    for (std::size_t i = 0; i < mapped.size(); ++i) {
        rows_of[mapped[i]].push_back(i);
    }

    for (std::size_t c = 0; c < bank.class_count(); ++c) {
        auto& rows = rows_of[c];
        if (rows.empty()) {
            continue;
        }
        // Sum the class's rows lowest-content-first so a shuffled batch folds
        // to bit-identical centroids.
        std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
            for (std::size_t f = 0; f < width; ++f) {
                const double va = batch.features.at(a, f);
                const double vb = batch.features.at(b, f);
                if (va != vb) {
                    return va < vb;
                }
            }
            return false;
        });
        std::vector<double> sum(width, 0.0);
        for (std::size_t i : rows) {
            for (std::size_t f = 0; f < width; ++f) {
                sum[f] += batch.features.at(i, f);
            }
        }
        const double seen = static_cast<double>(bank.visits[c]);
        const double total = seen + static_cast<double>(rows.size());
        for (std::size_t f = 0; f < width; ++f) {
            bank.centroids.at(c, f) = (seen * bank.centroids.at(c, f) + sum[f]) / total;
        }
        bank.visits[c] += rows.size();
    }
}

autodiff::NodePtr proto_loss(const PrototypeBank& bank, const autodiff::NodePtr& features,
                             std::span<const std::uint16_t> labels,
                             const hierarchy::Hierarchy* h) {
    const Tensor& value = features->value;
    if (value.ndim() != 2) {
        throw std::invalid_argument("proto loss: features must be a 2-D batch, got " +
                                    shape_string(value));
    }
    check_width(bank, "proto loss", value.cols());
    if (value.rows() != labels.size()) {
        throw std::invalid_argument("proto loss: " + std::to_string(value.rows()) +
                                    " feature rows but " + std::to_string(labels.size()) +
                                    " labels");
    }
    if (labels.empty()) {
        log::warn("proto loss: empty batch contributes zero loss");
        return autodiff::constant(Tensor::scalar(0.0));
    }
    const std::vector<std::size_t> mapped = bank_labels(bank, "proto loss", labels, h);

    const std::size_t n = labels.size();
    const std::size_t width = bank.feature_dim();
    std::vector<std::size_t> class_rows(bank.class_count(), 0);
    for (std::size_t c : mapped) {
        ++class_rows[c];
    }
    const auto present =
        static_cast<double>(std::count_if(class_rows.begin(), class_rows.end(),
                                          [](std::size_t k) { return k > 0; }));

    // Row i of the target matrix is the centroid of row i's class; the weight
    // row folds the per-class mean and the mean over present classes into one
    // constant left-factor.
    Tensor targets({n, width});
    Tensor row_weights({1, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < width; ++f) {
            targets.at(i, f) = bank.centroids.at(mapped[i], f);
        }
        row_weights.at(0, i) = 1.0 / (present * static_cast<double>(class_rows[mapped[i]]));
    }

    using namespace autodiff;
    NodePtr gaps = abs(sub(features, constant(std::move(targets))));
    return sum(matmul(constant(std::move(row_weights)), gaps));
}

void write_bank_csv(const PrototypeBank& bank, std::ostream& out) {
    const auto previous = out.precision(17);
    out << "class,k";
    for (std::size_t f = 0; f < bank.feature_dim(); ++f) {
        out << ",g" << f;
    }
    out << '\n';
    for (std::size_t c = 0; c < bank.class_count(); ++c) {
        out << c << ',' << bank.visits[c];
        for (std::size_t f = 0; f < bank.feature_dim(); ++f) {
            out << ',' << bank.centroids.at(c, f);
        }
        out << '\n';
    }
    out.precision(previous);
}

segmodel::BankSnapshot to_snapshot(const PrototypeBank& bank) {
    segmodel::BankSnapshot snap;
    snap.level = static_cast<std::uint8_t>(bank.level);
    snap.visits = bank.visits;
    snap.centroids = bank.centroids;
    return snap;
}

PrototypeBank from_snapshot(const segmodel::BankSnapshot& snap) {
    if (snap.level > 1) {
        throw std::runtime_error("prototype bank: unknown level " + std::to_string(snap.level));
    }
    PrototypeBank bank;
    bank.level = static_cast<BankLevel>(snap.level);
    bank.visits = snap.visits;
    bank.centroids = snap.centroids;
    bank.validate();
    return bank;
}

} // namespace leak::protobank
