#include "leak/fairloss.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace leak::fairloss {

namespace {

void check_coverage(const char* who, const hierarchy::Hierarchy& h, std::size_t class_count) {
    h.validate();
    if (h.class_count() != class_count) {
        throw std::invalid_argument(std::string(who) + ": hierarchy maps " +
                                    std::to_string(h.class_count()) + " classes but the batch has " +
                                    std::to_string(class_count));
    }
}

} // namespace

AveragePredictions average_predictions(const PredictionBatch& batch) {
    batch.validate();
    if (batch.size() == 0) {
        throw std::invalid_argument("average predictions: empty batch");
    }
    const std::size_t m = batch.class_count();
    AveragePredictions avg;
    avg.pi = Tensor({m, m});
    avg.counts.assign(m, 0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const std::size_t c = batch.labels[i];
        ++avg.counts[c];
        for (std::size_t j = 0; j < m; ++j) {
            avg.pi.at(c, j) += batch.probabilities.at(i, j);
        }
    }
    for (std::size_t c = 0; c < m; ++c) {
        if (avg.counts[c] == 0) {
            continue;
        }
        for (std::size_t j = 0; j < m; ++j) {
            avg.pi.at(c, j) /= static_cast<double>(avg.counts[c]);
        }
    }
    return avg;
}

FairnessBreakdown jain_fairness(const AveragePredictions& averages, const hierarchy::Hierarchy& h,
                                bool normalize) {
    const std::size_t m = averages.class_count();
    check_coverage("fairness", h, m);

    FairnessBreakdown breakdown;
    breakdown.counts = averages.counts;
    breakdown.self_probability.assign(m, 0.0);
    for (std::size_t c = 0; c < m; ++c) {
        if (averages.present(c)) {
            breakdown.self_probability[c] = averages.pi.at(c, c);
        }
    }

    breakdown.macro_terms.assign(h.macro_count, std::numeric_limits<double>::quiet_NaN());
    breakdown.macro_present.assign(h.macro_count, 0);
    double total = 0.0;
    std::size_t populated = 0;
    const auto groups = h.members();
    for (std::size_t macro = 0; macro < groups.size(); ++macro) {
        const auto& members = groups[macro];
        double sum = 0.0;
        double sum_sq = 0.0;
        std::size_t present = 0;
        for (std::uint16_t c : members) {
            if (!averages.present(c)) {
                continue;
            }
            ++present;
            sum += breakdown.self_probability[c];
            sum_sq += breakdown.self_probability[c] * breakdown.self_probability[c];
        }
        breakdown.macro_present[macro] = present;
        if (present == 0) {
            continue;
        }
        const double term =
            sum_sq == 0.0 ? 1.0 : sum * sum / (static_cast<double>(present) * sum_sq);
        breakdown.macro_terms[macro] = term;
        total += term;
        ++populated;
    }
    breakdown.aggregate = normalize ? total / static_cast<double>(populated) : total;
    return breakdown;
}

std::string FairnessBreakdown::to_json() const {
    nlohmann::json j;
    j["terms"] = macro_terms;
    j["present"] = macro_present;
    j["aggregate"] = aggregate;
    j["self_probability"] = self_probability;
    j["counts"] = counts;
    return j.dump();
}

autodiff::NodePtr fairness_loss(const autodiff::NodePtr& probabilities,
                                std::span<const std::uint16_t> labels,
                                const hierarchy::Hierarchy& h) {
    const Tensor& value = probabilities->value;
    if (value.ndim() != 2) {
        throw std::invalid_argument("fairness loss: probabilities must be a 2-D batch, got " +
                                    shape_string(value));
    }
    if (value.rows() != labels.size()) {
        throw std::invalid_argument("fairness loss: " + std::to_string(value.rows()) +
                                    " probability rows but " + std::to_string(labels.size()) +
                                    " labels");
    }
    if (labels.empty()) {
        throw std::invalid_argument("fairness loss: empty batch");
    }
    const std::size_t m = value.cols();
    check_coverage("fairness loss", h, m);
    const std::size_t n = labels.size();

    std::vector<std::uint64_t> counts(m, 0);
    for (std::uint16_t c : labels) {
        ++counts[c];
    }
    std::vector<std::size_t> present;
    std::vector<std::size_t> slot_of(m, m);
    for (std::size_t c = 0; c < m; ++c) {
        if (counts[c] > 0) {
            slot_of[c] = present.size();
            present.push_back(c);
        }
    }

    // Averaging matrix: slot j of (selector . probabilities) is the mean
    // prediction row of present class j; the one-hot mask then keeps only the
    // self-probability column of each row.
    Tensor selector({present.size(), n});
    for (std::size_t i = 0; i < n; ++i) {
        selector.at(slot_of[labels[i]], i) = 1.0 / static_cast<double>(counts[labels[i]]);
    }
    Tensor mask({present.size(), m});
    for (std::size_t j = 0; j < present.size(); ++j) {
        mask.at(j, present[j]) = 1.0;
    }

    using namespace autodiff;
    NodePtr averaged = matmul(constant(std::move(selector)), probabilities);
    NodePtr self = matmul(mul(averaged, constant(std::move(mask))),
                          constant(Tensor::full({m, 1}, 1.0)));   // present-count x 1

    // Self-probability values, for spotting vacuously fair macros up front.
    std::vector<double> self_values(present.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        self_values[slot_of[labels[i]]] +=
            value.at(i, labels[i]) / static_cast<double>(counts[labels[i]]);
    }

    NodePtr total;
    std::size_t populated = 0;
    for (const auto& members : h.members()) {
        std::vector<std::size_t> slots;
        bool all_zero = true;
        for (std::uint16_t c : members) {
            if (counts[c] == 0) {
                continue;
            }
            slots.push_back(slot_of[c]);
            all_zero = all_zero && self_values[slot_of[c]] == 0.0;
        }
        if (slots.empty()) {
            continue;
        }
        ++populated;
        NodePtr term;
        if (all_zero) {
            term = constant(Tensor::full({1, 1}, 1.0));
        } else {
            Tensor pick({1, present.size()});
            for (std::size_t j : slots) {
                pick.at(0, j) = 1.0;
            }
            NodePtr member_pick = constant(std::move(pick));
            NodePtr sum_s = matmul(member_pick, self);
            NodePtr sum_sq = matmul(member_pick, mul(self, self));
            term = div(mul(sum_s, sum_s), scale(sum_sq, static_cast<double>(slots.size())));
        }
        total = total == nullptr ? term : add(total, term);
    }
    NodePtr aggregate = scale(total, 1.0 / static_cast<double>(populated));
    return reshape(sub(constant(Tensor::full({1, 1}, 1.0)), aggregate), {});
}

} // namespace leak::fairloss
