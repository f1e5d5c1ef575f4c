#include "leak/metrics.hpp"

#include "leak/fairloss.hpp"
#include "leak/log.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace leak::metrics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t column_total(const hierarchy::ConfusionMatrix& cm, std::size_t predicted) {
    std::uint64_t total = 0;
    for (std::size_t truth = 0; truth < cm.class_count; ++truth) {
        total += cm.at(truth, predicted);
    }
    return total;
}

std::vector<std::size_t> usable_prototypes(const protobank::PrototypeBank& bank) {
    std::vector<std::size_t> usable;
    for (std::size_t c = 0; c < bank.class_count(); ++c) {
        if (bank.visits[c] == 0) {
            continue;
        }
        double norm_sq = 0.0;
        for (std::size_t f = 0; f < bank.feature_dim(); ++f) {
            norm_sq += bank.centroids.at(c, f) * bank.centroids.at(c, f);
        }
        if (norm_sq > 0.0) {
            usable.push_back(c);
        }
    }
    return usable;
}

double euclidean(std::span<const double> a, std::span<const double> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double gap = a[i] - b[i];
        sum += gap * gap;
    }
    return std::sqrt(sum);
}

} // namespace

IouSuite iou_suite(const hierarchy::ConfusionMatrix& cm) {
    if (cm.class_count == 0 || cm.total() == 0) {
        throw std::invalid_argument("iou: empty confusion matrix");
    }
    const double total = static_cast<double>(cm.total());

    IouSuite suite;
    suite.per_class.assign(cm.class_count, kNaN);
    double iou_sum = 0.0;
    std::size_t iou_count = 0;
    double weighted = 0.0;
    for (std::size_t c = 0; c < cm.class_count; ++c) {
        const std::uint64_t tp = cm.at(c, c);
        const std::uint64_t fn = cm.row_total(c) - tp;
        const std::uint64_t fp = column_total(cm, c) - tp;
        if (tp + fn + fp == 0) {
            continue;   // never seen nor predicted
        }
        const double iou = static_cast<double>(tp) / static_cast<double>(tp + fn + fp);
        suite.per_class[c] = iou;
        iou_sum += iou;
        ++iou_count;
        weighted += static_cast<double>(cm.row_total(c)) / total * iou;
    }
    suite.miou = iou_sum / static_cast<double>(iou_count);
    suite.fwiou = weighted;
    return suite;
}

hierarchy::ConfusionMatrix fold_confusion(const hierarchy::ConfusionMatrix& cm,
                                          const hierarchy::Hierarchy& h) {
    h.validate();
    if (h.class_count() != cm.class_count) {
        throw std::invalid_argument("confusion fold: hierarchy maps " +
                                    std::to_string(h.class_count()) +
                                    " classes but the matrix has " +
                                    std::to_string(cm.class_count));
    }
    hierarchy::ConfusionMatrix folded(h.macro_count);
    for (std::size_t truth = 0; truth < cm.class_count; ++truth) {
        for (std::size_t predicted = 0; predicted < cm.class_count; ++predicted) {
            folded.at(h.macro_of(truth), h.macro_of(predicted)) += cm.at(truth, predicted);
        }
    }
    return folded;
}

double hiou(const hierarchy::ConfusionMatrix& cm, const hierarchy::Hierarchy& h) {
    return iou_suite(fold_confusion(cm, h)).miou;
}

double inter_proto_angle(const protobank::PrototypeBank& bank) {
    const auto usable = usable_prototypes(bank);
    if (usable.size() < 2) {
        throw std::runtime_error("inter-proto angle: needs at least two visited nonzero "
                                 "prototypes, found " +
                                 std::to_string(usable.size()));
    }
    const std::size_t width = bank.feature_dim();
    std::vector<double> norms(usable.size());
    for (std::size_t a = 0; a < usable.size(); ++a) {
        double sum = 0.0;
        for (std::size_t f = 0; f < width; ++f) {
            sum += bank.centroids.at(usable[a], f) * bank.centroids.at(usable[a], f);
        }
        norms[a] = std::sqrt(sum);
    }
    double cosine_sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < usable.size(); ++a) {
        for (std::size_t b = 0; b < usable.size(); ++b) {
            if (a == b) {
                continue;
            }
            double dot = 0.0;
            for (std::size_t f = 0; f < width; ++f) {
                dot += bank.centroids.at(usable[a], f) * bank.centroids.at(usable[b], f);
            }
            cosine_sum += dot / (norms[a] * norms[b]);
            ++pairs;
        }
    }
    return cosine_sum / static_cast<double>(pairs);
}

FeatureGeometry feature_geometry(const FeatureBatch& batch,
                                 const protobank::PrototypeBank* bank) {
    batch.validate();
    if (batch.size() == 0) {
        throw std::invalid_argument("feature geometry: empty batch");
    }
    const std::size_t width = batch.feature_dim();
    if (bank != nullptr && bank->feature_dim() != width) {
        throw std::invalid_argument("feature geometry: feature width " + std::to_string(width) +
                                    " does not match bank width " +
                                    std::to_string(bank->feature_dim()));
    }

    std::size_t classes = 0;
    for (std::uint16_t label : batch.labels) {
        classes = std::max<std::size_t>(classes, label + 1);
    }
    if (bank != nullptr) {
        if (classes > bank->class_count()) {
            throw std::invalid_argument("feature geometry: label " + std::to_string(classes - 1) +
                                        " outside the bank's " +
                                        std::to_string(bank->class_count()) + " rows");
        }
        classes = bank->class_count();
    }

    std::vector<std::vector<std::size_t>> rows_of(classes);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        rows_of[batch.labels[i]].push_back(i);
    }

    FeatureGeometry geometry;
    geometry.pd = bank != nullptr ? 0.0 : kNaN;
    geometry.pcd = bank != nullptr ? 0.0 : kNaN;
    std::size_t present = 0;
    std::vector<double> mean(width);
    std::vector<double> row(width);
    for (std::size_t c = 0; c < classes; ++c) {
        const auto& rows = rows_of[c];
        if (rows.empty()) {
            continue;
        }
        ++present;
        std::fill(mean.begin(), mean.end(), 0.0);
        for (std::size_t i : rows) {
            for (std::size_t f = 0; f < width; ++f) {
                mean[f] += batch.features.at(i, f);
            }
        }
        for (double& v : mean) {
            v /= static_cast<double>(rows.size());
        }

        double to_mean = 0.0;
        double to_proto = 0.0;
        for (std::size_t i : rows) {
            for (std::size_t f = 0; f < width; ++f) {
                row[f] = batch.features.at(i, f);
            }
            to_mean += euclidean(row, mean);
            if (bank != nullptr) {
                to_proto += euclidean(row, {bank->centroids.data() + c * width, width});
            }
        }
        geometry.ccd += to_mean / static_cast<double>(rows.size());
        if (bank != nullptr) {
            geometry.pd += to_proto / static_cast<double>(rows.size());
            geometry.pcd += euclidean(mean, {bank->centroids.data() + c * width, width});
        }
    }
    geometry.ccd /= static_cast<double>(present);
    if (bank != nullptr) {
        geometry.pd /= static_cast<double>(present);
        geometry.pcd /= static_cast<double>(present);
    }
    return geometry;
}

BalanceStats balance_stats(std::span<const double> per_class_iou) {
    if (per_class_iou.empty()) {
        throw std::invalid_argument("balance stats: empty input");
    }
    const double n = static_cast<double>(per_class_iou.size());
    double mean = 0.0;
    double total = 0.0;
    for (double iou : per_class_iou) {
        mean += iou;
        total += iou;
    }
    mean /= n;

    double variance = 0.0;
    for (double iou : per_class_iou) {
        variance += (iou - mean) * (iou - mean);
    }
    variance /= n;

    BalanceStats stats;
    stats.sigma = std::sqrt(variance);
    // The squared deviation is stored as sigma^2 so the pair satisfies the
    // identity bit-for-bit; the difference from the directly accumulated
    // variance is one rounding step.
    stats.mse = stats.sigma * stats.sigma;
    if (total > 0.0) {
        double entropy = 0.0;
        for (double iou : per_class_iou) {
            const double p = iou / total;
            if (p > 0.0) {
                entropy -= p * std::log(p);
            }
        }
        stats.entropy = entropy;
    }
    return stats;
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["miou"] = miou;
    j["fwiou"] = fwiou;
    j["hiou"] = hiou;
    j["per_class_iou"] = per_class_iou;
    j["theta_gamma"] = theta_gamma;
    j["ccd"] = ccd;
    j["pd"] = pd;
    j["pcd"] = pcd;
    j["sigma"] = sigma;
    j["mse"] = mse;
    j["entropy"] = entropy;
    j["fairness"] = fairness;
    return j.dump();
}

std::string MetricsReport::csv_header() {
    return "miou,fwiou,hiou,theta_gamma,ccd,pd,pcd,sigma,mse,entropy,fairness";
}

std::string MetricsReport::csv_row() const {
    std::ostringstream out;
    out.precision(17);
    out << miou << ',' << fwiou << ',' << hiou << ',' << theta_gamma << ',' << ccd << ',' << pd
        << ',' << pcd << ',' << sigma << ',' << mse << ',' << entropy << ',' << fairness;
    return out.str();
}

MetricsReport parse_report(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("metrics report: ") + e.what());
    }
    const auto field = [&](const char* name) {
        return j.contains(name) && j[name].is_number() ? j[name].get<double>() : kNaN;
    };
    MetricsReport report;
    report.miou = field("miou");
    report.fwiou = field("fwiou");
    report.hiou = field("hiou");
    report.theta_gamma = field("theta_gamma");
    report.ccd = field("ccd");
    report.pd = field("pd");
    report.pcd = field("pcd");
    report.sigma = field("sigma");
    report.mse = field("mse");
    report.entropy = field("entropy");
    report.fairness = field("fairness");
    if (j.contains("per_class_iou")) {
        for (const auto& entry : j["per_class_iou"]) {
            report.per_class_iou.push_back(entry.is_number() ? entry.get<double>() : kNaN);
        }
    }
    return report;
}

MetricsReport compute_report(const hierarchy::ConfusionMatrix& cm,
                             const FeatureBatch* features,
                             const PredictionBatch* predictions,
                             const protobank::PrototypeBank* bank,
                             const hierarchy::Hierarchy* h) {
    MetricsReport report;
    const IouSuite suite = iou_suite(cm);
    report.miou = suite.miou;
    report.fwiou = suite.fwiou;
    report.per_class_iou = suite.per_class;

    std::vector<double> valid;
    for (double iou : suite.per_class) {
        if (!std::isnan(iou)) {
            valid.push_back(iou);
        }
    }
    const BalanceStats balance = balance_stats(valid);
    report.sigma = balance.sigma;
    report.mse = balance.mse;
    report.entropy = balance.entropy;

    report.hiou = h != nullptr ? hiou(cm, *h) : kNaN;

    report.theta_gamma = kNaN;
    if (bank != nullptr) {
        if (usable_prototypes(*bank).size() >= 2) {
            report.theta_gamma = inter_proto_angle(*bank);
        } else {
            log::warn("metrics: fewer than two usable prototypes; inter-proto angle unavailable");
        }
    }

    if (features != nullptr) {
        const FeatureGeometry geometry = feature_geometry(*features, bank);
        report.ccd = geometry.ccd;
        report.pd = geometry.pd;
        report.pcd = geometry.pcd;
    } else {
        report.ccd = kNaN;
        report.pd = kNaN;
        report.pcd = kNaN;
    }

    report.fairness = kNaN;
    if (predictions != nullptr && h != nullptr) {
        report.fairness = fairloss::jain_fairness(fairloss::average_predictions(*predictions), *h)
                              .aggregate;
    }
    return report;
}

} // namespace leak::metrics
