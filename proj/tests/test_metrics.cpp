#include "leak/metrics.hpp"

#include "leak/rng.hpp"
#include "support/warnings.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace mt = leak::metrics;
namespace hr = leak::hierarchy;
namespace pb = leak::protobank;
using leak::FeatureBatch;
using leak::Tensor;

namespace {

hr::ConfusionMatrix cm_from(std::vector<std::vector<std::uint64_t>> rows) {
    hr::ConfusionMatrix cm(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows.size(); ++j) {
            cm.at(i, j) = rows[i][j];
        }
    }
    return cm;
}

hr::Hierarchy grouping(std::size_t macro_count, std::vector<std::uint16_t> mapping) {
    hr::Hierarchy h;
    h.macro_count = macro_count;
    h.mapping = std::move(mapping);
    return h;
}

FeatureBatch batch_from(std::vector<std::vector<double>> rows, std::vector<std::uint16_t> labels) {
    Tensor features({rows.size(), rows[0].size()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t f = 0; f < rows[0].size(); ++f) {
            features.at(i, f) = rows[i][f];
        }
    }
    return FeatureBatch{std::move(features), std::move(labels)};
}

pb::PrototypeBank bank_with_rows(std::vector<std::vector<double>> rows,
                                 std::vector<std::uint64_t> visits) {
    auto bank = pb::make_bank(pb::BankLevel::micro, rows.size(), rows[0].size());
    bank.visits = std::move(visits);
    for (std::size_t c = 0; c < rows.size(); ++c) {
        for (std::size_t f = 0; f < rows[0].size(); ++f) {
            bank.centroids.at(c, f) = rows[c][f];
        }
    }
    return bank;
}

// Mean IoU recomputed the long way at the macro level: relabel every point of
// the underlying population to its macro class and tally from scratch.
double hiou_by_relabeling(const hr::ConfusionMatrix& cm, const hr::Hierarchy& h) {
    hr::ConfusionMatrix macro(h.macro_count);
    for (std::size_t truth = 0; truth < cm.class_count; ++truth) {
        for (std::size_t predicted = 0; predicted < cm.class_count; ++predicted) {
            for (std::uint64_t p = 0; p < cm.at(truth, predicted); ++p) {
                ++macro.at(h.macro_of(truth), h.macro_of(predicted));
            }
        }
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < macro.class_count; ++c) {
        std::uint64_t fp = 0;
        for (std::size_t r = 0; r < macro.class_count; ++r) {
            fp += macro.at(r, c);
        }
        fp -= macro.at(c, c);
        const std::uint64_t tp = macro.at(c, c);
        const std::uint64_t fn = macro.row_total(c) - tp;
        if (tp + fp + fn == 0) {
            continue;
        }
        sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        ++count;
    }
    return sum / static_cast<double>(count);
}

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("diagonal confusion scores perfect everywhere") {
    const auto suite = mt::iou_suite(cm_from({{7, 0}, {0, 3}}));
    CHECK(suite.per_class == std::vector<double>{1.0, 1.0});
    CHECK(suite.miou == 1.0);
    CHECK(suite.fwiou == 1.0);
}

TEST_CASE("iou hand case splits true and false mass") {
    const auto suite = mt::iou_suite(cm_from({{5, 5}, {0, 10}}));
    CHECK(suite.per_class[0] == 0.5);
    CHECK(suite.per_class[1] == 10.0 / 15.0);
    CHECK(suite.miou == (0.5 + 10.0 / 15.0) / 2.0);
    CHECK(suite.fwiou == 0.5 * 0.5 + 0.5 * (10.0 / 15.0));
}

TEST_CASE("classes never seen nor predicted drop out of the mean") {
    const auto suite = mt::iou_suite(cm_from({{5, 5, 0}, {0, 10, 0}, {0, 0, 0}}));
    CHECK(std::isnan(suite.per_class[2]));
    CHECK(suite.miou == (0.5 + 10.0 / 15.0) / 2.0);

    CHECK_THROWS_WITH_AS(mt::iou_suite(hr::ConfusionMatrix(0)), "iou: empty confusion matrix",
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(mt::iou_suite(hr::ConfusionMatrix(3)), "iou: empty confusion matrix",
                         std::invalid_argument);
}

TEST_CASE("frequency weighting recovers the direct sum") {
    leak::rng::Stream rng(0xF1D0ull);
    for (int trial = 0; trial < 10; ++trial) {
        hr::ConfusionMatrix cm(4);
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 4; ++j) {
                cm.at(i, j) = rng.below(30);
            }
        }
        if (cm.total() == 0) {
            continue;
        }
        const auto suite = mt::iou_suite(cm);
        double expected = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
            if (cm.row_total(c) == 0) {
                continue;
            }
            expected += static_cast<double>(cm.row_total(c)) / static_cast<double>(cm.total()) *
                        suite.per_class[c];
        }
        CHECK(suite.fwiou == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("confusion inside a macro class does not hurt the folded score") {
    const auto h = grouping(2, {0, 0, 1});
    CHECK(mt::hiou(cm_from({{4, 0, 0}, {0, 6, 0}, {0, 0, 2}}), h) == 1.0);
    CHECK(mt::hiou(cm_from({{0, 4, 0}, {6, 0, 0}, {0, 0, 2}}), h) == 1.0);

    // Mistakes across macro classes still count.
    CHECK(mt::hiou(cm_from({{0, 0, 4}, {0, 6, 0}, {2, 0, 0}}), h) < 1.0);

    CHECK_THROWS_WITH_AS(mt::fold_confusion(cm_from({{1, 0}, {0, 1}}), grouping(2, {0, 1, 1})),
                         "confusion fold: hierarchy maps 3 classes but the matrix has 2",
                         std::invalid_argument);
}

TEST_CASE("folded iou equals point-level relabeling on random matrices") {
    leak::rng::Stream rng(0x401Dull);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = 2 + rng.below(5);
        const std::size_t macros = 2 + rng.below(m - 1);
        hr::Hierarchy h;
        h.macro_count = macros;
        h.mapping.resize(m);
        for (std::size_t c = 0; c < m; ++c) {
            h.mapping[c] = static_cast<std::uint16_t>(c < macros ? c : rng.below(macros));
        }
        hr::ConfusionMatrix cm(m);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                cm.at(i, j) = rng.below(12);
            }
        }
        if (cm.total() == 0) {
            cm.at(0, 0) = 1;
        }
        CHECK(mt::hiou(cm, h) == hiou_by_relabeling(cm, h));
    }
}

TEST_CASE("folding ignores micro relabelings that preserve the grouping") {
    const auto h = grouping(2, {0, 0, 1, 1});
    const auto cm = cm_from({{5, 1, 2, 0}, {0, 7, 1, 1}, {3, 0, 9, 2}, {1, 1, 0, 4}});

    // Swap micro classes 0 and 1 (same macro class) on both axes.
    const auto swapped = cm_from({{7, 0, 1, 1}, {1, 5, 2, 0}, {0, 3, 9, 2}, {1, 1, 0, 4}});
    CHECK(mt::hiou(cm, h) == mt::hiou(swapped, h));
}

TEST_CASE("prototype angles match the textbook cosine") {
    SUBCASE("orthogonal prototypes") {
        const auto bank = bank_with_rows({{1, 0}, {0, 2}}, {3, 5});
        CHECK(mt::inter_proto_angle(bank) == 0.0);
    }
    SUBCASE("identical prototypes") {
        const auto bank = bank_with_rows({{3, 4}, {3, 4}}, {1, 1});
        CHECK(mt::inter_proto_angle(bank) == 1.0);
    }
    SUBCASE("three random prototypes against a double loop") {
        leak::rng::Stream rng(0xC051ull);
        Tensor rows({3, 4});
        for (std::size_t i = 0; i < rows.numel(); ++i) {
            rows[i] = rng.normal();
        }
        auto bank = pb::make_bank(pb::BankLevel::micro, 3, 4);
        bank.centroids = rows;
        bank.visits = {1, 1, 1};

        double expected = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t b = 0; b < 3; ++b) {
                if (a == b) {
                    continue;
                }
                double dot = 0.0, na = 0.0, nb = 0.0;
                for (std::size_t f = 0; f < 4; ++f) {
                    dot += rows.at(a, f) * rows.at(b, f);
                    na += rows.at(a, f) * rows.at(a, f);
                    nb += rows.at(b, f) * rows.at(b, f);
                }
                expected += dot / (std::sqrt(na) * std::sqrt(nb));
            }
        }
        expected /= 6.0;
        CHECK(mt::inter_proto_angle(bank) == doctest::Approx(expected).epsilon(1e-15));
    }
}

TEST_CASE("unvisited and zero prototypes stay out of the angle") {
    // Rows 2 (never visited) and 3 (visited but zero) are excluded, leaving
    // the orthogonal pair.
    const auto bank = bank_with_rows({{1, 0}, {0, 2}, {5, 5}, {0, 0}}, {3, 5, 0, 4});
    CHECK(mt::inter_proto_angle(bank) == 0.0);

    const auto lonely = bank_with_rows({{1, 0}, {0, 0}}, {3, 2});
    CHECK_THROWS_WITH_AS(
        mt::inter_proto_angle(lonely),
        "inter-proto angle: needs at least two visited nonzero prototypes, found 1",
        std::runtime_error);
}

TEST_CASE("feature geometry hand case") {
    const auto batch = batch_from({{0, 0}, {2, 0}}, {0, 0});
    const auto bank = bank_with_rows({{0, 0}}, {1});
    // Zero-visit invariant does not hold here on purpose: the centroid is
    // pinned to the origin with one visit recorded.
    const auto geometry = mt::feature_geometry(batch, &bank);
    CHECK(geometry.ccd == 1.0);   // class mean (1,0), both points at distance 1
    CHECK(geometry.pd == 1.0);    // distances 0 and 2 from the prototype
    CHECK(geometry.pcd == 1.0);   // mean sits one unit from the prototype

    SUBCASE("features glued to their prototype contribute nothing") {
        const auto tight = batch_from({{0, 0}, {0, 0}}, {0, 0});
        const auto g = mt::feature_geometry(tight, &bank);
        CHECK(g.ccd == 0.0);
        CHECK(g.pd == 0.0);
        CHECK(g.pcd == 0.0);
    }
    SUBCASE("without a bank only the center distance is defined") {
        const auto g = mt::feature_geometry(batch, nullptr);
        CHECK(g.ccd == 1.0);
        CHECK(std::isnan(g.pd));
        CHECK(std::isnan(g.pcd));
    }
}

TEST_CASE("feature geometry averages within classes before averaging across") {
    leak::rng::Stream rng(0x6E01ull);
    Tensor features({30, 3});
    std::vector<std::uint16_t> labels(30);
    for (std::size_t i = 0; i < 30; ++i) {
        labels[i] = static_cast<std::uint16_t>(i < 24 ? 0 : 1);   // lopsided classes
        for (std::size_t f = 0; f < 3; ++f) {
            features.at(i, f) = rng.normal();
        }
    }
    auto bank = pb::make_bank(pb::BankLevel::micro, 3, 3);   // class 2 never appears
    FeatureBatch batch{features, labels};
    pb::update(bank, batch);
    bank.visits[2] = 1;   // even a visited class is skipped without eval rows

    const auto geometry = mt::feature_geometry(batch, &bank);

    double expected_ccd = 0.0;
    double expected_pcd = 0.0;
    for (std::size_t c = 0; c < 2; ++c) {
        std::vector<double> mean(3, 0.0);
        std::size_t count = 0;
        for (std::size_t i = 0; i < 30; ++i) {
            if (labels[i] != c) {
                continue;
            }
            ++count;
            for (std::size_t f = 0; f < 3; ++f) {
                mean[f] += features.at(i, f);
            }
        }
        for (double& v : mean) {
            v /= static_cast<double>(count);
        }
        double dist = 0.0;
        double proto_gap = 0.0;
        for (std::size_t i = 0; i < 30; ++i) {
            if (labels[i] != c) {
                continue;
            }
            double sq = 0.0;
            for (std::size_t f = 0; f < 3; ++f) {
                sq += (features.at(i, f) - mean[f]) * (features.at(i, f) - mean[f]);
            }
            dist += std::sqrt(sq);
        }
        for (std::size_t f = 0; f < 3; ++f) {
            proto_gap += (mean[f] - bank.centroids.at(c, f)) * (mean[f] - bank.centroids.at(c, f));
        }
        expected_ccd += dist / static_cast<double>(count);
        expected_pcd += std::sqrt(proto_gap);
    }
    CHECK(geometry.ccd == doctest::Approx(expected_ccd / 2.0).epsilon(1e-12));
    CHECK(geometry.pcd == doctest::Approx(expected_pcd / 2.0).epsilon(1e-12));
    // The bank holds the exact class means, so prototype distances collapse
    // onto center distances and the center-prototype gap nearly vanishes.
    CHECK(geometry.pd == doctest::Approx(geometry.ccd).epsilon(1e-9));
    CHECK(geometry.pcd < 1e-12);
}

TEST_CASE("center distances ignore global translation") {
    leak::rng::Stream rng(0x7A51ull);
    Tensor features({12, 2});
    std::vector<std::uint16_t> labels(12);
    for (std::size_t i = 0; i < 12; ++i) {
        labels[i] = static_cast<std::uint16_t>(rng.below(2));
        features.at(i, 0) = rng.normal();
        features.at(i, 1) = rng.normal();
    }
    const auto base = mt::feature_geometry(FeatureBatch{features, labels}, nullptr);

    Tensor moved = features;
    for (std::size_t i = 0; i < 12; ++i) {
        moved.at(i, 0) += 113.5;
        moved.at(i, 1) -= 40.25;
    }
    const auto shifted = mt::feature_geometry(FeatureBatch{moved, labels}, nullptr);
    CHECK(shifted.ccd == doctest::Approx(base.ccd).epsilon(1e-9));
}

TEST_CASE("balance statistics over per-class scores") {
    SUBCASE("identical scores are perfectly balanced") {
        const std::vector<double> ious{0.6, 0.6, 0.6, 0.6};
        const auto stats = mt::balance_stats(ious);
        CHECK(stats.sigma == 0.0);
        CHECK(stats.mse == 0.0);
        CHECK(stats.entropy == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
    SUBCASE("a one-hot profile is maximally spread") {
        const std::vector<double> ious{1.0, 0.0};
        const auto stats = mt::balance_stats(ious);
        CHECK(stats.sigma == 0.5);
        CHECK(stats.mse == 0.25);
        CHECK(stats.entropy == 0.0);
    }
    SUBCASE("the squared spread tracks sigma exactly") {
        leak::rng::Stream rng(0x3B12ull);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> ious(2 + rng.below(8));
            for (double& iou : ious) {
                iou = rng.uniform();
            }
            const auto stats = mt::balance_stats(ious);
            CHECK(stats.mse == stats.sigma * stats.sigma);
        }
    }
    SUBCASE("all-zero scores have zero entropy by convention") {
        const std::vector<double> ious{0.0, 0.0, 0.0};
        CHECK(mt::balance_stats(ious).entropy == 0.0);
        CHECK_THROWS_WITH_AS(mt::balance_stats(std::vector<double>{}),
                             "balance stats: empty input", std::invalid_argument);
    }
}

TEST_CASE("reports serialize and parse back") {
    mt::MetricsReport report;
    report.miou = 0.5;
    report.fwiou = 0.625;
    report.hiou = std::numeric_limits<double>::quiet_NaN();
    report.per_class_iou = {0.5, std::numeric_limits<double>::quiet_NaN()};
    report.theta_gamma = -0.125;
    report.ccd = 1.5;
    report.pd = 2.5;
    report.pcd = 0.75;
    report.sigma = 0.25;
    report.mse = 0.0625;
    report.entropy = 0.69;
    report.fairness = 0.875;

    const auto parsed = mt::parse_report(report.to_json());
    CHECK(parsed.miou == report.miou);
    CHECK(std::isnan(parsed.hiou));
    CHECK(parsed.theta_gamma == report.theta_gamma);
    CHECK(parsed.per_class_iou.size() == 2);
    CHECK(parsed.per_class_iou[0] == 0.5);
    CHECK(std::isnan(parsed.per_class_iou[1]));
    CHECK(parsed.fairness == 0.875);

    CHECK(mt::MetricsReport::csv_header() ==
          "miou,fwiou,hiou,theta_gamma,ccd,pd,pcd,sigma,mse,entropy,fairness");
    CHECK(report.csv_row().substr(0, 10) == "0.5,0.625,");

    CHECK_THROWS_AS(mt::parse_report("not json"), std::runtime_error);
}

TEST_CASE("composed reports degrade gracefully without optional inputs") {
    const auto cm = cm_from({{5, 5}, {0, 10}});
    const auto report = mt::compute_report(cm, nullptr, nullptr, nullptr, nullptr);
    CHECK(report.miou == (0.5 + 10.0 / 15.0) / 2.0);
    CHECK(std::isnan(report.hiou));
    CHECK(std::isnan(report.theta_gamma));
    CHECK(std::isnan(report.ccd));
    CHECK(std::isnan(report.fairness));
    CHECK(report.sigma > 0.0);

    SUBCASE("a bank with one usable prototype warns instead of failing") {
        const auto bank = bank_with_rows({{1, 0}, {0, 0}}, {3, 2});
        testsup::WarningCapture capture;
        const auto degraded = mt::compute_report(cm, nullptr, nullptr, &bank, nullptr);
        CHECK(std::isnan(degraded.theta_gamma));
        CHECK(capture.any_contains("inter-proto angle unavailable"));
    }
    SUBCASE("full inputs populate every block") {
        const auto h = grouping(2, {0, 1});
        const auto batch = batch_from({{0, 0}, {2, 0}, {5, 5}}, {0, 0, 1});
        auto bank = pb::make_bank(pb::BankLevel::micro, 2, 2);
        pb::update(bank, batch);
        leak::PredictionBatch predictions{
            Tensor({3, 2}, {0.75, 0.25, 0.5, 0.5, 0.25, 0.75}), {0, 0, 1}};
        const auto full = mt::compute_report(cm, &batch, &predictions, &bank, &h);
        CHECK(full.hiou == mt::hiou(cm, h));
        CHECK_FALSE(std::isnan(full.theta_gamma));
        CHECK(full.ccd > 0.0);
        CHECK(full.pd > 0.0);
        CHECK_FALSE(std::isnan(full.fairness));
    }
}

} // TEST_SUITE
