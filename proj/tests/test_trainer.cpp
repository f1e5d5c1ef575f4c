#include "leak/trainer.hpp"

#include "leak/rng.hpp"
#include "support/fd_check.hpp"
#include "support/warnings.hpp"

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace tr = leak::trainer;
namespace sd = leak::synthdata;
namespace sm = leak::segmodel;
namespace hr = leak::hierarchy;
namespace ad = leak::autodiff;
namespace fs = std::filesystem;
using leak::Tensor;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct TempDir {
    fs::path path;
    TempDir() {
        const auto tick = std::chrono::steady_clock::now().time_since_epoch().count();
        path = fs::temp_directory_path() /
               ("leak_trainer_" + std::to_string(tick) + "_" + std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { std::error_code ec; fs::remove_all(path, ec); }
    static int& counter() { static int c = 0; return c; }
};

sd::DatasetSpec easy_spec() {
    sd::DatasetSpec spec;
    spec.catalog.names = {"mug", "bottle", "plate"};
    spec.catalog.planted_family = {0, 0, 1};
    spec.class_frequency = {0.5, 0.3, 0.2};
    spec.confusability = 0.0;
    spec.scene_count = 24;
    spec.points_per_scene = 40;
    spec.seed = 7;
    return spec;
}

sd::DatasetSpec tangled_spec() {
    sd::DatasetSpec spec;
    spec.catalog.names = {"mug", "cup", "glass", "pen", "pencil", "marker"};
    spec.catalog.planted_family = {0, 0, 0, 1, 1, 1};
    spec.class_frequency = {0.3, 0.2, 0.15, 0.15, 0.12, 0.08};
    spec.confusability = 0.8;
    spec.scene_count = 16;
    spec.points_per_scene = 50;
    spec.seed = 11;
    return spec;
}

tr::TrainConfig quick_config() {
    tr::TrainConfig config;
    config.epochs = 3;
    config.batch_scenes = 4;
    config.learning_rate = 0.05;
    config.feature_dim = 8;
    config.hidden = {16};
    config.seed = 21;
    return config;
}

hr::Hierarchy grouping(std::size_t macro_count, std::vector<std::uint16_t> mapping) {
    hr::Hierarchy h;
    h.macro_count = macro_count;
    h.mapping = std::move(mapping);
    return h;
}

sd::PointCloudSample sample_from(std::vector<std::array<double, 3>> points,
                                 std::vector<std::uint16_t> labels) {
    return sd::PointCloudSample{std::move(points), std::move(labels)};
}

bool same_values(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        if (av[i] != bv[i]) return false;
    }
    return true;
}

bool same_weights(const sm::SegModel& a, const sm::SegModel& b) {
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (!same_values(pa[i]->value, pb[i]->value)) return false;
    }
    return true;
}

bool eq_or_both_nan(double a, double b) {
    return (std::isnan(a) && std::isnan(b)) || a == b;
}

bool same_report(const leak::metrics::MetricsReport& a, const leak::metrics::MetricsReport& b) {
    if (a.per_class_iou.size() != b.per_class_iou.size()) return false;
    for (std::size_t i = 0; i < a.per_class_iou.size(); ++i) {
        if (!eq_or_both_nan(a.per_class_iou[i], b.per_class_iou[i])) return false;
    }
    return eq_or_both_nan(a.miou, b.miou) && eq_or_both_nan(a.fwiou, b.fwiou) &&
           eq_or_both_nan(a.hiou, b.hiou) && eq_or_both_nan(a.theta_gamma, b.theta_gamma) &&
           eq_or_both_nan(a.ccd, b.ccd) && eq_or_both_nan(a.pd, b.pd) &&
           eq_or_both_nan(a.pcd, b.pcd) && eq_or_both_nan(a.sigma, b.sigma) &&
           eq_or_both_nan(a.mse, b.mse) && eq_or_both_nan(a.entropy, b.entropy) &&
           eq_or_both_nan(a.fairness, b.fairness);
}

// Everything except the wall clock.
bool same_record(const tr::EpochRecord& a, const tr::EpochRecord& b) {
    return a.epoch == b.epoch && a.base == b.base && a.proto_micro == b.proto_micro &&
           a.proto_macro == b.proto_macro && a.fairness == b.fairness && a.total == b.total &&
           same_report(a.validation, b.validation);
}

} // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("config JSON round trip preserves every field") {
    tr::TrainConfig config;
    config.epochs = 17;
    config.batch_scenes = 5;
    config.learning_rate = 0.125;
    config.poly_power = 0.75;
    config.momentum = 0.85;
    config.lambda_pm = 0.01;
    config.lambda_pM = 0.002;
    config.lambda_f = 0.4;
    config.weighting = tr::Weighting::sqrt_inverse;
    config.seed = 0xFFFFFFFFFFFFFFFFull;
    config.class_count = 8;
    config.feature_dim = 24;
    config.hidden = {48, 32};

    const tr::TrainConfig back = tr::config_from_json(tr::to_json(config));
    CHECK(back.epochs == config.epochs);
    CHECK(back.batch_scenes == config.batch_scenes);
    CHECK(back.learning_rate == config.learning_rate);
    CHECK(back.poly_power == config.poly_power);
    CHECK(back.momentum == config.momentum);
    CHECK(back.lambda_pm == config.lambda_pm);
    CHECK(back.lambda_pM == config.lambda_pM);
    CHECK(back.lambda_f == config.lambda_f);
    CHECK(back.weighting == config.weighting);
    CHECK(back.seed == config.seed);
    CHECK(back.class_count == config.class_count);
    CHECK(back.feature_dim == config.feature_dim);
    CHECK(back.hidden == config.hidden);

    for (tr::Weighting w : {tr::Weighting::inverse, tr::Weighting::sqrt_inverse,
                            tr::Weighting::none}) {
        config.weighting = w;
        CHECK(tr::config_from_json(tr::to_json(config)).weighting == w);
    }

    TempDir dir;
    tr::save_config(config, dir.path / "config.json");
    CHECK(tr::load_config(dir.path / "config.json").seed == config.seed);
}

TEST_CASE("config parsing rejects unknown keys and bad values") {
    CHECK_THROWS_WITH_AS(tr::config_from_json(R"({"learning_rte": 0.1})"),
                         doctest::Contains("unknown key 'learning_rte'"), std::runtime_error);
    CHECK_THROWS_WITH_AS(tr::config_from_json(R"({"class_weighting": "linear"})"),
                         doctest::Contains("unknown class weighting 'linear'"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(tr::config_from_json(R"({"epochs": "ten"})"),
                         doctest::Contains("train config"), std::runtime_error);
    CHECK_THROWS_WITH_AS(tr::config_from_json("{nope"), doctest::Contains("train config"),
                         std::runtime_error);

    tr::TrainConfig config;
    config.epochs = 0;
    CHECK_THROWS_AS(config.validate(), std::invalid_argument);
    config = tr::TrainConfig{};
    config.learning_rate = 0.0;
    CHECK_THROWS_AS(config.validate(), std::invalid_argument);
    config = tr::TrainConfig{};
    config.momentum = 1.0;
    CHECK_THROWS_AS(config.validate(), std::invalid_argument);
    config = tr::TrainConfig{};
    config.lambda_f = -0.1;
    CHECK_THROWS_AS(config.validate(), std::invalid_argument);
    config = tr::TrainConfig{};
    config.feature_dim = 0;
    CHECK_THROWS_AS(config.validate(), std::invalid_argument);
}

TEST_CASE("class weights invert frequencies and average to one over present classes") {
    sd::Dataset train;
    train.scenes.push_back(sample_from({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}},
                                       {0, 0, 0, 1}));

    SUBCASE("inverse weighting") {
        const auto w = tr::class_weights(train, tr::Weighting::inverse, 2);
        REQUIRE(w.size() == 2);
        // Inverse frequencies 4/3 and 4, rescaled so the two average to one.
        CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(w[1] == doctest::Approx(1.5).epsilon(1e-12));
        CHECK(w[1] / w[0] == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("square-root inverse weighting") {
        const auto w = tr::class_weights(train, tr::Weighting::sqrt_inverse, 2);
        CHECK(w[1] / w[0] == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
        CHECK(w[0] + w[1] == doctest::Approx(2.0).epsilon(1e-12));
    }
    SUBCASE("uniform weighting") {
        const auto w = tr::class_weights(train, tr::Weighting::none, 2);
        CHECK(w[0] == 1.0);
        CHECK(w[1] == 1.0);
    }
    SUBCASE("absent classes get weight zero and do not skew the mean") {
        const auto w = tr::class_weights(train, tr::Weighting::inverse, 3);
        REQUIRE(w.size() == 3);
        CHECK(w[2] == 0.0);
        CHECK(w[0] + w[1] == doctest::Approx(2.0).epsilon(1e-12));
    }
}

TEST_CASE("class weights validate labels and reject empty data") {
    sd::Dataset train;
    train.scenes.push_back(sample_from({{0, 0, 0}}, {5}));
    CHECK_THROWS_WITH_AS(tr::class_weights(train, tr::Weighting::inverse, 2),
                         doctest::Contains("label 5 outside 2 classes"), std::invalid_argument);
    CHECK_THROWS_AS(tr::class_weights(sd::Dataset{}, tr::Weighting::inverse, 2),
                    std::invalid_argument);
    CHECK_THROWS_AS(tr::class_weights(train, tr::Weighting::inverse, 0), std::invalid_argument);
}

TEST_CASE("base loss is zero on perfect predictions and ln m on uniform ones") {
    const std::vector<std::uint16_t> labels{0, 1, 2, 1};
    const std::vector<double> unit(3, 1.0);

    Tensor perfect({4, 3});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        perfect.at(i, labels[i]) = 1.0;
    }
    CHECK(tr::base_loss(ad::constant(perfect), labels, unit)->value[0] == 0.0);

    Tensor uniform({4, 3});
    for (double& v : uniform.values()) {
        v = 1.0 / 3.0;
    }
    CHECK(tr::base_loss(ad::constant(uniform), labels, unit)->value[0] ==
          doctest::Approx(std::log(3.0)).epsilon(1e-12));

    // Class weights scale each point's contribution.
    Tensor skewed({2, 2});
    skewed.at(0, 0) = 0.8;
    skewed.at(0, 1) = 0.2;
    skewed.at(1, 0) = 0.3;
    skewed.at(1, 1) = 0.7;
    const std::vector<double> weights{0.5, 1.5};
    const std::vector<std::uint16_t> two{0, 1};
    const double expected = -(0.5 * std::log(0.8) + 1.5 * std::log(0.7)) / 2.0;
    CHECK(tr::base_loss(ad::constant(skewed), two, weights)->value[0] ==
          doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("base loss gradient matches finite differences") {
    leak::rng::Stream stream(404);
    const std::vector<std::uint16_t> labels{2, 0, 1, 3, 3, 1};
    const std::vector<double> weights{0.5, 1.0, 1.5, 1.0};
    Tensor probabilities({6, 4});
    for (double& v : probabilities.values()) {
        v = 0.1 + 0.8 * stream.uniform();   // keep clear of the log floor
    }

    const auto report = testsup::fd_check(
        [&](const std::vector<ad::NodePtr>& leaves) {
            return tr::base_loss(leaves[0], labels, weights);
        },
        {probabilities});
    CHECK(report.max_rel_err < 1e-4);
    CHECK(report.elements_checked == 24);
}

TEST_CASE("base loss validates its inputs") {
    const std::vector<double> weights{1.0, 1.0};
    Tensor p({2, 2});
    p.at(0, 0) = p.at(0, 1) = p.at(1, 0) = p.at(1, 1) = 0.5;

    CHECK_THROWS_WITH_AS(tr::base_loss(ad::constant(p), std::vector<std::uint16_t>{0}, weights),
                         doctest::Contains("probability rows"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(tr::base_loss(ad::constant(p), std::vector<std::uint16_t>{0, 7}, weights),
                         doctest::Contains("label 7 outside 2 classes"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(
        tr::base_loss(ad::constant(p), std::vector<std::uint16_t>{0, 1}, std::vector<double>{1.0}),
        doctest::Contains("1 class weights for 2 classes"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(tr::base_loss(ad::constant(Tensor({0, 2})), std::vector<std::uint16_t>{},
                                       weights),
                         doctest::Contains("empty batch"), std::invalid_argument);
}

TEST_CASE("train log JSONL round trips bit-exactly, including missing metrics") {
    tr::TrainLog log;
    tr::EpochRecord r;
    r.epoch = 3;
    r.base = 0.12345678901234567;
    r.proto_micro = 1.0 / 3.0;
    r.proto_macro = 0.0;
    r.fairness = 7.0e-13;
    r.total = r.base + 0.5 * r.proto_micro;
    r.wall_seconds = 0.25;
    r.validation.miou = 2.0 / 3.0;
    r.validation.fwiou = 0.75;
    r.validation.hiou = kNaN;
    r.validation.per_class_iou = {0.5, kNaN, 1.0};
    r.validation.theta_gamma = -0.125;
    r.validation.sigma = 0.1;
    r.validation.mse = 0.01;
    r.validation.entropy = std::log(3.0);
    r.validation.fairness = kNaN;
    log.records.push_back(r);
    r.epoch = 4;
    r.base = 0.1;
    log.records.push_back(r);

    const tr::TrainLog back = tr::TrainLog::from_jsonl(log.to_jsonl());
    REQUIRE(back.records.size() == 2);
    CHECK(same_record(back.records[0], log.records[0]));
    CHECK(same_record(back.records[1], log.records[1]));
    CHECK(back.records[0].wall_seconds == log.records[0].wall_seconds);

    TempDir dir;
    log.save(dir.path / "train.jsonl");
    const tr::TrainLog loaded = tr::TrainLog::load(dir.path / "train.jsonl");
    REQUIRE(loaded.records.size() == 2);
    CHECK(same_record(loaded.records[1], log.records[1]));

    CHECK_THROWS_WITH_AS(tr::TrainLog::from_jsonl("{broken\n"), doctest::Contains("line 1"),
                         std::runtime_error);
    CHECK_THROWS_AS(tr::TrainLog::load(dir.path / "missing.jsonl"), std::runtime_error);
}

TEST_CASE("a short baseline run learns the easy dataset") {
    const sd::Dataset dataset = sd::generate(easy_spec());
    const auto splits = sd::split(dataset, {0.75, 0.25}, 1);

    tr::TrainConfig config = quick_config();
    config.epochs = 30;
    config.learning_rate = 0.1;
    const tr::TrainResult result = tr::train_baseline(config, splits[0], splits[1]);

    CHECK_FALSE(result.aborted);
    REQUIRE(result.log.records.size() == config.epochs);
    for (const auto& record : result.log.records) {
        // With every regularizer off the total is the base loss itself.
        CHECK(record.total == record.base);
        CHECK(record.proto_micro == 0.0);
        CHECK(record.proto_macro == 0.0);
        CHECK(record.fairness == 0.0);
        CHECK(record.wall_seconds >= 0.0);
        // Training-time validation never sees a hierarchy.
        CHECK(std::isnan(record.validation.hiou));
        CHECK(std::isnan(record.validation.fairness));
    }
    CHECK(result.log.records.back().validation.miou > 0.95);
    CHECK(result.log.records.back().base < result.log.records.front().base);
    CHECK(result.model.class_count() == 3);
    CHECK(result.micro_bank.class_count() == 3);
    CHECK_FALSE(result.macro_bank.has_value());
    for (std::uint64_t visits : result.micro_bank.visits) {
        CHECK(visits > 0);
    }
}

TEST_CASE("training is bit-deterministic per seed") {
    const sd::Dataset dataset = sd::generate(easy_spec());
    const auto splits = sd::split(dataset, {0.75, 0.25}, 1);
    const tr::TrainConfig config = quick_config();

    const tr::TrainResult a = tr::train_baseline(config, splits[0], splits[1]);
    const tr::TrainResult b = tr::train_baseline(config, splits[0], splits[1]);
    CHECK(same_weights(a.model, b.model));
    CHECK(same_values(a.micro_bank.centroids, b.micro_bank.centroids));
    REQUIRE(a.log.records.size() == b.log.records.size());
    for (std::size_t i = 0; i < a.log.records.size(); ++i) {
        CHECK(same_record(a.log.records[i], b.log.records[i]));
    }

    tr::TrainConfig other = config;
    other.seed = config.seed + 1;
    const tr::TrainResult c = tr::train_baseline(other, splits[0], splits[1]);
    CHECK_FALSE(same_weights(a.model, c.model));
}

TEST_CASE("zero regularizer weights reproduce the baseline trajectory bit for bit") {
    const sd::Dataset dataset = sd::generate(easy_spec());
    const auto splits = sd::split(dataset, {0.75, 0.25}, 1);
    const tr::TrainConfig config = quick_config();

    const tr::TrainResult baseline = tr::train_baseline(config, splits[0], splits[1]);
    const tr::TrainResult leak =
        tr::train_leak(config, splits[0], splits[1], grouping(2, {0, 0, 1}));

    CHECK(same_weights(baseline.model, leak.model));
    CHECK(same_values(baseline.micro_bank.centroids, leak.micro_bank.centroids));
    REQUIRE(baseline.log.records.size() == leak.log.records.size());
    for (std::size_t i = 0; i < baseline.log.records.size(); ++i) {
        CHECK(same_record(baseline.log.records[i], leak.log.records[i]));
    }
    // The macro bank still fills up; it just never feeds the objective.
    REQUIRE(leak.macro_bank.has_value());
    CHECK(leak.macro_bank->class_count() == 2);
    CHECK(leak.macro_bank->visits[0] > 0);
}

TEST_CASE("logged components recombine into the logged total") {
    const sd::Dataset dataset = sd::generate(tangled_spec());
    const auto splits = sd::split(dataset, {0.75, 0.25}, 3);

    tr::TrainConfig config = quick_config();
    config.lambda_pm = 0.5;
    config.lambda_pM = 0.25;
    config.lambda_f = 0.5;
    const hr::Hierarchy h = grouping(2, {0, 0, 0, 1, 1, 1});
    const tr::TrainResult result = tr::train_leak(config, splits[0], splits[1], h);

    CHECK_FALSE(result.aborted);
    REQUIRE(result.log.records.size() == config.epochs);
    for (const auto& record : result.log.records) {
        CHECK(record.proto_micro > 0.0);
        CHECK(record.proto_macro > 0.0);
        CHECK(record.fairness > 0.0);
        const double recombined = record.base + config.lambda_pm * record.proto_micro +
                                  config.lambda_pM * record.proto_macro +
                                  config.lambda_f * record.fairness;
        CHECK(std::fabs(record.total - recombined) <=
              1e-9 * std::max(1.0, std::fabs(record.total)));
    }
    REQUIRE(result.macro_bank.has_value());
    CHECK(result.macro_bank->class_count() == 2);
}

TEST_CASE("an exploding learning rate aborts and rolls back to a finite state") {
    const sd::Dataset dataset = sd::generate(easy_spec());
    const auto splits = sd::split(dataset, {0.75, 0.25}, 1);

    tr::TrainConfig config = quick_config();
    config.epochs = 4;
    config.learning_rate = 1e308;

    testsup::WarningCapture capture;
    const tr::TrainResult result = tr::train_baseline(config, splits[0], splits[1]);
    CHECK(result.aborted);
    CHECK(result.log.records.size() < config.epochs);
    CHECK(capture.any_contains("diverged"));
    for (const auto& p : result.model.parameters()) {
        CHECK(p->value.all_finite());
    }
    if (result.log.records.empty()) {
        // Nothing completed, so the run hands back the freshly seeded model
        // and untouched banks.
        sm::SegModel fresh = sm::make_model(3, config.feature_dim, config.hidden);
        sm::init_weights(fresh, config.seed);
        CHECK(same_weights(result.model, fresh));
        for (std::uint64_t visits : result.micro_bank.visits) {
            CHECK(visits == 0);
        }
    }
}

TEST_CASE("checkpoints land once per epoch and reload to the final state") {
    const sd::Dataset dataset = sd::generate(easy_spec());
    const auto splits = sd::split(dataset, {0.75, 0.25}, 1);
    const tr::TrainConfig config = quick_config();

    TempDir dir;
    const tr::TrainResult result = tr::train_baseline(config, splits[0], splits[1], dir.path);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        CHECK(fs::exists(dir.path / ("epoch_000" + std::to_string(epoch) + ".ckpt")));
    }

    const sm::Checkpoint last = sm::load_checkpoint(dir.path / "epoch_0002.ckpt");
    CHECK(same_weights(last.model, result.model));
    REQUIRE(last.banks.size() == 1);
    const auto bank = leak::protobank::from_snapshot(last.banks[0]);
    CHECK(same_values(bank.centroids, result.micro_bank.centroids));
    CHECK(bank.visits == result.micro_bank.visits);

    // A hierarchy-aware run stores the macro bank alongside the micro one.
    tr::TrainConfig leak_config = config;
    leak_config.epochs = 1;
    TempDir leak_dir;
    tr::train_leak(leak_config, splits[0], splits[1], grouping(2, {0, 0, 1}), leak_dir.path);
    CHECK(sm::load_checkpoint(leak_dir.path / "epoch_0000.ckpt").banks.size() == 2);
}

TEST_CASE("evaluate split pools rows positionally and counts every point") {
    const sd::Dataset dataset = sd::generate(easy_spec());
    sd::Dataset small;
    small.scenes = {dataset.scenes[0], dataset.scenes[1]};

    sm::SegModel model = sm::make_model(3, 8, {16});
    sm::init_weights(model, 5);
    const tr::EvalOutputs out = tr::evaluate_split(model, small);

    const std::size_t n = small.total_points();
    CHECK(out.features.features.rows() == n);
    CHECK(out.predictions.probabilities.rows() == n);
    CHECK(out.features.labels.size() == n);
    CHECK(out.predictions.labels == out.features.labels);

    std::uint64_t counted = 0;
    for (std::size_t truth = 0; truth < out.cm.class_count; ++truth) {
        counted += out.cm.row_total(truth);
    }
    CHECK(counted == n);

    // Rows line up with a scene-by-scene forward pass.
    std::size_t row = 0;
    for (const auto& scene : small.scenes) {
        const auto [features, probabilities] =
            sm::forward_values(model, sd::to_points_tensor(scene));
        for (std::size_t i = 0; i < scene.size(); ++i, ++row) {
            CHECK(out.features.features.at(row, 0) == features.at(i, 0));
            CHECK(out.predictions.probabilities.at(row, 2) == probabilities.at(i, 2));
            CHECK(out.features.labels[row] == scene.labels[i]);
        }
    }

    CHECK_THROWS_WITH_AS(tr::evaluate_split(model, sd::Dataset{}),
                         doctest::Contains("empty split"), std::invalid_argument);
}

TEST_CASE("hierarchy extraction clusters confusions and degrades to the identity") {
    SUBCASE("a mistake-free validation pass yields the identity grouping") {
        sm::SegModel model = sm::make_model(3, 4, {8});
        sm::init_weights(model, 3);

        // Label the points with the model's own argmax so the confusion
        // matrix comes out purely diagonal.
        sd::PointCloudSample scene = sd::generate(easy_spec()).scenes[0];
        const auto [features, probabilities] =
            sm::forward_values(model, sd::to_points_tensor(scene));
        for (std::size_t i = 0; i < scene.size(); ++i) {
            std::size_t argmax = 0;
            for (std::size_t c = 1; c < 3; ++c) {
                if (probabilities.at(i, c) > probabilities.at(i, argmax)) argmax = c;
            }
            scene.labels[i] = static_cast<std::uint16_t>(argmax);
        }
        sd::Dataset agreeable;
        agreeable.scenes.push_back(std::move(scene));

        testsup::WarningCapture capture;
        const hr::Hierarchy h = tr::extract_hierarchy(model, agreeable);
        CHECK(capture.any_contains("no validation mistakes"));
        CHECK(h.class_count() == 3);
        CHECK(h.macro_count == 3);
        for (std::uint16_t c = 0; c < 3; ++c) {
            CHECK(h.mapping[c] == c);
        }
    }

    SUBCASE("an undertrained model produces a valid multi-class grouping") {
        const sd::Dataset dataset = sd::generate(tangled_spec());
        const auto splits = sd::split(dataset, {0.75, 0.25}, 3);
        tr::TrainConfig config = quick_config();
        config.epochs = 1;
        config.learning_rate = 0.01;
        const tr::TrainResult result = tr::train_baseline(config, splits[0], splits[1]);

        const hr::Hierarchy h = tr::extract_hierarchy(result.model, splits[1]);
        h.validate();
        CHECK(h.class_count() == 6);
        CHECK(h.macro_count >= 2);
        CHECK(h.macro_count <= 6);

        const hr::Hierarchy again = tr::extract_hierarchy(result.model, splits[1]);
        CHECK(again.mapping == h.mapping);
    }
}

TEST_CASE("a probe step along the negative gradient reduces the batch loss") {
    const sd::Dataset dataset = sd::generate(easy_spec());
    const std::vector<double> weights = tr::class_weights(dataset, tr::Weighting::inverse, 3);

    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        sm::SegModel model = sm::make_model(3, 8, {16});
        sm::init_weights(model, 100 + trial);
        const auto& scene = dataset.scenes[trial % dataset.scenes.size()];
        const Tensor points = sd::to_points_tensor(scene);

        const auto before = sm::forward_graph(model, ad::constant(points));
        const ad::NodePtr loss = tr::base_loss(before.probabilities, scene.labels, weights);
        const double loss_before = loss->value[0];
        const ad::Gradients grads = ad::backward(loss);

        const double step = 1e-4;
        for (const auto& p : model.parameters()) {
            const Tensor g = grads.wrt(p);
            auto values = p->value.values();
            const auto gv = g.values();
            for (std::size_t j = 0; j < values.size(); ++j) {
                values[j] -= step * gv[j];
            }
        }
        const auto after = sm::forward_graph(model, ad::constant(points));
        const double loss_after =
            tr::base_loss(after.probabilities, scene.labels, weights)->value[0];
        INFO("trial ", trial);
        CHECK(loss_after < loss_before);
    }
}

TEST_CASE("training validates split, hierarchy and weight combinations") {
    const sd::Dataset dataset = sd::generate(easy_spec());
    const auto splits = sd::split(dataset, {0.75, 0.25}, 1);
    tr::TrainConfig config = quick_config();

    config.lambda_f = 0.1;
    CHECK_THROWS_WITH_AS(tr::train_baseline(config, splits[0], splits[1]),
                         doctest::Contains("all loss weights must be zero"),
                         std::invalid_argument);

    config = quick_config();
    CHECK_THROWS_WITH_AS(tr::train_baseline(config, sd::Dataset{}, splits[1]),
                         doctest::Contains("at least one scene"), std::invalid_argument);

    // Three data classes, but the grouping only covers two.
    CHECK_THROWS_WITH_AS(tr::train_leak(config, splits[0], splits[1], grouping(1, {0, 0})),
                         doctest::Contains("hierarchy maps 2 classes but the data has 3"),
                         std::invalid_argument);
}

TEST_CASE("class count is inferred from the labels when unset") {
    const sd::Dataset dataset = sd::generate(easy_spec());
    const auto splits = sd::split(dataset, {0.75, 0.25}, 1);
    tr::TrainConfig config = quick_config();
    config.epochs = 1;
    config.class_count = 0;

    const tr::TrainResult result = tr::train_baseline(config, splits[0], splits[1]);
    CHECK(result.model.class_count() == 3);
    CHECK(result.micro_bank.class_count() == 3);

    config.class_count = 5;   // explicit count wins, extra classes stay empty
    const tr::TrainResult wide = tr::train_baseline(config, splits[0], splits[1]);
    CHECK(wide.model.class_count() == 5);
    CHECK(wide.micro_bank.visits[4] == 0);
}

TEST_SUITE_END();
