#include "leak/trainer.hpp"

#include "leak/fairloss.hpp"
#include "leak/log.hpp"
#include "leak/rng.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace leak::trainer {

namespace ad = autodiff;
namespace fs = std::filesystem;

namespace {

// Stream id for the scene-order shuffle; weight init owns the low ids.
constexpr std::uint64_t kOrderStream = 0xB41C;

const char* weighting_name(Weighting w) {
    switch (w) {
    case Weighting::inverse: return "inverse";
    case Weighting::sqrt_inverse: return "sqrt_inverse";
    case Weighting::none: return "none";
    }
    throw std::invalid_argument("train config: unknown weighting scheme");
}

Weighting weighting_from(const std::string& name) {
    if (name == "inverse") return Weighting::inverse;
    if (name == "sqrt_inverse") return Weighting::sqrt_inverse;
    if (name == "none") return Weighting::none;
    throw std::runtime_error("train config: unknown class weighting '" + name + "'");
}

bool is_divergence(const std::runtime_error& e) {
    return std::string(e.what()).find("NaN or Inf") != std::string::npos;
}

std::size_t infer_class_count(const TrainConfig& config, const synthdata::Dataset& train,
                              const synthdata::Dataset& val) {
    if (config.class_count != 0) {
        return config.class_count;
    }
    std::size_t m = 0;
    for (const auto* split : {&train, &val}) {
        for (const auto& scene : split->scenes) {
            for (std::uint16_t label : scene.labels) {
                m = std::max<std::size_t>(m, label + 1);
            }
        }
    }
    return m;
}

struct BatchView {
    Tensor points;
    std::vector<std::uint16_t> labels;
};

BatchView gather_batch(const synthdata::Dataset& train, std::span<const std::size_t> scene_ids) {
    std::size_t n = 0;
    for (std::size_t s : scene_ids) {
        n += train.scenes[s].size();
    }
    BatchView batch{Tensor({n, 3}), {}};
    batch.labels.reserve(n);
    std::size_t row = 0;
    for (std::size_t s : scene_ids) {
        const auto& scene = train.scenes[s];
        for (std::size_t i = 0; i < scene.size(); ++i) {
            batch.points.at(row, 0) = scene.points[i][0];
            batch.points.at(row, 1) = scene.points[i][1];
            batch.points.at(row, 2) = scene.points[i][2];
            ++row;
        }
        batch.labels.insert(batch.labels.end(), scene.labels.begin(), scene.labels.end());
    }
    return batch;
}

nlohmann::json record_to_json(const EpochRecord& r) {
    return nlohmann::json{{"epoch", r.epoch},
                          {"base", r.base},
                          {"proto_micro", r.proto_micro},
                          {"proto_macro", r.proto_macro},
                          {"fairness", r.fairness},
                          {"total", r.total},
                          {"wall_seconds", r.wall_seconds},
                          {"validation", nlohmann::json::parse(r.validation.to_json())}};
}

TrainResult run_training(const TrainConfig& config, const synthdata::Dataset& train,
                         const synthdata::Dataset& val, const hierarchy::Hierarchy* h,
                         const fs::path& checkpoint_dir) {
    config.validate();
    if (train.scenes.empty() || val.scenes.empty()) {
        throw std::invalid_argument("training: both splits need at least one scene");
    }
    const std::size_t m = infer_class_count(config, train, val);
    for (const auto* split : {&train, &val}) {
        for (const auto& scene : split->scenes) {
            scene.validate(m);
        }
    }
    if (h != nullptr) {
        h->validate();
        if (h->class_count() != m) {
            throw std::invalid_argument("training: hierarchy maps " +
                                        std::to_string(h->class_count()) +
                                        " classes but the data has " + std::to_string(m));
        }
    }

    const std::vector<double> weights = class_weights(train, config.weighting, m);

    TrainResult result;
    result.model = segmodel::make_model(m, config.feature_dim, config.hidden);
    segmodel::init_weights(result.model, config.seed);
    result.micro_bank = protobank::make_bank(protobank::BankLevel::micro, m, config.feature_dim);
    if (h != nullptr) {
        result.macro_bank =
            protobank::make_bank(protobank::BankLevel::macro, h->macro_count, config.feature_dim);
    }

    const auto params = result.model.parameters();
    std::vector<Tensor> velocities;
    velocities.reserve(params.size());
    for (const auto& p : params) {
        velocities.push_back(Tensor::zeros_like(p->value));
    }

    // Rollback state: weights and banks as of the last completed epoch.
    std::vector<Tensor> good_params;
    for (const auto& p : params) {
        good_params.push_back(p->value);
    }
    auto good_micro = result.micro_bank;
    auto good_macro = result.macro_bank;

    rng::Stream order_rng = rng::Stream::derived(config.seed, kOrderStream);
    const std::size_t steps_per_epoch =
        (train.scenes.size() + config.batch_scenes - 1) / config.batch_scenes;
    const std::size_t total_steps = config.epochs * steps_per_epoch;
    std::size_t global_step = 0;

    std::vector<std::size_t> order(train.scenes.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        order_rng.shuffle(order);

        double base_sum = 0.0, micro_sum = 0.0, macro_sum = 0.0, fair_sum = 0.0, total_sum = 0.0;
        std::size_t steps = 0;
        std::string divergence;
        for (std::size_t start = 0; start < order.size(); start += config.batch_scenes) {
            const std::size_t count = std::min(config.batch_scenes, order.size() - start);
            const BatchView batch = gather_batch(train, {order.data() + start, count});
            try {
                const auto fwd =
                    segmodel::forward_graph(result.model, ad::constant(batch.points));
                const FeatureBatch fb{fwd.features->value, batch.labels};
                protobank::update(result.micro_bank, fb);
                if (h != nullptr) {
                    protobank::update(*result.macro_bank, fb, h);
                }

                ad::NodePtr total_node = base_loss(fwd.probabilities, batch.labels, weights);
                base_sum += total_node->value[0];
                if (config.lambda_pm > 0.0) {
                    const auto loss =
                        protobank::proto_loss(result.micro_bank, fwd.features, batch.labels);
                    micro_sum += loss->value[0];
                    total_node = ad::add(total_node, ad::scale(loss, config.lambda_pm));
                }
                if (config.lambda_pM > 0.0) {
                    const auto loss = protobank::proto_loss(*result.macro_bank, fwd.features,
                                                            batch.labels, h);
                    macro_sum += loss->value[0];
                    total_node = ad::add(total_node, ad::scale(loss, config.lambda_pM));
                }
                if (config.lambda_f > 0.0) {
                    const auto loss = fairloss::fairness_loss(fwd.probabilities, batch.labels, *h);
                    fair_sum += loss->value[0];
                    total_node = ad::add(total_node, ad::scale(loss, config.lambda_f));
                }
                total_sum += total_node->value[0];

                const ad::Gradients grads = ad::backward(total_node);
                const double progress =
                    1.0 - static_cast<double>(global_step) / static_cast<double>(total_steps);
                const double lr = config.learning_rate * std::pow(progress, config.poly_power);
                for (std::size_t i = 0; i < params.size(); ++i) {
                    const Tensor g = grads.wrt(params[i]);
                    Tensor next = params[i]->value;
                    auto v = velocities[i].values();
                    auto nw = next.values();
                    const auto gv = g.values();
                    for (std::size_t j = 0; j < nw.size(); ++j) {
                        v[j] = config.momentum * v[j] + gv[j];
                        nw[j] -= lr * v[j];
                    }
                    if (!next.all_finite()) {
                        throw std::runtime_error("optimizer: result contains NaN or Inf");
                    }
                    params[i]->value = std::move(next);
                }
            } catch (const std::runtime_error& e) {
                if (!is_divergence(e)) {
                    throw;
                }
                divergence = e.what();
                break;
            }
            ++steps;
            ++global_step;
        }

        if (!divergence.empty()) {
            log::warn("training: diverged in epoch " + std::to_string(epoch) + " (" + divergence +
                      "); rolled back to the last completed epoch");
            for (std::size_t i = 0; i < params.size(); ++i) {
                params[i]->value = good_params[i];
            }
            result.micro_bank = good_micro;
            result.macro_bank = good_macro;
            result.aborted = true;
            break;
        }

        EpochRecord record;
        record.epoch = epoch;
        record.base = base_sum / static_cast<double>(steps);
        record.proto_micro = micro_sum / static_cast<double>(steps);
        record.proto_macro = macro_sum / static_cast<double>(steps);
        record.fairness = fair_sum / static_cast<double>(steps);
        record.total = total_sum / static_cast<double>(steps);

        const EvalOutputs eval = evaluate_split(result.model, val);
        record.validation =
            metrics::compute_report(eval.cm, &eval.features, nullptr, &result.micro_bank, nullptr);
        record.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.records.push_back(std::move(record));

        for (std::size_t i = 0; i < params.size(); ++i) {
            good_params[i] = params[i]->value;
        }
        good_micro = result.micro_bank;
        good_macro = result.macro_bank;

        if (!checkpoint_dir.empty()) {
            std::ostringstream name;
            name << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".ckpt";
            segmodel::save_checkpoint(result.model, result.bank_snapshots(),
                                      checkpoint_dir / name.str());
        }
    }
    return result;
}

} // namespace

void TrainConfig::validate() const {
    if (epochs == 0) throw std::invalid_argument("train config: epochs must be positive");
    if (batch_scenes == 0) throw std::invalid_argument("train config: batch_scenes must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("train config: learning rate must be positive and finite");
    }
    if (poly_power < 0.0) throw std::invalid_argument("train config: poly power must be non-negative");
    if (momentum < 0.0 || momentum >= 1.0) {
        throw std::invalid_argument("train config: momentum must lie in [0, 1)");
    }
    for (double lambda : {lambda_pm, lambda_pM, lambda_f}) {
        if (lambda < 0.0 || !std::isfinite(lambda)) {
            throw std::invalid_argument("train config: loss weights must be non-negative");
        }
    }
    if (feature_dim == 0) throw std::invalid_argument("train config: feature_dim must be positive");
}

std::string to_json(const TrainConfig& config) {
    const nlohmann::json j = {{"epochs", config.epochs},
                              {"batch_scenes", config.batch_scenes},
                              {"learning_rate", config.learning_rate},
                              {"poly_power", config.poly_power},
                              {"momentum", config.momentum},
                              {"lambda_pm", config.lambda_pm},
                              {"lambda_pM", config.lambda_pM},
                              {"lambda_f", config.lambda_f},
                              {"class_weighting", weighting_name(config.weighting)},
                              {"seed", config.seed},
                              {"class_count", config.class_count},
                              {"feature_dim", config.feature_dim},
                              {"hidden", config.hidden}};
    return j.dump(2);
}

TrainConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("train config: ") + e.what());
    }
    TrainConfig config;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "epochs") config.epochs = value.get<std::size_t>();
            else if (key == "batch_scenes") config.batch_scenes = value.get<std::size_t>();
            else if (key == "learning_rate") config.learning_rate = value.get<double>();
            else if (key == "poly_power") config.poly_power = value.get<double>();
            else if (key == "momentum") config.momentum = value.get<double>();
            else if (key == "lambda_pm") config.lambda_pm = value.get<double>();
            else if (key == "lambda_pM") config.lambda_pM = value.get<double>();
            else if (key == "lambda_f") config.lambda_f = value.get<double>();
            else if (key == "class_weighting") config.weighting = weighting_from(value.get<std::string>());
            else if (key == "seed") config.seed = value.get<std::uint64_t>();
            else if (key == "class_count") config.class_count = value.get<std::size_t>();
            else if (key == "feature_dim") config.feature_dim = value.get<std::size_t>();
            else if (key == "hidden") config.hidden = value.get<std::vector<std::size_t>>();
            else throw std::runtime_error("train config: unknown key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("train config: ") + e.what());
    }
    config.validate();
    return config;
}

TrainConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("train config: cannot open " + path.string());
    }
    std::ostringstream text;
    text << in.rdbuf();
    return config_from_json(text.str());
}

void save_config(const TrainConfig& config, const fs::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("train config: cannot write " + path.string());
    }
    out << to_json(config) << '\n';
}

std::vector<double> class_weights(const synthdata::Dataset& train, Weighting weighting,
                                  std::size_t class_count) {
    if (class_count == 0) {
        throw std::invalid_argument("class weights: class count must be positive");
    }
    std::vector<std::uint64_t> counts(class_count, 0);
    std::uint64_t total = 0;
    for (const auto& scene : train.scenes) {
        for (std::uint16_t label : scene.labels) {
            if (label >= class_count) {
                throw std::invalid_argument("class weights: label " + std::to_string(label) +
                                            " outside " + std::to_string(class_count) + " classes");
            }
            ++counts[label];
            ++total;
        }
    }
    if (total == 0) {
        throw std::invalid_argument("class weights: no labeled points");
    }

    std::vector<double> weights(class_count, 0.0);
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < class_count; ++c) {
        if (counts[c] == 0) {
            continue;   // absent classes keep weight zero
        }
        const double frequency = static_cast<double>(counts[c]) / static_cast<double>(total);
        double w = 1.0;
        if (weighting == Weighting::inverse) {
            w = 1.0 / frequency;
        } else if (weighting == Weighting::sqrt_inverse) {
            w = std::sqrt(1.0 / frequency);
        }
        weights[c] = w;
        sum += w;
        ++present;
    }
    // Mean weight one over present classes, so switching schemes does not
    // rescale the effective learning rate.
    const double rescale = static_cast<double>(present) / sum;
    for (double& w : weights) {
        w *= rescale;
    }
    return weights;
}

autodiff::NodePtr base_loss(const autodiff::NodePtr& probabilities,
                            std::span<const std::uint16_t> labels,
                            std::span<const double> weights) {
    const Tensor& value = probabilities->value;
    if (value.ndim() != 2) {
        throw std::invalid_argument("base loss: probabilities must be a 2-D batch, got " +
                                    shape_string(value));
    }
    if (value.rows() != labels.size()) {
        throw std::invalid_argument("base loss: " + std::to_string(value.rows()) +
                                    " probability rows but " + std::to_string(labels.size()) +
                                    " labels");
    }
    if (labels.empty()) {
        throw std::invalid_argument("base loss: empty batch");
    }
    const std::size_t m = value.cols();
    if (weights.size() != m) {
        throw std::invalid_argument("base loss: " + std::to_string(weights.size()) +
                                    " class weights for " + std::to_string(m) + " classes");
    }
    const std::size_t n = labels.size();
    Tensor mask({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= m) {
            throw std::invalid_argument("base loss: label " + std::to_string(labels[i]) +
                                        " outside " + std::to_string(m) + " classes");
        }
        mask.at(i, labels[i]) = -weights[labels[i]] / static_cast<double>(n);
    }
    return ad::sum(ad::mul(ad::constant(std::move(mask)), ad::log(probabilities, 1e-12)));
}

std::string TrainLog::to_jsonl() const {
    std::string out;
    for (const auto& record : records) {
        out += record_to_json(record).dump();
        out += '\n';
    }
    return out;
}

TrainLog TrainLog::from_jsonl(const std::string& text) {
    TrainLog log;
    std::istringstream lines(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            EpochRecord record;
            record.epoch = j.at("epoch").get<std::size_t>();
            record.base = j.at("base").get<double>();
            record.proto_micro = j.at("proto_micro").get<double>();
            record.proto_macro = j.at("proto_macro").get<double>();
            record.fairness = j.at("fairness").get<double>();
            record.total = j.at("total").get<double>();
            record.wall_seconds = j.at("wall_seconds").get<double>();
            record.validation = metrics::parse_report(j.at("validation").dump());
            log.records.push_back(std::move(record));
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("train log: line " + std::to_string(line_no) + ": " +
                                     e.what());
        }
    }
    return log;
}

void TrainLog::save(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("train log: cannot write " + path.string());
    }
    out << to_jsonl();
}

TrainLog TrainLog::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("train log: cannot open " + path.string());
    }
    std::ostringstream text;
    text << in.rdbuf();
    return from_jsonl(text.str());
}

std::vector<segmodel::BankSnapshot> TrainResult::bank_snapshots() const {
    std::vector<segmodel::BankSnapshot> snaps{protobank::to_snapshot(micro_bank)};
    if (macro_bank.has_value()) {
        snaps.push_back(protobank::to_snapshot(*macro_bank));
    }
    return snaps;
}

TrainResult train_baseline(const TrainConfig& config, const synthdata::Dataset& train,
                           const synthdata::Dataset& val, const fs::path& checkpoint_dir) {
    if (config.lambda_pm != 0.0 || config.lambda_pM != 0.0 || config.lambda_f != 0.0) {
        throw std::invalid_argument("baseline training: all loss weights must be zero");
    }
    return run_training(config, train, val, nullptr, checkpoint_dir);
}

TrainResult train_leak(const TrainConfig& config, const synthdata::Dataset& train,
                       const synthdata::Dataset& val, const hierarchy::Hierarchy& h,
                       const fs::path& checkpoint_dir) {
    return run_training(config, train, val, &h, checkpoint_dir);
}

EvalOutputs evaluate_split(const segmodel::SegModel& model, const synthdata::Dataset& split) {
    if (split.scenes.empty()) {
        throw std::invalid_argument("evaluate: empty split");
    }
    const std::size_t m = model.class_count();
    const std::size_t width = model.feature_dim();
    const std::size_t n = split.total_points();

    EvalOutputs out{hierarchy::ConfusionMatrix(m), FeatureBatch{Tensor({n, width}), {}},
                    PredictionBatch{Tensor({n, m}), {}}};
    out.features.labels.reserve(n);
    std::size_t row = 0;
    for (const auto& scene : split.scenes) {
        scene.validate(m);
        const auto [features, probabilities] =
            segmodel::forward_values(model, synthdata::to_points_tensor(scene));
        for (std::size_t i = 0; i < scene.size(); ++i) {
            for (std::size_t f = 0; f < width; ++f) {
                out.features.features.at(row, f) = features.at(i, f);
            }
            for (std::size_t c = 0; c < m; ++c) {
                out.predictions.probabilities.at(row, c) = probabilities.at(i, c);
            }
            ++row;
        }
        out.features.labels.insert(out.features.labels.end(), scene.labels.begin(),
                                   scene.labels.end());
        out.cm.add(PredictionBatch{probabilities, scene.labels});
    }
    out.predictions.labels = out.features.labels;
    return out;
}

hierarchy::Hierarchy extract_hierarchy(const segmodel::SegModel& model,
                                       const synthdata::Dataset& val, std::uint64_t seed) {
    const EvalOutputs eval = evaluate_split(model, val);
    std::uint64_t mistakes = 0;
    for (std::size_t truth = 0; truth < eval.cm.class_count; ++truth) {
        mistakes += eval.cm.row_total(truth) - eval.cm.at(truth, truth);
    }
    if (mistakes == 0) {
        log::warn("extract hierarchy: no validation mistakes to learn from; "
                  "keeping every class separate");
        return hierarchy::Hierarchy::identity(eval.cm.class_count);
    }
    const hierarchy::ConfusionGraph g = hierarchy::to_graph(eval.cm);
    const std::size_t k = hierarchy::select_cluster_count(g, seed);
    return hierarchy::spectral_cluster(g, k, seed);
}

} // namespace leak::trainer
