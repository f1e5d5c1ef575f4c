#include "leak/segmodel.hpp"

#include "leak/kernels.hpp"
#include "leak/rng.hpp"
#include "binio.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace leak::segmodel {

namespace ad = leak::autodiff;

namespace {

constexpr char kMagic[] = "LEAKW";
constexpr std::uint32_t kWeightsOnlyVersion = 1;
constexpr std::uint32_t kWithBanksVersion = 2;

[[noreturn]] void rethrow_with_layer(std::size_t layer, const std::exception& e) {
    throw std::runtime_error("forward: layer " + std::to_string(layer + 1) + ": " + e.what());
}

} // namespace

std::vector<ad::NodePtr> SegModel::parameters() const {
    std::vector<ad::NodePtr> params;
    params.reserve(2 * weights.size());
    for (std::size_t l = 0; l < weights.size(); ++l) {
        params.push_back(weights[l]);
        params.push_back(biases[l]);
    }
    return params;
}

SegModel make_model(std::size_t class_count, std::size_t feature_dim,
                    const std::vector<std::size_t>& hidden) {
    if (class_count < 2) throw std::invalid_argument("model: need at least 2 classes");
    if (feature_dim == 0) throw std::invalid_argument("model: feature dimension must be positive");
    SegModel model;
    model.widths.push_back(3);
    for (std::size_t h : hidden) {
        if (h == 0) throw std::invalid_argument("model: hidden width must be positive");
        model.widths.push_back(h);
    }
    model.widths.push_back(feature_dim);
    model.widths.push_back(class_count);
    for (std::size_t l = 0; l + 1 < model.widths.size(); ++l) {
        model.weights.push_back(ad::leaf(Tensor({model.widths[l], model.widths[l + 1]})));
        model.biases.push_back(ad::leaf(Tensor({std::size_t{1}, model.widths[l + 1]})));
    }
    return model;
}

void init_weights(SegModel& model, std::uint64_t seed) {
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        rng::Stream stream = rng::Stream::derived(seed, l);
        const double scale = std::sqrt(2.0 / static_cast<double>(model.widths[l]));
        Tensor w({model.widths[l], model.widths[l + 1]});
        for (double& v : w.values()) v = scale * stream.normal();
        model.weights[l]->value = std::move(w);
        model.biases[l]->value = Tensor({std::size_t{1}, model.widths[l + 1]});
    }
}

ForwardNodes forward_graph(const SegModel& model, const ad::NodePtr& points) {
    if (points->value.ndim() != 2 || points->value.cols() != model.widths.front()) {
        throw std::invalid_argument("forward: points must be [n x " +
                                    std::to_string(model.widths.front()) + "], got " +
                                    shape_string(points->value));
    }
    const std::size_t layers = model.layer_count();
    const ad::NodePtr ones = ad::constant(Tensor::full({points->value.rows(), 1}, 1.0));
    ForwardNodes out;
    ad::NodePtr x = points;
    for (std::size_t l = 0; l < layers; ++l) {
        try {
            const ad::NodePtr z =
                ad::add(ad::matmul(x, model.weights[l]), ad::matmul(ones, model.biases[l]));
            x = (l + 1 == layers) ? ad::softmax_rows(z) : ad::relu(z);
        } catch (const std::runtime_error& e) {
            rethrow_with_layer(l, e);
        }
        if (l + 2 == layers) out.features = x;
    }
    out.probabilities = x;
    return out;
}

std::pair<Tensor, Tensor> forward_values(const SegModel& model, const Tensor& points) {
    if (points.ndim() != 2 || points.cols() != model.widths.front()) {
        throw std::invalid_argument("forward: points must be [n x " +
                                    std::to_string(model.widths.front()) + "], got " +
                                    shape_string(points));
    }
    const std::size_t layers = model.layer_count();
    const Tensor ones = Tensor::full({points.rows(), 1}, 1.0);
    Tensor features;
    Tensor x = points;
    for (std::size_t l = 0; l < layers; ++l) {
        Tensor z = kernels::matmul(x, model.weights[l]->value);
        {
            // Same arithmetic as the graph path's ones*b matmul: z += 1.0 * b.
            const Tensor& b = model.biases[l]->value;
            const std::size_t cols = z.cols();
            for (std::size_t r = 0; r < z.rows(); ++r) {
                for (std::size_t c = 0; c < cols; ++c) z[r * cols + c] += b[c];
            }
        }
        x = (l + 1 == layers) ? kernels::softmax_rows(z) : kernels::relu(z);
        if (!x.all_finite()) {
            throw std::runtime_error("forward: layer " + std::to_string(l + 1) +
                                     ": result contains NaN or Inf");
        }
        if (l + 2 == layers) features = x;
    }
    return {std::move(features), std::move(x)};
}

ForwardResult forward(const SegModel& model, const synthdata::PointCloudSample& sample) {
    sample.validate(model.class_count());
    auto [features, probabilities] = forward_values(model, synthdata::to_points_tensor(sample));
    ForwardResult result;
    result.features = FeatureBatch{std::move(features), sample.labels};
    result.predictions = PredictionBatch{std::move(probabilities), sample.labels};
    return result;
}

synthdata::PointCloudSample downsample_with_labels(const synthdata::PointCloudSample& sample,
                                                   double keep_ratio, std::uint64_t seed) {
    if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) {
        throw std::invalid_argument("downsample: keep_ratio must lie in (0,1], got " +
                                    std::to_string(keep_ratio));
    }
    if (sample.points.size() != sample.labels.size()) {
        throw std::invalid_argument("downsample: point/label count mismatch");
    }
    const std::size_t n = sample.points.size();
    const auto keep = static_cast<std::size_t>(std::llround(keep_ratio * static_cast<double>(n)));
    if (keep == 0) {
        throw std::invalid_argument("downsample: keep_ratio " + std::to_string(keep_ratio) +
                                    " of " + std::to_string(n) + " points keeps nothing");
    }
    rng::Stream stream(seed);
    const std::vector<std::size_t> idx = stream.sample_indices(n, keep);
    synthdata::PointCloudSample out;
    out.points.reserve(keep);
    out.labels.reserve(keep);
    for (std::size_t i : idx) {
        out.points.push_back(sample.points[i]);
        out.labels.push_back(sample.labels[i]);
    }
    return out;
}

void save_checkpoint(const SegModel& model, std::span<const BankSnapshot> banks,
                     const std::filesystem::path& path) {
    binio::Writer w(path);
    w.magic(kMagic);
    w.u32(banks.empty() ? kWeightsOnlyVersion : kWithBanksVersion);
    w.u32(static_cast<std::uint32_t>(model.layer_count()));
    for (std::size_t width : model.widths) w.u32(static_cast<std::uint32_t>(width));
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        for (double v : model.weights[l]->value.values()) w.f64(v);
        for (double v : model.biases[l]->value.values()) w.f64(v);
    }
    if (!banks.empty()) {
        w.u32(static_cast<std::uint32_t>(banks.size()));
        for (const BankSnapshot& bank : banks) {
            w.u16(bank.level);
            w.u32(static_cast<std::uint32_t>(bank.centroids.rows()));
            w.u32(static_cast<std::uint32_t>(bank.centroids.cols()));
            for (std::uint64_t k : bank.visits) w.u64(k);
            for (double v : bank.centroids.values()) w.f64(v);
        }
    }
    w.close();
}

void save_checkpoint(const SegModel& model, const std::filesystem::path& path) {
    save_checkpoint(model, {}, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic(kMagic);
    const std::uint32_t version = r.u32();
    if (version != kWeightsOnlyVersion && version != kWithBanksVersion) {
        throw std::runtime_error(path.string() + ": unsupported checkpoint version " +
                                 std::to_string(version));
    }
    const std::uint32_t layers = r.u32();
    if (layers == 0) throw std::runtime_error(path.string() + ": checkpoint with zero layers");
    std::vector<std::size_t> widths(layers + 1);
    for (std::size_t& width : widths) width = r.u32();

    Checkpoint ckpt;
    ckpt.model.widths = widths;
    for (std::size_t l = 0; l < layers; ++l) {
        Tensor w({widths[l], widths[l + 1]});
        for (double& v : w.values()) v = r.f64();
        Tensor b({std::size_t{1}, widths[l + 1]});
        for (double& v : b.values()) v = r.f64();
        ckpt.model.weights.push_back(ad::leaf(std::move(w)));
        ckpt.model.biases.push_back(ad::leaf(std::move(b)));
    }
    if (version == kWithBanksVersion) {
        ckpt.banks.resize(r.u32());
        for (BankSnapshot& bank : ckpt.banks) {
            bank.level = static_cast<std::uint8_t>(r.u16());
            const std::uint32_t rows = r.u32();
            const std::uint32_t dim = r.u32();
            bank.visits.resize(rows);
            for (std::uint64_t& k : bank.visits) k = r.u64();
            bank.centroids = Tensor({rows, dim});
            for (double& v : bank.centroids.values()) v = r.f64();
        }
    }
    r.require_eof();
    return ckpt;
}

} // namespace leak::segmodel
