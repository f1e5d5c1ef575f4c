#include "leak/synthdata.hpp"

#include "leak/rng.hpp"
#include "binio.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace leak::synthdata {

namespace {

// Geometry of the synthetic world. Family anchors are far apart relative to
// the unit blob sigma; member blobs orbit their anchor at a radius that
// shrinks linearly with confusability, so confusability 0 keeps classes
// several sigma apart and confusability 1 collapses a family onto one spot.
constexpr double kFamilySpacing = 30.0;
constexpr double kMemberRadius = 8.0;
constexpr double kPointSigma = 1.0;

constexpr std::uint64_t kGeometryStream = 0;
constexpr std::uint64_t kSceneStreamBase = 1;

constexpr char kMagic[] = "LEAK1";
constexpr std::uint32_t kFormatVersion = 1;

using Vec3 = std::array<double, 3>;

// Near-uniform unit directions for n points (golden-angle spiral).
Vec3 sphere_direction(std::size_t i, std::size_t n) {
    if (n == 1) return {0.0, 0.0, 1.0};
    const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    constexpr double golden_angle = 2.399963229728653;
    const double theta = golden_angle * static_cast<double>(i);
    return {r * std::cos(theta), r * std::sin(theta), z};
}

// Uniform random rotation from a normalized quaternion.
std::array<Vec3, 3> random_rotation(rng::Stream& stream) {
    double w, x, y, z, norm;
    do {
        w = stream.normal();
        x = stream.normal();
        y = stream.normal();
        z = stream.normal();
        norm = std::sqrt(w * w + x * x + y * y + z * z);
    } while (norm < 1e-9);
    w /= norm; x /= norm; y /= norm; z /= norm;
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
             {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
             {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

Vec3 rotate(const std::array<Vec3, 3>& rot, const Vec3& v) {
    return {rot[0][0] * v[0] + rot[0][1] * v[1] + rot[0][2] * v[2],
            rot[1][0] * v[0] + rot[1][1] * v[1] + rot[1][2] * v[2],
            rot[2][0] * v[0] + rot[2][1] * v[1] + rot[2][2] * v[2]};
}

} // namespace

std::size_t ClassCatalog::family_count() const {
    std::uint16_t max_id = 0;
    for (std::uint16_t f : planted_family) max_id = std::max(max_id, f);
    return planted_family.empty() ? 0 : static_cast<std::size_t>(max_id) + 1;
}

void ClassCatalog::validate() const {
    const std::size_t m = names.size();
    if (m < 2) throw std::invalid_argument("catalog: need at least 2 classes, got " + std::to_string(m));
    if (m > 65535) throw std::invalid_argument("catalog: class count exceeds uint16 label range");
    if (planted_family.size() != m) {
        throw std::invalid_argument("catalog: planted_family size " + std::to_string(planted_family.size()) +
                                    " does not match class count " + std::to_string(m));
    }
    std::set<std::string> seen;
    for (const std::string& n : names) {
        if (n.empty()) throw std::invalid_argument("catalog: empty class name");
        if (!seen.insert(n).second) throw std::invalid_argument("catalog: duplicate class name \"" + n + "\"");
    }
    const std::size_t fam = family_count();
    std::vector<bool> present(fam, false);
    for (std::uint16_t f : planted_family) present[f] = true;
    for (std::size_t f = 0; f < fam; ++f) {
        if (!present[f]) {
            throw std::invalid_argument("catalog: family ids must be contiguous; id " +
                                        std::to_string(f) + " is unused");
        }
    }
}

void DatasetSpec::validate() const {
    catalog.validate();
    const std::size_t m = catalog.class_count();
    if (class_frequency.size() != m) {
        throw std::invalid_argument("dataset spec: class_frequency size " +
                                    std::to_string(class_frequency.size()) +
                                    " does not match class count " + std::to_string(m));
    }
    std::size_t positive = 0;
    for (double f : class_frequency) {
        if (!(f >= 0.0) || !std::isfinite(f)) {
            throw std::invalid_argument("dataset spec: class frequencies must be finite and non-negative");
        }
        if (f > 0.0) ++positive;
    }
    if (positive < 2) {
        throw std::invalid_argument("dataset spec: need at least 2 classes with positive frequency");
    }
    if (!(confusability >= 0.0 && confusability <= 1.0)) {
        throw std::invalid_argument("dataset spec: confusability must lie in [0,1], got " +
                                    std::to_string(confusability));
    }
    if (scene_count > 0 && points_per_scene == 0) {
        throw std::invalid_argument("dataset spec: points_per_scene must be positive");
    }
}

std::vector<double> DatasetSpec::normalized_frequency() const {
    std::vector<double> f = class_frequency;
    const double total = std::accumulate(f.begin(), f.end(), 0.0);
    for (double& v : f) v /= total;
    return f;
}

std::string to_json(const DatasetSpec& spec) {
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t c = 0; c < spec.catalog.class_count(); ++c) {
        classes.push_back({{"name", spec.catalog.names[c]}, {"family", spec.catalog.planted_family[c]}});
    }
    const nlohmann::json j = {
        {"classes", classes},
        {"class_frequency", spec.class_frequency},
        {"confusability", spec.confusability},
        {"scene_count", spec.scene_count},
        {"points_per_scene", spec.points_per_scene},
        {"seed", spec.seed},
    };
    return j.dump(2);
}

DatasetSpec spec_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("dataset spec: invalid JSON: ") + e.what());
    }
    DatasetSpec spec;
    try {
        for (const auto& entry : j.at("classes")) {
            spec.catalog.names.push_back(entry.at("name").get<std::string>());
            spec.catalog.planted_family.push_back(entry.at("family").get<std::uint16_t>());
        }
        spec.class_frequency = j.at("class_frequency").get<std::vector<double>>();
        spec.confusability = j.at("confusability").get<double>();
        spec.scene_count = j.at("scene_count").get<std::size_t>();
        spec.points_per_scene = j.at("points_per_scene").get<std::size_t>();
        spec.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("dataset spec: missing or ill-typed field: ") + e.what());
    }
    spec.validate();
    return spec;
}

DatasetSpec load_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset spec: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return spec_from_json(buf.str());
}

void save_spec(const DatasetSpec& spec, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset spec: " + path.string());
    out << to_json(spec) << '\n';
}

void PointCloudSample::validate(std::size_t class_count) const {
    if (points.empty()) throw std::invalid_argument("sample: needs at least one point");
    if (labels.size() != points.size()) {
        throw std::invalid_argument("sample: " + std::to_string(points.size()) + " points but " +
                                    std::to_string(labels.size()) + " labels");
    }
    for (std::uint16_t l : labels) {
        if (l >= class_count) {
            throw std::invalid_argument("sample: label " + std::to_string(l) + " out of range for " +
                                        std::to_string(class_count) + " classes");
        }
    }
}

std::size_t Dataset::total_points() const {
    std::size_t n = 0;
    for (const PointCloudSample& s : scenes) n += s.size();
    return n;
}

std::vector<Vec3> class_centers(const DatasetSpec& spec) {
    spec.validate();
    const std::size_t m = spec.catalog.class_count();
    const std::size_t families = spec.catalog.family_count();

    // Family anchors on a coarse cubic lattice.
    const std::size_t side = static_cast<std::size_t>(std::ceil(std::cbrt(static_cast<double>(families))));
    std::vector<Vec3> anchors(families);
    for (std::size_t f = 0; f < families; ++f) {
        anchors[f] = {kFamilySpacing * static_cast<double>(f % side),
                      kFamilySpacing * static_cast<double>((f / side) % side),
                      kFamilySpacing * static_cast<double>(f / (side * side))};
    }

    // One random orientation per family (single geometry stream, family order).
    rng::Stream geo = rng::Stream::derived(spec.seed, kGeometryStream);
    std::vector<std::array<Vec3, 3>> rotations(families);
    for (std::size_t f = 0; f < families; ++f) rotations[f] = random_rotation(geo);

    std::vector<std::size_t> family_size(families, 0);
    for (std::uint16_t f : spec.catalog.planted_family) ++family_size[f];

    const double radius = kMemberRadius * (1.0 - spec.confusability);
    std::vector<std::size_t> member_rank(families, 0);
    std::vector<Vec3> centers(m);
    for (std::size_t c = 0; c < m; ++c) {
        const std::uint16_t f = spec.catalog.planted_family[c];
        const Vec3 dir = rotate(rotations[f], sphere_direction(member_rank[f]++, family_size[f]));
        centers[c] = {anchors[f][0] + radius * dir[0],
                      anchors[f][1] + radius * dir[1],
                      anchors[f][2] + radius * dir[2]};
    }
    return centers;
}

Dataset generate(const DatasetSpec& spec) {
    spec.validate();
    const std::vector<Vec3> centers = class_centers(spec);
    const auto cumulative = rng::cumulative_weights(spec.normalized_frequency());

    Dataset ds;
    ds.scenes.resize(spec.scene_count);
    for (std::size_t s = 0; s < spec.scene_count; ++s) {
        rng::Stream stream = rng::Stream::derived(spec.seed, kSceneStreamBase + s);
        PointCloudSample& scene = ds.scenes[s];
        scene.points.resize(spec.points_per_scene);
        scene.labels.resize(spec.points_per_scene);
        for (std::size_t i = 0; i < spec.points_per_scene; ++i) {
            const auto label = static_cast<std::uint16_t>(stream.categorical(cumulative));
            scene.labels[i] = label;
            const Vec3& c = centers[label];
            scene.points[i] = {c[0] + kPointSigma * stream.normal(),
                               c[1] + kPointSigma * stream.normal(),
                               c[2] + kPointSigma * stream.normal()};
        }
    }
    return ds;
}

void save(const Dataset& dataset, const std::filesystem::path& path) {
    for (const PointCloudSample& s : dataset.scenes) {
        if (s.points.empty() || s.labels.size() != s.points.size()) {
            throw std::invalid_argument("save: malformed scene (empty or point/label count mismatch)");
        }
        if (s.points.size() > UINT32_MAX) throw std::invalid_argument("save: scene too large for format");
    }
    binio::Writer w(path);
    w.magic(kMagic);
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(dataset.scenes.size()));
    for (const PointCloudSample& s : dataset.scenes) {
        w.u32(static_cast<std::uint32_t>(s.points.size()));
        for (const Vec3& p : s.points) {
            w.f64(p[0]);
            w.f64(p[1]);
            w.f64(p[2]);
        }
        w.bytes(s.labels.data(), s.labels.size() * sizeof(std::uint16_t));
    }
    w.close();
}

Dataset load(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic(kMagic);
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion) {
        throw std::runtime_error(path.string() + ": unsupported dataset version " + std::to_string(version));
    }
    Dataset ds;
    ds.scenes.resize(r.u32());
    for (PointCloudSample& s : ds.scenes) {
        const std::uint32_t n = r.u32();
        if (n == 0) {
            throw std::runtime_error(path.string() + ": empty scene at byte offset " +
                                     std::to_string(r.offset()));
        }
        s.points.resize(n);
        for (Vec3& p : s.points) {
            p[0] = r.f64();
            p[1] = r.f64();
            p[2] = r.f64();
        }
        s.labels.resize(n);
        r.bytes(s.labels.data(), s.labels.size() * sizeof(std::uint16_t));
    }
    r.require_eof();
    return ds;
}

void export_csv(const Dataset& dataset, std::ostream& out) {
    out << "scene,point,x,y,z,label\n";
    out << std::setprecision(17);
    for (std::size_t s = 0; s < dataset.scenes.size(); ++s) {
        const PointCloudSample& scene = dataset.scenes[s];
        for (std::size_t i = 0; i < scene.size(); ++i) {
            out << s << ',' << i << ',' << scene.points[i][0] << ',' << scene.points[i][1] << ','
                << scene.points[i][2] << ',' << scene.labels[i] << '\n';
        }
    }
}

std::vector<Dataset> split(const Dataset& dataset, const std::vector<double>& fractions,
                           std::uint64_t seed) {
    if (fractions.empty()) throw std::invalid_argument("split: no fractions given");
    double total = 0.0;
    for (double f : fractions) {
        if (!(f > 0.0)) throw std::invalid_argument("split: fractions must be positive");
        total += f;
    }
    if (std::fabs(total - 1.0) > 1e-9) {
        throw std::invalid_argument("split: fractions sum to " + std::to_string(total) + ", expected 1");
    }
    const std::size_t scene_count = dataset.scenes.size();
    const std::size_t k = fractions.size();
    if (scene_count < k) {
        throw std::invalid_argument("split: " + std::to_string(scene_count) + " scenes cannot fill " +
                                    std::to_string(k) + " splits");
    }

    // Largest-remainder apportionment, then repair so every split is non-empty.
    std::vector<std::size_t> sizes(k);
    std::vector<std::pair<double, std::size_t>> remainder(k);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double exact = fractions[i] * static_cast<double>(scene_count);
        sizes[i] = static_cast<std::size_t>(exact);
        remainder[i] = {exact - static_cast<double>(sizes[i]), i};
        assigned += sizes[i];
    }
    std::sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t r = 0; r < scene_count - assigned; ++r) ++sizes[remainder[r % k].second];
    for (std::size_t i = 0; i < k; ++i) {
        while (sizes[i] == 0) {
            const std::size_t donor = static_cast<std::size_t>(
                std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
            --sizes[donor];
            ++sizes[i];
        }
    }

    std::vector<std::size_t> order(scene_count);
    for (std::size_t i = 0; i < scene_count; ++i) order[i] = i;
    rng::Stream stream = rng::Stream::derived(seed, 0);
    stream.shuffle(order);

    std::vector<Dataset> parts(k);
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < k; ++i) {
        parts[i].scenes.reserve(sizes[i]);
        for (std::size_t j = 0; j < sizes[i]; ++j) {
            parts[i].scenes.push_back(dataset.scenes[order[cursor++]]);
        }
    }
    return parts;
}

Tensor to_points_tensor(const PointCloudSample& sample) {
    Tensor t({sample.points.size(), 3});
    for (std::size_t i = 0; i < sample.points.size(); ++i) {
        t[i * 3 + 0] = sample.points[i][0];
        t[i * 3 + 1] = sample.points[i][1];
        t[i * 3 + 2] = sample.points[i][2];
    }
    return t;
}

} // namespace leak::synthdata
