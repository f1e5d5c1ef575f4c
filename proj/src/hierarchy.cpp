#include "leak/hierarchy.hpp"

#include "leak/log.hpp"
#include "leak/rng.hpp"

#include <json.hpp>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace leak::hierarchy {

namespace {

constexpr double kFlatCurveTolerance = 1e-12;

struct KmeansResult {
    std::vector<std::uint16_t> assign;
    double inertia = std::numeric_limits<double>::infinity();
};

double squared_distance(const Eigen::MatrixXd& x, std::size_t row, const Eigen::MatrixXd& centroids,
                        std::size_t c) {
    return (x.row(static_cast<Eigen::Index>(row)) - centroids.row(static_cast<Eigen::Index>(c)))
        .squaredNorm();
}

KmeansResult kmeans_once(const Eigen::MatrixXd& x, std::size_t k, rng::Stream& stream) {
    const auto n = static_cast<std::size_t>(x.rows());
    Eigen::MatrixXd centroids(static_cast<Eigen::Index>(k), x.cols());
    const std::vector<std::size_t> init = stream.sample_indices(n, k);
    for (std::size_t c = 0; c < k; ++c) {
        centroids.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(init[c]));
    }

    KmeansResult result;
    result.assign.assign(n, 0);
    for (int iter = 0; iter < 100; ++iter) {
        // Assignment step; ties go to the lower centroid id.
        bool changed = iter == 0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = squared_distance(x, i, centroids, 0);
            for (std::size_t c = 1; c < k; ++c) {
                const double d = squared_distance(x, i, centroids, c);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (result.assign[i] != best) {
                result.assign[i] = static_cast<std::uint16_t>(best);
                changed = true;
            }
        }

        // Re-seed empty clusters with the point farthest from its centroid.
        std::vector<std::size_t> sizes(k, 0);
        for (std::uint16_t a : result.assign) ++sizes[a];
        std::vector<bool> stolen(n, false);
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] > 0) continue;
            std::size_t worst = n;
            double worst_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (stolen[i] || sizes[result.assign[i]] <= 1) continue;
                const double d = squared_distance(x, i, centroids, result.assign[i]);
                if (d > worst_d) {
                    worst_d = d;
                    worst = i;
                }
            }
            if (worst == n) break;   // k > distinct points; leave cluster empty
            --sizes[result.assign[worst]];
            result.assign[worst] = static_cast<std::uint16_t>(c);
            ++sizes[c];
            stolen[worst] = true;
            changed = true;
        }

        if (!changed) break;

        centroids.setZero();
        for (std::size_t i = 0; i < n; ++i) {
            centroids.row(result.assign[i]) += x.row(static_cast<Eigen::Index>(i));
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] > 0) centroids.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(sizes[c]);
        }
    }

    result.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        result.inertia += squared_distance(x, i, centroids, result.assign[i]);
    }
    return result;
}

std::vector<std::uint16_t> kmeans(const Eigen::MatrixXd& x, std::size_t k, std::uint64_t seed) {
    constexpr int kRestarts = 20;
    KmeansResult best;
    for (int r = 0; r < kRestarts; ++r) {
        rng::Stream stream = rng::Stream::derived(seed, static_cast<std::uint64_t>(r));
        KmeansResult candidate = kmeans_once(x, k, stream);
        if (candidate.inertia < best.inertia) best = std::move(candidate);
    }
    return best.assign;
}

// Relabel macro ids so they appear in order of their smallest member micro id.
Hierarchy canonicalize(std::vector<std::uint16_t> raw_mapping) {
    constexpr std::uint16_t kUnset = 0xFFFF;
    std::vector<std::uint16_t> remap(raw_mapping.size(), kUnset);
    std::uint16_t next = 0;
    Hierarchy h;
    h.mapping.resize(raw_mapping.size());
    for (std::size_t i = 0; i < raw_mapping.size(); ++i) {
        std::uint16_t& slot = remap[raw_mapping[i]];
        if (slot == kUnset) slot = next++;
        h.mapping[i] = slot;
    }
    h.macro_count = next;
    return h;
}

// Minimum conductance over all bipartitions of the induced subgraph; this is
// how "hard to split further" a cluster is. 1 = as cohesive as possible,
// 0 = internally disconnected. Exhaustive for small clusters, Fiedler sweep
// beyond that.
double internal_conductance(const ConfusionGraph& g, const std::vector<std::uint16_t>& members) {
    const std::size_t n = members.size();
    if (n <= 1) return 1.0;

    Eigen::MatrixXd w(n, n);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) w(a, b) = g.at(members[a], members[b]);
    }
    std::vector<double> deg(n, 0.0);
    double total_vol = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        deg[a] = w.row(static_cast<Eigen::Index>(a)).sum();
        total_vol += deg[a];
    }
    if (total_vol <= 0.0) return 0.0;

    auto side_conductance = [&](const std::vector<bool>& in_s) {
        double cut = 0.0, vol = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            if (!in_s[a]) continue;
            vol += deg[a];
            for (std::size_t b = 0; b < n; ++b) {
                if (!in_s[b]) cut += w(a, b);
            }
        }
        const double denom = std::min(vol, total_vol - vol);
        return denom <= 0.0 ? 1.0 : cut / denom;
    };

    double best = 1.0;
    if (n <= 12) {
        // Fix member 0 on one side to enumerate each bipartition once.
        for (std::uint32_t mask = 1; mask < (1u << (n - 1)); ++mask) {
            std::vector<bool> in_s(n, false);
            for (std::size_t b = 0; b + 1 < n; ++b) in_s[b + 1] = (mask >> b) & 1u;
            best = std::min(best, side_conductance(in_s));
        }
        return best;
    }

    Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(n, n);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            if (deg[a] > 0.0 && deg[b] > 0.0) {
                lap(a, b) -= w(a, b) / std::sqrt(deg[a] * deg[b]);
            }
        }
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(lap);
    const Eigen::VectorXd fiedler = eig.eigenvectors().col(1);
    std::vector<std::size_t> order(n);
    for (std::size_t a = 0; a < n; ++a) order[a] = a;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return fiedler[static_cast<Eigen::Index>(a)] != fiedler[static_cast<Eigen::Index>(b)]
                   ? fiedler[static_cast<Eigen::Index>(a)] < fiedler[static_cast<Eigen::Index>(b)]
                   : a < b;
    });
    std::vector<bool> in_s(n, false);
    for (std::size_t t = 0; t + 1 < n; ++t) {
        in_s[order[t]] = true;
        best = std::min(best, side_conductance(in_s));
    }
    return best;
}

// Cut mass between clusters as a fraction of all edge mass.
double cut_fraction(const ConfusionGraph& g, const Hierarchy& h) {
    double cut = 0.0, total = 0.0;
    for (std::size_t i = 0; i < g.node_count; ++i) {
        for (std::size_t j = i + 1; j < g.node_count; ++j) {
            total += g.at(i, j);
            if (h.mapping[i] != h.mapping[j]) cut += g.at(i, j);
        }
    }
    return total <= 0.0 ? 0.0 : cut / total;
}

} // namespace

std::uint64_t ConfusionMatrix::row_total(std::size_t truth) const {
    std::uint64_t sum = 0;
    for (std::size_t j = 0; j < class_count; ++j) sum += at(truth, j);
    return sum;
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t sum = 0;
    for (std::uint64_t v : counts) sum += v;
    return sum;
}

void ConfusionMatrix::add(const PredictionBatch& batch) {
    batch.validate();
    if (batch.class_count() != class_count) {
        throw std::invalid_argument("confusion: batch has " + std::to_string(batch.class_count()) +
                                    " classes, matrix has " + std::to_string(class_count));
    }
    const std::size_t m = class_count;
    for (std::size_t r = 0; r < batch.size(); ++r) {
        const double* row = batch.probabilities.data() + r * m;
        std::size_t argmax = 0;
        for (std::size_t c = 1; c < m; ++c) {
            if (row[c] > row[argmax]) argmax = c;
        }
        ++at(batch.labels[r], argmax);
    }
}

ConfusionMatrix accumulate_confusion(std::span<const PredictionBatch> batches) {
    if (batches.empty()) throw std::invalid_argument("confusion: no prediction batches");
    ConfusionMatrix cm(batches.front().class_count());
    for (const PredictionBatch& b : batches) cm.add(b);
    return cm;
}

double ConfusionGraph::degree(std::size_t i) const {
    double sum = 0.0;
    for (std::size_t j = 0; j < node_count; ++j) sum += at(i, j);
    return sum;
}

double ConfusionGraph::total_weight() const {
    double sum = 0.0;
    for (std::size_t i = 0; i < node_count; ++i) {
        for (std::size_t j = i + 1; j < node_count; ++j) sum += at(i, j);
    }
    return sum;
}

void ConfusionGraph::validate() const {
    if (weights.size() != node_count * node_count) {
        throw std::invalid_argument("confusion graph: weight buffer does not match node count");
    }
    for (std::size_t i = 0; i < node_count; ++i) {
        if (at(i, i) != 0.0) {
            throw std::invalid_argument("confusion graph: nonzero diagonal at node " + std::to_string(i));
        }
        for (std::size_t j = 0; j < node_count; ++j) {
            const double w = at(i, j);
            if (!(w >= 0.0) || !std::isfinite(w)) {
                throw std::invalid_argument("confusion graph: invalid weight at (" + std::to_string(i) +
                                            "," + std::to_string(j) + ")");
            }
            if (w != at(j, i)) {
                throw std::invalid_argument("confusion graph: asymmetric at (" + std::to_string(i) + "," +
                                            std::to_string(j) + ")");
            }
        }
    }
}

ConfusionGraph to_graph(const ConfusionMatrix& cm) {
    const std::size_t m = cm.class_count;
    std::vector<double> rates(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const std::uint64_t total = cm.row_total(i);
        if (total == 0) {
            log::warn("confusion graph: class " + std::to_string(i) +
                      " has no validation points; its edges are zero");
            continue;
        }
        for (std::size_t j = 0; j < m; ++j) {
            rates[i * m + j] = static_cast<double>(cm.at(i, j)) / static_cast<double>(total);
        }
    }
    ConfusionGraph g(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (i != j) g.at(i, j) = 0.5 * (rates[i * m + j] + rates[j * m + i]);
        }
    }
    return g;
}

std::vector<std::vector<std::uint16_t>> Hierarchy::members() const {
    std::vector<std::vector<std::uint16_t>> out(macro_count);
    for (std::size_t c = 0; c < mapping.size(); ++c) out[mapping[c]].push_back(static_cast<std::uint16_t>(c));
    return out;
}

void Hierarchy::validate() const {
    if (mapping.empty()) throw std::invalid_argument("hierarchy: empty mapping");
    if (macro_count == 0) throw std::invalid_argument("hierarchy: macro count must be at least 1");
    std::vector<bool> used(macro_count, false);
    for (std::uint16_t id : mapping) {
        if (id >= macro_count) {
            throw std::invalid_argument("hierarchy: mapping references macro id " + std::to_string(id) +
                                        " outside [0," + std::to_string(macro_count) + ")");
        }
        used[id] = true;
    }
    for (std::size_t c = 0; c < macro_count; ++c) {
        if (!used[c]) {
            throw std::invalid_argument("hierarchy: macro id " + std::to_string(c) + " has no members");
        }
    }
    if (!macro_names.empty() && macro_names.size() != macro_count) {
        throw std::invalid_argument("hierarchy: " + std::to_string(macro_names.size()) +
                                    " names for " + std::to_string(macro_count) + " macro classes");
    }
}

Hierarchy Hierarchy::identity(std::size_t m) {
    Hierarchy h;
    h.macro_count = m;
    h.mapping.resize(m);
    for (std::size_t c = 0; c < m; ++c) h.mapping[c] = static_cast<std::uint16_t>(c);
    return h;
}

Hierarchy spectral_cluster(const ConfusionGraph& g, std::size_t k, std::uint64_t seed) {
    g.validate();
    const std::size_t m = g.node_count;
    if (m == 0) throw std::invalid_argument("spectral_cluster: empty graph");
    if (k < 1 || k > m) {
        throw std::invalid_argument("spectral_cluster: K = " + std::to_string(k) +
                                    " outside [1, " + std::to_string(m) + "]");
    }

    // Isolated nodes become singleton macro classes up front.
    std::vector<std::size_t> active;
    std::vector<bool> isolated(m, false);
    for (std::size_t i = 0; i < m; ++i) {
        if (g.degree(i) > 0.0) {
            active.push_back(i);
        } else {
            isolated[i] = true;
        }
    }
    const std::size_t iso = m - active.size();
    std::vector<std::uint16_t> raw(m, 0);

    if (!active.empty()) {
        const std::size_t n = active.size();
        const std::size_t want = std::clamp<std::size_t>(k > iso ? k - iso : 1, 1, n);
        std::vector<std::uint16_t> labels(n, 0);
        if (want == n) {
            for (std::size_t a = 0; a < n; ++a) labels[a] = static_cast<std::uint16_t>(a);
        } else if (want > 1) {
            Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(n, n);
            std::vector<double> deg(n);
            for (std::size_t a = 0; a < n; ++a) deg[a] = g.degree(active[a]);
            for (std::size_t a = 0; a < n; ++a) {
                for (std::size_t b = 0; b < n; ++b) {
                    const double w = g.at(active[a], active[b]);
                    if (w > 0.0) lap(a, b) -= w / std::sqrt(deg[a] * deg[b]);
                }
            }
            const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(lap);
            Eigen::MatrixXd embed = eig.eigenvectors().leftCols(static_cast<Eigen::Index>(want));
            for (std::size_t a = 0; a < n; ++a) {
                const double norm = embed.row(static_cast<Eigen::Index>(a)).norm();
                if (norm > 1e-12) embed.row(static_cast<Eigen::Index>(a)) /= norm;
            }
            labels = kmeans(embed, want, seed);
        }
        for (std::size_t a = 0; a < n; ++a) raw[active[a]] = labels[a];
    }

    // Append the singleton ids after the embedded cluster ids.
    std::uint16_t next = 0;
    for (std::size_t a = 0; a < active.size(); ++a) next = std::max(next, raw[active[a]]);
    next = active.empty() ? 0 : static_cast<std::uint16_t>(next + 1);
    for (std::size_t i = 0; i < m; ++i) {
        if (isolated[i]) raw[i] = next++;
    }

    return canonicalize(std::move(raw));
}

double conductance(const ConfusionGraph& g, const Hierarchy& h) {
    g.validate();
    h.validate();
    if (h.class_count() != g.node_count) {
        throw std::invalid_argument("conductance: hierarchy covers " + std::to_string(h.class_count()) +
                                    " classes, graph has " + std::to_string(g.node_count));
    }
    if (h.macro_count == 1) return 1.0;

    const std::size_t m = g.node_count;
    std::vector<double> deg(m);
    double total_vol = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        deg[i] = g.degree(i);
        total_vol += deg[i];
    }
    std::vector<double> vol(h.macro_count, 0.0), cut(h.macro_count, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        vol[h.mapping[i]] += deg[i];
        for (std::size_t j = 0; j < m; ++j) {
            if (h.mapping[i] != h.mapping[j]) cut[h.mapping[i]] += g.at(i, j);
        }
    }
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < h.macro_count; ++c) {
        const double denom = std::min(vol[c], total_vol - vol[c]);
        best = std::min(best, denom <= 0.0 ? 1.0 : cut[c] / denom);
    }
    return best;
}

std::size_t select_cluster_count(const ConfusionGraph& g, std::uint64_t seed) {
    g.validate();
    const std::size_t m = g.node_count;
    if (m < 3) {
        throw std::invalid_argument("select_cluster_count: need at least 3 classes, got " +
                                    std::to_string(m));
    }
    if (g.total_weight() <= 0.0) {
        log::warn("select_cluster_count: graph has no edge mass; falling back to 2 macro classes");
        return 2;
    }

    // Score each candidate partition: mass cut between clusters (over-merging
    // is free here, over-splitting is expensive) plus how splittable the
    // weakest cluster still is (under-merging is expensive here). The best
    // K sits where both terms are small.
    std::vector<double> scores;
    scores.reserve(m - 2);
    for (std::size_t k = 2; k <= m - 1; ++k) {
        const Hierarchy h = spectral_cluster(g, k, seed);
        double cohesion = 1.0;
        for (const auto& cluster : h.members()) {
            cohesion = std::min(cohesion, internal_conductance(g, cluster));
        }
        scores.push_back(cut_fraction(g, h) + (1.0 - cohesion));
    }

    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    if (*hi - *lo < kFlatCurveTolerance) {
        log::warn("select_cluster_count: flat score curve; falling back to 2 macro classes");
        return 2;
    }
    return 2 + static_cast<std::size_t>(lo - scores.begin());
}

void save_hierarchy(const Hierarchy& h, const std::filesystem::path& path) {
    h.validate();
    nlohmann::json names = nlohmann::json::array();
    for (std::size_t c = 0; c < h.macro_count; ++c) {
        names.push_back(h.macro_names.empty() ? "macro_" + std::to_string(c) : h.macro_names[c]);
    }
    const nlohmann::json j = {{"M", h.macro_count}, {"mapping", h.mapping}, {"names", names}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write hierarchy: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

Hierarchy load_hierarchy(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open hierarchy: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        Hierarchy h;
        h.macro_count = j.at("M").get<std::size_t>();
        h.mapping = j.at("mapping").get<std::vector<std::uint16_t>>();
        h.macro_names = j.at("names").get<std::vector<std::string>>();
        h.validate();
        return h;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": malformed hierarchy JSON: " + e.what());
    }
}

void write_confusion_csv(const ConfusionMatrix& cm, std::span<const std::string> class_names,
                         std::ostream& out) {
    if (class_names.size() != cm.class_count) {
        throw std::invalid_argument("confusion csv: " + std::to_string(class_names.size()) +
                                    " names for " + std::to_string(cm.class_count) + " classes");
    }
    out << "class";
    for (const std::string& n : class_names) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < cm.class_count; ++i) {
        out << class_names[i];
        for (std::size_t j = 0; j < cm.class_count; ++j) out << ',' << cm.at(i, j);
        out << '\n';
    }
}

} // namespace leak::hierarchy
