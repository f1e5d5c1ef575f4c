#pragma once

#include "leak/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace leak::synthdata {

// Class list plus the ground-truth coarse family each class belongs to. The
// families drive blob placement, so within-family classes genuinely overlap
// in space and cross-family classes do not.
struct ClassCatalog {
    std::vector<std::string> names;
    std::vector<std::uint16_t> planted_family;   // size m, ids contiguous from 0

    std::size_t class_count() const { return names.size(); }
    std::size_t family_count() const;
    void validate() const;

    bool operator==(const ClassCatalog&) const = default;
};

struct DatasetSpec {
    ClassCatalog catalog;
    std::vector<double> class_frequency;   // size m; >= 0; at least two positive
    double confusability = 0.0;            // [0,1]: 0 = well separated, 1 = coincident
    std::size_t scene_count = 0;
    std::size_t points_per_scene = 0;
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<double> normalized_frequency() const;
};

std::string to_json(const DatasetSpec& spec);
DatasetSpec spec_from_json(const std::string& text);
DatasetSpec load_spec(const std::filesystem::path& path);
void save_spec(const DatasetSpec& spec, const std::filesystem::path& path);

struct PointCloudSample {
    std::vector<std::array<double, 3>> points;
    std::vector<std::uint16_t> labels;      // one per point, positional

    std::size_t size() const { return points.size(); }
    void validate(std::size_t class_count) const;

    bool operator==(const PointCloudSample&) const = default;
};

struct Dataset {
    std::vector<PointCloudSample> scenes;

    std::size_t total_points() const;
    bool operator==(const Dataset&) const = default;
};

// Gaussian blob center of every class: family anchors sit on a coarse grid,
// members spread around their anchor at a distance shrinking linearly with
// confusability.
std::vector<std::array<double, 3>> class_centers(const DatasetSpec& spec);

// Deterministic generation; scene i is drawn from its own derived stream, so
// any scene can be regenerated without producing the rest.
Dataset generate(const DatasetSpec& spec);

// Binary container (magic LEAK1). Per scene: point count, xyz doubles,
// uint16 labels. Load failures report the byte offset.
void save(const Dataset& dataset, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);

// Plain-text dump: header `scene,point,x,y,z,label`, one row per point.
void export_csv(const Dataset& dataset, std::ostream& out);

// Scene-level partition by shuffled index; fractions must be positive and sum
// to one. Requires at least as many scenes as fractions.
std::vector<Dataset> split(const Dataset& dataset, const std::vector<double>& fractions,
                           std::uint64_t seed);

// n x 3 matrix of the sample's coordinates.
Tensor to_points_tensor(const PointCloudSample& sample);

} // namespace leak::synthdata
