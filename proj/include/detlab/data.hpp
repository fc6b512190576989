#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "detlab/autodiff/tensor.hpp"
#include "detlab/geometry.hpp"
#include "detlab/rng.hpp"

namespace detlab::data {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Scene {
    std::int64_t id = 0;
    std::vector<geom::Box> gt_boxes;
    double crowd_level = 0.0;  // target mean neighbour IoU

    bool operator==(const Scene&) const = default;
};

using Dataset = std::vector<Scene>;

struct DatasetSpec {
    std::int64_t n_images = 100;
    std::pair<int, int> object_count_range{1, 12};
    std::pair<double, double> size_range{0.15, 0.35};  // box height
    std::pair<double, double> aspect_range{0.5, 1.0};  // width / height
    std::pair<double, double> crowd_level_range{0.0, 0.5};
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

// Places boxes around cluster seeds so that each box's best IoU with the
// others stays near crowd_level. crowd_level 0 gives pairwise-disjoint boxes.
Scene generate_scene(const DatasetSpec& spec, Rng& rng, std::int64_t id = 0);

// Scene i draws from its own stream derived from (seed + i).
Dataset generate_dataset(const DatasetSpec& spec);

// Mean over boxes of the best IoU with any other box; 0 for fewer than two.
double mean_neighbor_iou(const Scene& scene);

// 3 x S x S: clamped cover count / 4, box-border indicator, size
// (sqrt(w h)) of the smallest covering box.
ad::Tensor render_scene(const Scene& scene, int image_size);

// Mirrors the ground truth left-right and/or top-bottom.
Scene flip_scene(const Scene& scene, bool horizontal, bool vertical);

std::string serialize_dataset(const Dataset& dataset);
Dataset parse_dataset(const std::string& text);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

struct Split {
    Dataset train;
    Dataset held_out;
};

// The last 20% of scenes by id form the held-out split.
Split split_held_out(const Dataset& dataset, double held_out_fraction = 0.2);

}  // namespace detlab::data
