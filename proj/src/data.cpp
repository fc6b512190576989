#include "detlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "detlab/io.hpp"

namespace detlab::data {

namespace {

constexpr int kMaxAttempts = 1000;
constexpr double kInitialTolerance = 0.1;

template <typename T>
void check_range(const std::pair<T, T>& r, const char* name) {
    if (r.first > r.second) throw std::invalid_argument(std::string(name) + " is empty");
}

// Moves a box so that it lies inside the unit square.
geom::Box fit_inside(geom::Box b) {
    b.w = std::min(b.w, 1.0);
    b.h = std::min(b.h, 1.0);
    b.cx = std::clamp(b.cx, b.w / 2, 1.0 - b.w / 2);
    b.cy = std::clamp(b.cy, b.h / 2, 1.0 - b.h / 2);
    return b;
}

double max_iou(const geom::Box& b, std::span<const geom::Box> others) {
    double m = 0.0;
    for (const auto& o : others) m = std::max(m, geom::iou(b, o));
    return m;
}

// Pixel index range whose centres fall inside [lo, hi).
std::pair<int, int> pixel_span(double lo, double hi, int size) {
    const int first = std::max(0, static_cast<int>(std::ceil(lo * size - 0.5)));
    const int last = std::min(size - 1, static_cast<int>(std::ceil(hi * size - 0.5)) - 1);
    return {first, last};
}

}  // namespace

void DatasetSpec::validate() const {
    if (n_images < 0) throw std::invalid_argument("n_images must be >= 0");
    check_range(object_count_range, "object_count_range");
    check_range(size_range, "size_range");
    check_range(aspect_range, "aspect_range");
    check_range(crowd_level_range, "crowd_level_range");
    if (object_count_range.first < 0) throw std::invalid_argument("object counts must be >= 0");
    if (size_range.first <= 0.0 || size_range.second > 1.0) throw std::invalid_argument("size_range must lie in (0, 1]");
    if (aspect_range.first <= 0.0) throw std::invalid_argument("aspect_range must be positive");
    if (crowd_level_range.first < 0.0 || crowd_level_range.second > 1.0) {
        throw std::invalid_argument("crowd_level_range must lie in [0, 1]");
    }
}

void to_json(nlohmann::json& j, const DatasetSpec& s) {
    j = {{"n_images", s.n_images},
         {"object_count_range", {s.object_count_range.first, s.object_count_range.second}},
         {"size_range", {s.size_range.first, s.size_range.second}},
         {"aspect_range", {s.aspect_range.first, s.aspect_range.second}},
         {"crowd_level_range", {s.crowd_level_range.first, s.crowd_level_range.second}},
         {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
    DatasetSpec d;
    auto pair_of = [&](const char* key, auto def) {
        if (!j.contains(key)) return def;
        const auto& a = j.at(key);
        if (!a.is_array() || a.size() != 2) throw std::invalid_argument(std::string(key) + " must be a 2-element array");
        return decltype(def){a[0].get<typename decltype(def)::first_type>(),
                             a[1].get<typename decltype(def)::second_type>()};
    };
    s.n_images = j.value("n_images", d.n_images);
    s.object_count_range = pair_of("object_count_range", d.object_count_range);
    s.size_range = pair_of("size_range", d.size_range);
    s.aspect_range = pair_of("aspect_range", d.aspect_range);
    s.crowd_level_range = pair_of("crowd_level_range", d.crowd_level_range);
    s.seed = j.value("seed", d.seed);
}

Scene generate_scene(const DatasetSpec& spec, Rng& rng, std::int64_t id) {
    spec.validate();
    Scene scene;
    scene.id = id;
    const auto count = rng.integer(spec.object_count_range.first, spec.object_count_range.second);
    scene.crowd_level = rng.uniform(spec.crowd_level_range.first, spec.crowd_level_range.second);
    const double crowd = scene.crowd_level;

    auto sample_shape = [&]() {
        const double h = rng.uniform(spec.size_range.first, spec.size_range.second);
        const double w = std::min(1.0, h * rng.uniform(spec.aspect_range.first, spec.aspect_range.second));
        return std::pair{w, h};
    };

    for (std::int64_t i = 0; i < count; ++i) {
        double tol = kInitialTolerance;
        geom::Box candidate;
        bool placed = false;
        for (int round = 0; !placed; ++round) {
            for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
                auto [w, h] = sample_shape();
                if (scene.gt_boxes.empty() || crowd == 0.0) {
                    candidate = fit_inside({rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h});
                } else {
                    // Offset from a seed box: along x, d = w (1 - c) / (1 + c) gives IoU c
                    // for equal boxes; the jitter spreads candidates around that.
                    const auto& seed = scene.gt_boxes[static_cast<std::size_t>(
                        rng.integer(0, static_cast<std::int64_t>(scene.gt_boxes.size()) - 1))];
                    const double mean_w = (seed.w + w) / 2, mean_h = (seed.h + h) / 2;
                    const double reach = (1.0 - crowd) / (1.0 + crowd) * rng.uniform(0.5, 1.5);
                    const double angle = rng.uniform(0.0, 2.0 * M_PI);
                    candidate = fit_inside({seed.cx + std::cos(angle) * mean_w * reach,
                                            seed.cy + std::sin(angle) * mean_h * reach * 0.5, w, h});
                }
                const double m = max_iou(candidate, scene.gt_boxes);
                if (scene.gt_boxes.empty()) placed = true;
                else if (crowd == 0.0) placed = m == 0.0;
                else placed = std::abs(m - crowd) <= tol;
            }
            if (!placed) {
                if (round >= 3) {
                    spdlog::warn("scene {}: giving up on crowd target {:.3f} for box {}", id, crowd, i);
                    placed = true;
                } else {
                    tol *= 2;
                    spdlog::warn("scene {}: relaxing crowd tolerance to {:.2f} for box {}", id, tol, i);
                }
            }
        }
        scene.gt_boxes.push_back(candidate);
    }
    return scene;
}

Dataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    Dataset out;
    out.reserve(static_cast<std::size_t>(spec.n_images));
    for (std::int64_t i = 0; i < spec.n_images; ++i) {
        Rng rng = Rng::stream(spec.seed + static_cast<std::uint64_t>(i), "data");
        out.push_back(generate_scene(spec, rng, i));
    }
    return out;
}

double mean_neighbor_iou(const Scene& scene) {
    const auto& b = scene.gt_boxes;
    if (b.size() < 2) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        double best = 0.0;
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (i != j) best = std::max(best, geom::iou(b[i], b[j]));
        }
        total += best;
    }
    return total / static_cast<double>(b.size());
}

ad::Tensor render_scene(const Scene& scene, int image_size) {
    const auto s = static_cast<std::size_t>(image_size);
    std::vector<int> count(s * s, 0);
    std::vector<char> edge(s * s, 0);
    std::vector<double> smallest_area(s * s, 2.0), smallest_size(s * s, 0.0);
    for (const auto& b : scene.gt_boxes) {
        const geom::Corners c = geom::to_corners(b);
        const auto [x0, x1] = pixel_span(c.x1, c.x2, image_size);
        const auto [y0, y1] = pixel_span(c.y1, c.y2, image_size);
        const double a = geom::area(b);
        const double size = std::sqrt(a);
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * s + static_cast<std::size_t>(x);
                ++count[i];
                if (y == y0 || y == y1 || x == x0 || x == x1) edge[i] = 1;
                if (a < smallest_area[i]) {
                    smallest_area[i] = a;
                    smallest_size[i] = size;
                }
            }
        }
    }
    std::vector<double> px(3 * s * s, 0.0);
    for (std::size_t i = 0; i < s * s; ++i) {
        px[i] = std::min(count[i], 4) / 4.0;
        px[s * s + i] = edge[i];
        px[2 * s * s + i] = smallest_size[i];
    }
    return ad::Tensor({3, s, s}, std::move(px));
}

Scene flip_scene(const Scene& scene, bool horizontal, bool vertical) {
    Scene out = scene;
    for (auto& b : out.gt_boxes) {
        if (horizontal) b.cx = 1.0 - b.cx;
        if (vertical) b.cy = 1.0 - b.cy;
    }
    return out;
}

std::string serialize_dataset(const Dataset& dataset) {
    std::string out;
    for (const auto& scene : dataset) {
        nlohmann::json boxes = nlohmann::json::array();
        for (const auto& b : scene.gt_boxes) boxes.push_back({b.cx, b.cy, b.w, b.h});
        nlohmann::json line = {{"id", scene.id}, {"crowd_level", scene.crowd_level}, {"boxes", boxes}};
        out += line.dump();
        out += '\n';
    }
    return out;
}

Dataset parse_dataset(const std::string& text) {
    Dataset out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Scene scene;
            scene.id = j.at("id").get<std::int64_t>();
            scene.crowd_level = j.at("crowd_level").get<double>();
            for (const auto& b : j.at("boxes")) {
                if (!b.is_array() || b.size() != 4) throw std::invalid_argument("box must have 4 coordinates");
                scene.gt_boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
            }
            out.push_back(std::move(scene));
        } catch (const std::exception& e) {
            throw ParseError("dataset line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    io::write_atomic(path, serialize_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return parse_dataset(io::read_file(path)); }

Split split_held_out(const Dataset& dataset, double held_out_fraction) {
    Dataset sorted = dataset;
    std::stable_sort(sorted.begin(), sorted.end(), [](const Scene& a, const Scene& b) { return a.id < b.id; });
    const auto n_held = static_cast<std::size_t>(std::llround(held_out_fraction * static_cast<double>(sorted.size())));
    Split s;
    s.train.assign(sorted.begin(), sorted.end() - static_cast<std::ptrdiff_t>(n_held));
    s.held_out.assign(sorted.end() - static_cast<std::ptrdiff_t>(n_held), sorted.end());
    return s;
}

}  // namespace detlab::data
