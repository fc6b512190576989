#pragma once

#include <array>

namespace detlab::geom {

// Normalized center-size box; coordinates are fractions of the image extent.
struct Box {
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

    bool operator==(const Box&) const = default;
};

struct Corners {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
};

Corners to_corners(const Box& b);
Box from_corners(const Corners& c);

double area(const Box& b);
// Clamps w, h to be nonnegative and the center into [0, 1].
Box clamp(const Box& b);

double iou(const Box& a, const Box& b);
// Generalized IoU; 0 when both boxes have zero area.
double giou(const Box& a, const Box& b);

// Mean absolute difference of the four cxcywh coordinates.
double l1_distance(const Box& a, const Box& b);

// GIoU together with its partial derivatives w.r.t. the cxcywh coordinates of
// both boxes. Widths and heights are clamped at 1e-8 first; the clamp itself
// passes no gradient.
struct GiouGrad {
    double value = 0.0;
    std::array<double, 4> d_a{};
    std::array<double, 4> d_b{};
};
GiouGrad giou_with_grad(const Box& a, const Box& b);

}  // namespace detlab::geom
