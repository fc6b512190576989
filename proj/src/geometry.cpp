#include "detlab/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace detlab::geom {

namespace {
constexpr double kMinExtent = 1e-8;
}

Corners to_corners(const Box& b) {
    return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}

Box from_corners(const Corners& c) {
    return {(c.x1 + c.x2) / 2, (c.y1 + c.y2) / 2, c.x2 - c.x1, c.y2 - c.y1};
}

double area(const Box& b) { return std::max(b.w, 0.0) * std::max(b.h, 0.0); }

Box clamp(const Box& b) {
    return {std::clamp(b.cx, 0.0, 1.0), std::clamp(b.cy, 0.0, 1.0), std::max(b.w, 0.0), std::max(b.h, 0.0)};
}

double iou(const Box& a, const Box& b) {
    const Corners ca = to_corners(a), cb = to_corners(b);
    const double iw = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
    const double ih = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
    const double inter = iw * ih;
    const double uni = area(a) + area(b) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
    const Corners ca = to_corners(a), cb = to_corners(b);
    const double iw = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
    const double ih = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
    const double inter = iw * ih;
    const double uni = area(a) + area(b) - inter;
    if (uni <= 0.0) return 0.0;
    const double ew = std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1);
    const double eh = std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1);
    const double enclosure = ew * eh;
    if (enclosure <= 0.0) return 0.0;
    return inter / uni - (enclosure - uni) / enclosure;
}

double l1_distance(const Box& a, const Box& b) {
    return (std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) + std::abs(a.h - b.h)) / 4.0;
}

GiouGrad giou_with_grad(const Box& a_in, const Box& b_in) {
    const bool a_w_clamped = a_in.w < kMinExtent, a_h_clamped = a_in.h < kMinExtent;
    const bool b_w_clamped = b_in.w < kMinExtent, b_h_clamped = b_in.h < kMinExtent;
    const Box a{a_in.cx, a_in.cy, std::max(a_in.w, kMinExtent), std::max(a_in.h, kMinExtent)};
    const Box b{b_in.cx, b_in.cy, std::max(b_in.w, kMinExtent), std::max(b_in.h, kMinExtent)};
    const Corners ca = to_corners(a), cb = to_corners(b);

    // Each interval end is owned by whichever box attains the min/max; ties go to a.
    const bool ix1_a = ca.x1 >= cb.x1, ix2_a = ca.x2 <= cb.x2;
    const bool iy1_a = ca.y1 >= cb.y1, iy2_a = ca.y2 <= cb.y2;
    const double iw_raw = (ix2_a ? ca.x2 : cb.x2) - (ix1_a ? ca.x1 : cb.x1);
    const double ih_raw = (iy2_a ? ca.y2 : cb.y2) - (iy1_a ? ca.y1 : cb.y1);
    const double iw = std::max(0.0, iw_raw), ih = std::max(0.0, ih_raw);
    const double inter = iw * ih;
    const double area_a = a.w * a.h, area_b = b.w * b.h;
    const double uni = area_a + area_b - inter;

    const bool ex1_a = ca.x1 <= cb.x1, ex2_a = ca.x2 >= cb.x2;
    const bool ey1_a = ca.y1 <= cb.y1, ey2_a = ca.y2 >= cb.y2;
    const double ew = (ex2_a ? ca.x2 : cb.x2) - (ex1_a ? ca.x1 : cb.x1);
    const double eh = (ey2_a ? ca.y2 : cb.y2) - (ey1_a ? ca.y1 : cb.y1);
    const double enclosure = ew * eh;

    GiouGrad out;
    if (uni <= 0.0 || enclosure <= 0.0) return out;
    out.value = inter / uni - 1.0 + uni / enclosure;

    // value = I/U - 1 + U/E with U = A_a + A_b - I
    const double g_u = -inter / (uni * uni) + 1.0 / enclosure;
    const double g_i = 1.0 / uni - g_u;
    const double g_e = -uni / (enclosure * enclosure);

    // Gradients w.r.t. corners, indexed x1, y1, x2, y2.
    std::array<double, 4> ga{}, gb{};
    if (iw_raw > 0.0 && ih_raw > 0.0) {
        const double d_iw = g_i * ih, d_ih = g_i * iw;
        (ix2_a ? ga : gb)[2] += d_iw;
        (ix1_a ? ga : gb)[0] -= d_iw;
        (iy2_a ? ga : gb)[3] += d_ih;
        (iy1_a ? ga : gb)[1] -= d_ih;
    }
    const double d_ew = g_e * eh, d_eh = g_e * ew;
    (ex2_a ? ga : gb)[2] += d_ew;
    (ex1_a ? ga : gb)[0] -= d_ew;
    (ey2_a ? ga : gb)[3] += d_eh;
    (ey1_a ? ga : gb)[1] -= d_eh;

    auto to_center = [&](const std::array<double, 4>& g, const Box& box, bool w_clamped, bool h_clamped) {
        std::array<double, 4> d{};
        d[0] = g[0] + g[2];
        d[1] = g[1] + g[3];
        d[2] = w_clamped ? 0.0 : (g[2] - g[0]) / 2 + g_u * box.h;
        d[3] = h_clamped ? 0.0 : (g[3] - g[1]) / 2 + g_u * box.w;
        return d;
    };
    out.d_a = to_center(ga, a, a_w_clamped, a_h_clamped);
    out.d_b = to_center(gb, b, b_w_clamped, b_h_clamped);
    return out;
}

}  // namespace detlab::geom
