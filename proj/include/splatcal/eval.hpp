#pragma once

#include "splatcal/scene.hpp"

namespace splatcal {

struct PoseError {
    double translation = 0.0;    // camera-center distance, scene units
    double rotation_deg = 0.0;   // geodesic angle
    double fov_x_rel_pct = 0.0;  // |fov_a - fov_b| / fov_b * 100
    double fov_y_rel_pct = 0.0;
};

/// Error of `estimate` with respect to `reference`.
inline PoseError pose_error(const Camera& estimate, const Camera& reference) {
    PoseError e;
    e.translation = (estimate.center() - reference.center()).norm();
    e.rotation_deg = rotation_angle_between(estimate.q, reference.q) * 180.0 / kPi;
    e.fov_x_rel_pct = std::abs(estimate.fov_x - reference.fov_x) / reference.fov_x * 100.0;
    e.fov_y_rel_pct = std::abs(estimate.fov_y - reference.fov_y) / reference.fov_y * 100.0;
    return e;
}

/// Image-plane displacement of every gaussian center between two calibrations
/// of the same view. Centers behind either camera, or outside camera a's image,
/// are skipped.
inline std::vector<double> center_displacements(const GaussianScene& scene, const Camera& a, const Camera& b,
                                                double z_near = kZNear) {
    std::vector<double> out;
    out.reserve(scene.size());
    for (const auto& g : scene.gaussians) {
        const Vec3 pa = world_to_camera(g.position, a), pb = world_to_camera(g.position, b);
        if (pa.z() <= z_near || pb.z() <= z_near) continue;
        const Vec2 ua = project_point(pa, a, z_near), ub = project_point(pb, b, z_near);
        if (ua.x() < 0 || ua.y() < 0 || ua.x() > a.width || ua.y() > a.height) continue;
        out.push_back((ua - ub).norm());
    }
    return out;
}

/// Fixed-width histogram starting at zero; the last bin collects the overflow.
struct Histogram {
    double bin_width = 0.1;
    std::vector<std::size_t> counts;

    std::size_t total() const {
        std::size_t n = 0;
        for (auto c : counts) n += c;
        return n;
    }
};

inline Histogram make_histogram(std::span<const double> values, double bin_width = 0.1, std::size_t max_bins = 1000) {
    Histogram h;
    h.bin_width = bin_width;
    double top = 0.0;
    for (double v : values) top = std::max(top, v);
    const auto bins = std::min<std::size_t>(max_bins, static_cast<std::size_t>(std::floor(top / bin_width)) + 1);
    h.counts.assign(bins, 0);
    for (double v : values) {
        const auto k = std::min<std::size_t>(bins - 1, static_cast<std::size_t>(std::floor(std::max(0.0, v) / bin_width)));
        ++h.counts[k];
    }
    return h;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

}  // namespace splatcal
