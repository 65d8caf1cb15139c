#pragma once

#include "splatcal/geometry.hpp"

#include <string_view>

namespace splatcal {

/// One anisotropic gaussian with view-independent RGB color.
struct Gaussian {
    Vec3 position = Vec3::Zero();
    Vec3 scale = Vec3::Ones();
    UnitQuaternion rotation;
    double opacity = 1.0;
    Vec3 color = Vec3::Constant(0.5);

    bool operator==(const Gaussian&) const = default;
};

struct GaussianScene {
    std::vector<Gaussian> gaussians;
    double extent = 1.0;

    std::size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }

    Vec3 centroid() const {
        Vec3 c = Vec3::Zero();
        for (const auto& g : gaussians) c += g.position;
        return gaussians.empty() ? c : Vec3(c / static_cast<double>(gaussians.size()));
    }

    /// Radius of the bounding sphere around the centroid. A single point (or a
    /// scene whose points coincide) gets extent 1 so that extent-relative
    /// step sizes stay usable.
    void recompute_extent() {
        const Vec3 c = centroid();
        double r = 0.0;
        for (const auto& g : gaussians) r = std::max(r, (g.position - c).norm());
        extent = r > 0.0 ? r : 1.0;
    }

    void append(const GaussianScene& other) {
        gaussians.insert(gaussians.end(), other.gaussians.begin(), other.gaussians.end());
        recompute_extent();
    }

    bool operator==(const GaussianScene&) const = default;
};

enum class Layout { cloud, grid, textured_wall };
enum class Rig { orbit, arc };

inline Layout parse_layout(std::string_view s) {
    if (s == "cloud") return Layout::cloud;
    if (s == "grid") return Layout::grid;
    if (s == "textured_wall") return Layout::textured_wall;
    throw DomainError("unknown layout: " + std::string(s));
}

inline Rig parse_rig(std::string_view s) {
    if (s == "orbit") return Rig::orbit;
    if (s == "arc") return Rig::arc;
    throw DomainError("unknown rig: " + std::string(s));
}

namespace detail {

inline UnitQuaternion random_rotation(Rng& rng) {
    Vec4 c(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    c /= c.norm();
    if (c[0] < 0) c = -c;
    return UnitQuaternion::from_coeffs(c);
}

/// Moves the centroid to the origin and rescales so the farthest center sits at
/// distance 1. Gaussian scales follow the same factor.
inline void normalize_scene(GaussianScene& scene) {
    const Vec3 c = scene.centroid();
    double r = 0.0;
    for (const auto& g : scene.gaussians) r = std::max(r, (g.position - c).norm());
    const double k = r > 0.0 ? 1.0 / r : 1.0;
    for (auto& g : scene.gaussians) {
        g.position = (g.position - c) * k;
        g.scale *= k;
    }
    scene.recompute_extent();
}

}  // namespace detail

/// Deterministic test scene. Positions end up inside the unit sphere with
/// extent 1, opacities in [0.3, 1], anisotropy ratio at most 10.
inline GaussianScene synth_scene(std::uint64_t seed, std::size_t n, Layout layout) {
    if (n == 0) throw DomainError("synth_scene needs at least one gaussian");
    Rng rng(seed);
    GaussianScene scene;
    scene.gaussians.reserve(n);

    switch (layout) {
    case Layout::cloud: {
        const double base = 0.25 / std::cbrt(static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            Gaussian g;
            g.position = rng.in_ball(1.0);
            g.scale = Vec3(rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5)) * base;
            g.rotation = detail::random_rotation(rng);
            g.opacity = rng.uniform(0.3, 1.0);
            g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
            scene.gaussians.push_back(g);
        }
        break;
    }
    case Layout::grid: {
        const auto side = static_cast<std::size_t>(std::ceil(std::cbrt(static_cast<double>(n)) - 1e-9));
        const double spacing = 1.0;
        const double half = 0.5 * static_cast<double>(side - 1);
        for (std::size_t i = 0; i < n; ++i) {
            Gaussian g;
            const std::size_t ix = i % side, iy = (i / side) % side, iz = i / (side * side);
            g.position = Vec3(static_cast<double>(ix) - half, static_cast<double>(iy) - half,
                              static_cast<double>(iz) - half) *
                         spacing;
            g.scale = Vec3::Constant(0.3 * spacing);
            g.opacity = 1.0;
            g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
            scene.gaussians.push_back(g);
        }
        if (n == 1) scene.gaussians[0].scale = Vec3::Constant(0.1);
        break;
    }
    case Layout::textured_wall: {
        // Jittered lattice on the z = 0 plane, clipped to the unit disk.
        auto side = static_cast<std::size_t>(std::ceil(std::sqrt(4.0 * static_cast<double>(n) / kPi)));
        std::vector<Vec2> sites;
        for (;; ++side) {
            sites.clear();
            const double step = 2.0 / static_cast<double>(side);
            for (std::size_t iy = 0; iy < side; ++iy)
                for (std::size_t ix = 0; ix < side; ++ix) {
                    const Vec2 p(-1.0 + (static_cast<double>(ix) + 0.5) * step,
                                 -1.0 + (static_cast<double>(iy) + 0.5) * step);
                    if (p.norm() <= 1.0) sites.push_back(p);
                }
            if (sites.size() >= n) break;
        }
        const double step = 2.0 / static_cast<double>(side);
        for (std::size_t i = 0; i < n; ++i) {
            Gaussian g;
            const Vec2 jitter(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
            const Vec2 p = sites[i] + jitter * step;
            g.position = Vec3(p.x(), p.y(), 0.0);
            const double s = step * rng.uniform(0.45, 0.7);
            g.scale = Vec3(s * rng.uniform(0.8, 1.25), s * rng.uniform(0.8, 1.25), s / 8.0);
            g.rotation = UnitQuaternion::from_axis_angle(Vec3::UnitZ(), rng.uniform(0.0, kPi));
            g.opacity = rng.uniform(0.6, 1.0);
            g.color = Vec3(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95));
            scene.gaussians.push_back(g);
        }
        break;
    }
    }
    detail::normalize_scene(scene);
    return scene;
}

/// Layouts joined by '+', e.g. "textured_wall+cloud".
inline std::vector<Layout> parse_layouts(std::string_view s) {
    std::vector<Layout> out;
    for (;;) {
        const std::size_t plus = s.find('+');
        out.push_back(parse_layout(s.substr(0, plus)));
        if (plus == std::string_view::npos) break;
        s.remove_prefix(plus + 1);
    }
    return out;
}

/// Union of several layouts, each normalized on its own. The n gaussians are
/// split as evenly as possible; part k uses seed + k.
inline GaussianScene synth_scene(std::uint64_t seed, std::size_t n, std::span<const Layout> layouts) {
    if (layouts.empty()) throw DomainError("no layout given");
    if (layouts.size() == 1) return synth_scene(seed, n, layouts[0]);
    if (n < layouts.size()) throw DomainError("need at least one gaussian per layout");
    GaussianScene scene;
    for (std::size_t k = 0; k < layouts.size(); ++k) {
        const std::size_t part = n / layouts.size() + (k < n % layouts.size() ? 1 : 0);
        scene.append(synth_scene(seed + k, part, layouts[k]));
    }
    return scene;
}

/// Cameras looking at the scene centroid from distance in [2.5, 3.5] x extent.
/// `orbit` spaces them uniformly on a horizontal circle; `arc` spreads them over
/// +-40 degrees of azimuth around +z with small elevation changes. The field of
/// view is chosen so that the bounding sphere fits the shorter image side.
inline std::vector<Camera> synth_cameras(std::uint64_t seed, std::size_t k, const GaussianScene& scene, Rig rig,
                                         int width = 64, int height = 64) {
    if (k == 0) throw DomainError("synth_cameras needs at least one camera");
    Rng rng(seed ^ 0x5ca1ab1eULL);
    const Vec3 target = scene.centroid();
    const double extent = scene.extent;
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    std::vector<Camera> cameras;
    cameras.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double dist = extent * rng.uniform(2.5, 3.5);
        Vec3 dir;
        if (rig == Rig::orbit) {
            const double az = phase + 2.0 * kPi * static_cast<double>(i) / static_cast<double>(k);
            dir = Vec3(std::sin(az), 0.0, std::cos(az));
        } else {
            const double frac = k == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(k - 1);
            const double az = (-40.0 + 80.0 * frac) * kPi / 180.0;
            const double el = rng.uniform(-15.0, 15.0) * kPi / 180.0;
            dir = Vec3(std::sin(az) * std::cos(el), std::sin(el), std::cos(az) * std::cos(el));
        }
        const double half_angle = std::min(1.1 * std::asin(std::min(1.0, extent / dist)), 0.45 * kPi);
        const double focal = 0.5 * std::min(width, height) / std::tan(half_angle);
        cameras.push_back(look_at(target + dist * dir, target, Vec3::UnitY(), focal_to_fov(focal, width),
                                  focal_to_fov(focal, height), width, height));
    }
    return cameras;
}

/// Exact deltas applied by perturb_camera.
struct Perturbation {
    Vec3 center_offset = Vec3::Zero();
    Vec3 axis = Vec3::UnitZ();
    double angle = 0.0;
    double fov_factor = 1.0;
};

/// Mis-calibrates a camera: the center moves by a vector uniform in the ball of
/// radius dt, the orientation turns about the center by an angle uniform in
/// [0, dtheta] around a uniform axis, and both fields of view are multiplied by
/// the same factor 1 + u with u uniform in [-dfov, dfov].
inline Camera perturb_camera(const Camera& camera, std::uint64_t seed, double dt, double dtheta, double dfov,
                             Perturbation* record = nullptr) {
    if (dt < 0 || dtheta < 0 || dfov < 0) throw DomainError("perturbation magnitudes must be non-negative");
    Rng rng(seed);
    Perturbation p;
    p.center_offset = rng.in_ball(dt);
    p.axis = rng.unit_vector();
    p.angle = rng.uniform(0.0, dtheta);
    p.fov_factor = 1.0 + rng.uniform(-dfov, dfov);

    Camera out = camera;
    if (p.angle != 0.0) {
        const UnitQuaternion dq = UnitQuaternion::from_axis_angle(p.axis, p.angle);
        out.q = (dq * camera.q).normalized();
        out.t = quat_to_rotmat(dq) * camera.t;
    }
    if (p.center_offset.squaredNorm() > 0.0) out.t -= out.rotation() * p.center_offset;
    out.fov_x = camera.fov_x * p.fov_factor;
    out.fov_y = camera.fov_y * p.fov_factor;
    if (record) *record = p;
    return out;
}

}  // namespace splatcal
