#pragma once

#include "splatcal/renderer.hpp"

#include <array>
#include <functional>

namespace splatcal {

/// Gradient of the loss with respect to one splat's 2D quantities.
struct SplatGrad {
    Vec2 uv = Vec2::Zero();
    /// d/d(conic) for the parameters (Q00, Q01, Q11).
    Vec3 conic = Vec3::Zero();
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
};

/// Forward pass products kept for the backward pass.
struct RenderPass {
    SplatList splats;
    RenderTrace trace;
    Image image;
};

inline RenderPass render_pass(const GaussianScene& scene, const Camera& camera, const RenderSettings& settings = {}) {
    RenderPass pass;
    pass.splats = cull_and_project(scene, camera, settings);
    pass.image = rasterize(pass.splats, camera.width, camera.height, settings, &pass.trace);
    return pass;
}

/// Exact gradient of the traced forward pass with respect to every splat's
/// uv, conic, opacity and color, given dLoss/dImage. Per-band partial sums are
/// reduced in band order so the result is reproducible bit for bit.
inline std::vector<SplatGrad> backward_splats(const SplatList& splats, const RenderTrace& trace,
                                              std::span<const double> dloss_dimage,
                                              const RenderSettings& settings = {}) {
    const std::size_t nb = trace.bands.size();
    std::vector<std::vector<SplatGrad>> partial(nb);
    parallel_for(nb, [&](std::size_t b) {
        const auto& entries = trace.bands[b];
        if (entries.empty()) return;
        auto& acc = partial[b];
        acc.assign(splats.size(), SplatGrad{});
        // Color composited behind the current splat, per pixel of this band.
        const int row0 = static_cast<int>(b) * RenderTrace::kBandRows;
        const std::size_t pix0 = static_cast<std::size_t>(row0) * trace.width;
        const std::size_t band_pixels =
            static_cast<std::size_t>(std::min(RenderTrace::kBandRows, trace.height - row0)) * trace.width;
        std::vector<double> behind(band_pixels * 3);
        for (std::size_t k = 0; k < band_pixels; ++k)
            for (int c = 0; c < 3; ++c) behind[k * 3 + c] = trace.final_transmittance[pix0 + k] * settings.background[c];

        for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
            const Splat& s = splats[it->splat];
            const std::size_t p = it->pixel;
            const std::size_t k = p - pix0;
            const double px = static_cast<double>(p % trace.width) + 0.5;
            const double py = static_cast<double>(p / trace.width) + 0.5;
            const double alpha = it->alpha;
            const double t = it->transmittance;
            const double inv_one_minus = 1.0 / (1.0 - alpha);

            double dl_dalpha = 0.0;
            SplatGrad& g = acc[it->splat];
            for (int c = 0; c < 3; ++c) {
                const double dl_dc = dloss_dimage[p * 3 + c];
                dl_dalpha += dl_dc * (t * s.color[c] - behind[k * 3 + c] * inv_one_minus);
                g.color[c] += dl_dc * alpha * t;
                behind[k * 3 + c] += s.color[c] * alpha * t;
            }
            if (it->clamped) continue;
            g.opacity += dl_dalpha * alpha / s.opacity;
            const double dx = px - s.uv.x(), dy = py - s.uv.y();
            const double w = dl_dalpha * alpha;
            // d(power)/d(uv) = conic * d
            g.uv.x() += w * (s.conic(0, 0) * dx + s.conic(0, 1) * dy);
            g.uv.y() += w * (s.conic(0, 1) * dx + s.conic(1, 1) * dy);
            g.conic += w * Vec3(-0.5 * dx * dx, -dx * dy, -0.5 * dy * dy);
        }
    });

    std::vector<SplatGrad> out(splats.size());
    for (const auto& acc : partial) {
        if (acc.empty()) continue;
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i].uv += acc[i].uv;
            out[i].conic += acc[i].conic;
            out[i].opacity += acc[i].opacity;
            out[i].color += acc[i].color;
        }
    }
    return out;
}

/// dLoss/duv per splat, holding covariance, opacity, color and the
/// compositing order fixed.
inline std::vector<Vec2> backward_duv(const RenderPass& pass, const Image& target, LossKind kind,
                                      const RenderSettings& settings = {}) {
    const auto dl = loss_gradient(pass.image, target, kind);
    const auto grads = backward_splats(pass.splats, pass.trace, dl, settings);
    std::vector<Vec2> duv(grads.size());
    for (std::size_t i = 0; i < grads.size(); ++i) duv[i] = grads[i].uv;
    return duv;
}

/// Variant taking a rendered image. The trace is rebuilt by rasterizing
/// `splats` again, which must reproduce `image`.
inline std::vector<Vec2> backward_duv(const SplatList& splats, const Image& image, const Image& target, LossKind kind,
                                      const RenderSettings& settings = {}) {
    detail::check_same_dims(image, target);
    RenderPass pass;
    pass.splats = splats;
    pass.image = rasterize(splats, image.width, image.height, settings, &pass.trace);
    pass.image = image;
    return backward_duv(pass, target, kind, settings);
}

/// dLoss with respect to the camera: translation t, raw quaternion q (before
/// renormalization) and the two fields of view.
struct CameraGrad {
    Vec3 d_t = Vec3::Zero();
    Vec4 d_q = Vec4::Zero();
    Vec2 d_fov = Vec2::Zero();

    using Vector = Eigen::Matrix<double, 9, 1>;

    /// Order: tx ty tz qw qx qy qz fov_x fov_y.
    Vector as_vector() const {
        Vector v;
        v << d_t, d_q, d_fov;
        return v;
    }
    static CameraGrad from_vector(const Vector& v) {
        CameraGrad g;
        g.d_t = v.segment<3>(0);
        g.d_q = v.segment<4>(3);
        g.d_fov = v.segment<2>(7);
        return g;
    }
    bool all_finite() const { return as_vector().allFinite(); }
};

/// Chains per-splat dLoss/duv through the pinhole projection of each center.
/// The projected covariances are treated as constants.
inline CameraGrad camera_grad_from_duv(const SplatList& splats, std::span<const Vec2> duv, const GaussianScene& scene,
                                       const Camera& camera) {
    const double fx = camera.fx(), fy = camera.fy();
    Vec3 d_t = Vec3::Zero();
    Mat3 d_rot = Mat3::Zero();
    double d_fx = 0.0, d_fy = 0.0;
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const Vec2& g = duv[i];
        if (g.x() == 0.0 && g.y() == 0.0) continue;
        const Vec3& pc = splats[i].p_cam;
        const double iz = 1.0 / pc.z();
        const Vec3 dp(g.x() * fx * iz, g.y() * fy * iz, -(g.x() * fx * pc.x() + g.y() * fy * pc.y()) * iz * iz);
        d_t += dp;
        d_rot += dp * scene.gaussians[splats[i].source].position.transpose();
        d_fx += g.x() * pc.x() * iz;
        d_fy += g.y() * pc.y() * iz;
    }
    CameraGrad out;
    out.d_t = d_t;
    out.d_q = rotmat_grad_to_quat(camera.q, d_rot);
    out.d_fov = Vec2(d_fx * focal_fov_derivative(camera.fov_x, camera.width),
                     d_fy * focal_fov_derivative(camera.fov_y, camera.height));
    return out;
}

/// Camera gradient from an existing forward pass.
inline CameraGrad grad_camera(const RenderPass& pass, const GaussianScene& scene, const Camera& camera,
                              const Image& target, LossKind kind, const RenderSettings& settings = {}) {
    if (pass.splats.empty()) throw EmptyFrustum();
    const auto duv = backward_duv(pass, target, kind, settings);
    return camera_grad_from_duv(pass.splats, duv, scene, camera);
}

/// Approximate camera gradient: the loss flows to the camera only through the
/// projected gaussian centers.
inline CameraGrad grad_camera(const GaussianScene& scene, const Camera& camera, const Image& target, LossKind kind,
                              const RenderSettings& settings = {}) {
    detail::check_same_dims(Image(camera.width, camera.height), target);
    return grad_camera(render_pass(scene, camera, settings), scene, camera, target, kind, settings);
}

// Finite differences ---------------------------------------------------------

using CameraVector = Eigen::Matrix<double, 9, 1>;

/// Raw camera parameters in gradient order: tx ty tz qw qx qy qz fov_x fov_y.
inline CameraVector camera_to_vector(const Camera& c) {
    CameraVector v;
    v << c.t, c.q.coeffs(), c.fov_x, c.fov_y;
    return v;
}

inline Camera camera_from_vector(const CameraVector& v, const Camera& like) {
    Camera c = like;
    c.t = v.segment<3>(0);
    c.q = UnitQuaternion::from_coeffs(v.segment<4>(3));
    c.fov_x = v[7];
    c.fov_y = v[8];
    return c;
}

struct FiniteDiffSteps {
    double translation = 1e-4;  // scene units
    double quaternion = 1e-5;
    double fov = 1e-5;  // radians

    static FiniteDiffSteps for_extent(double extent) { return {1e-4 * extent, 1e-5, 1e-5}; }

    CameraVector as_vector() const {
        CameraVector v;
        v << Vec3::Constant(translation), Vec4::Constant(quaternion), Vec2::Constant(fov);
        return v;
    }
};

/// Central differences of an arbitrary function of the 9 camera parameters.
inline CameraVector central_difference(const std::function<double(const CameraVector&)>& f, const CameraVector& x,
                                       const CameraVector& steps) {
    CameraVector g;
    for (int k = 0; k < 9; ++k) {
        if (!(steps[k] > 0.0)) throw DomainError("finite-difference steps must be positive");
        CameraVector xp = x, xm = x;
        xp[k] += steps[k];
        xm[k] -= steps[k];
        g[k] = (f(xp) - f(xm)) / (2.0 * steps[k]);
    }
    return g;
}

/// `frozen_cov` keeps every splat's 2D covariance at the nominal camera's value
/// while re-projecting centers; `full` recomputes covariances too.
enum class FiniteDiffMode { full, frozen_cov };

/// Loss of the nominal camera's trace re-evaluated at a different camera.
inline double traced_loss(const GaussianScene& scene, const RenderPass& nominal, const Camera& camera,
                          const Image& target, LossKind kind, FiniteDiffMode mode, const RenderSettings& settings = {}) {
    const Mat3 rot = camera.rotation();
    const double fx = camera.fx(), fy = camera.fy();
    SplatList moved = nominal.splats;
    for (auto& s : moved) {
        Splat p = s;
        const bool with_cov = mode == FiniteDiffMode::full;
        project_gaussian(scene.gaussians[s.source], rot, camera.t, fx, fy, camera.cx, camera.cy, settings, p,
                         with_cov);
        s.uv = p.uv;
        if (with_cov) {
            s.cov = p.cov;
            s.conic = p.conic;
        }
    }
    return loss(rasterize_traced(moved, nominal.trace, settings), target, kind);
}

/// Finite-difference camera gradient. The visible set, the compositing order
/// and the per-pixel contribution pattern are those of the nominal camera.
inline CameraGrad finite_diff_grad(const GaussianScene& scene, const Camera& camera, const Image& target,
                                   LossKind kind, FiniteDiffMode mode, const FiniteDiffSteps& steps,
                                   const RenderSettings& settings = {}) {
    detail::check_same_dims(Image(camera.width, camera.height), target);
    const RenderPass nominal = render_pass(scene, camera, settings);
    if (nominal.splats.empty()) throw EmptyFrustum();
    auto f = [&](const CameraVector& v) {
        return traced_loss(scene, nominal, camera_from_vector(v, camera), target, kind, mode, settings);
    };
    return CameraGrad::from_vector(central_difference(f, camera_to_vector(camera), steps.as_vector()));
}

}  // namespace splatcal
