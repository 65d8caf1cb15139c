#pragma once

#include "splatcal/scene.hpp"

#include <span>

namespace splatcal {

/// Row-major RGB image with channels in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
    double& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool operator==(const Image&) const = default;
};

struct RenderSettings {
    Vec3 background = Vec3::Zero();
    double low_pass = kLowPass;
    double z_near = kZNear;
    double alpha_max = 0.99;
    double alpha_min = 1.0 / 255.0;
    double min_transmittance = 1e-4;
    /// Mahalanobis radius of a splat's support.
    double support_sigma = 3.0;
};

/// A gaussian projected into one camera.
struct Splat {
    Vec2 uv = Vec2::Zero();
    Mat2 cov = Mat2::Identity();
    Mat2 conic = Mat2::Identity();
    double depth = 0.0;
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    std::uint32_t source = 0;
    Vec3 p_cam = Vec3::Zero();
};

using SplatList = std::vector<Splat>;

namespace detail {

/// Minimum of (p - uv)^T Q (p - uv) over the rectangle [0, w] x [0, h].
inline double min_mahalanobis_sq_over_rect(const Vec2& uv, const Mat2& q, double w, double h) {
    if (uv.x() >= 0 && uv.x() <= w && uv.y() >= 0 && uv.y() <= h) return 0.0;
    auto eval = [&](double x, double y) {
        const double dx = x - uv.x(), dy = y - uv.y();
        return q(0, 0) * dx * dx + 2 * q(0, 1) * dx * dy + q(1, 1) * dy * dy;
    };
    double best = std::numeric_limits<double>::infinity();
    for (double x0 : {0.0, w}) {
        const double dx = x0 - uv.x();
        const double y = std::clamp(uv.y() - q(0, 1) * dx / q(1, 1), 0.0, h);
        best = std::min(best, eval(x0, y));
    }
    for (double y0 : {0.0, h}) {
        const double dy = y0 - uv.y();
        const double x = std::clamp(uv.x() - q(0, 1) * dy / q(0, 0), 0.0, w);
        best = std::min(best, eval(x, y0));
    }
    return best;
}

inline Mat2 inverse_sym2(const Mat2& m) {
    const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    Mat2 inv;
    inv << m(1, 1) / det, -m(0, 1) / det, -m(1, 0) / det, m(0, 0) / det;
    return inv;
}

}  // namespace detail

/// Fills uv / cov / conic / p_cam of a splat for the given camera quantities.
/// Returns false when the center is not in front of the near plane.
inline bool project_gaussian(const Gaussian& g, const Mat3& rot, const Vec3& t, double fx, double fy, double cx,
                             double cy, const RenderSettings& settings, Splat& out, bool with_covariance = true) {
    out.p_cam = rot * g.position + t;
    const double z = out.p_cam.z();
    if (!(z > settings.z_near)) return false;
    out.uv = Vec2(fx * out.p_cam.x() / z + cx, fy * out.p_cam.y() / z + cy);
    out.depth = z;
    if (with_covariance) {
        const Eigen::Matrix<double, 2, 3> tj = projection_jacobian(out.p_cam, fx, fy) * rot;
        const Mat3 cov3 = build_covariance(g.scale, g.rotation);
        Mat2 cov2 = tj * cov3 * tj.transpose();
        cov2(0, 1) = cov2(1, 0) = 0.5 * (cov2(0, 1) + cov2(1, 0));
        cov2(0, 0) += settings.low_pass;
        cov2(1, 1) += settings.low_pass;
        out.cov = cov2;
        out.conic = detail::inverse_sym2(cov2);
    }
    return true;
}

/// Gaussians in front of the near plane whose support ellipse meets the image
/// rectangle, sorted by depth (ties by source index).
inline SplatList cull_and_project(const GaussianScene& scene, const Camera& camera,
                                  const RenderSettings& settings = {}) {
    const Mat3 rot = camera.rotation();
    const double fx = camera.fx(), fy = camera.fy();
    const double r2 = settings.support_sigma * settings.support_sigma;
    SplatList splats;
    splats.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Gaussian& g = scene.gaussians[i];
        Splat s;
        if (!project_gaussian(g, rot, camera.t, fx, fy, camera.cx, camera.cy, settings, s)) continue;
        const double det = s.cov.determinant();
        if (!(det > 0.0)) continue;
        if (detail::min_mahalanobis_sq_over_rect(s.uv, s.conic, camera.width, camera.height) > r2) continue;
        s.opacity = g.opacity;
        s.color = g.color;
        s.source = static_cast<std::uint32_t>(i);
        splats.push_back(s);
    }
    std::sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) {
        return a.depth < b.depth || (a.depth == b.depth && a.source < b.source);
    });
    return splats;
}

/// Which splats touched which pixels during one forward pass, in compositing
/// order. Pixels are grouped into fixed bands of rows that are processed
/// independently, so results never depend on the number of worker threads.
struct RenderTrace {
    struct Entry {
        std::uint32_t splat;
        std::uint32_t pixel;
        double transmittance;  // T before this splat
        double alpha;
        bool clamped;  // alpha hit alpha_max
    };
    static constexpr int kBandRows = 8;

    int width = 0;
    int height = 0;
    std::vector<std::vector<Entry>> bands;
    std::vector<double> final_transmittance;

    int band_count() const { return (height + kBandRows - 1) / kBandRows; }
};

namespace detail {

struct SplatFootprint {
    int y0, y1;  // inclusive pixel rows
};

inline SplatFootprint footprint_rows(const Splat& s, int height, double sigma) {
    const double ry = sigma * std::sqrt(s.cov(1, 1));
    const int y0 = std::max(0, static_cast<int>(std::floor(s.uv.y() - ry - 0.5)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(s.uv.y() + ry - 0.5)));
    return {y0, y1};
}

/// Column range [x0, x1] of pixels whose centers may lie inside the support
/// ellipse on row y. Empty when x0 > x1.
inline std::pair<int, int> footprint_cols(const Splat& s, int y, int width, double r2) {
    const double dy = y + 0.5 - s.uv.y();
    const double a = s.conic(0, 0), b = s.conic(0, 1), c = s.conic(1, 1);
    const double disc = b * b * dy * dy - a * (c * dy * dy - r2);
    if (disc < 0) return {1, 0};
    const double root = std::sqrt(disc);
    const double xa = s.uv.x() + (-b * dy - root) / a;
    const double xb = s.uv.x() + (-b * dy + root) / a;
    const int x0 = std::max(0, static_cast<int>(std::floor(xa - 0.5)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(xb - 0.5)));
    return {x0, x1};
}

inline double splat_power(const Splat& s, double px, double py) {
    const double dx = px - s.uv.x(), dy = py - s.uv.y();
    return -0.5 * (s.conic(0, 0) * dx * dx + 2.0 * s.conic(0, 1) * dx * dy + s.conic(1, 1) * dy * dy);
}

inline Image finish_image(int width, int height, const std::vector<double>& accum,
                          const std::vector<double>& transmittance, const Vec3& background) {
    Image img(width, height);
    for (std::size_t p = 0; p < img.pixel_count(); ++p)
        for (int c = 0; c < 3; ++c)
            img.pixels[p * 3 + c] = std::clamp(accum[p * 3 + c] + transmittance[p] * background[c], 0.0, 1.0);
    return img;
}

}  // namespace detail

/// Front-to-back alpha compositing. Optionally records the trace used by the
/// backward pass.
inline Image rasterize(const SplatList& splats, int width, int height, const RenderSettings& settings = {},
                       RenderTrace* trace = nullptr) {
    const std::size_t npix = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    std::vector<double> accum(npix * 3, 0.0);
    std::vector<double> trans(npix, 1.0);
    std::vector<std::uint8_t> done(npix, 0);
    const double r2 = settings.support_sigma * settings.support_sigma;

    std::vector<detail::SplatFootprint> rows(splats.size());
    for (std::size_t i = 0; i < splats.size(); ++i) rows[i] = detail::footprint_rows(splats[i], height, settings.support_sigma);

    const int nbands = (height + RenderTrace::kBandRows - 1) / RenderTrace::kBandRows;
    std::vector<std::vector<RenderTrace::Entry>> bands(trace ? nbands : 0);

    parallel_for(static_cast<std::size_t>(nbands), [&](std::size_t b) {
        const int by0 = static_cast<int>(b) * RenderTrace::kBandRows;
        const int by1 = std::min(height, by0 + RenderTrace::kBandRows) - 1;
        for (std::size_t i = 0; i < splats.size(); ++i) {
            const Splat& s = splats[i];
            const int y0 = std::max(rows[i].y0, by0), y1 = std::min(rows[i].y1, by1);
            if (y0 > y1) continue;
            // alpha < alpha_min wherever power < power_min
            const double power_min = std::log(settings.alpha_min / s.opacity);
            const double r2_eff = std::min(r2, -2.0 * power_min) * (1.0 + 1e-9);
            if (!(r2_eff > 0.0)) continue;
            for (int y = y0; y <= y1; ++y) {
                const auto [x0, x1] = detail::footprint_cols(s, y, width, r2_eff);
                for (int x = x0; x <= x1; ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * width + x;
                    if (done[p]) continue;
                    const double power = detail::splat_power(s, x + 0.5, y + 0.5);
                    if (-2.0 * power > r2 || power < power_min * (1.0 + 1e-9)) continue;
                    double alpha = s.opacity * std::exp(power);
                    if (alpha < settings.alpha_min) continue;
                    const bool clamped = alpha > settings.alpha_max;
                    if (clamped) alpha = settings.alpha_max;
                    const double t = trans[p];
                    const double next_t = t * (1.0 - alpha);
                    if (next_t < settings.min_transmittance) {
                        done[p] = 1;
                        continue;
                    }
                    for (int c = 0; c < 3; ++c) accum[p * 3 + c] += s.color[c] * alpha * t;
                    trans[p] = next_t;
                    if (trace)
                        bands[b].push_back(
                            {static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(p), t, alpha, clamped});
                }
            }
        }
    });

    if (trace) {
        trace->width = width;
        trace->height = height;
        trace->bands = std::move(bands);
        trace->final_transmittance = trans;
    }
    return detail::finish_image(width, height, accum, trans, settings.background);
}

/// Re-evaluates a recorded trace with possibly moved splats: the set of
/// (splat, pixel) contributions, their order and the alpha clamp state stay
/// fixed. This is the smooth piece of the forward pass that the backward pass
/// differentiates.
inline Image rasterize_traced(const SplatList& splats, const RenderTrace& trace, const RenderSettings& settings = {}) {
    const std::size_t npix = static_cast<std::size_t>(trace.width) * static_cast<std::size_t>(trace.height);
    std::vector<double> accum(npix * 3, 0.0);
    std::vector<double> trans(npix, 1.0);
    parallel_for(trace.bands.size(), [&](std::size_t b) {
        for (const auto& e : trace.bands[b]) {
            const Splat& s = splats[e.splat];
            const int x = static_cast<int>(e.pixel % trace.width), y = static_cast<int>(e.pixel / trace.width);
            const double alpha =
                e.clamped ? settings.alpha_max : s.opacity * std::exp(detail::splat_power(s, x + 0.5, y + 0.5));
            const double t = trans[e.pixel];
            for (int c = 0; c < 3; ++c) accum[e.pixel * 3 + c] += s.color[c] * alpha * t;
            trans[e.pixel] = t * (1.0 - alpha);
        }
    });
    return detail::finish_image(trace.width, trace.height, accum, trans, settings.background);
}

// Losses ------------------------------------------------------------------------

enum class LossKind { L1, L2 };

inline LossKind parse_loss_kind(std::string_view s) {
    if (s == "l1" || s == "L1") return LossKind::L1;
    if (s == "l2" || s == "L2") return LossKind::L2;
    throw DomainError("unknown loss kind: " + std::string(s));
}

inline const char* to_string(LossKind k) { return k == LossKind::L1 ? "l1" : "l2"; }

namespace detail {
inline void check_same_dims(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height || a.pixels.size() != b.pixels.size())
        throw DimensionMismatch("image dimensions differ: " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                                " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
}
}  // namespace detail

/// Mean absolute (L1) or squared (L2) difference over all pixel channels.
inline double loss(const Image& image, const Image& target, LossKind kind) {
    detail::check_same_dims(image, target);
    double sum = 0.0;
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        const double d = image.pixels[i] - target.pixels[i];
        sum += kind == LossKind::L1 ? std::abs(d) : d * d;
    }
    return image.pixels.empty() ? 0.0 : sum / static_cast<double>(image.pixels.size());
}

/// dLoss/dImage, same layout as Image::pixels. L1 uses sign(d) with sign(0) = 0.
inline std::vector<double> loss_gradient(const Image& image, const Image& target, LossKind kind) {
    detail::check_same_dims(image, target);
    const double inv_n = 1.0 / static_cast<double>(image.pixels.size());
    std::vector<double> g(image.pixels.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double d = image.pixels[i] - target.pixels[i];
        g[i] = kind == LossKind::L1 ? ((d > 0) - (d < 0)) * inv_n : 2.0 * d * inv_n;
    }
    return g;
}

inline constexpr double kPsnrCap = 99.0;

inline double psnr_from_mse(double mse) { return mse < 1e-12 ? kPsnrCap : -10.0 * std::log10(mse); }

/// Peak 1.0. Capped at 99 dB.
inline double psnr(const Image& image, const Image& target) { return psnr_from_mse(loss(image, target, LossKind::L2)); }

/// Convenience: cull, project and rasterize.
inline Image render(const GaussianScene& scene, const Camera& camera, const RenderSettings& settings = {}) {
    return rasterize(cull_and_project(scene, camera, settings), camera.width, camera.height, settings);
}

}  // namespace splatcal
