#pragma once

#include "splatcal/camgrad.hpp"

#include <Eigen/Eigenvalues>

namespace splatcal {

/// Symmetric 3x3 Hessian over (z_c, fov_x, fov_y).
struct Hessian3 {
    Mat3 matrix = Mat3::Zero();
    /// ||H - H^T|| / ||H|| of the raw difference quotient, before symmetrizing.
    double asymmetry = 0.0;
};

/// Step sizes for the Hessian difference quotient.
struct HessianSteps {
    double z = 1e-3;    // scene units
    double fov = 1e-4;  // radians

    static HessianSteps for_extent(double extent) { return {1e-3 * extent, 1e-4}; }
};

/// Column k is the central difference of the gradient along coordinate k; the
/// result is symmetrized.
inline Hessian3 estimate_hessian(const std::function<Vec3(const Vec3&)>& gradient, const Vec3& x, const Vec3& eps) {
    if (!(eps.minCoeff() > 0.0)) throw DomainError("hessian steps must be positive");
    Mat3 h;
    for (int k = 0; k < 3; ++k) {
        Vec3 xp = x, xm = x;
        xp[k] += eps[k];
        xm[k] -= eps[k];
        h.col(k) = (gradient(xp) - gradient(xm)) / (2.0 * eps[k]);
    }
    Hessian3 out;
    const double norm = h.norm();
    out.asymmetry = norm > 0.0 ? (h - h.transpose()).norm() / norm : 0.0;
    out.matrix = 0.5 * (h + h.transpose());
    return out;
}

/// (z_c, fov_x, fov_y) of a camera.
inline Vec3 depth_fov_params(const Camera& c) { return {c.t.z(), c.fov_x, c.fov_y}; }

inline Camera with_depth_fov(Camera c, const Vec3& p) {
    c.t.z() = p[0];
    c.fov_x = p[1];
    c.fov_y = p[2];
    return c;
}

/// Hessian of the photometric loss over (z_c, fov_x, fov_y) at `camera`,
/// differencing grad_camera.
inline Hessian3 estimate_hessian(const GaussianScene& scene, const Camera& camera, const Image& target, LossKind kind,
                                 const HessianSteps& steps, const RenderSettings& settings = {}) {
    auto gradient = [&](const Vec3& p) {
        const CameraGrad g = grad_camera(scene, with_depth_fov(camera, p), target, kind, settings);
        return Vec3(g.d_t.z(), g.d_fov.x(), g.d_fov.y());
    };
    return estimate_hessian(gradient, depth_fov_params(camera), Vec3(steps.z, steps.fov, steps.fov));
}

struct Eigen3 {
    Vec3 values = Vec3::Zero();
    /// Columns are unit eigenvectors.
    Mat3 vectors = Mat3::Identity();
};

/// Eigendecomposition of a symmetric 3x3 matrix. Eigenpairs come sorted by
/// descending |lambda|, each vector with its largest-magnitude component positive.
inline Eigen3 eigen3_sym(const Mat3& h) {
    const Eigen::SelfAdjointEigenSolver<Mat3> solver(0.5 * (h + h.transpose()));
    const Vec3 lambda = solver.eigenvalues();
    const Mat3 v = solver.eigenvectors();

    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
        const double ai = std::abs(lambda[i]), aj = std::abs(lambda[j]);
        return ai > aj || (ai == aj && lambda[i] > lambda[j]);
    });
    Eigen3 out;
    for (int k = 0; k < 3; ++k) {
        out.values[k] = lambda[order[k]];
        Vec3 col = v.col(order[k]);
        int big = 0;
        for (int r = 1; r < 3; ++r)
            if (std::abs(col[r]) > std::abs(col[big])) big = r;
        if (col[big] < 0) col = -col;
        out.vectors.col(k) = col;
    }
    return out;
}

/// Affine change of variables (z_c, fov_x, fov_y) = anchor + basis * (a, b, c).
struct ReparamFrame {
    Vec3 anchor = Vec3::Zero();
    Mat3 basis = Mat3::Identity();
    Vec3 eigenvalues = Vec3::Zero();
    /// True when the Hessian was unusable and the identity basis was substituted.
    bool degenerate = false;
};

/// Frame from a Hessian estimate. Falls back to the identity basis when the
/// spectrum vanishes or the decomposition residual is too large.
inline ReparamFrame build_frame(const Vec3& anchor, const Hessian3& hessian) {
    ReparamFrame f;
    f.anchor = anchor;
    const Mat3& h = hessian.matrix;
    const Eigen3 e = eigen3_sym(h);
    const double hn = h.norm();
    const double residual = (h * e.vectors - e.vectors * e.values.asDiagonal()).norm();
    const bool finite = h.allFinite() && e.vectors.allFinite();
    if (!finite || e.values.cwiseAbs().maxCoeff() < 1e-12 || residual > 1e-8 * hn) {
        f.degenerate = true;
        return f;
    }
    f.basis = e.vectors;
    f.eigenvalues = e.values;
    return f;
}

inline constexpr double kFovMin = 1e-3;
inline constexpr double kFovMax = kPi - 1e-3;

struct AbcMapping {
    Vec3 params = Vec3::Zero();
    bool fov_clamped = false;
};

/// Maps (a, b, c) back to (z_c, fov_x, fov_y). Fields of view outside
/// [1e-3, pi - 1e-3] are clamped and flagged.
inline AbcMapping abc_to_params(const Vec3& abc, const ReparamFrame& frame) {
    AbcMapping out;
    out.params = frame.anchor + frame.basis * abc;
    for (int k = 1; k < 3; ++k) {
        const double clamped = std::clamp(out.params[k], kFovMin, kFovMax);
        if (clamped != out.params[k]) out.fov_clamped = true;
        out.params[k] = clamped;
    }
    return out;
}

inline Vec3 params_to_abc(const Vec3& params, const ReparamFrame& frame) {
    return frame.basis.transpose() * (params - frame.anchor);
}

/// Chain rule into the eigenbasis: E^T (dL/dz_c, dL/dfov_x, dL/dfov_y).
inline Vec3 grad_abc(const CameraGrad& g, const ReparamFrame& frame) {
    return frame.basis.transpose() * Vec3(g.d_t.z(), g.d_fov.x(), g.d_fov.y());
}

}  // namespace splatcal
