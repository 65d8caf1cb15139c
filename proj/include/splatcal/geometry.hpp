#pragma once

#include "splatcal/common.hpp"

#include <Eigen/Dense>

namespace splatcal {

/// Near-plane distance. Centers with camera-space z at or below it are culled.
inline constexpr double kZNear = 0.01;

/// Low-pass variance added to projected covariances, in pixels squared.
inline constexpr double kLowPass = 0.3;

/// Rotation quaternion, stored (w, x, y, z) like COLMAP text files.
struct UnitQuaternion {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    UnitQuaternion normalized() const {
        const double n = norm();
        if (n < 1e-300) throw ZeroQuaternion();
        return {w / n, x / n, y / n, z / n};
    }

    Vec4 coeffs() const { return {w, x, y, z}; }
    static UnitQuaternion from_coeffs(const Vec4& c) { return {c[0], c[1], c[2], c[3]}; }

    static UnitQuaternion from_axis_angle(const Vec3& axis, double angle) {
        const Vec3 a = axis.normalized();
        const double s = std::sin(0.5 * angle);
        return {std::cos(0.5 * angle), a.x() * s, a.y() * s, a.z() * s};
    }

    /// Hamilton product: rotation by `rhs` followed by `*this`.
    UnitQuaternion operator*(const UnitQuaternion& r) const {
        return {w * r.w - x * r.x - y * r.y - z * r.z, w * r.x + x * r.w + y * r.z - z * r.y,
                w * r.y - x * r.z + y * r.w + z * r.x, w * r.z + x * r.y - y * r.x + z * r.w};
    }

    UnitQuaternion conjugate() const { return {w, -x, -y, -z}; }

    bool operator==(const UnitQuaternion&) const = default;
};

/// Pinhole camera with world-to-camera pose: p_cam = R(q) p_world + t.
/// Fields of view are full angles in radians.
struct Camera {
    Vec3 t = Vec3::Zero();
    UnitQuaternion q;
    double fov_x = kPi / 2;
    double fov_y = kPi / 2;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;

    double fx() const;
    double fy() const;
    Mat3 rotation() const;
    /// Camera center in world coordinates.
    Vec3 center() const;

    bool operator==(const Camera&) const = default;
};

/// Proper rotation matrix of q. Non-unit inputs are normalized first.
inline Mat3 quat_to_rotmat(const UnitQuaternion& q_in) {
    const UnitQuaternion q = q_in.normalized();
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),  //
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

inline UnitQuaternion rotmat_to_quat(const Mat3& r) {
    Eigen::Quaterniond e(r);
    e.normalize();
    UnitQuaternion q{e.w(), e.x(), e.y(), e.z()};
    if (q.w < 0) q = {-q.w, -q.x, -q.y, -q.z};
    return q;
}

/// Pulls a gradient with respect to the rotation matrix back to the raw
/// quaternion components, including the normalization inside quat_to_rotmat.
inline Vec4 rotmat_grad_to_quat(const UnitQuaternion& q_in, const Mat3& g) {
    const double n = q_in.norm();
    const UnitQuaternion q = q_in.normalized();
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Vec4 dq;
    dq[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    dq[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                 w * g(2, 1) - 2 * x * g(2, 2));
    dq[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                 z * g(2, 1) - 2 * y * g(2, 2));
    dq[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) +
                 x * g(2, 0) + y * g(2, 1));
    const Vec4 u = q.coeffs();
    return (dq - u * u.dot(dq)) / n;
}

/// Geodesic angle between two rotations, radians in [0, pi].
inline double rotation_angle_between(const UnitQuaternion& a, const UnitQuaternion& b) {
    const Vec4 p = a.normalized().coeffs();
    Vec4 q = b.normalized().coeffs();
    if (p.dot(q) < 0.0) q = -q;
    return 4.0 * std::atan2((p - q).norm(), (p + q).norm());
}

inline Vec3 world_to_camera(const Vec3& p_world, const Camera& camera) {
    return quat_to_rotmat(camera.q) * p_world + camera.t;
}

inline Vec3 camera_to_world(const Vec3& p_cam, const Camera& camera) {
    return quat_to_rotmat(camera.q).transpose() * (p_cam - camera.t);
}

inline double fov_to_focal(double fov, double size) {
    if (!(fov > 0.0 && fov < kPi)) throw DomainError("field of view must lie in (0, pi)");
    return size / (2.0 * std::tan(0.5 * fov));
}

inline double focal_to_fov(double focal, double size) {
    if (!(focal > 0.0)) throw DomainError("focal length must be positive");
    return 2.0 * std::atan(size / (2.0 * focal));
}

/// d(focal)/d(fov) for fov_to_focal.
inline double focal_fov_derivative(double fov, double size) {
    const double s = std::sin(0.5 * fov);
    return -size / (4.0 * s * s);
}

inline double Camera::fx() const { return fov_to_focal(fov_x, width); }
inline double Camera::fy() const { return fov_to_focal(fov_y, height); }
inline Mat3 Camera::rotation() const { return quat_to_rotmat(q); }
inline Vec3 Camera::center() const { return -(rotation().transpose() * t); }

/// Camera at `center` looking at `target`; image y points along -up.
inline Camera look_at(const Vec3& center, const Vec3& target, const Vec3& up, double fov_x, double fov_y,
                      int width, int height) {
    const Vec3 zc = (target - center).normalized();
    Vec3 xc = zc.cross(up);
    if (xc.norm() < 1e-9) xc = zc.cross(Vec3::UnitX());
    xc.normalize();
    const Vec3 yc = zc.cross(xc);
    Mat3 r;
    r.row(0) = xc.transpose();
    r.row(1) = yc.transpose();
    r.row(2) = zc.transpose();
    Camera cam;
    cam.q = rotmat_to_quat(r);
    cam.t = -(quat_to_rotmat(cam.q) * center);
    cam.fov_x = fov_x;
    cam.fov_y = fov_y;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    return cam;
}

inline Vec2 project_point(const Vec3& p_cam, const Camera& camera, double z_near = kZNear) {
    if (!(p_cam.z() > z_near)) throw BehindCamera();
    return {camera.fx() * p_cam.x() / p_cam.z() + camera.cx, camera.fy() * p_cam.y() / p_cam.z() + camera.cy};
}

/// 2x3 Jacobian of the pinhole projection at p_cam, given the focal lengths.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& p_cam, double fx, double fy) {
    const double iz = 1.0 / p_cam.z();
    Eigen::Matrix<double, 2, 3> j;
    j << fx * iz, 0.0, -fx * p_cam.x() * iz * iz,  //
        0.0, fy * iz, -fy * p_cam.y() * iz * iz;
    return j;
}

/// Local-affine projection of a world-space covariance to the image plane.
inline Mat2 project_covariance(const Mat3& cov3, const Camera& camera, const Vec3& p_cam,
                               double low_pass = kLowPass, double z_near = kZNear) {
    if (!(p_cam.z() > z_near)) throw BehindCamera();
    const Eigen::Matrix<double, 2, 3> t = projection_jacobian(p_cam, camera.fx(), camera.fy()) * camera.rotation();
    Mat2 cov2 = t * cov3 * t.transpose();
    cov2(0, 1) = cov2(1, 0) = 0.5 * (cov2(0, 1) + cov2(1, 0));
    cov2(0, 0) += low_pass;
    cov2(1, 1) += low_pass;
    return cov2;
}

/// R diag(scale^2) R^T.
inline Mat3 build_covariance(const Vec3& scale, const UnitQuaternion& rot) {
    if (!(scale.minCoeff() > 0.0)) throw DomainError("gaussian scale must be positive");
    const Mat3 m = quat_to_rotmat(rot) * scale.asDiagonal();
    Mat3 cov = m * m.transpose();
    return 0.5 * (cov + cov.transpose());
}

}  // namespace splatcal
