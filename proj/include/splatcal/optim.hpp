#pragma once

#include "splatcal/reparam.hpp"

namespace splatcal {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment accumulators for one parameter group set.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
    long skipped = 0;
    AdamHyper hyper;

    AdamState() = default;
    explicit AdamState(std::size_t n, AdamHyper h = {}) : m(n, 0.0), v(n, 0.0), hyper(h) {}

    std::size_t size() const { return m.size(); }

    void reset() {
        std::fill(m.begin(), m.end(), 0.0);
        std::fill(v.begin(), v.end(), 0.0);
        step = 0;
    }
};

/// Computes the bias-corrected Adam update without applying it. A non-finite
/// gradient skips the step entirely (state untouched, `skipped` incremented)
/// and returns false.
inline bool adam_delta(AdamState& state, std::span<const double> grad, std::span<const double> lr,
                       std::span<double> delta) {
    if (grad.size() != state.size() || lr.size() != state.size() || delta.size() != state.size())
        throw DimensionMismatch("adam: parameter, gradient and learning-rate sizes differ");
    for (double g : grad)
        if (!std::isfinite(g)) {
            ++state.skipped;
            std::fill(delta.begin(), delta.end(), 0.0);
            return false;
        }
    const auto& h = state.hyper;
    ++state.step;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double g = grad[i];
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        delta[i] = -lr[i] * mhat / (std::sqrt(vhat) + h.eps);
    }
    return true;
}

/// theta <- theta - lr * mhat / (sqrt(vhat) + eps).
inline bool adam_step(AdamState& state, std::span<double> params, std::span<const double> grad,
                      std::span<const double> lr) {
    if (params.size() != state.size()) throw DimensionMismatch("adam: parameter size differs from state");
    std::vector<double> delta(params.size());
    if (!adam_delta(state, grad, lr, delta)) return false;
    for (std::size_t i = 0; i < params.size(); ++i) params[i] += delta[i];
    return true;
}

/// Camera learning rates. The translation rate is absolute (scene units); use
/// `for_extent` to scale the default.
struct CameraLearningRates {
    double translation = 1e-3;
    double quaternion = 1e-4;
    double fov = 1e-4;
    Vec3 abc = Vec3::Constant(1e-3);

    static CameraLearningRates for_extent(double extent) {
        CameraLearningRates r;
        r.translation *= extent;
        return r;
    }
};

/// Gaussian attribute learning rates; position is absolute (scene units).
struct ModelLearningRates {
    double position = 1.6e-4;
    double scale = 5e-3;
    double rotation = 1e-3;
    double opacity = 5e-2;
    double color = 2.5e-3;

    static ModelLearningRates for_extent(double extent) {
        ModelLearningRates r;
        r.position *= extent;
        return r;
    }
};

/// Renormalizes the quaternion and clamps both fields of view to
/// [1e-3, pi - 1e-3]. Returns true when a clamp was applied.
inline bool project_camera_params(Camera& camera) {
    if (camera.q.norm() < 1e-9) throw ZeroQuaternion();
    camera.q = camera.q.normalized();
    bool clamped = false;
    for (double* fov : {&camera.fov_x, &camera.fov_y}) {
        const double c = std::clamp(*fov, kFovMin, kFovMax);
        if (c != *fov) clamped = true;
        *fov = c;
    }
    return clamped;
}

/// Adam-driven camera updates in either the raw (t, q, fov) parameters or the
/// (x_c, y_c, q, a, b, c) parameters of a ReparamFrame. Both layouts hold 9
/// values; Adam acts per component so an identity frame anchored at the current
/// camera reproduces the raw trajectory exactly when the learning rates agree.
class CameraOptimizer {
public:
    CameraOptimizer(const CameraLearningRates& lr, AdamHyper hyper = {}, bool optimize_fov = true)
        : lr_(lr), adam_(9, hyper), optimize_fov_(optimize_fov) {}

    /// Switches to the eigenbasis parameterization anchored at `frame.anchor`;
    /// (a, b, c) restart at zero and the Adam moments are reset.
    void set_frame(const ReparamFrame& frame) {
        frame_ = frame;
        abc_ = Vec3::Zero();
        adam_.reset();
    }

    void clear_frame() {
        frame_.reset();
        adam_.reset();
    }

    const std::optional<ReparamFrame>& frame() const { return frame_; }
    const Vec3& abc() const { return abc_; }
    const AdamState& adam() const { return adam_; }
    bool optimize_fov() const { return optimize_fov_; }

    /// One update. Returns false if the gradient was non-finite (step skipped).
    /// `fov_clamped` reports whether projection clamped a field of view.
    bool step(Camera& camera, const CameraGrad& g, bool* fov_clamped = nullptr) {
        std::array<double, 9> grad{}, lr{}, delta{};
        const double lr_fov = optimize_fov_ ? lr_.fov : 0.0;
        if (!frame_) {
            const CameraVector gv = g.as_vector();
            for (int i = 0; i < 9; ++i) grad[i] = gv[i];
            if (!optimize_fov_) grad[7] = grad[8] = 0.0;
            lr = {lr_.translation, lr_.translation, lr_.translation, lr_.quaternion, lr_.quaternion,
                  lr_.quaternion,  lr_.quaternion,  lr_fov,          lr_fov};
            if (!adam_delta(adam_, grad, lr, delta)) return false;
            camera.t += Vec3(delta[0], delta[1], delta[2]);
            camera.q.w += delta[3];
            camera.q.x += delta[4];
            camera.q.y += delta[5];
            camera.q.z += delta[6];
            camera.fov_x += delta[7];
            camera.fov_y += delta[8];
        } else {
            const Vec3 gabc = grad_abc(g, *frame_);
            grad = {g.d_t.x(), g.d_t.y(), g.d_q[0], g.d_q[1], g.d_q[2], g.d_q[3], gabc[0], gabc[1], gabc[2]};
            lr = {lr_.translation, lr_.translation, lr_.quaternion, lr_.quaternion, lr_.quaternion,
                  lr_.quaternion,  lr_.abc[0],      lr_.abc[1],     lr_.abc[2]};
            if (!adam_delta(adam_, grad, lr, delta)) return false;
            camera.t.x() += delta[0];
            camera.t.y() += delta[1];
            camera.q.w += delta[2];
            camera.q.x += delta[3];
            camera.q.y += delta[4];
            camera.q.z += delta[5];
            const Vec3 dabc(delta[6], delta[7], delta[8]);
            abc_ += dabc;
            const Vec3 dp = frame_->basis * dabc;
            camera.t.z() += dp[0];
            camera.fov_x += dp[1];
            camera.fov_y += dp[2];
        }
        const bool clamped = project_camera_params(camera);
        if (fov_clamped) *fov_clamped = clamped;
        return true;
    }

private:
    CameraLearningRates lr_;
    AdamState adam_;
    bool optimize_fov_;
    std::optional<ReparamFrame> frame_;
    Vec3 abc_ = Vec3::Zero();
};

}  // namespace splatcal
