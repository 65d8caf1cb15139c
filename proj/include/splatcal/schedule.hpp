#pragma once

#include "splatcal/optim.hpp"

#include <chrono>

namespace splatcal {

/// Exponential moving average of the per-step PSNR progress.
struct EmaScore {
    double s = 0.0;
    double beta = 1.0 / 50.0;
    std::size_t steps_seen = 0;
};

/// s' = s (1 - beta) + beta (psnr_next - psnr_prev).
inline EmaScore ema_update(EmaScore score, double psnr_prev, double psnr_next) {
    if (!(score.beta > 0.0 && score.beta < 1.0)) throw DomainError("EMA beta must lie in (0, 1)");
    score.s = score.s * (1.0 - score.beta) + score.beta * (psnr_next - psnr_prev);
    ++score.steps_seen;
    return score;
}

struct ScheduleConfig {
    int model_steps = 3000;  // M
    int min_steps = 100;
    int max_steps = 1000;
    double threshold = 0.0002;  // dB
    double beta = 1.0 / 50.0;
    int n_phases = 5;
    LossKind camera_loss = LossKind::L2;
    LossKind model_loss = LossKind::L1;
    /// Phase after which the eigenbasis parameterization is switched on; 0 disables it.
    int reparam_after_phase = 1;
    /// Re-estimate the Hessian every this many phases after the first estimate; 0 = never.
    int hessian_refresh = 0;
    bool keep_best = false;
    bool optimize_fov = true;
    bool train_model = true;
    bool refine_heldout = false;
    /// PSNR for the progress score uses every n-th pixel.
    int psnr_stride = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (model_steps < 1) throw DomainError("model_steps must be >= 1");
        if (min_steps < 1 || min_steps > max_steps) throw DomainError("need 1 <= min_steps <= max_steps");
        if (!(threshold >= 0.0)) throw DomainError("threshold must be >= 0");
        if (!(beta > 0.0 && beta < 1.0)) throw DomainError("beta must lie in (0, 1)");
        if (n_phases < 1) throw DomainError("n_phases must be >= 1");
        if (reparam_after_phase < 0) throw DomainError("reparam_after_phase must be >= 0");
        if (hessian_refresh < 0) throw DomainError("hessian_refresh must be >= 0");
        if (psnr_stride < 1) throw DomainError("psnr_stride must be >= 1");
    }
};

enum class StopReason { threshold, max_steps, skipped };

inline const char* to_string(StopReason r) {
    switch (r) {
    case StopReason::threshold: return "threshold";
    case StopReason::max_steps: return "max_steps";
    case StopReason::skipped: return "skipped";
    }
    return "?";
}

struct TracePoint {
    int step = 0;
    double psnr = 0.0;
    double score = 0.0;
};

struct EarlyStopOutcome {
    int steps = 0;
    StopReason reason = StopReason::max_steps;
    double final_score = 0.0;
    double final_psnr = 0.0;
    std::vector<TracePoint> trace;
};

/// Drives one camera's fine-tuning loop. `step(n)` performs update n and
/// returns the PSNR after it. Stops after step n when n >= min_steps and the
/// score is strictly below the threshold, or when n reaches max_steps.
template <class StepFn>
EarlyStopOutcome run_early_stopping(const ScheduleConfig& cfg, double psnr0, StepFn&& step) {
    EarlyStopOutcome out;
    EmaScore score{0.0, cfg.beta, 0};
    double prev = psnr0;
    out.trace.push_back({0, psnr0, 0.0});
    for (int n = 1;; ++n) {
        const double next = step(n);
        score = ema_update(score, prev, next);
        prev = next;
        out.trace.push_back({n, next, score.s});
        if (n >= cfg.min_steps && score.s < cfg.threshold) {
            out.reason = StopReason::threshold;
        } else if (n >= cfg.max_steps) {
            out.reason = StopReason::max_steps;
        } else {
            continue;
        }
        out.steps = n;
        out.final_score = score.s;
        out.final_psnr = next;
        return out;
    }
}

/// PSNR over every `stride`-th pixel.
inline double strided_psnr(const Image& image, const Image& target, int stride) {
    if (stride <= 1) return psnr(image, target);
    detail::check_same_dims(image, target);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < image.pixel_count(); p += static_cast<std::size_t>(stride))
        for (int c = 0; c < 3; ++c) {
            const double d = image.pixels[p * 3 + c] - target.pixels[p * 3 + c];
            sum += d * d;
            ++n;
        }
    return psnr_from_mse(sum / static_cast<double>(n));
}

struct CameraPhaseResult {
    std::size_t camera = 0;
    int steps = 0;
    double psnr_before = 0.0;
    double psnr_after = 0.0;
    StopReason reason = StopReason::skipped;
    double final_score = 0.0;
    bool reparameterized = false;
    bool fov_clamped = false;
    std::string error;
    std::vector<TracePoint> trace;
};

/// Fine-tunes one camera against its target with the model fixed.
inline CameraPhaseResult camera_phase(const GaussianScene& scene, Camera& camera, const Image& target,
                                      const ScheduleConfig& cfg, CameraOptimizer& opt,
                                      const RenderSettings& settings = {}) {
    detail::check_same_dims(Image(camera.width, camera.height), target);
    CameraPhaseResult res;
    res.reparameterized = opt.frame().has_value();
    const Camera start = camera;
    RenderPass pass = render_pass(scene, camera, settings);
    if (pass.splats.empty()) {
        res.error = EmptyFrustum().what();
        return res;
    }
    res.psnr_before = strided_psnr(pass.image, target, cfg.psnr_stride);

    Camera best = camera;
    double best_psnr = res.psnr_before;
    try {
        EarlyStopOutcome run = run_early_stopping(cfg, res.psnr_before, [&](int) {
            const CameraGrad g = grad_camera(pass, scene, camera, target, cfg.camera_loss, settings);
            bool clamped = false;
            opt.step(camera, g, &clamped);
            res.fov_clamped = res.fov_clamped || clamped;
            pass = render_pass(scene, camera, settings);
            if (pass.splats.empty()) throw EmptyFrustum();
            const double p = strided_psnr(pass.image, target, cfg.psnr_stride);
            if (p > best_psnr) {
                best_psnr = p;
                best = camera;
            }
            return p;
        });
        res.steps = run.steps;
        res.reason = run.reason;
        res.final_score = run.final_score;
        res.psnr_after = run.final_psnr;
        res.trace = std::move(run.trace);
    } catch (const EmptyFrustum& e) {
        camera = start;
        res.error = e.what();
        res.reason = StopReason::skipped;
        res.psnr_after = res.psnr_before;
        return res;
    }
    if (cfg.keep_best && best_psnr > res.psnr_after) {
        camera = best;
        res.psnr_after = best_psnr;
    }
    return res;
}

// Model training -------------------------------------------------------------------

/// Unconstrained storage of the gaussian attributes plus one Adam state per
/// attribute group: log scales, logit opacities, free quaternions, colors
/// clamped to [0, 1] after every step.
class ModelOptimizer {
public:
    ModelOptimizer(const GaussianScene& scene, const ModelLearningRates& lr, AdamHyper hyper = {},
                   std::uint64_t seed = 0)
        : lr_(lr), rng_(seed ^ 0x6d6f64656cULL) {
        const std::size_t n = scene.size();
        position_.resize(3 * n);
        log_scale_.resize(3 * n);
        rotation_.resize(4 * n);
        logit_opacity_.resize(n);
        color_.resize(3 * n);
        for (std::size_t i = 0; i < n; ++i) {
            const Gaussian& g = scene.gaussians[i];
            for (int k = 0; k < 3; ++k) {
                position_[3 * i + k] = g.position[k];
                log_scale_[3 * i + k] = std::log(g.scale[k]);
                color_[3 * i + k] = g.color[k];
            }
            const Vec4 q = g.rotation.coeffs();
            for (int k = 0; k < 4; ++k) rotation_[4 * i + k] = q[k];
            logit_opacity_[i] = logit(g.opacity);
        }
        adam_position_ = AdamState(position_.size(), hyper);
        adam_scale_ = AdamState(log_scale_.size(), hyper);
        adam_rotation_ = AdamState(rotation_.size(), hyper);
        adam_opacity_ = AdamState(logit_opacity_.size(), hyper);
        adam_color_ = AdamState(color_.size(), hyper);
    }

    static double logit(double o) {
        const double c = std::clamp(o, 1e-7, 1.0 - 1e-7);
        return std::log(c / (1.0 - c));
    }
    static double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

    /// Next training view: round robin over a fresh seeded shuffle per epoch.
    std::size_t next_view(std::span<const std::size_t> views) {
        if (cursor_ >= order_.size()) {
            order_.assign(views.begin(), views.end());
            rng_.shuffle(order_);
            cursor_ = 0;
        }
        return order_[cursor_++];
    }

    /// One Adam step on every group from per-splat gradients of `pass`.
    void step(GaussianScene& scene, const Camera& camera, const RenderPass& pass, std::span<const SplatGrad> grads) {
        const std::size_t n = scene.size();
        std::vector<double> g_pos(3 * n, 0.0), g_scale(3 * n, 0.0), g_rot(4 * n, 0.0), g_op(n, 0.0),
            g_col(3 * n, 0.0);
        const Mat3 w = camera.rotation();
        const double fx = camera.fx(), fy = camera.fy();
        for (std::size_t k = 0; k < pass.splats.size(); ++k) {
            const Splat& s = pass.splats[k];
            const SplatGrad& sg = grads[k];
            const std::size_t i = s.source;
            const Gaussian& g = scene.gaussians[i];
            const Eigen::Matrix<double, 2, 3> j = projection_jacobian(s.p_cam, fx, fy);

            const Vec3 dp_world = w.transpose() * (j.transpose() * sg.uv);
            for (int c = 0; c < 3; ++c) g_pos[3 * i + c] += dp_world[c];

            // conic parameters (a, b, c) -> full symmetric gradient -> covariance
            Mat2 gq;
            gq << sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2];
            const Mat2 gcov2 = -s.conic * gq * s.conic;
            const Eigen::Matrix<double, 2, 3> tw = j * w;
            const Mat3 gcov3 = tw.transpose() * gcov2 * tw;
            const Mat3 r = quat_to_rotmat(g.rotation);
            const Mat3 m = r * g.scale.asDiagonal();
            const Mat3 gm = (gcov3 + gcov3.transpose()) * m;
            Mat3 gr;
            for (int c = 0; c < 3; ++c) {
                g_scale[3 * i + c] += gm.col(c).dot(r.col(c)) * g.scale[c];
                gr.col(c) = gm.col(c) * g.scale[c];
            }
            const Vec4 dq = rotmat_grad_to_quat(g.rotation, gr);
            for (int c = 0; c < 4; ++c) g_rot[4 * i + c] += dq[c];

            g_op[i] += sg.opacity * g.opacity * (1.0 - g.opacity);
            for (int c = 0; c < 3; ++c) g_col[3 * i + c] += sg.color[c];
        }
        auto apply = [](AdamState& st, std::vector<double>& p, const std::vector<double>& gr, double lr) {
            const std::vector<double> lrs(p.size(), lr);
            adam_step(st, p, gr, lrs);
        };
        apply(adam_position_, position_, g_pos, lr_.position);
        apply(adam_scale_, log_scale_, g_scale, lr_.scale);
        apply(adam_rotation_, rotation_, g_rot, lr_.rotation);
        apply(adam_opacity_, logit_opacity_, g_op, lr_.opacity);
        apply(adam_color_, color_, g_col, lr_.color);
        for (double& c : color_) c = std::clamp(c, 0.0, 1.0);
        write_back(scene);
    }

    /// Re-derives the constrained gaussian attributes from storage.
    void write_back(GaussianScene& scene) {
        for (std::size_t i = 0; i < scene.size(); ++i) {
            Gaussian& g = scene.gaussians[i];
            g.position = Vec3(position_[3 * i], position_[3 * i + 1], position_[3 * i + 2]);
            g.scale = Vec3(std::exp(log_scale_[3 * i]), std::exp(log_scale_[3 * i + 1]), std::exp(log_scale_[3 * i + 2]));
            UnitQuaternion q{rotation_[4 * i], rotation_[4 * i + 1], rotation_[4 * i + 2], rotation_[4 * i + 3]};
            if (q.norm() < 1e-9) q = UnitQuaternion{};
            q = q.normalized();
            rotation_[4 * i] = q.w;
            rotation_[4 * i + 1] = q.x;
            rotation_[4 * i + 2] = q.y;
            rotation_[4 * i + 3] = q.z;
            g.rotation = q;
            g.opacity = sigmoid(logit_opacity_[i]);
            g.color = Vec3(color_[3 * i], color_[3 * i + 1], color_[3 * i + 2]);
        }
    }

private:
    ModelLearningRates lr_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::vector<double> position_, log_scale_, rotation_, logit_opacity_, color_;
    AdamState adam_position_, adam_scale_, adam_rotation_, adam_opacity_, adam_color_;
};

/// Runs `steps` model updates, one training view per step. Returns the loss of
/// each step's render before its update.
inline std::vector<double> model_train_steps(GaussianScene& scene, std::span<const Camera> cameras,
                                             std::span<const Image> targets, std::span<const std::size_t> views,
                                             int steps, ModelOptimizer& opt, LossKind kind = LossKind::L1,
                                             const RenderSettings& settings = {}) {
    if (steps < 1) throw DomainError("model_train_steps needs at least one step");
    if (cameras.size() != targets.size()) throw DimensionMismatch("one target per camera required");
    if (views.empty()) throw DomainError("model_train_steps needs at least one training view");
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(steps));
    for (int s = 0; s < steps; ++s) {
        const std::size_t v = opt.next_view(views);
        const RenderPass pass = render_pass(scene, cameras[v], settings);
        losses.push_back(loss(pass.image, targets[v], kind));
        if (pass.splats.empty()) continue;
        const auto dl = loss_gradient(pass.image, targets[v], kind);
        const auto grads = backward_splats(pass.splats, pass.trace, dl, settings);
        opt.step(scene, cameras[v], pass, grads);
    }
    return losses;
}

// Full loop ------------------------------------------------------------------------

struct CalibrationConfig {
    ScheduleConfig schedule;
    CameraLearningRates camera_lr;
    ModelLearningRates model_lr;
    AdamHyper adam;
    HessianSteps hessian_steps;
    RenderSettings render;
    /// Per camera: true for held-out views that never train the model.
    std::vector<bool> heldout;

    /// Defaults with extent-relative quantities scaled to `extent`.
    static CalibrationConfig for_extent(double extent) {
        CalibrationConfig c;
        c.camera_lr = CameraLearningRates::for_extent(extent);
        c.model_lr = ModelLearningRates::for_extent(extent);
        c.hessian_steps = HessianSteps::for_extent(extent);
        return c;
    }
};

struct HessianRecord {
    std::size_t camera = 0;
    Mat3 hessian = Mat3::Zero();
    ReparamFrame frame;
    std::string error;
};

struct PhaseEntry {
    int phase = 0;
    std::vector<double> model_loss;
    std::vector<CameraPhaseResult> cameras;
    std::vector<HessianRecord> hessians;
    double wall_time_s = 0.0;
};

struct PhaseReport {
    std::vector<PhaseEntry> phases;
    /// Held-out cameras refined with the model frozen, when enabled.
    std::vector<CameraPhaseResult> heldout;
    int max_steps = 0;

    long camera_steps() const {
        long n = 0;
        for (const auto& p : phases)
            for (const auto& c : p.cameras) n += c.steps;
        for (const auto& c : heldout) n += c.steps;
        return n;
    }
    /// Steps an always-max_steps schedule would have used on the same cameras.
    long baseline_steps() const {
        long n = 0;
        for (const auto& p : phases)
            for (const auto& c : p.cameras)
                if (c.reason != StopReason::skipped) n += max_steps;
        for (const auto& c : heldout)
            if (c.reason != StopReason::skipped) n += max_steps;
        return n;
    }
    double savings() const {
        const long b = baseline_steps();
        return b > 0 ? 1.0 - static_cast<double>(camera_steps()) / static_cast<double>(b) : 0.0;
    }
    bool all_skipped() const {
        for (const auto& p : phases)
            for (const auto& c : p.cameras)
                if (c.reason != StopReason::skipped) return false;
        return true;
    }
};

/// Interleaved schedule: per phase, `model_steps` model updates followed by
/// fine-tuning every training camera in input order. After phase
/// `reparam_after_phase` each camera switches to its Hessian eigenbasis.
inline PhaseReport calibrate(GaussianScene& scene, std::vector<Camera>& cameras, std::span<const Image> targets,
                             const CalibrationConfig& cfg) {
    const ScheduleConfig& sc = cfg.schedule;
    sc.validate();
    if (cameras.empty()) throw DomainError("calibrate needs at least one camera");
    if (targets.size() != cameras.size()) throw DimensionMismatch("one target per camera required");
    std::vector<bool> heldout = cfg.heldout;
    heldout.resize(cameras.size(), false);

    std::vector<std::size_t> train_views;
    for (std::size_t i = 0; i < cameras.size(); ++i)
        if (!heldout[i]) train_views.push_back(i);
    if (train_views.empty()) throw DomainError("all cameras are held out");

    std::vector<CameraOptimizer> optimizers;
    optimizers.reserve(cameras.size());
    for (std::size_t i = 0; i < cameras.size(); ++i) optimizers.emplace_back(cfg.camera_lr, cfg.adam, sc.optimize_fov);
    ModelOptimizer model_opt(scene, cfg.model_lr, cfg.adam, sc.seed);
    const bool use_reparam = sc.optimize_fov && sc.reparam_after_phase > 0;

    auto estimate_frames = [&](PhaseEntry& entry, const std::vector<std::size_t>& which) {
        for (std::size_t i : which) {
            HessianRecord rec;
            rec.camera = i;
            try {
                const Hessian3 h = estimate_hessian(scene, cameras[i], targets[i], sc.camera_loss, cfg.hessian_steps,
                                                    cfg.render);
                rec.hessian = h.matrix;
                rec.frame = build_frame(depth_fov_params(cameras[i]), h);
            } catch (const EmptyFrustum& e) {
                rec.error = e.what();
                rec.frame.anchor = depth_fov_params(cameras[i]);
                rec.frame.degenerate = true;
            }
            optimizers[i].set_frame(rec.frame);
            entry.hessians.push_back(rec);
        }
    };

    PhaseReport report;
    report.max_steps = sc.max_steps;
    for (int phase = 1; phase <= sc.n_phases; ++phase) {
        const auto t0 = std::chrono::steady_clock::now();
        PhaseEntry entry;
        entry.phase = phase;
        if (sc.train_model)
            entry.model_loss = model_train_steps(scene, cameras, targets, train_views, sc.model_steps, model_opt,
                                                 sc.model_loss, cfg.render);
        for (std::size_t i : train_views) {
            CameraPhaseResult r = camera_phase(scene, cameras[i], targets[i], sc, optimizers[i], cfg.render);
            r.camera = i;
            entry.cameras.push_back(std::move(r));
        }
        if (use_reparam) {
            const bool first = phase == sc.reparam_after_phase;
            const bool refresh = sc.hessian_refresh > 0 && phase > sc.reparam_after_phase &&
                                 (phase - sc.reparam_after_phase) % sc.hessian_refresh == 0;
            if ((first || refresh) && phase < sc.n_phases) estimate_frames(entry, train_views);
        }
        entry.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.phases.push_back(std::move(entry));
    }

    if (sc.refine_heldout) {
        for (std::size_t i = 0; i < cameras.size(); ++i) {
            if (!heldout[i]) continue;
            CameraPhaseResult r = camera_phase(scene, cameras[i], targets[i], sc, optimizers[i], cfg.render);
            r.camera = i;
            report.heldout.push_back(std::move(r));
        }
    }
    return report;
}

}  // namespace splatcal
