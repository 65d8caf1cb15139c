#pragma once

#include "splatcal/schedule.hpp"

#include <json.hpp>

namespace splatcal {

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Every knob of the command-line tool. Serialized as one flat JSON object;
/// every key has a default and unknown keys are rejected.
struct RunConfig {
    std::uint64_t seed = 0;

    // synth
    int n_gaussians = 2000;
    std::string layout = "cloud";
    int n_cameras = 12;
    std::string rig = "orbit";
    int width = 128;
    int height = 128;

    // perturb
    double delta_t = 0.01;  // scene units
    double delta_theta_deg = 0.5;
    double delta_fov = 0.01;  // relative

    // schedule
    int model_steps = 3000;
    int min_steps = 100;
    int max_steps = 1000;
    double threshold = 0.0002;
    double beta = 1.0 / 50.0;
    int n_phases = 5;
    std::string camera_loss = "l2";
    std::string model_loss = "l1";
    int reparam_after_phase = 1;
    int hessian_refresh = 0;
    bool keep_best = false;
    bool optimize_fov = true;
    bool train_model = true;
    bool refine_heldout = false;
    int holdout_every = 0;
    int psnr_stride = 1;

    // optimizer; lr_translation, lr_position and hessian_eps_z are multiplied by the scene extent
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double lr_translation = 1e-3;
    double lr_quaternion = 1e-4;
    double lr_fov = 1e-4;
    double lr_abc = 1e-3;
    double lr_position = 1.6e-4;
    double lr_scale = 5e-3;
    double lr_rotation = 1e-3;
    double lr_opacity = 5e-2;
    double lr_color = 2.5e-3;
    double hessian_eps_z = 1e-3;
    double hessian_eps_fov = 1e-4;

    // rendering
    std::array<double, 3> background{0.0, 0.0, 0.0};
    double low_pass = kLowPass;

    // paths
    std::string scene;
    std::string calibration;
    std::string targets;
    std::string output;
    std::string reference;     // eval: second calibration
    std::string ground_truth;  // eval: optional true calibration

    // hessian / eval
    int camera_id = 0;
    double histogram_bin = 0.1;

    void validate() const {
        if (n_gaussians < 1) throw ConfigError("n_gaussians must be >= 1");
        if (n_cameras < 1) throw ConfigError("n_cameras must be >= 1");
        if (width < 1 || height < 1) throw ConfigError("width and height must be >= 1");
        if (delta_t < 0 || delta_theta_deg < 0 || delta_fov < 0) throw ConfigError("perturbation deltas must be >= 0");
        if (holdout_every < 0) throw ConfigError("holdout_every must be >= 0");
        if (!(histogram_bin > 0)) throw ConfigError("histogram_bin must be > 0");
        if (!(low_pass >= 0)) throw ConfigError("low_pass must be >= 0");
        for (double b : background)
            if (b < 0 || b > 1) throw ConfigError("background channels must lie in [0, 1]");
        for (double lr : {lr_translation, lr_quaternion, lr_fov, lr_abc, lr_position, lr_scale, lr_rotation, lr_opacity,
                          lr_color})
            if (!(lr >= 0)) throw ConfigError("learning rates must be >= 0");
        if (!(hessian_eps_z > 0 && hessian_eps_fov > 0)) throw ConfigError("hessian steps must be > 0");
        try {
            parse_layouts(layout);
            parse_rig(rig);
            parse_loss_kind(camera_loss);
            parse_loss_kind(model_loss);
            schedule().validate();
        } catch (const DomainError& e) {
            throw ConfigError(e.what());
        }
    }

    ScheduleConfig schedule() const {
        ScheduleConfig s;
        s.model_steps = model_steps;
        s.min_steps = min_steps;
        s.max_steps = max_steps;
        s.threshold = threshold;
        s.beta = beta;
        s.n_phases = n_phases;
        s.camera_loss = parse_loss_kind(camera_loss);
        s.model_loss = parse_loss_kind(model_loss);
        s.reparam_after_phase = reparam_after_phase;
        s.hessian_refresh = hessian_refresh;
        s.keep_best = keep_best;
        s.optimize_fov = optimize_fov;
        s.train_model = train_model;
        s.refine_heldout = refine_heldout;
        s.psnr_stride = psnr_stride;
        s.seed = seed;
        return s;
    }

    RenderSettings render_settings() const {
        RenderSettings r;
        r.background = Vec3(background[0], background[1], background[2]);
        r.low_pass = low_pass;
        return r;
    }

    CalibrationConfig calibration_config(double extent, std::size_t n_views) const {
        CalibrationConfig c;
        c.schedule = schedule();
        c.camera_lr = {lr_translation * extent, lr_quaternion, lr_fov, Vec3::Constant(lr_abc)};
        c.model_lr = {lr_position * extent, lr_scale, lr_rotation, lr_opacity, lr_color};
        c.adam = {adam_beta1, adam_beta2, adam_eps};
        c.hessian_steps = {hessian_eps_z * extent, hessian_eps_fov};
        c.render = render_settings();
        c.heldout.assign(n_views, false);
        if (holdout_every > 0)
            for (std::size_t i = 0; i < n_views; i += static_cast<std::size_t>(holdout_every)) c.heldout[i] = true;
        return c;
    }
};

#define SPLATCAL_CONFIG_FIELDS(X)                                                                                      \
    X(seed) X(n_gaussians) X(layout) X(n_cameras) X(rig) X(width) X(height) X(delta_t) X(delta_theta_deg) X(delta_fov) \
    X(model_steps) X(min_steps) X(max_steps) X(threshold) X(beta) X(n_phases) X(camera_loss) X(model_loss)             \
    X(reparam_after_phase) X(hessian_refresh) X(keep_best) X(optimize_fov) X(train_model) X(refine_heldout)            \
    X(holdout_every) X(psnr_stride) X(adam_beta1) X(adam_beta2) X(adam_eps) X(lr_translation) X(lr_quaternion)         \
    X(lr_fov) X(lr_abc) X(lr_position) X(lr_scale) X(lr_rotation) X(lr_opacity) X(lr_color) X(hessian_eps_z)           \
    X(hessian_eps_fov) X(background) X(low_pass) X(scene) X(calibration) X(targets) X(output) X(reference)           \
    X(ground_truth) X(camera_id) X(histogram_bin)

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
#define X(name) j[#name] = c.name;
    SPLATCAL_CONFIG_FIELDS(X)
#undef X
    return j;
}

inline std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
#define X(name) keys.emplace_back(#name);
    SPLATCAL_CONFIG_FIELDS(X)
#undef X
    return keys;
}

/// Applies the keys present in `j` on top of `base`. Unknown keys and type
/// mismatches raise ConfigError.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {}) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    const auto keys = config_keys();
    for (const auto& [key, value] : j.items())
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError("unknown config key: " + key);
    try {
#define X(name) \
    if (j.contains(#name)) j.at(#name).get_to(base.name);
        SPLATCAL_CONFIG_FIELDS(X)
#undef X
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config type error: ") + e.what());
    }
    return base;
}

}  // namespace splatcal
