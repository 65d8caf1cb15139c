#include <splatcal/splatcal.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace splatcal;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kNumerical = 4 };

class NumericalFailure : public Error {
public:
    using Error::Error;
};

/// Exclusive ownership of an output directory for the life of a command.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".splatcal.lock") {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f) throw IoError("output directory is locked (or unwritable): " + path_.string());
        std::fclose(f);
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
};

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

fs::path require_path(const std::string& value, const char* key) {
    if (value.empty()) throw ConfigError(std::string("missing required key: ") + key);
    return value;
}

struct Calibration {
    ColmapReconstruction rec;
    std::vector<Camera> cameras;
    std::vector<std::string> names;
};

Calibration load_calibration(const fs::path& dir) {
    Calibration c;
    c.rec = parse_colmap_text(read_file(dir / "cameras.txt"), read_file(dir / "images.txt"));
    c.cameras = cameras_of(c.rec);
    for (const auto& [id, im] : c.rec.images) c.names.push_back(im.name);
    return c;
}

void save_calibration(const fs::path& dir, const ColmapReconstruction& rec) {
    const ColmapText text = write_colmap_text(rec);
    write_file(dir / "cameras.txt", text.cameras);
    write_file(dir / "images.txt", text.images);
}

GaussianScene load_scene(const fs::path& path, bool verbose = true) {
    std::vector<std::string> warnings;
    GaussianScene scene = read_ply_gaussians(read_file(path), &warnings);
    if (verbose)
        for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    return scene;
}

fs::path find_target(const fs::path& dir, const std::string& name) {
    const fs::path direct = dir / name;
    if (fs::exists(direct)) return direct;
    for (const char* ext : {".pfm", ".ppm"}) {
        fs::path p = dir / name;
        p.replace_extension(ext);
        if (fs::exists(p)) return p;
    }
    throw IoError("no target image for " + name + " in " + dir.string());
}

std::vector<Image> load_targets(const fs::path& dir, const Calibration& calib) {
    std::vector<Image> out;
    for (std::size_t i = 0; i < calib.names.size(); ++i) {
        Image img = read_image(read_file(find_target(dir, calib.names[i])));
        const Camera& c = calib.cameras[i];
        if (img.width != c.width || img.height != c.height)
            throw IoError("target " + calib.names[i] + " does not match its camera size");
        out.push_back(std::move(img));
    }
    return out;
}

void write_images(const fs::path& dir, const GaussianScene& scene, const Calibration& calib,
                  const RenderSettings& settings) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < calib.cameras.size(); ++i) {
        fs::path p = dir / calib.names[i];
        const ImageFormat fmt = p.extension() == ".ppm" ? ImageFormat::ppm : ImageFormat::pfm;
        if (fmt == ImageFormat::pfm) p.replace_extension(".pfm");
        write_file(p, write_image(render(scene, calib.cameras[i], settings), fmt));
    }
}

std::string view_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "view_%03zu.pfm", i);
    return buf;
}

// Commands ---------------------------------------------------------------------

int cmd_synth(const RunConfig& cfg) {
    const fs::path out = require_path(cfg.output, "output");
    DirLock lock(out);
    write_file(out / "config.json", dump(to_json(cfg)));
    const auto layouts = parse_layouts(cfg.layout);
    const GaussianScene scene = synth_scene(cfg.seed, static_cast<std::size_t>(cfg.n_gaussians), layouts);
    Calibration calib;
    calib.cameras = synth_cameras(cfg.seed, static_cast<std::size_t>(cfg.n_cameras), scene, parse_rig(cfg.rig),
                                  cfg.width, cfg.height);
    for (std::size_t i = 0; i < calib.cameras.size(); ++i) calib.names.push_back(view_name(i));
    calib.rec = make_reconstruction(calib.cameras, calib.names);
    write_file(out / "scene.ply", write_ply_gaussians(scene));
    save_calibration(out, calib.rec);
    // Targets come from the written scene and calibration so that they re-render exactly.
    const GaussianScene written_scene = read_ply_gaussians(read_file(out / "scene.ply"));
    const Calibration written = load_calibration(out);
    write_images(out / "images", written_scene, written, cfg.render_settings());
    std::cout << "synth: " << scene.size() << " gaussians, " << calib.cameras.size() << " cameras -> " << out << "\n";
    return kOk;
}

int cmd_render(const RunConfig& cfg) {
    const fs::path out = require_path(cfg.output, "output");
    const GaussianScene scene = load_scene(require_path(cfg.scene, "scene"));
    const Calibration calib = load_calibration(require_path(cfg.calibration, "calibration"));
    DirLock lock(out);
    write_file(out / "config.json", dump(to_json(cfg)));
    write_images(out / "images", scene, calib, cfg.render_settings());
    std::cout << "render: " << calib.cameras.size() << " images -> " << out / "images" << "\n";
    return kOk;
}

ordered_json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

int cmd_perturb(const RunConfig& cfg) {
    const fs::path out = require_path(cfg.output, "output");
    Calibration calib = load_calibration(require_path(cfg.calibration, "calibration"));
    DirLock lock(out);
    write_file(out / "config.json", dump(to_json(cfg)));
    ordered_json side;
    side["seed"] = cfg.seed;
    side["delta_t"] = cfg.delta_t;
    side["delta_theta_deg"] = cfg.delta_theta_deg;
    side["delta_fov"] = cfg.delta_fov;
    auto& cams = side["cameras"] = ordered_json::array();
    std::size_t k = 0;
    for (const auto& [id, im] : calib.rec.images) {
        const std::uint64_t seed = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(id);
        Perturbation p;
        calib.cameras[k] = perturb_camera(calib.cameras[k], seed, cfg.delta_t, cfg.delta_theta_deg * kPi / 180.0,
                                          cfg.delta_fov, &p);
        ordered_json c;
        c["image_id"] = id;
        c["name"] = im.name;
        c["seed"] = seed;
        c["center_offset"] = vec_json(p.center_offset);
        c["axis"] = vec_json(p.axis);
        c["angle_rad"] = p.angle;
        c["fov_factor"] = p.fov_factor;
        cams.push_back(c);
        ++k;
    }
    save_calibration(out, with_cameras(calib.rec, calib.cameras));
    write_file(out / "perturbation.json", dump(side));
    std::cout << "perturb: " << calib.cameras.size() << " cameras -> " << out << "\n";
    return kOk;
}

int cmd_calibrate(const RunConfig& cfg) {
    const fs::path out = require_path(cfg.output, "output");
    GaussianScene scene = load_scene(require_path(cfg.scene, "scene"));
    Calibration calib = load_calibration(require_path(cfg.calibration, "calibration"));
    const std::vector<Image> targets = load_targets(require_path(cfg.targets, "targets"), calib);
    DirLock lock(out);
    write_file(out / "config.json", dump(to_json(cfg)));

    const CalibrationConfig cc = cfg.calibration_config(scene.extent, calib.cameras.size());
    const PhaseReport report = calibrate(scene, calib.cameras, targets, cc);

    save_calibration(out, with_cameras(calib.rec, calib.cameras));
    write_file(out / "scene.ply", write_ply_gaussians(scene));
    write_file(out / "report.json", dump(report_json(report, calib.names)));
    write_file(out / "trace.csv", report_trace_csv(report));
    write_file(out / "timing.json", dump(timing_json(report)));
    if (report.all_skipped()) throw NumericalFailure("every camera failed with an empty frustum");
    std::cout << "calibrate: " << report.camera_steps() << " camera steps (baseline " << report.baseline_steps()
              << ", savings " << report.savings() * 100.0 << "%) -> " << out << "\n";
    return kOk;
}

ordered_json pose_json(const PoseError& e) {
    ordered_json j;
    j["translation"] = e.translation;
    j["rotation_deg"] = e.rotation_deg;
    j["fov_x_rel_pct"] = e.fov_x_rel_pct;
    j["fov_y_rel_pct"] = e.fov_y_rel_pct;
    return j;
}

int cmd_eval(const RunConfig& cfg) {
    const fs::path out = require_path(cfg.output, "output");
    const Calibration a = load_calibration(require_path(cfg.calibration, "calibration"));
    const Calibration b = load_calibration(require_path(cfg.reference, "reference"));
    std::optional<Calibration> gt;
    if (!cfg.ground_truth.empty()) gt = load_calibration(cfg.ground_truth);
    auto same_ids = [&](const Calibration& x) {
        if (x.rec.images.size() != a.rec.images.size()) return false;
        for (auto ia = a.rec.images.begin(), ix = x.rec.images.begin(); ia != a.rec.images.end(); ++ia, ++ix)
            if (ia->first != ix->first) return false;
        return true;
    };
    if (!same_ids(b) || (gt && !same_ids(*gt))) throw CameraIdMismatch("calibrations have different image ids");

    std::optional<GaussianScene> scene;
    if (!cfg.scene.empty()) scene = load_scene(cfg.scene);
    std::vector<Image> targets;
    if (scene && !cfg.targets.empty()) targets = load_targets(cfg.targets, a);
    DirLock lock(out);
    write_file(out / "config.json", dump(to_json(cfg)));

    const RenderSettings settings = cfg.render_settings();
    ordered_json metrics;
    auto& cams = metrics["cameras"] = ordered_json::array();
    std::vector<double> all_disp, tr_ab, rot_ab, tr_agt, rot_agt, tr_bgt, rot_bgt;
    for (std::size_t i = 0; i < a.cameras.size(); ++i) {
        ordered_json c;
        c["name"] = a.names[i];
        const PoseError eab = pose_error(a.cameras[i], b.cameras[i]);
        c["a_vs_b"] = pose_json(eab);
        tr_ab.push_back(eab.translation);
        rot_ab.push_back(eab.rotation_deg);
        if (gt) {
            const PoseError ea = pose_error(a.cameras[i], gt->cameras[i]);
            const PoseError eb = pose_error(b.cameras[i], gt->cameras[i]);
            c["a_vs_ground_truth"] = pose_json(ea);
            c["b_vs_ground_truth"] = pose_json(eb);
            tr_agt.push_back(ea.translation);
            rot_agt.push_back(ea.rotation_deg);
            tr_bgt.push_back(eb.translation);
            rot_bgt.push_back(eb.rotation_deg);
        }
        if (scene) {
            const auto d = center_displacements(*scene, a.cameras[i], b.cameras[i], settings.z_near);
            c["median_displacement_px"] = median(d);
            all_disp.insert(all_disp.end(), d.begin(), d.end());
            if (!targets.empty()) {
                c["psnr_a"] = psnr(render(*scene, a.cameras[i], settings), targets[i]);
                c["psnr_b"] = psnr(render(*scene, b.cameras[i], settings), targets[i]);
            }
        }
        cams.push_back(c);
    }
    ordered_json summary;
    summary["median_translation_a_vs_b"] = median(tr_ab);
    summary["median_rotation_deg_a_vs_b"] = median(rot_ab);
    if (gt) {
        summary["median_translation_a_vs_ground_truth"] = median(tr_agt);
        summary["median_rotation_deg_a_vs_ground_truth"] = median(rot_agt);
        summary["median_translation_b_vs_ground_truth"] = median(tr_bgt);
        summary["median_rotation_deg_b_vs_ground_truth"] = median(rot_bgt);
    }
    if (scene) summary["median_displacement_px"] = median(all_disp);
    metrics["summary"] = summary;
    write_file(out / "metrics.json", dump(metrics));

    std::string csv = "bin_start_px,bin_end_px,count\n";
    if (scene) {
        const Histogram h = make_histogram(all_disp, cfg.histogram_bin);
        char buf[96];
        for (std::size_t k = 0; k < h.counts.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%.6g,%.6g,%zu\n", k * h.bin_width, (k + 1) * h.bin_width, h.counts[k]);
            csv += buf;
        }
    } else {
        std::cerr << "warning: no scene given, displacement histogram left empty\n";
    }
    write_file(out / "histogram.csv", csv);
    std::cout << "eval: " << a.cameras.size() << " cameras -> " << out << "\n";
    return kOk;
}

int cmd_hessian(const RunConfig& cfg) {
    const fs::path out = require_path(cfg.output, "output");
    const GaussianScene scene = load_scene(require_path(cfg.scene, "scene"));
    const Calibration calib = load_calibration(require_path(cfg.calibration, "calibration"));
    const std::vector<Image> targets = load_targets(require_path(cfg.targets, "targets"), calib);
    if (cfg.camera_id < 0 || static_cast<std::size_t>(cfg.camera_id) >= calib.cameras.size())
        throw ConfigError("camera_id out of range");
    DirLock lock(out);
    write_file(out / "config.json", dump(to_json(cfg)));
    const auto i = static_cast<std::size_t>(cfg.camera_id);
    const CalibrationConfig cc = cfg.calibration_config(scene.extent, calib.cameras.size());
    Hessian3 h;
    try {
        h = estimate_hessian(scene, calib.cameras[i], targets[i], cc.schedule.camera_loss, cc.hessian_steps, cc.render);
    } catch (const EmptyFrustum& e) {
        throw NumericalFailure(e.what());
    }
    const ReparamFrame f = build_frame(depth_fov_params(calib.cameras[i]), h);
    ordered_json j;
    j["camera"] = i;
    j["name"] = calib.names[i];
    j["hessian"] = mat3_json(h.matrix);
    j["asymmetry"] = h.asymmetry;
    j["eigenvalues"] = vec_json(f.eigenvalues);
    j["basis"] = mat3_json(f.basis);
    j["degenerate"] = f.degenerate;
    const Mat3 d = f.basis.transpose() * h.matrix * f.basis;
    j["offdiag_ratio"] = (d - Mat3(d.diagonal().asDiagonal())).norm() / std::max(h.matrix.norm(), 1e-300);
    write_file(out / "hessian.json", dump(j));
    std::cout << j.dump(2) << "\n";
    return kOk;
}

int exit_code(const Error& e) {
    auto is = [&]<class T>(T*) { return dynamic_cast<const T*>(&e) != nullptr; };
    if (is((ConfigError*)nullptr) || is((CameraIdMismatch*)nullptr)) return kConfig;
    if (is((NumericalFailure*)nullptr)) return kNumerical;
    if (is((IoError*)nullptr) || is((ParseError*)nullptr) || is((UnsupportedCameraModel*)nullptr) ||
        is((DanglingCameraRef*)nullptr) || is((PlyHeaderError*)nullptr) || is((MissingProperty*)nullptr) ||
        is((ImageFormatError*)nullptr))
        return kIo;
    return kFailure;
}

// Configuration ------------------------------------------------------------------

struct Overrides {
    std::string config_path;
    std::map<std::string, std::string> values;
    bool no_reparam = false;
    bool no_fov = false;
};

void add_config_options(CLI::App* sub, Overrides& ov) {
    sub->add_option("--config", ov.config_path, "JSON config file");
    for (const auto& key : config_keys()) {
        std::string names = "--" + key;
        std::string dashed = key;
        std::replace(dashed.begin(), dashed.end(), '_', '-');
        if (dashed != key) names += ",--" + dashed;
        if (key == "n_phases") names += ",--phases";
        sub->add_option(names, ov.values[key], "override config key " + key);
    }
    sub->add_flag("--no-reparam", ov.no_reparam, "never switch to the Hessian eigenbasis");
    sub->add_flag("--no-fov", ov.no_fov, "keep the fields of view fixed");
}

RunConfig build_config(const CLI::App* sub, const Overrides& ov) {
    RunConfig cfg;
    if (!ov.config_path.empty()) {
        json j;
        try {
            j = json::parse(read_file(ov.config_path));
        } catch (const json::parse_error& e) {
            throw ConfigError(ov.config_path + ": " + e.what());
        }
        cfg = config_from_json(j, cfg);
    }
    const ordered_json defaults = to_json(RunConfig{});
    json patch = json::object();
    for (const auto& key : config_keys()) {
        if (sub->count("--" + key) == 0) continue;
        const std::string& raw = ov.values.at(key);
        if (defaults.at(key).is_string()) {
            patch[key] = raw;
            continue;
        }
        try {
            patch[key] = json::parse(raw);
        } catch (const json::parse_error&) {
            throw ConfigError("bad value for --" + key + ": " + raw);
        }
    }
    cfg = config_from_json(patch, cfg);
    if (ov.no_reparam) cfg.reparam_after_phase = 0;
    if (ov.no_fov) cfg.optimize_fov = false;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"splatcal: camera pose and field-of-view refinement against a gaussian splat model"};
    app.require_subcommand(1);
    using Command = int (*)(const RunConfig&);
    const std::vector<std::tuple<const char*, const char*, Command>> commands = {
        {"synth", "generate a synthetic scene, calibration and target images", cmd_synth},
        {"render", "render a scene through a calibration", cmd_render},
        {"perturb", "mis-calibrate cameras and record the applied deltas", cmd_perturb},
        {"calibrate", "refine cameras (and the model) against target images", cmd_calibrate},
        {"eval", "compare two calibrations", cmd_eval},
        {"hessian", "depth/fov Hessian and eigenbasis of one camera", cmd_hessian},
    };
    std::vector<Overrides> overrides(commands.size());
    std::vector<CLI::App*> subs;
    for (std::size_t k = 0; k < commands.size(); ++k) {
        CLI::App* sub = app.add_subcommand(std::get<0>(commands[k]), std::get<1>(commands[k]));
        add_config_options(sub, overrides[k]);
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    for (std::size_t k = 0; k < commands.size(); ++k) {
        if (!subs[k]->parsed()) continue;
        try {
            const RunConfig cfg = build_config(subs[k], overrides[k]);
            return std::get<2>(commands[k])(cfg);
        } catch (const Error& e) {
            const int code = exit_code(e);
            std::cerr << (code == kIo ? "I/O error: " : code == kConfig ? "config error: " : "error: ") << e.what() << "\n";
            return code;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return kFailure;
        }
    }
    return kFailure;
}
