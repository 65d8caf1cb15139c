#pragma once

#include "splatcal/schedule.hpp"

#include <json.hpp>

namespace splatcal {

inline nlohmann::ordered_json mat3_json(const Mat3& m) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
    return rows;
}

inline nlohmann::ordered_json camera_result_json(const CameraPhaseResult& r, std::span<const std::string> names) {
    nlohmann::ordered_json j;
    j["camera"] = r.camera;
    if (r.camera < names.size()) j["name"] = names[r.camera];
    j["steps"] = r.steps;
    j["psnr_before"] = r.psnr_before;
    j["psnr_after"] = r.psnr_after;
    j["stop_reason"] = to_string(r.reason);
    j["final_score"] = r.final_score;
    j["reparameterized"] = r.reparameterized;
    j["fov_clamped"] = r.fov_clamped;
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

/// Deterministic JSON form of a PhaseReport. Wall-clock times are left out so
/// that identical runs produce identical bytes; see timing_json.
inline nlohmann::ordered_json report_json(const PhaseReport& report, std::span<const std::string> names = {}) {
    nlohmann::ordered_json j;
    j["max_steps"] = report.max_steps;
    j["camera_steps"] = report.camera_steps();
    j["baseline_steps"] = report.baseline_steps();
    j["savings"] = report.savings();
    auto& phases = j["phases"] = nlohmann::ordered_json::array();
    for (const auto& p : report.phases) {
        nlohmann::ordered_json pj;
        pj["phase"] = p.phase;
        pj["model_steps"] = p.model_loss.size();
        pj["model_loss"] = p.model_loss;
        auto& cams = pj["cameras"] = nlohmann::ordered_json::array();
        for (const auto& c : p.cameras) cams.push_back(camera_result_json(c, names));
        auto& hs = pj["hessians"] = nlohmann::ordered_json::array();
        for (const auto& h : p.hessians) {
            nlohmann::ordered_json hj;
            hj["camera"] = h.camera;
            hj["hessian"] = mat3_json(h.hessian);
            hj["eigenvalues"] = {h.frame.eigenvalues[0], h.frame.eigenvalues[1], h.frame.eigenvalues[2]};
            hj["basis"] = mat3_json(h.frame.basis);
            hj["anchor"] = {h.frame.anchor[0], h.frame.anchor[1], h.frame.anchor[2]};
            hj["degenerate"] = h.frame.degenerate;
            if (!h.error.empty()) hj["error"] = h.error;
            hs.push_back(hj);
        }
        phases.push_back(pj);
    }
    auto& held = j["heldout"] = nlohmann::ordered_json::array();
    for (const auto& c : report.heldout) held.push_back(camera_result_json(c, names));
    return j;
}

inline nlohmann::ordered_json timing_json(const PhaseReport& report) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& p : report.phases) j.push_back({{"phase", p.phase}, {"wall_time_s", p.wall_time_s}});
    return j;
}

/// One row per camera step: phase,camera,step,psnr,score. Held-out refinement
/// rows use phase 0.
inline std::string report_trace_csv(const PhaseReport& report) {
    std::string out = "phase,camera,step,psnr,score\n";
    char buf[160];
    auto rows = [&](int phase, const CameraPhaseResult& c) {
        for (const auto& t : c.trace) {
            std::snprintf(buf, sizeof buf, "%d,%zu,%d,%.17g,%.17g\n", phase, c.camera, t.step, t.psnr, t.score);
            out += buf;
        }
    };
    for (const auto& p : report.phases)
        for (const auto& c : p.cameras) rows(p.phase, c);
    for (const auto& c : report.heldout) rows(0, c);
    return out;
}

}  // namespace splatcal
