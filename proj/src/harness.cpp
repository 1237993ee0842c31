// harness.cpp - pipeline assembly, panel runs, CSV/markdown reports.
#include "symreg/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>

#include "json.hpp"

#include "symreg/esp.hpp"
#include "symreg/phantom.hpp"
#include "symreg/volume_io.hpp"

namespace symreg {

namespace {

using nlohmann::json;

const std::vector<std::string> &known_config_keys() {
    static const std::vector<std::string> keys = {
        "epsilon",        "max_shells",        "max_steps_per_shell",
        "dt_init",        "dt_growth",         "dt_max",
        "dt_max_displacement", "max_guard_halvings", "convergence_tol",
        "nonlocal_coordinate_update",
        "esp_coupling",   "esp_connectivity",  "esp_beta",
        "esp_sigma",      "esp_tol",           "esp_max_iter",
        "swd_prealign",   "swd_l",             "swd_n",
        "pyramid",
    };
    return keys;
}

void apply_config(PipelineConfig &cfg, const json &doc) {
    if (!doc.is_object()) throw std::runtime_error("config: top level must be a JSON object");
    const auto &known = known_config_keys();
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw std::runtime_error("config: unknown key \"" + it.key() + "\"");
    }
    auto num = [&](const char *k, double &dst) {
        if (doc.contains(k)) dst = doc.at(k).get<double>();
    };
    auto integer = [&](const char *k, int &dst) {
        if (doc.contains(k)) dst = doc.at(k).get<int>();
    };
    auto boolean = [&](const char *k, bool &dst) {
        if (doc.contains(k)) dst = doc.at(k).get<bool>();
    };
    num("epsilon", cfg.reg.epsilon);
    integer("max_shells", cfg.reg.max_shells);
    integer("max_steps_per_shell", cfg.reg.max_steps_per_shell);
    num("dt_init", cfg.reg.dt_init);
    num("dt_growth", cfg.reg.dt_growth);
    num("dt_max", cfg.reg.dt_max);
    num("dt_max_displacement", cfg.reg.dt_max_displacement);
    integer("max_guard_halvings", cfg.reg.max_guard_halvings);
    num("convergence_tol", cfg.reg.convergence_tol);
    boolean("nonlocal_coordinate_update", cfg.reg.nonlocal_coordinate_update);
    if (doc.contains("esp_coupling")) cfg.esp_coupling = doc.at("esp_coupling").get<std::string>();
    integer("esp_connectivity", cfg.esp_connectivity);
    num("esp_beta", cfg.esp_beta);
    num("esp_sigma", cfg.esp_sigma);
    num("esp_tol", cfg.esp_tol);
    integer("esp_max_iter", cfg.esp_max_iter);
    boolean("swd_prealign", cfg.swd_prealign);
    integer("swd_l", cfg.swd_l);
    integer("swd_n", cfg.swd_n);
    if (doc.contains("pyramid")) cfg.pyramid = doc.at("pyramid").get<std::vector<int>>();
}

Connectivity connectivity_from_int(int c) {
    switch (c) {
        case 6: return Connectivity::faces6;
        case 18: return Connectivity::edges18;
        case 26: return Connectivity::corners26;
    }
    throw std::runtime_error("config: esp_connectivity must be 6, 18 or 26");
}

double inscribed_radius(const GridGeometry &g) {
    double r = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) r = std::min(r, 0.5 * g.spacing[a] * (g.dims[a] - 1));
    return r;
}

std::string format_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string format_f3(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

} // namespace

PipelineConfig load_pipeline_config(const std::string &path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    PipelineConfig cfg;
    apply_config(cfg, json::parse(f));
    return cfg;
}

void apply_config_json(PipelineConfig &cfg, const std::string &json_text) {
    apply_config(cfg, json::parse(json_text));
}

std::string resolved_config_json(const PipelineConfig &cfg) {
    json doc;
    doc["epsilon"] = cfg.reg.epsilon;
    doc["max_shells"] = cfg.reg.max_shells;
    doc["max_steps_per_shell"] = cfg.reg.max_steps_per_shell;
    doc["dt_init"] = cfg.reg.dt_init;
    doc["dt_growth"] = cfg.reg.dt_growth;
    doc["dt_max"] = cfg.reg.dt_max;
    doc["dt_max_displacement"] = cfg.reg.dt_max_displacement;
    doc["max_guard_halvings"] = cfg.reg.max_guard_halvings;
    doc["convergence_tol"] = cfg.reg.convergence_tol;
    doc["nonlocal_coordinate_update"] = cfg.reg.nonlocal_coordinate_update;
    doc["esp_coupling"] = cfg.esp_coupling;
    doc["esp_connectivity"] = cfg.esp_connectivity;
    doc["esp_beta"] = cfg.esp_beta;
    doc["esp_sigma"] = cfg.esp_sigma;
    doc["esp_tol"] = cfg.esp_tol;
    doc["esp_max_iter"] = cfg.esp_max_iter;
    doc["swd_prealign"] = cfg.swd_prealign;
    doc["swd_l"] = cfg.swd_l;
    doc["swd_n"] = cfg.swd_n;
    doc["pyramid"] = cfg.pyramid;
    return doc.dump(2);
}

PipelineResult run_pipeline(const ScalarVolume &fixed, const ScalarVolume &moving,
                            const PipelineConfig &cfg) {
    if (!fixed.geometry.same_grid(moving.geometry))
        throw std::invalid_argument("run_pipeline: fixed and moving must share a grid");
    const auto t0 = std::chrono::steady_clock::now();

    PipelineResult out;
    const double rmsd_input = rmsd(fixed, moving);

    // Optional ESP regularizer, built on the fixed image.
    std::optional<TransitionKernel> tk;
    RegistrationConfig rcfg = cfg.reg;
    rcfg.verbose = cfg.verbose;
    if (cfg.esp_coupling != "none") {
        CouplingKernel q;
        const Connectivity conn = connectivity_from_int(cfg.esp_connectivity);
        if (cfg.esp_coupling == "adjacency") {
            q = build_adjacency_coupling(fixed.geometry, conn);
        } else if (cfg.esp_coupling == "image_weighted") {
            q = build_image_weighted_coupling(fixed, cfg.esp_beta, conn);
        } else if (cfg.esp_coupling == "gaussian_stationary") {
            if (!(cfg.esp_sigma > 0.0))
                throw std::runtime_error("config: esp_sigma must be positive");
            Mat3 S;
            const double s = 1.0 / (2.0 * cfg.esp_sigma * cfg.esp_sigma);
            S.m = {s, 0, 0, 0, s, 0, 0, 0, s};
            q = build_gaussian_coupling(fixed.geometry, S);
        } else {
            throw std::runtime_error("config: unknown esp_coupling \"" + cfg.esp_coupling + "\"");
        }
        tk = make_transition_kernel(std::move(q), cfg.esp_tol, cfg.esp_max_iter,
                                    /*require_convergence=*/false);
        rcfg.regularizer = &*tk;
    }

    // Optional SWD similarity pre-alignment: estimate how the moving volume is
    // scaled/rotated relative to the fixed one and undo it before the flow.
    ScalarVolume work = moving;
    std::shared_ptr<const SwdBasis> basis;
    const int basis_l = std::max(cfg.swd_l, cfg.pyramid.empty() ? 0 : *std::max_element(
                                                cfg.pyramid.begin(), cfg.pyramid.end()));
    if (cfg.swd_prealign || !cfg.pyramid.empty()) {
        basis = std::make_shared<const SwdBasis>(
            build_swd_basis(inscribed_radius(fixed.geometry), basis_l, cfg.swd_n));
    }
    if (cfg.swd_prealign) {
        const SwdCoefficients c0 = forward_swd(fixed, basis);
        const SwdCoefficients c1 = forward_swd(work, basis);
        out.prealign = estimate_similarity(c0, c1);
        out.prealigned = true;
        work = apply_similarity(work, out.prealign, fixed.geometry, nullptr, /*invert=*/true);
    }

    // SWD low-pass pyramid: register smoothed reconstructions first, continuing
    // the composed map into sharper levels, then finish on the raw volumes.
    DeformationMap cur = DeformationMap::identity(fixed.geometry);
    int steps_accum = 0;
    if (!cfg.pyramid.empty()) {
        const SwdCoefficients cf = forward_swd(fixed, basis);
        const SwdCoefficients cw = forward_swd(work, basis);
        for (int lv : cfg.pyramid) {
            if (lv < 0 || lv > basis->l_max)
                throw std::runtime_error("config: pyramid order out of basis range");
            const FilterSpec filt = FilterSpec::lowpass(lv, std::min(std::max(lv, 1), cfg.swd_n));
            const ScalarVolume f_l = inverse_swd(cf, filt, fixed.geometry);
            const ScalarVolume w_l = inverse_swd(cw, filt, fixed.geometry);
            RegistrationResult stage = register_volumes(f_l, w_l, rcfg, &cur);
            steps_accum += stage.total_steps;
            cur = std::move(stage.map);
        }
    }

    RegistrationResult final_stage =
        register_volumes(fixed, work, rcfg, cfg.pyramid.empty() ? nullptr : &cur);
    final_stage.total_steps += steps_accum;
    final_stage.rmsd_before = rmsd_input;
    out.reg = std::move(final_stage);
    out.warped = warp_volume(work, out.reg.map);

    const auto t1 = std::chrono::steady_clock::now();
    out.wall_seconds =
        cfg.no_timing ? 0.0 : std::chrono::duration<double>(t1 - t0).count();
    return out;
}

ReportAggregates compute_aggregates(const std::vector<CaseRow> &rows) {
    ReportAggregates a;
    a.cases = static_cast<int>(rows.size());
    double ratio_sum = 0.0;
    for (const CaseRow &r : rows) {
        const double ratio = r.rmsd_before > 0.0 ? r.rmsd_after / r.rmsd_before : 0.0;
        ratio_sum += ratio;
        a.max_ratio = std::max(a.max_ratio, ratio);
        a.total_shells += r.shells;
        a.total_steps += r.steps;
        a.total_wall_seconds += r.wall_seconds;
    }
    a.mean_ratio = rows.empty() ? 0.0 : ratio_sum / static_cast<double>(rows.size());
    return a;
}

std::string report_csv(const RunReport &r) {
    std::string out = "case_id, warp_kind, rmsd_before, rmsd_after, shells, steps, wall_seconds\n";
    for (const CaseRow &row : r.rows) {
        out += row.case_id + ", " + row.warp_kind + ", " + format_g9(row.rmsd_before) + ", "
               + format_g9(row.rmsd_after) + ", " + std::to_string(row.shells) + ", "
               + std::to_string(row.steps) + ", " + format_f3(row.wall_seconds) + "\n";
    }
    return out;
}

std::string report_markdown(const RunReport &r) {
    std::string out;
    out += "| case_id | warp_kind | rmsd_before | rmsd_after | ratio | shells | steps | wall_seconds |\n";
    out += "|---|---|---|---|---|---|---|---|\n";
    for (const CaseRow &row : r.rows) {
        const double ratio = row.rmsd_before > 0.0 ? row.rmsd_after / row.rmsd_before : 0.0;
        out += "| " + row.case_id + " | " + row.warp_kind + " | " + format_g9(row.rmsd_before)
               + " | " + format_g9(row.rmsd_after) + " | " + format_g9(ratio) + " | "
               + std::to_string(row.shells) + " | " + std::to_string(row.steps) + " | "
               + format_f3(row.wall_seconds) + " |\n";
    }
    const ReportAggregates &a = r.aggregates;
    out += "\n";
    out += "- cases: " + std::to_string(a.cases) + "\n";
    out += "- mean_ratio: " + format_g9(a.mean_ratio) + "\n";
    out += "- max_ratio: " + format_g9(a.max_ratio) + "\n";
    out += "- total_shells: " + std::to_string(a.total_shells) + "\n";
    out += "- total_steps: " + std::to_string(a.total_steps) + "\n";
    out += "- total_wall_seconds: " + format_f3(a.total_wall_seconds) + "\n";
    return out;
}

void write_text_file(const std::string &path, const std::string &content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw std::runtime_error("write failed for " + path);
}

RunReport run_panel(const std::string &panel_dir, const PipelineConfig &cfg) {
    const PanelDescription pd = load_panel_description(panel_dir + "/panel.json");
    const ScalarVolume ref = load_volume(panel_dir + "/" + pd.reference_file);

    RunReport rep;
    for (const PanelCase &pc : pd.cases) {
        const ScalarVolume mov = load_volume(panel_dir + "/" + pc.moving_file);
        const PipelineResult pr = run_pipeline(ref, mov, cfg);
        CaseRow row;
        row.case_id = pc.case_id;
        row.warp_kind = warp_kind_name(pc.warp.kind);
        row.rmsd_before = pr.reg.rmsd_before;
        row.rmsd_after = pr.reg.rmsd_after;
        row.shells = static_cast<int>(pr.reg.map.shells.size());
        row.steps = pr.reg.total_steps;
        row.wall_seconds = pr.wall_seconds;
        rep.rows.push_back(std::move(row));
    }
    rep.aggregates = compute_aggregates(rep.rows);
    return rep;
}

EvalSummary evaluate_map(const ScalarVolume &fixed, const ScalarVolume &moving,
                         const DeformationMap &map, double epsilon) {
    EvalSummary s;
    s.rmsd_before = rmsd(fixed, moving);
    const ScalarVolume warped = warp_volume(moving, map);
    s.rmsd_after = rmsd(fixed, warped);
    s.ratio = s.rmsd_before > 0.0 ? s.rmsd_after / s.rmsd_before : 0.0;
    const GuardReport gr = jacobian_guard(map.jac_total, epsilon);
    s.min_det = gr.min_det;
    s.max_det = gr.max_det;
    s.det_in_bounds = gr.ok;
    return s;
}

} // namespace symreg
