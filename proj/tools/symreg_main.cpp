// symreg_main.cpp - command-line front end for the registration engine.
//
// Subcommands:
//   register  - register a moving volume onto a fixed one, save map / warped output
//   phantom   - generate synthetic volumes (c_sphere pair, textured blob, single warp case)
//   panel     - generate the five-family deformation phantom panel
//   report    - run the benchmark over a panel directory, write CSV / markdown
//   eval      - mismatch and Jacobian summary for a volume pair (optionally through a map)
//   esp       - coupling-kernel eigenpair: lambda, psi/mu volumes, row-sum residual
//   swd       - spherical-wave analysis: coefficients, reconstruction, profiles, similarity
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "symreg/esp.hpp"
#include "symreg/flow.hpp"
#include "symreg/harness.hpp"
#include "symreg/map_io.hpp"
#include "symreg/parallel.hpp"
#include "symreg/phantom.hpp"
#include "symreg/swd.hpp"
#include "symreg/volume_io.hpp"

namespace {

using namespace symreg;

VolumeFormat parse_format(const std::string &f) {
    if (f == "auto") return VolumeFormat::auto_detect;
    if (f == "raw") return VolumeFormat::raw_f32;
    if (f == "nifti") return VolumeFormat::nifti1;
    throw CLI::ValidationError("--format", "must be auto, raw or nifti");
}

GridGeometry geometry_from(const std::vector<int> &dims, double spacing) {
    GridGeometry g;
    if (dims.size() == 1) {
        g.dims = {dims[0], dims[0], dims[0]};
    } else if (dims.size() == 3) {
        g.dims = {dims[0], dims[1], dims[2]};
    } else {
        throw CLI::ValidationError("--dims", "expects 1 or 3 values");
    }
    g.spacing = {spacing, spacing, spacing};
    g.validate();
    return g;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"symreg - symplectomorphic volume registration benchmark"};
    app.require_subcommand(1);

    int threads = 0;
    std::string config_path;
    std::string format_name = "auto";
    uint64_t seed = 12345;
    bool verbose = false;
    bool no_timing = false;
    app.add_option("--threads", threads, "worker threads (0 = leave default)");
    app.add_option("--config", config_path, "pipeline configuration JSON file");
    app.add_option("--format", format_name, "volume format: auto|raw|nifti (default auto)");
    app.add_option("--seed", seed, "seed for synthetic volume generation");
    app.add_flag("--verbose", verbose, "chatty progress output");
    app.add_flag("--no-timing", no_timing, "report wall_seconds as 0 (byte-stable reports)");

    // ---- register ----
    auto *reg = app.add_subcommand("register", "register moving onto fixed");
    std::string reg_fixed, reg_moving, reg_out_map, reg_out_warped;
    bool reg_print_config = false;
    int reg_max_shells = 0, reg_max_steps = 0;
    double reg_epsilon = 0.0, reg_dt_init = 0.0, reg_conv_tol = 0.0;
    std::string reg_esp;
    int reg_esp_conn = 0;
    double reg_esp_beta = 0.0, reg_esp_sigma = 0.0;
    bool reg_prealign = false, reg_nonlocal_q = false;
    std::vector<int> reg_pyramid;
    reg->add_option("--fixed", reg_fixed, "fixed (reference) volume")->required();
    reg->add_option("--moving", reg_moving, "moving volume")->required();
    reg->add_option("--out-map", reg_out_map, "write the composed map (SREGMAP1)");
    reg->add_option("--out-warped", reg_out_warped, "write the warped moving volume");
    reg->add_flag("--print-config", reg_print_config, "echo the resolved numeric configuration");
    reg->add_option("--max-shells", reg_max_shells);
    reg->add_option("--max-steps", reg_max_steps, "max steps per shell");
    reg->add_option("--epsilon", reg_epsilon, "Jacobian determinant bound");
    reg->add_option("--dt-init", reg_dt_init);
    reg->add_option("--convergence-tol", reg_conv_tol);
    reg->add_option("--esp", reg_esp, "coupling: adjacency|image_weighted|gaussian_stationary");
    reg->add_option("--esp-connectivity", reg_esp_conn, "6|18|26");
    reg->add_option("--esp-beta", reg_esp_beta);
    reg->add_option("--esp-sigma", reg_esp_sigma);
    reg->add_flag("--swd-prealign", reg_prealign, "SWD similarity pre-alignment");
    reg->add_flag("--nonlocal-q", reg_nonlocal_q, "route the coordinate update through rho too");
    reg->add_option("--pyramid", reg_pyramid, "SWD low-pass orders, e.g. --pyramid 4 8")
        ->expected(-1);

    // ---- phantom ----
    auto *pha = app.add_subcommand("phantom", "generate synthetic volumes");
    std::string pha_kind = "c_sphere", pha_dir;
    std::vector<int> pha_dims = {64};
    double pha_spacing = 1.0, pha_amp = 0.0, pha_extent = 0.0;
    pha->add_option("--kind", pha_kind,
                    "c_sphere|blob|whirl|twist|stretch|compress_axial|compress_longitudinal");
    pha->add_option("--dims", pha_dims, "grid size (1 or 3 values)")->expected(-1);
    pha->add_option("--spacing", pha_spacing, "voxel spacing, mm");
    pha->add_option("--out-dir", pha_dir, "output directory")->required();
    pha->add_option("--amplitude", pha_amp, "warp amplitude override");
    pha->add_option("--extent", pha_extent, "warp extent override, mm");

    // ---- panel ----
    auto *pan = app.add_subcommand("panel", "generate the five-family phantom panel");
    std::string pan_dir;
    std::vector<int> pan_dims = {96};
    double pan_spacing = 1.0;
    pan->add_option("--out-dir", pan_dir, "panel directory")->required();
    pan->add_option("--dims", pan_dims, "grid size (1 or 3 values)")->expected(-1);
    pan->add_option("--spacing", pan_spacing, "voxel spacing, mm");

    // ---- report ----
    auto *rep = app.add_subcommand("report", "run the benchmark over a panel directory");
    std::string rep_panel, rep_csv, rep_md;
    rep->add_option("--panel", rep_panel, "panel directory (from `symreg panel`)")->required();
    rep->add_option("--out", rep_csv, "CSV output path")->required();
    rep->add_option("--markdown", rep_md, "markdown output path");

    // ---- eval ----
    auto *ev = app.add_subcommand("eval", "mismatch / Jacobian summary");
    std::string ev_fixed, ev_moving, ev_map;
    double ev_eps = 0.01;
    ev->add_option("--fixed", ev_fixed)->required();
    ev->add_option("--moving", ev_moving)->required();
    ev->add_option("--map", ev_map, "SREGMAP1 file to evaluate through");
    ev->add_option("--epsilon", ev_eps, "determinant bound used for the in-bounds check");

    // ---- esp ----
    auto *es = app.add_subcommand("esp", "coupling-kernel dominant eigenpair");
    std::string es_input, es_coupling = "adjacency", es_psi, es_mu;
    int es_conn = 6, es_max_iter = 5000;
    double es_beta = 1.0, es_sigma = 2.0, es_tol = 1e-10;
    es->add_option("--input", es_input, "volume (geometry source; intensities for image_weighted)")
        ->required();
    es->add_option("--coupling", es_coupling, "adjacency|image_weighted|gaussian_stationary");
    es->add_option("--connectivity", es_conn, "6|18|26");
    es->add_option("--beta", es_beta);
    es->add_option("--sigma", es_sigma, "mm");
    es->add_option("--tol", es_tol);
    es->add_option("--max-iter", es_max_iter);
    es->add_option("--out-psi", es_psi, "write the eigenvector volume");
    es->add_option("--out-mu", es_mu, "write the equilibrium probability volume");

    // ---- swd ----
    auto *sw = app.add_subcommand("swd", "spherical-wave analysis");
    std::string sw_input, sw_coeffs, sw_recon, sw_radial, sw_angular, sw_ref;
    int sw_l = 16, sw_n = 16, sw_keep_l = -1, sw_keep_n = -1;
    sw->add_option("--input", sw_input, "volume to analyze")->required();
    sw->add_option("--l", sw_l, "angular order l_max");
    sw->add_option("--n", sw_n, "radial order n_max");
    sw->add_option("--out-coeffs", sw_coeffs, "write raw coefficients (SREGSWD1)");
    sw->add_option("--reconstruct", sw_recon, "write the (filtered) reconstruction");
    sw->add_option("--keep-l", sw_keep_l, "low-pass cut for --reconstruct");
    sw->add_option("--keep-n", sw_keep_n, "low-pass cut for --reconstruct");
    sw->add_option("--radial-profile", sw_radial, "write 'r, value' CSV");
    sw->add_option("--angular-profile", sw_angular, "write 'theta, phi, value' CSV");
    sw->add_option("--estimate", sw_ref,
                   "reference volume: report scale/rotation of --input relative to it");

    CLI11_PARSE(app, argc, argv);

    try {
        if (threads > 0) set_worker_count(threads);
        const VolumeFormat fmt = parse_format(format_name);

        PipelineConfig cfg;
        if (!config_path.empty()) cfg = load_pipeline_config(config_path);
        cfg.threads = threads;
        cfg.verbose = verbose;
        cfg.no_timing = no_timing;

        if (reg->parsed()) {
            if (reg->count("--max-shells")) cfg.reg.max_shells = reg_max_shells;
            if (reg->count("--max-steps")) cfg.reg.max_steps_per_shell = reg_max_steps;
            if (reg->count("--epsilon")) cfg.reg.epsilon = reg_epsilon;
            if (reg->count("--dt-init")) cfg.reg.dt_init = reg_dt_init;
            if (reg->count("--convergence-tol")) cfg.reg.convergence_tol = reg_conv_tol;
            if (reg->count("--esp")) cfg.esp_coupling = reg_esp;
            if (reg->count("--esp-connectivity")) cfg.esp_connectivity = reg_esp_conn;
            if (reg->count("--esp-beta")) cfg.esp_beta = reg_esp_beta;
            if (reg->count("--esp-sigma")) cfg.esp_sigma = reg_esp_sigma;
            if (reg->count("--swd-prealign")) cfg.swd_prealign = true;
            if (reg->count("--nonlocal-q")) cfg.reg.nonlocal_coordinate_update = true;
            if (reg->count("--pyramid")) cfg.pyramid = reg_pyramid;

            if (reg_print_config) std::printf("%s\n", resolved_config_json(cfg).c_str());

            const ScalarVolume fixed = load_volume(reg_fixed, fmt);
            const ScalarVolume moving = load_volume(reg_moving, fmt);
            const PipelineResult pr = run_pipeline(fixed, moving, cfg);
            std::printf("rmsd_before   %.9g\n", pr.reg.rmsd_before);
            std::printf("rmsd_after    %.9g\n", pr.reg.rmsd_after);
            std::printf("ratio         %.9g\n",
                        pr.reg.rmsd_before > 0 ? pr.reg.rmsd_after / pr.reg.rmsd_before : 0.0);
            std::printf("shells        %zu\n", pr.reg.map.shells.size());
            std::printf("steps         %d\n", pr.reg.total_steps);
            std::printf("stop_reason   %s\n", pr.reg.stop_reason.c_str());
            std::printf("converged     %s\n", pr.reg.converged ? "true" : "false");
            if (pr.prealigned)
                std::printf("prealign      scale=%.6g theta=%.6g phi=%.6g\n", pr.prealign.scale,
                            pr.prealign.theta, pr.prealign.phi);
            std::printf("wall_seconds  %.3f\n", pr.wall_seconds);
            if (!reg_out_map.empty()) save_map(pr.reg.map, reg_out_map);
            if (!reg_out_warped.empty()) save_volume(pr.warped, reg_out_warped, fmt);
        } else if (pha->parsed()) {
            const GridGeometry g = geometry_from(pha_dims, pha_spacing);
            std::filesystem::create_directories(pha_dir);
            if (pha_kind == "c_sphere") {
                const PhantomPair pair = make_c_sphere_pair(g);
                save_volume(pair.c_shape, pha_dir + "/c.srv");
                save_volume(pair.sphere, pha_dir + "/sphere.srv");
                std::printf("wrote %s/c.srv and %s/sphere.srv\n", pha_dir.c_str(), pha_dir.c_str());
            } else if (pha_kind == "blob") {
                save_volume(make_textured_blob(g, seed), pha_dir + "/blob.srv");
                std::printf("wrote %s/blob.srv\n", pha_dir.c_str());
            } else {
                const auto kind = warp_kind_from_name(pha_kind);
                if (!kind) throw std::runtime_error("phantom: unknown kind " + pha_kind);
                AnalyticWarp w = default_warp(*kind, g);
                if (pha->count("--amplitude")) w.amplitude = pha_amp;
                if (pha->count("--extent")) w.extent = pha_extent;
                const ScalarVolume ref = make_textured_blob(g, seed);
                save_volume(ref, pha_dir + "/reference.srv");
                save_volume(warp_volume_analytic(ref, w), pha_dir + "/" + pha_kind + ".srv");
                std::printf("wrote %s/reference.srv and %s/%s.srv\n", pha_dir.c_str(),
                            pha_dir.c_str(), pha_kind.c_str());
            }
        } else if (pan->parsed()) {
            const GridGeometry g = geometry_from(pan_dims, pan_spacing);
            const PanelDescription pd = generate_panel(pan_dir, g, seed);
            std::printf("panel: %zu cases in %s (seed %" PRIu64 ")\n", pd.cases.size(),
                        pan_dir.c_str(), seed);
        } else if (rep->parsed()) {
            const RunReport r = run_panel(rep_panel, cfg);
            write_text_file(rep_csv, report_csv(r));
            if (!rep_md.empty()) write_text_file(rep_md, report_markdown(r));
            std::printf("cases               %d\n", r.aggregates.cases);
            std::printf("mean_ratio          %.9g\n", r.aggregates.mean_ratio);
            std::printf("max_ratio           %.9g\n", r.aggregates.max_ratio);
            std::printf("total_shells        %d\n", r.aggregates.total_shells);
            std::printf("total_steps         %d\n", r.aggregates.total_steps);
            std::printf("total_wall_seconds  %.3f\n", r.aggregates.total_wall_seconds);
        } else if (ev->parsed()) {
            const ScalarVolume fixed = load_volume(ev_fixed, fmt);
            const ScalarVolume moving = load_volume(ev_moving, fmt);
            DeformationMap map = DeformationMap::identity(fixed.geometry);
            if (!ev_map.empty()) map = load_map(ev_map);
            const EvalSummary s = evaluate_map(fixed, moving, map, ev_eps);
            std::printf("rmsd_before    %.9g\n", s.rmsd_before);
            std::printf("rmsd_after     %.9g\n", s.rmsd_after);
            std::printf("ratio          %.9g\n", s.ratio);
            std::printf("min_det        %.9g\n", s.min_det);
            std::printf("max_det        %.9g\n", s.max_det);
            std::printf("det_in_bounds  %s\n", s.det_in_bounds ? "true" : "false");
        } else if (es->parsed()) {
            const ScalarVolume input = load_volume(es_input, fmt);
            CouplingKernel q;
            const Connectivity conn = es_conn == 6    ? Connectivity::faces6
                                      : es_conn == 18 ? Connectivity::edges18
                                      : es_conn == 26
                                          ? Connectivity::corners26
                                          : throw std::runtime_error("esp: connectivity must be 6, 18 or 26");
            if (es_coupling == "adjacency") {
                q = build_adjacency_coupling(input.geometry, conn);
            } else if (es_coupling == "image_weighted") {
                q = build_image_weighted_coupling(input, es_beta, conn);
            } else if (es_coupling == "gaussian_stationary") {
                Mat3 S;
                const double s = 1.0 / (2.0 * es_sigma * es_sigma);
                S.m = {s, 0, 0, 0, s, 0, 0, 0, s};
                q = build_gaussian_coupling(input.geometry, S);
            } else {
                throw std::runtime_error("esp: unknown coupling " + es_coupling);
            }
            const EspSolution sol = dominant_eigenpair(q, es_tol, es_max_iter, false);
            std::printf("lambda      %.12g\n", sol.lambda);
            std::printf("iterations  %d\n", sol.iterations);
            std::printf("converged   %s\n", sol.converged ? "true" : "false");
            std::printf("residual    %.3e\n", sol.residual);
            {
                // row-sum residual of the transition kernel: rho applied to a
                // constant-1 field should return 1 everywhere
                ScalarVolume ones(input.geometry, 1.0);
                TransitionKernel tk = make_transition_kernel(q, sol);
                const ScalarVolume r = transition_apply(ones, tk);
                double dev = 0.0;
                for (double v : r.data) dev = std::max(dev, std::fabs(v - 1.0));
                std::printf("row_sum_dev %.3e\n", dev);
            }
            if (!es_psi.empty()) save_volume(sol.psi, es_psi, fmt);
            if (!es_mu.empty()) save_volume(sol.mu, es_mu, fmt);
        } else if (sw->parsed()) {
            const ScalarVolume input = load_volume(sw_input, fmt);
            double a = std::numeric_limits<double>::infinity();
            for (int ax = 0; ax < 3; ++ax)
                a = std::min(a, 0.5 * input.geometry.spacing[ax] * (input.geometry.dims[ax] - 1));
            auto basis = std::make_shared<const SwdBasis>(build_swd_basis(a, sw_l, sw_n));
            const SwdCoefficients co = forward_swd(input, basis);
            std::printf("a      %.6g\n", basis->a);
            std::printf("l_max  %d\n", basis->l_max);
            std::printf("n_max  %d\n", basis->n_max);
            std::printf("modes  %zu\n", co.f.size());
            if (!sw_coeffs.empty()) save_swd_coefficients(co, sw_coeffs);
            if (!sw_recon.empty()) {
                FilterSpec filt = FilterSpec::identity();
                if (sw_keep_l >= 0) filt.l_max = sw_keep_l;
                if (sw_keep_n >= 1) filt.n_max = sw_keep_n;
                save_volume(inverse_swd(co, filt, input.geometry), sw_recon, fmt);
            }
            if (!sw_radial.empty()) {
                const auto prof = radial_profile(co, 256);
                std::string csv = "r, value\n";
                char line[64];
                for (size_t i = 0; i < prof.size(); ++i) {
                    std::snprintf(line, sizeof line, "%.9g, %.9g\n",
                                  basis->a * static_cast<double>(i) / (prof.size() - 1), prof[i]);
                    csv += line;
                }
                write_text_file(sw_radial, csv);
            }
            if (!sw_angular.empty()) {
                const AngularProfile ap = angular_profile(co, 18, 36);
                std::string csv = "theta, phi, value\n";
                char line[96];
                for (int it = 0; it < ap.n_theta; ++it)
                    for (int ip = 0; ip < ap.n_phi; ++ip) {
                        std::snprintf(line, sizeof line, "%.9g, %.9g, %.9g\n",
                                      3.14159265358979323846 * (it + 0.5) / ap.n_theta,
                                      2.0 * 3.14159265358979323846 * ip / ap.n_phi,
                                      ap.values[static_cast<size_t>(it) * ap.n_phi
                                                + static_cast<size_t>(ip)]);
                        csv += line;
                    }
                write_text_file(sw_angular, csv);
            }
            if (!sw_ref.empty()) {
                const ScalarVolume ref = load_volume(sw_ref, fmt);
                const SwdCoefficients cr = forward_swd(ref, basis);
                const SimilarityParams p = estimate_similarity(cr, co);
                std::printf("scale  %.9g\n", p.scale);
                std::printf("theta  %.9g\n", p.theta);
                std::printf("phi    %.9g\n", p.phi);
            }
        }
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
