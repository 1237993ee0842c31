// harness.hpp - benchmark pipeline: configuration, panel runs, reports.
//
// The pipeline wraps the registration core with the optional stages: ESP
// nonlocal regularization (coupling kernel + dominant eigenpair, built from the
// fixed image), SWD similarity pre-alignment, and an SWD low-pass pyramid that
// feeds progressively sharper reconstructions through the continuation API.
// Reports are plain CSV/markdown with aggregates recomputed from the rows.
#pragma once

#include <string>
#include <vector>

#include "symreg/flow.hpp"
#include "symreg/swd.hpp"

namespace symreg {

// Numeric pipeline configuration.  Execution-only settings (threads, verbose,
// no_timing) are excluded from resolved_config_json, so two runs that differ
// only in host/thread count echo identical configurations.
struct PipelineConfig {
    RegistrationConfig reg; // reg.regularizer is wired internally from the esp_* keys

    std::string esp_coupling = "none"; // none | adjacency | image_weighted | gaussian_stationary
    int esp_connectivity = 6;          // 6 | 18 | 26
    double esp_beta = 1.0;             // image_weighted decay
    double esp_sigma = 2.0;            // mm; gaussian_stationary S = I / (2 sigma^2)
    double esp_tol = 1e-6;
    int esp_max_iter = 2000;

    bool swd_prealign = false;
    int swd_l = 12, swd_n = 12;
    std::vector<int> pyramid; // ascending SWD low-pass orders; empty = single stage

    int threads = 0; // execution-only: 0 leaves the pool untouched
    bool verbose = false;
    bool no_timing = false; // report wall_seconds as 0 for byte-stable output
};

// Reads a JSON config file (unknown keys rejected); missing keys keep defaults.
PipelineConfig load_pipeline_config(const std::string &path);
// Overlays JSON text onto an existing config (same key set as the file format).
void apply_config_json(PipelineConfig &cfg, const std::string &json_text);
// Canonical JSON echo of the numeric configuration (sorted keys, no execution keys).
std::string resolved_config_json(const PipelineConfig &cfg);

struct PipelineResult {
    RegistrationResult reg;
    ScalarVolume warped;       // moving volume after prealignment + composed map
    bool prealigned = false;
    SimilarityParams prealign; // identity unless swd_prealign
    double wall_seconds = 0.0; // 0 when no_timing
};

PipelineResult run_pipeline(const ScalarVolume &fixed, const ScalarVolume &moving,
                            const PipelineConfig &cfg);

struct CaseRow {
    std::string case_id;
    std::string warp_kind;
    double rmsd_before = 0.0;
    double rmsd_after = 0.0;
    int shells = 0;
    int steps = 0;
    double wall_seconds = 0.0;
};

struct ReportAggregates {
    int cases = 0;
    double mean_ratio = 0.0; // mean of rmsd_after / rmsd_before
    double max_ratio = 0.0;
    int total_shells = 0;
    int total_steps = 0;
    double total_wall_seconds = 0.0;
};

struct RunReport {
    std::vector<CaseRow> rows;
    ReportAggregates aggregates;
};

ReportAggregates compute_aggregates(const std::vector<CaseRow> &rows);

// CSV with the fixed header
//   case_id, warp_kind, rmsd_before, rmsd_after, shells, steps, wall_seconds
// and one row per case; numeric fields use %.9g (%.3f for wall_seconds).
std::string report_csv(const RunReport &r);
std::string report_markdown(const RunReport &r);
void write_text_file(const std::string &path, const std::string &content);

// Runs every case of a generated panel directory (panel.json + volumes).
RunReport run_panel(const std::string &panel_dir, const PipelineConfig &cfg);

struct EvalSummary {
    double rmsd_before = 0.0;
    double rmsd_after = 0.0;
    double ratio = 0.0;
    double min_det = 0.0;
    double max_det = 0.0;
    bool det_in_bounds = true;
};

EvalSummary evaluate_map(const ScalarVolume &fixed, const ScalarVolume &moving,
                         const DeformationMap &map, double epsilon);

} // namespace symreg
