// flow.hpp - Hamiltonian flow registration: phase-space state, shell mechanics,
// and the composed diffeomorphic map.
//
// The registration energy is
//     H = (1/2V) * integral( |p|^2 + (I0(x) - I1(q))^2 ) dV
// over the fixed grid of I0 (V = domain measure).  Hamilton's equations close as
//     dq/dt = p
//     dp/dt = (I0 - I1(q)) * grad(I1)|_q * J^-1
//     dJ/dt = d p / d x
// integrated with a semi-implicit (symplectic) Euler step: p first, then q with
// the updated p, then J from central differences of the updated p.  Whenever any
// voxel's det(J) leaves (epsilon, 1/epsilon) the flow freezes and restarts a new
// shell from the current q with p = 0 and J = identity; per-shell Jacobians
// compose into the total as J_total <- J_shell * J_total per voxel.  Within a
// shell the flow runs until the bound trips, the step budget is spent, or no
// new best mismatch has appeared for stall_patience steps; the shell then
// rewinds to its best state.  Transient mismatch increases are part of the
// dynamics (kinetic/potential exchange carries momentum across intensity
// plateaus) and do not end a shell.  Shells continue while the end-of-shell
// mismatch strictly decreases.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "symreg/esp.hpp"
#include "symreg/volume.hpp"

namespace symreg {

// Instantaneous flow state on the fixed grid: map q (world mm), momentum p, and
// the running within-shell Jacobian J = dq/dx, plus shell-local time t.
struct PhaseSpaceField {
    GridGeometry geometry;
    VectorVolume q;
    VectorVolume p;
    MatrixVolume jac;
    double t = 0.0;

    static PhaseSpaceField identity(const GridGeometry &g);
};

// Scalar summary of one completed shell.  final_q/final_jac snapshots are kept
// only on request (keep_shell_fields) since they cost 12 doubles per voxel each.
struct ShellRecord {
    int index = 0;
    int steps = 0;
    double duration = 0.0;   // shell-local integration time
    double energy_end = 0.0; // potential term of H at shell end
    double rmsd_end = 0.0;
    std::optional<VectorVolume> final_q;
    std::optional<MatrixVolume> final_jac;
};

// Composed diffeomorphic map: q_total is the current map (absolute world mm),
// jac_total the per-voxel product of shell Jacobians (newest factor leftmost).
struct DeformationMap {
    GridGeometry geometry;
    VectorVolume q_total;
    MatrixVolume jac_total;
    std::vector<ShellRecord> shells;

    static DeformationMap identity(const GridGeometry &g);
};

struct RegistrationConfig {
    double epsilon = 0.01;             // det(J) bound: epsilon < det < 1/epsilon
    int max_shells = 48;
    int max_steps_per_shell = 256;
    double dt_init = 0.1;
    double dt_growth = 1.25;           // per-step growth factor when unconstrained
    double dt_max = 100.0;
    double dt_max_displacement = 0.4;  // cap on per-step displacement, voxels
    int max_guard_halvings = 4;        // dt halvings on a guard trip before ending the shell
    int stall_patience = 24;           // steps without a new best mismatch before the shell ends
    double convergence_tol = 1e-3;     // stop when relative shell improvement falls below this
    const TransitionKernel *regularizer = nullptr; // ESP nonlocal force when set
    bool nonlocal_coordinate_update = false;       // also route dq/dt through rho (experimental)
    bool keep_shell_fields = false;
    bool verbose = false;
    // Called after every accepted integration step (diagnostics; must not mutate).
    std::function<void(const PhaseSpaceField &)> step_observer;
};

struct RegistrationResult {
    DeformationMap map;
    bool converged = false;
    std::string stop_reason;
    int total_steps = 0;
    double rmsd_before = 0.0;
    double rmsd_after = 0.0;
};

// Total energy of a state: (1/2V) sum(|p|^2 + (I0 - I1(q))^2) dV.
double hamiltonian_energy(const PhaseSpaceField &state, const ScalarVolume &fixed,
                          const ScalarVolume &moving);

// One semi-implicit Euler step at fixed dt.  The moving-image gradient is
// precomputed on the fixed grid of `moving`, sampled at q, and pushed through
// J^-1.  With a regularizer the force is replaced by its rho-average; with
// nonlocal_coordinate_update the q update uses the rho-average of p as well.
// No adaptivity or guard handling here - that lives in register_volumes.
void flow_step(PhaseSpaceField &state, const ScalarVolume &fixed, const ScalarVolume &moving,
               double dt, const TransitionKernel *regularizer = nullptr,
               bool nonlocal_coordinate_update = false);

// Shell guard: every voxel must satisfy epsilon < det(J) < 1/epsilon.
struct GuardReport {
    bool ok = true;
    double min_det = 0.0;
    double max_det = 0.0;
    std::vector<size_t> violations; // flat voxel indices, in order
};
GuardReport jacobian_guard(const MatrixVolume &jac, double epsilon);

// Freezes the current shell into the map (appends a ShellRecord, composes
// jac_total <- jac * jac_total, copies q into q_total) and resets the state for
// the next shell: p = 0, J = identity, t = 0.  q is left in place.
void shell_restart(PhaseSpaceField &state, DeformationMap &map, int steps, double energy_end,
                   double rmsd_end, bool keep_shell_fields = false);

// Shells continue while the mismatch integral strictly decreases:
// returns sum((I0 - I1(q_new))^2 - (I0 - I1(q_prev))^2) dV < 0.
bool convergence_check(const ScalarVolume &fixed, const ScalarVolume &moving,
                       const VectorVolume &q_new, const VectorVolume &q_prev);

// Metric tensor of the curvilinear coordinates: G = (J^-1)^T (J^-1).
Mat3 metric_tensor(const Mat3 &jac);
MatrixVolume metric_field(const MatrixVolume &jac);

// Length of a sampled path through the metric field G by the trapezoid rule;
// samples are positions in the G field's world frame, the path parameter is the
// sample index.  Throws if any sample falls outside the domain.
double curve_length(const std::vector<Vec3> &samples, const MatrixVolume &G);

// Full registration driver.  With `initial` the run continues from a previous
// composed map (shell indices continue; used for multi-resolution schedules).
RegistrationResult register_volumes(const ScalarVolume &fixed, const ScalarVolume &moving,
                                    const RegistrationConfig &cfg,
                                    const DeformationMap *initial = nullptr);

// Inverse map by role exchange: registers moving->fixed, then reports the RMS
// deviation (in voxels) of q_fwd(q_inv(x)) from identity.
struct InversionResult {
    DeformationMap map;
    double composition_residual_voxels = 0.0;
    RegistrationResult run;
};
InversionResult invert_map(const ScalarVolume &fixed, const ScalarVolume &moving,
                           const RegistrationConfig &cfg, const DeformationMap &forward);

// Pull-back resampling of a volume through a map: out(x) = v(q_total(x)).
ScalarVolume warp_volume(const ScalarVolume &v, const DeformationMap &map);
ScalarVolume warp_volume(const ScalarVolume &v, const VectorVolume &q);

} // namespace symreg
