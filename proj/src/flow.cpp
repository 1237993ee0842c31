// flow.cpp - Hamiltonian flow integration, shell mechanics, registration driver.
#include "symreg/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "symreg/parallel.hpp"

namespace symreg {

PhaseSpaceField PhaseSpaceField::identity(const GridGeometry &g) {
    PhaseSpaceField s;
    s.geometry = g;
    s.q = VectorVolume::identity_map(g);
    s.p = VectorVolume(g);
    s.jac = MatrixVolume(g, Mat3::identity());
    s.t = 0.0;
    return s;
}

DeformationMap DeformationMap::identity(const GridGeometry &g) {
    DeformationMap m;
    m.geometry = g;
    m.q_total = VectorVolume::identity_map(g);
    m.jac_total = MatrixVolume(g, Mat3::identity());
    return m;
}

namespace {

// Clamped trilinear taps shared by the fused samplers below.
struct Taps {
    size_t c[8];
    double fx, fy, fz;
};

inline Taps make_taps(const GridGeometry &g, const Vec3 &world) {
    Vec3 u = g.to_voxel(world);
    u.x = std::clamp(u.x, 0.0, static_cast<double>(g.dims[0] - 1));
    u.y = std::clamp(u.y, 0.0, static_cast<double>(g.dims[1] - 1));
    u.z = std::clamp(u.z, 0.0, static_cast<double>(g.dims[2] - 1));
    int i0 = std::min(static_cast<int>(u.x), g.dims[0] - 2);
    int j0 = std::min(static_cast<int>(u.y), g.dims[1] - 2);
    int k0 = std::min(static_cast<int>(u.z), g.dims[2] - 2);
    Taps t;
    t.fx = u.x - i0;
    t.fy = u.y - j0;
    t.fz = u.z - k0;
    const size_t sx = 1, sy = static_cast<size_t>(g.dims[0]);
    const size_t sz = sy * static_cast<size_t>(g.dims[1]);
    const size_t base = g.index(i0, j0, k0);
    t.c[0] = base;           t.c[1] = base + sx;
    t.c[2] = base + sy;      t.c[3] = base + sy + sx;
    t.c[4] = base + sz;      t.c[5] = base + sz + sx;
    t.c[6] = base + sz + sy; t.c[7] = base + sz + sy + sx;
    return t;
}

// Moving image bundled with its fixed-grid gradient as 4 interleaved channels,
// so one set of taps serves value and gradient sampling at q.
struct MovingField {
    GridGeometry geometry;
    std::vector<std::array<double, 4>> chan; // {value, gx, gy, gz}

    explicit MovingField(const ScalarVolume &moving) : geometry(moving.geometry) {
        const VectorVolume grad = gradient_central(moving);
        const size_t n = moving.data.size();
        chan.resize(n);
        parallel_for(n, [&](size_t a, size_t b) {
            for (size_t i = a; i < b; ++i)
                chan[i] = {moving.data[i], grad.data[i].x, grad.data[i].y, grad.data[i].z};
        });
    }

    // value + interpolated fixed-grid gradient at world position.
    inline void sample(const Vec3 &world, double &value, Vec3 &grad) const {
        const Taps t = make_taps(geometry, world);
        const double wx1 = t.fx, wx0 = 1.0 - t.fx;
        const double wy1 = t.fy, wy0 = 1.0 - t.fy;
        const double wz1 = t.fz, wz0 = 1.0 - t.fz;
        const double w[8] = {wx0 * wy0 * wz0, wx1 * wy0 * wz0, wx0 * wy1 * wz0, wx1 * wy1 * wz0,
                             wx0 * wy0 * wz1, wx1 * wy0 * wz1, wx0 * wy1 * wz1, wx1 * wy1 * wz1};
        double acc[4] = {0, 0, 0, 0};
        for (int c = 0; c < 8; ++c) {
            const std::array<double, 4> &v = chan[t.c[c]];
            acc[0] += w[c] * v[0];
            acc[1] += w[c] * v[1];
            acc[2] += w[c] * v[2];
            acc[3] += w[c] * v[3];
        }
        value = acc[0];
        grad = {acc[1], acc[2], acc[3]};
    }
};

// Force and mismatch in one pass: f = (I0 - I1(q)) * grad(I1)|_q * J^-1 per
// voxel, and sum (I0 - I1(q))^2 dV via the fixed-block pairwise reduction.
double force_and_mismatch(const ScalarVolume &fixed, const MovingField &mov,
                          const VectorVolume &q, const MatrixVolume &jac, VectorVolume &force) {
    const size_t n = q.data.size();
    const double dV = q.geometry.voxel_volume();
    const size_t blocks = (n + kReduceBlock - 1) / kReduceBlock;
    std::vector<double> partials(blocks, 0.0);
    parallel_for(blocks, [&](size_t b0, size_t b1) {
        for (size_t b = b0; b < b1; ++b) {
            const size_t lo = b * kReduceBlock, hi = std::min(lo + kReduceBlock, n);
            double acc = 0.0;
            for (size_t i = lo; i < hi; ++i) {
                double val;
                Vec3 grad;
                mov.sample(q.data[i], val, grad);
                const double diff = fixed.data[i] - val;
                force.data[i] = jac.data[i].inverse().mul_left(grad) * diff;
                acc += diff * diff;
            }
            partials[b] = acc;
        }
    });
    return pairwise_combine(partials) * dV;
}

// Mismatch integral sum (I0 - I1(q))^2 dV without the force.
double mismatch_integral(const ScalarVolume &fixed, const MovingField &mov, const VectorVolume &q) {
    const size_t n = q.data.size();
    const double dV = q.geometry.voxel_volume();
    return deterministic_sum(n, [&](size_t i) {
               double val;
               Vec3 grad;
               mov.sample(q.data[i], val, grad);
               const double diff = fixed.data[i] - val;
               return diff * diff;
           })
           * dV;
}

// p_new = p + dt*force; returns max over voxels/axes of |p_new_a| / spacing_a
// (the per-unit-time displacement in voxels).
double momentum_update(const VectorVolume &p, const VectorVolume &force, double dt,
                       const GridGeometry &g, VectorVolume &p_new) {
    const size_t n = p.data.size();
    const double ih[3] = {1.0 / g.spacing[0], 1.0 / g.spacing[1], 1.0 / g.spacing[2]};
    return deterministic_max(n, [&](size_t i) {
        const Vec3 v = p.data[i] + force.data[i] * dt;
        p_new.data[i] = v;
        double m = std::fabs(v.x) * ih[0];
        m = std::max(m, std::fabs(v.y) * ih[1]);
        m = std::max(m, std::fabs(v.z) * ih[2]);
        return m;
    });
}

// q += dt * vel; J += dt * grad(vel); returns {min,max} det(J) (min also turns
// NaN dets into -inf so the guard trips on any non-finite Jacobian).
std::pair<double, double> advance_q_jac(VectorVolume &q, MatrixVolume &jac,
                                        const VectorVolume &vel, double dt) {
    const GridGeometry &g = q.geometry;
    const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
    const size_t n = q.data.size();
    parallel_for(n, [&](size_t a, size_t b) {
        for (size_t i = a; i < b; ++i) q.data[i] += vel.data[i] * dt;
    });
    const double ih[3] = {1.0 / g.spacing[0], 1.0 / g.spacing[1], 1.0 / g.spacing[2]};
    const size_t blocks = (static_cast<size_t>(nz) * ny + 0);
    std::vector<double> mins(blocks, HUGE_VAL), maxs(blocks, -HUGE_VAL);
    parallel_for(static_cast<size_t>(nz), [&](size_t k0, size_t k1) {
        for (int k = static_cast<int>(k0); k < static_cast<int>(k1); ++k)
            for (int j = 0; j < ny; ++j) {
                double dmin = HUGE_VAL, dmax = -HUGE_VAL;
                for (int i = 0; i < nx; ++i) {
                    Mat3 dp; // dp(r,c) = d vel_r / d x_c
                    for (int r = 0; r < 3; ++r) {
                        double gx, gy, gz;
                        if (i == 0)           gx = (vel.at(1, j, k)[r] - vel.at(0, j, k)[r]) * ih[0];
                        else if (i == nx - 1) gx = (vel.at(nx - 1, j, k)[r] - vel.at(nx - 2, j, k)[r]) * ih[0];
                        else                  gx = (vel.at(i + 1, j, k)[r] - vel.at(i - 1, j, k)[r]) * (0.5 * ih[0]);
                        if (j == 0)           gy = (vel.at(i, 1, k)[r] - vel.at(i, 0, k)[r]) * ih[1];
                        else if (j == ny - 1) gy = (vel.at(i, ny - 1, k)[r] - vel.at(i, ny - 2, k)[r]) * ih[1];
                        else                  gy = (vel.at(i, j + 1, k)[r] - vel.at(i, j - 1, k)[r]) * (0.5 * ih[1]);
                        if (k == 0)           gz = (vel.at(i, j, 1)[r] - vel.at(i, j, 0)[r]) * ih[2];
                        else if (k == nz - 1) gz = (vel.at(i, j, nz - 1)[r] - vel.at(i, j, nz - 2)[r]) * ih[2];
                        else                  gz = (vel.at(i, j, k + 1)[r] - vel.at(i, j, k - 1)[r]) * (0.5 * ih[2]);
                        dp(r, 0) = gx;
                        dp(r, 1) = gy;
                        dp(r, 2) = gz;
                    }
                    Mat3 &J = jac.at(i, j, k);
                    J = J + dp * dt;
                    const double det = J.det();
                    if (std::isfinite(det)) {
                        dmin = std::min(dmin, det);
                        dmax = std::max(dmax, det);
                    } else {
                        dmin = -HUGE_VAL;
                    }
                }
                const size_t row = static_cast<size_t>(k) * ny + static_cast<size_t>(j);
                mins[row] = dmin;
                maxs[row] = dmax;
            }
    });
    double dmin = HUGE_VAL, dmax = -HUGE_VAL;
    for (size_t r = 0; r < blocks; ++r) {
        dmin = std::min(dmin, mins[r]);
        dmax = std::max(dmax, maxs[r]);
    }
    return {dmin, dmax};
}

} // namespace

double hamiltonian_energy(const PhaseSpaceField &state, const ScalarVolume &fixed,
                          const ScalarVolume &moving) {
    if (!state.geometry.same_grid(fixed.geometry))
        throw std::invalid_argument("hamiltonian_energy: state/fixed geometry mismatch");
    const size_t n = state.q.data.size();
    const double sum = deterministic_sum(n, [&](size_t i) {
        const double val = sample_trilinear(moving, state.q.data[i]);
        const double diff = fixed.data[i] - val;
        const Vec3 &p = state.p.data[i];
        return p.dot(p) + diff * diff;
    });
    // (1/2V) * sum * dV with V = N * dV.
    return sum / (2.0 * static_cast<double>(n));
}

void flow_step(PhaseSpaceField &state, const ScalarVolume &fixed, const ScalarVolume &moving,
               double dt, const TransitionKernel *regularizer, bool nonlocal_coordinate_update) {
    if (!state.geometry.same_grid(fixed.geometry) || !state.geometry.same_grid(moving.geometry))
        throw std::invalid_argument("flow_step: geometry mismatch");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("flow_step: dt must be positive");

    const MovingField mov(moving);
    VectorVolume force(state.geometry);
    force_and_mismatch(fixed, mov, state.q, state.jac, force);
    if (regularizer) force = nonlocal_force(force, *regularizer);

    VectorVolume p_new(state.geometry);
    momentum_update(state.p, force, dt, state.geometry, p_new);
    state.p = p_new;

    if (regularizer && nonlocal_coordinate_update) {
        // Alternative coordinate form: dq/dt = rho * p; J tracks the same velocity.
        const VectorVolume vel = nonlocal_force(state.p, *regularizer);
        advance_q_jac(state.q, state.jac, vel, dt);
    } else {
        advance_q_jac(state.q, state.jac, state.p, dt);
    }
    state.t += dt;
}

GuardReport jacobian_guard(const MatrixVolume &jac, double epsilon) {
    if (!(epsilon > 0.0) || !(epsilon < 1.0))
        throw std::invalid_argument("jacobian_guard: epsilon must lie in (0, 1)");
    GuardReport rep;
    rep.min_det = HUGE_VAL;
    rep.max_det = -HUGE_VAL;
    const double hi = 1.0 / epsilon;
    for (size_t i = 0; i < jac.data.size(); ++i) {
        const double det = jac.data[i].det();
        if (std::isfinite(det)) {
            rep.min_det = std::min(rep.min_det, det);
            rep.max_det = std::max(rep.max_det, det);
        }
        if (!(det > epsilon) || !(det < hi)) rep.violations.push_back(i);
    }
    rep.ok = rep.violations.empty();
    return rep;
}

void shell_restart(PhaseSpaceField &state, DeformationMap &map, int steps, double energy_end,
                   double rmsd_end, bool keep_shell_fields) {
    if (!state.geometry.same_grid(map.geometry))
        throw std::invalid_argument("shell_restart: state/map geometry mismatch");
    ShellRecord rec;
    rec.index = static_cast<int>(map.shells.size());
    rec.steps = steps;
    rec.duration = state.t;
    rec.energy_end = energy_end;
    rec.rmsd_end = rmsd_end;
    if (keep_shell_fields) {
        rec.final_q = state.q;
        rec.final_jac = state.jac;
    }
    map.shells.push_back(std::move(rec));

    const size_t n = state.q.data.size();
    parallel_for(n, [&](size_t a, size_t b) {
        for (size_t i = a; i < b; ++i) {
            map.jac_total.data[i] = state.jac.data[i].mul(map.jac_total.data[i]);
            map.q_total.data[i] = state.q.data[i];
            state.p.data[i] = Vec3{};
            state.jac.data[i] = Mat3::identity();
        }
    });
    state.t = 0.0;
}

bool convergence_check(const ScalarVolume &fixed, const ScalarVolume &moving,
                       const VectorVolume &q_new, const VectorVolume &q_prev) {
    if (!fixed.geometry.same_grid(q_new.geometry) || !fixed.geometry.same_grid(q_prev.geometry))
        throw std::invalid_argument("convergence_check: geometry mismatch");
    const size_t n = fixed.data.size();
    const double s = deterministic_sum(n, [&](size_t i) {
        const double dn = fixed.data[i] - sample_trilinear(moving, q_new.data[i]);
        const double dp = fixed.data[i] - sample_trilinear(moving, q_prev.data[i]);
        return dn * dn - dp * dp;
    });
    return s * fixed.geometry.voxel_volume() < 0.0;
}

Mat3 metric_tensor(const Mat3 &jac) {
    const Mat3 jinv = jac.inverse();
    return jinv.transposed().mul(jinv);
}

MatrixVolume metric_field(const MatrixVolume &jac) {
    MatrixVolume out(jac.geometry);
    parallel_for(jac.data.size(), [&](size_t a, size_t b) {
        for (size_t i = a; i < b; ++i) out.data[i] = metric_tensor(jac.data[i]);
    });
    return out;
}

double curve_length(const std::vector<Vec3> &samples, const MatrixVolume &G) {
    if (samples.size() < 2)
        throw std::invalid_argument("curve_length: need at least two samples");
    const GridGeometry &g = G.geometry;
    auto sample_G = [&](const Vec3 &w) {
        const Vec3 u = g.to_voxel(w);
        const double slack = 1e-9;
        for (int a = 0; a < 3; ++a)
            if (u[a] < -slack || u[a] > g.dims[a] - 1 + slack)
                throw std::invalid_argument("curve_length: sample outside domain");
        const Taps t = make_taps(g, w);
        const double wx1 = t.fx, wx0 = 1.0 - t.fx;
        const double wy1 = t.fy, wy0 = 1.0 - t.fy;
        const double wz1 = t.fz, wz0 = 1.0 - t.fz;
        const double wgt[8] = {wx0 * wy0 * wz0, wx1 * wy0 * wz0, wx0 * wy1 * wz0, wx1 * wy1 * wz0,
                               wx0 * wy0 * wz1, wx1 * wy0 * wz1, wx0 * wy1 * wz1, wx1 * wy1 * wz1};
        Mat3 out;
        for (int e = 0; e < 9; ++e) {
            double acc = 0.0;
            for (int c = 0; c < 8; ++c) acc += wgt[c] * G.data[t.c[c]].m[static_cast<size_t>(e)];
            out.m[static_cast<size_t>(e)] = acc;
        }
        return out;
    };

    const size_t n = samples.size();
    auto derivative = [&](size_t i) {
        if (i == 0) return samples[1] - samples[0];
        if (i == n - 1) return samples[n - 1] - samples[n - 2];
        return (samples[i + 1] - samples[i - 1]) * 0.5;
    };
    double length = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const Vec3 d = derivative(i);
        const Mat3 Gi = sample_G(samples[i]);
        const double f = std::sqrt(std::max(d.dot(Gi.mul(d)), 0.0));
        length += (i == 0 || i == n - 1) ? 0.5 * f : f;
    }
    return length;
}

RegistrationResult register_volumes(const ScalarVolume &fixed, const ScalarVolume &moving,
                                    const RegistrationConfig &cfg, const DeformationMap *initial) {
    if (!fixed.geometry.same_grid(moving.geometry))
        throw std::invalid_argument("register_volumes: fixed/moving geometry mismatch "
                                    "(resample the moving volume first)");
    if (!(cfg.epsilon > 0.0) || !(cfg.epsilon < 1.0))
        throw std::invalid_argument("register_volumes: epsilon must lie in (0, 1)");
    if (cfg.max_shells < 1 || cfg.max_steps_per_shell < 1)
        throw std::invalid_argument("register_volumes: shell/step budgets must be >= 1");
    if (cfg.regularizer && !cfg.regularizer->psi.geometry.same_grid(fixed.geometry))
        throw std::invalid_argument("register_volumes: regularizer geometry mismatch");

    const GridGeometry &g = fixed.geometry;
    const size_t n = g.voxel_count();
    const double V = static_cast<double>(n) * g.voxel_volume();
    const double det_hi = 1.0 / cfg.epsilon;
    const double disp_cap = cfg.dt_max_displacement; // voxels per step

    const MovingField mov(moving);

    RegistrationResult res;
    res.map = initial ? *initial : DeformationMap::identity(g);
    PhaseSpaceField state = PhaseSpaceField::identity(g);
    state.q = res.map.q_total;

    VectorVolume force(g), p_new(g);
    PhaseSpaceField backup = state; // pre-step state, restored on guard halvings

    auto to_rmsd = [&](double mismatch) { return std::sqrt(std::max(mismatch, 0.0) / V); };
    auto to_energy = [&](double mismatch) { return mismatch / (2.0 * V); };

    double m_shell_start = mismatch_integral(fixed, mov, state.q);
    res.rmsd_before = to_rmsd(m_shell_start);
    res.stop_reason = "max_shells";
    double dt = cfg.dt_init;

    const int first_shell = static_cast<int>(res.map.shells.size());
    for (int shell = first_shell; shell < first_shell + cfg.max_shells; ++shell) {
        int steps = 0;
        dt = cfg.dt_init; // momenta restart at zero, so the step size does too

        // Best state seen this shell.  The flow may climb transiently (momentum
        // carries q across intensity plateaus where the mismatch is flat or
        // rising); the shell ends by guard trip, budget, or stall_patience
        // steps without a new best, and rewinds to the best.
        double m_best = std::numeric_limits<double>::infinity();
        VectorVolume best_q = state.q;
        MatrixVolume best_jac = state.jac;
        double best_t = 0.0;
        int best_steps = 0;
        int since_best = 0;
        bool guard_ended = false, stalled = false;

        while (steps < cfg.max_steps_per_shell) {
            const double m_cur = force_and_mismatch(fixed, mov, state.q, state.jac, force);
            if (!std::isfinite(m_cur)) {
                char msg[128];
                std::snprintf(msg, sizeof(msg),
                              "register_volumes: non-finite mismatch at shell %d step %d", shell, steps);
                throw std::runtime_error(msg);
            }
            if (m_cur < m_best * (1.0 - 1e-12)) {
                m_best = m_cur;
                best_q = state.q;
                best_jac = state.jac;
                best_t = state.t;
                best_steps = steps;
                since_best = 0;
            } else if (++since_best > cfg.stall_patience) {
                stalled = true;
                break;
            }

            if (cfg.regularizer) force = nonlocal_force(force, *cfg.regularizer);

            backup = state;
            dt = std::min(dt * cfg.dt_growth, cfg.dt_max);

            // Displacement cap: shrink dt until the per-step motion is at most
            // disp_cap voxels on every axis.
            double vmax = momentum_update(state.p, force, dt, g, p_new);
            for (int it = 0; it < 8 && dt * vmax > disp_cap; ++it) {
                dt *= disp_cap / (dt * vmax) * 0.999;
                vmax = momentum_update(state.p, force, dt, g, p_new);
            }

            bool committed = false;
            for (int halving = 0; halving <= cfg.max_guard_halvings; ++halving) {
                state.p = p_new;
                std::pair<double, double> dets;
                if (cfg.regularizer && cfg.nonlocal_coordinate_update) {
                    const VectorVolume vel = nonlocal_force(state.p, *cfg.regularizer);
                    dets = advance_q_jac(state.q, state.jac, vel, dt);
                } else {
                    dets = advance_q_jac(state.q, state.jac, state.p, dt);
                }
                if (dets.first > cfg.epsilon && dets.second < det_hi) {
                    state.t += dt;
                    ++steps;
                    committed = true;
                    if (cfg.step_observer) cfg.step_observer(state);
                    break;
                }
                // Guard trip: restore, halve dt, retry the same step.
                state = backup;
                dt *= 0.5;
                momentum_update(state.p, force, dt, g, p_new);
            }
            if (!committed) {
                // Guard still trips at the smallest dt: the shell ends here.
                guard_ended = true;
                break;
            }
        }

        if (!guard_ended && !stalled) {
            // Step budget exhausted: the last committed state is still unscored.
            const double m_fin = mismatch_integral(fixed, mov, state.q);
            if (std::isfinite(m_fin) && m_fin < m_best * (1.0 - 1e-12)) {
                m_best = m_fin;
                best_q = state.q;
                best_jac = state.jac;
                best_t = state.t;
                best_steps = steps;
            }
        }

        // Rewind to the shell's best state (p is discarded at restart anyway).
        state.q = best_q;
        state.jac = best_jac;
        state.t = best_t;
        const double m_end = m_best;
        res.total_steps += steps;

        const char *shell_end = guard_ended ? "guard" : (stalled ? "stall" : "budget");
        if (m_end < m_shell_start) {
            const double improvement = (m_shell_start - m_end) / std::max(m_shell_start, 1e-300);
            shell_restart(state, res.map, best_steps, to_energy(m_end), to_rmsd(m_end),
                          cfg.keep_shell_fields);
            if (cfg.verbose)
                std::fprintf(stderr, "shell %d: steps=%d/%d end=%s duration=%.4f rmsd=%.6g\n",
                             shell, best_steps, steps, shell_end,
                             res.map.shells.back().duration, to_rmsd(m_end));
            m_shell_start = m_end;
            if (m_end == 0.0) {
                res.stop_reason = "exact_match";
                res.converged = true;
                break;
            }
            if (improvement < cfg.convergence_tol) {
                res.stop_reason = "converged";
                res.converged = true;
                break;
            }
        } else {
            // No strict decrease: reject the shell and terminate (Eq. 12 rule).
            if (cfg.verbose)
                std::fprintf(stderr, "shell %d rejected: steps=%d end=%s rmsd=%.6g (>= %.6g)\n",
                             shell, steps, shell_end, to_rmsd(m_end), to_rmsd(m_shell_start));
            state.q = res.map.q_total;
            state.p = VectorVolume(g);
            state.jac = MatrixVolume(g, Mat3::identity());
            state.t = 0.0;
            res.stop_reason = res.map.shells.empty() ? "no_initial_decrease" : "no_decrease";
            res.converged = true;
            break;
        }
    }

    res.rmsd_after = to_rmsd(m_shell_start);
    return res;
}

InversionResult invert_map(const ScalarVolume &fixed, const ScalarVolume &moving,
                           const RegistrationConfig &cfg, const DeformationMap &forward) {
    InversionResult inv;
    inv.run = register_volumes(moving, fixed, cfg);
    inv.map = inv.run.map;

    const GridGeometry &g = fixed.geometry;
    const size_t n = g.voxel_count();
    const double ih[3] = {1.0 / g.spacing[0], 1.0 / g.spacing[1], 1.0 / g.spacing[2]};
    const VectorVolume &q_fwd = forward.q_total;
    const VectorVolume &q_inv = inv.map.q_total;
    const double ssq = deterministic_sum(n, [&](size_t i) {
        const Vec3 comp = sample_trilinear(q_fwd, q_inv.data[i]);
        const size_t k = i / (static_cast<size_t>(g.dims[0]) * static_cast<size_t>(g.dims[1]));
        const size_t rem = i % (static_cast<size_t>(g.dims[0]) * static_cast<size_t>(g.dims[1]));
        const size_t j = rem / static_cast<size_t>(g.dims[0]);
        const size_t ii = rem % static_cast<size_t>(g.dims[0]);
        const Vec3 x = g.world(static_cast<int>(ii), static_cast<int>(j), static_cast<int>(k));
        const Vec3 r = comp - x;
        const double rx = r.x * ih[0], ry = r.y * ih[1], rz = r.z * ih[2];
        return rx * rx + ry * ry + rz * rz;
    });
    inv.composition_residual_voxels = std::sqrt(ssq / static_cast<double>(n));
    return inv;
}

ScalarVolume warp_volume(const ScalarVolume &v, const VectorVolume &q) {
    ScalarVolume out(q.geometry);
    parallel_for(q.data.size(), [&](size_t a, size_t b) {
        for (size_t i = a; i < b; ++i) out.data[i] = sample_trilinear(v, q.data[i]);
    });
    return out;
}

ScalarVolume warp_volume(const ScalarVolume &v, const DeformationMap &map) {
    return warp_volume(v, map.q_total);
}

} // namespace symreg
