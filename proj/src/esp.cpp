// esp.cpp - coupling kernels, dominant eigenpair, transition-kernel application.
#include "symreg/esp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "symreg/parallel.hpp"

namespace symreg {

namespace {

std::vector<std::array<int, 3>> positive_directions(Connectivity c) {
    const int max_taxi = (c == Connectivity::faces6) ? 1 : (c == Connectivity::edges18) ? 2 : 3;
    std::vector<std::array<int, 3>> dirs;
    for (int dk = -1; dk <= 1; ++dk)
        for (int dj = -1; dj <= 1; ++dj)
            for (int di = -1; di <= 1; ++di) {
                const int taxi = std::abs(di) + std::abs(dj) + std::abs(dk);
                if (taxi == 0 || taxi > max_taxi) continue;
                // keep one representative per +/- pair
                if (dk > 0 || (dk == 0 && dj > 0) || (dk == 0 && dj == 0 && di > 0))
                    dirs.push_back({di, dj, dk});
            }
    return dirs;
}

void validate_spd(const Mat3 &S) {
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (std::fabs(S(i, j) - S(j, i)) > 1e-12 * (std::fabs(S(i, j)) + 1.0))
                throw std::invalid_argument("gaussian coupling: S must be symmetric");
    if (!(S(0, 0) > 0.0 && S(1, 1) > 0.0 && S(2, 2) > 0.0 && S.det() > 0.0))
        throw std::invalid_argument("gaussian coupling: S must be positive definite");
}

inline int wrap(int i, int n) {
    i %= n;
    return i < 0 ? i + n : i;
}

} // namespace

CouplingKernel build_adjacency_coupling(const GridGeometry &g, Connectivity c) {
    g.validate();
    CouplingKernel q;
    q.kind = CouplingKind::adjacency;
    q.geometry = g;
    q.connectivity = c;
    q.dirs = positive_directions(c);
    return q;
}

CouplingKernel build_image_weighted_coupling(const ScalarVolume &image, double beta,
                                             Connectivity c) {
    image.geometry.validate();
    if (!(beta >= 0.0) || !std::isfinite(beta))
        throw std::invalid_argument("image-weighted coupling: beta must be finite and >= 0");
    CouplingKernel q;
    q.kind = CouplingKind::image_weighted;
    q.geometry = image.geometry;
    q.connectivity = c;
    q.beta = beta;
    q.dirs = positive_directions(c);
    const GridGeometry &g = q.geometry;
    const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
    q.dir_weights.resize(q.dirs.size());
    for (size_t d = 0; d < q.dirs.size(); ++d) {
        q.dir_weights[d].assign(g.voxel_count(), 0.0);
        const auto dir = q.dirs[d];
        parallel_for(static_cast<size_t>(nz), [&](size_t k0, size_t k1) {
            for (int k = static_cast<int>(k0); k < static_cast<int>(k1); ++k)
                for (int j = 0; j < ny; ++j)
                    for (int i = 0; i < nx; ++i) {
                        const int i2 = i + dir[0], j2 = j + dir[1], k2 = k + dir[2];
                        if (i2 < 0 || i2 >= nx || j2 < 0 || j2 >= ny || k2 < 0 || k2 >= nz) continue;
                        const double diff = std::fabs(image.at(i, j, k) - image.at(i2, j2, k2));
                        q.dir_weights[d][g.index(i, j, k)] = std::exp(-beta * diff);
                    }
        });
    }
    return q;
}

CouplingKernel build_gaussian_coupling(const GridGeometry &g, const Mat3 &S, double n_sigma,
                                       bool periodic) {
    g.validate();
    validate_spd(S);
    if (!(n_sigma > 0.0)) throw std::invalid_argument("gaussian coupling: n_sigma must be > 0");
    CouplingKernel q;
    q.kind = CouplingKind::gaussian_stationary;
    q.geometry = g;
    q.S = S;
    q.periodic = periodic;
    q.separable = std::fabs(S(0, 1)) < 1e-15 && std::fabs(S(0, 2)) < 1e-15 && std::fabs(S(1, 2)) < 1e-15;

    // Per-axis truncation radius in voxels.  For diagonal S the implied sigma is
    // 1/sqrt(2 S_aa); the general-SPD bounding half-width is n*sqrt((S^-1)_aa/2).
    const Mat3 Sinv = S.inverse();
    for (int a = 0; a < 3; ++a) {
        const double half_mm = q.separable ? n_sigma / std::sqrt(2.0 * S(a, a))
                                           : n_sigma * std::sqrt(std::max(Sinv(a, a), 0.0) / 2.0);
        int r = static_cast<int>(std::ceil(half_mm / g.spacing[a]));
        r = std::max(r, 0);
        const int cap = periodic ? (g.dims[a] - 1) / 2 : g.dims[a] - 1;
        q.radius[a] = std::min(r, cap);
    }

    if (q.separable) {
        for (int a = 0; a < 3; ++a) {
            q.axis_taps[a].resize(static_cast<size_t>(2 * q.radius[a] + 1));
            for (int t = -q.radius[a]; t <= q.radius[a]; ++t) {
                const double d = t * g.spacing[a];
                q.axis_taps[a][static_cast<size_t>(t + q.radius[a])] = std::exp(-S(a, a) * d * d);
            }
        }
    } else {
        for (int dk = -q.radius[2]; dk <= q.radius[2]; ++dk)
            for (int dj = -q.radius[1]; dj <= q.radius[1]; ++dj)
                for (int di = -q.radius[0]; di <= q.radius[0]; ++di) {
                    const Vec3 d{di * g.spacing[0], dj * g.spacing[1], dk * g.spacing[2]};
                    q.box_offsets.push_back({di, dj, dk});
                    q.box_weights.push_back(std::exp(-d.dot(S.mul(d))));
                }
    }
    return q;
}

namespace {

void matvec_graph(const CouplingKernel &q, const std::vector<double> &in, std::vector<double> &out) {
    const GridGeometry &g = q.geometry;
    const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
    const bool weighted = q.kind == CouplingKind::image_weighted;
    parallel_for(static_cast<size_t>(nz), [&](size_t k0, size_t k1) {
        for (int k = static_cast<int>(k0); k < static_cast<int>(k1); ++k)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i) {
                    double acc = 0.0;
                    for (size_t d = 0; d < q.dirs.size(); ++d) {
                        const auto dir = q.dirs[d];
                        // forward neighbor x + dir (weight stored at x)
                        {
                            const int i2 = i + dir[0], j2 = j + dir[1], k2 = k + dir[2];
                            if (i2 >= 0 && i2 < nx && j2 >= 0 && j2 < ny && k2 >= 0 && k2 < nz) {
                                const double w = weighted ? q.dir_weights[d][g.index(i, j, k)] : 1.0;
                                acc += w * in[g.index(i2, j2, k2)];
                            }
                        }
                        // backward neighbor x - dir (weight stored at x - dir)
                        {
                            const int i2 = i - dir[0], j2 = j - dir[1], k2 = k - dir[2];
                            if (i2 >= 0 && i2 < nx && j2 >= 0 && j2 < ny && k2 >= 0 && k2 < nz) {
                                const double w = weighted ? q.dir_weights[d][g.index(i2, j2, k2)] : 1.0;
                                acc += w * in[g.index(i2, j2, k2)];
                            }
                        }
                    }
                    out[g.index(i, j, k)] = acc;
                }
    });
}

// One separable sweep along axis `axis`.
void sweep_axis(const GridGeometry &g, int axis, const std::vector<double> &taps, int radius,
                bool periodic, const std::vector<double> &in, std::vector<double> &out) {
    const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
    const int n_axis = g.dims[axis];
    parallel_for(static_cast<size_t>(nz), [&](size_t k0, size_t k1) {
        for (int k = static_cast<int>(k0); k < static_cast<int>(k1); ++k)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i) {
                    const int pos = (axis == 0) ? i : (axis == 1) ? j : k;
                    double acc = 0.0;
                    for (int t = -radius; t <= radius; ++t) {
                        int p = pos + t;
                        if (periodic) p = wrap(p, n_axis);
                        else if (p < 0 || p >= n_axis) continue;
                        const size_t idx = (axis == 0)   ? g.index(p, j, k)
                                           : (axis == 1) ? g.index(i, p, k)
                                                         : g.index(i, j, p);
                        acc += taps[static_cast<size_t>(t + radius)] * in[idx];
                    }
                    out[g.index(i, j, k)] = acc;
                }
    });
}

void matvec_gaussian(const CouplingKernel &q, const std::vector<double> &in, std::vector<double> &out) {
    const GridGeometry &g = q.geometry;
    if (q.separable) {
        std::vector<double> tmp(in.size());
        sweep_axis(g, 0, q.axis_taps[0], q.radius[0], q.periodic, in, out);
        sweep_axis(g, 1, q.axis_taps[1], q.radius[1], q.periodic, out, tmp);
        sweep_axis(g, 2, q.axis_taps[2], q.radius[2], q.periodic, tmp, out);
        return;
    }
    const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
    parallel_for(static_cast<size_t>(nz), [&](size_t k0, size_t k1) {
        for (int k = static_cast<int>(k0); k < static_cast<int>(k1); ++k)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i) {
                    double acc = 0.0;
                    for (size_t o = 0; o < q.box_offsets.size(); ++o) {
                        int i2 = i + q.box_offsets[o][0];
                        int j2 = j + q.box_offsets[o][1];
                        int k2 = k + q.box_offsets[o][2];
                        if (q.periodic) {
                            i2 = wrap(i2, nx); j2 = wrap(j2, ny); k2 = wrap(k2, nz);
                        } else if (i2 < 0 || i2 >= nx || j2 < 0 || j2 >= ny || k2 < 0 || k2 >= nz) {
                            continue;
                        }
                        acc += q.box_weights[o] * in[g.index(i2, j2, k2)];
                    }
                    out[g.index(i, j, k)] = acc;
                }
    });
}

} // namespace

void coupling_matvec(const CouplingKernel &q, const std::vector<double> &in, std::vector<double> &out) {
    if (in.size() != q.geometry.voxel_count())
        throw std::invalid_argument("coupling_matvec: size mismatch");
    out.resize(in.size());
    if (q.kind == CouplingKind::gaussian_stationary)
        matvec_gaussian(q, in, out);
    else
        matvec_graph(q, in, out);
}

EspSolution dominant_eigenpair(const CouplingKernel &q, double tol, int max_iter,
                               bool require_convergence) {
    if (!(tol > 0.0) || max_iter < 1)
        throw std::invalid_argument("dominant_eigenpair: tol must be > 0 and max_iter >= 1");
    const size_t n = q.geometry.voxel_count();
    std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
    std::vector<double> qv(n), w(n);

    double lambda = 0.0, lambda_prev = HUGE_VAL;
    bool converged = false;
    int it = 0;
    for (; it < max_iter; ++it) {
        coupling_matvec(q, v, qv);
        // Rayleigh quotient of Q (v is unit length).
        lambda = deterministic_sum(n, [&](size_t i) { return v[i] * qv[i]; });
        // Shifted update w = (Q + I) v keeps the dominant mode strictly separated.
        const double nrm2 = deterministic_sum(n, [&](size_t i) {
            const double wi = qv[i] + v[i];
            return wi * wi;
        });
        const double inv_nrm = 1.0 / std::sqrt(nrm2);
        double vec_diff = 0.0, vmax = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double wi = (qv[i] + v[i]) * inv_nrm;
            vec_diff = std::max(vec_diff, std::fabs(wi - v[i]));
            vmax = std::max(vmax, std::fabs(wi));
            w[i] = wi;
        }
        std::swap(v, w);
        if (std::fabs(lambda - lambda_prev) <= tol * std::fabs(lambda) && vec_diff <= tol * vmax) {
            converged = true;
            ++it;
            break;
        }
        lambda_prev = lambda;
    }

    coupling_matvec(q, v, qv);
    lambda = deterministic_sum(n, [&](size_t i) { return v[i] * qv[i]; });
    double residual = 0.0;
    for (size_t i = 0; i < n; ++i)
        residual = std::max(residual, std::fabs(qv[i] - lambda * v[i]));
    if (lambda > 0.0) residual /= lambda;

    if (!converged && require_convergence) {
        char msg[160];
        std::snprintf(msg, sizeof(msg),
                      "dominant_eigenpair: no convergence within %d iterations (residual=%.3e)",
                      max_iter, residual);
        throw std::runtime_error(msg);
    }

    EspSolution sol;
    sol.lambda = lambda;
    sol.iterations = it;
    sol.converged = converged;
    sol.residual = residual;
    sol.psi = ScalarVolume(q.geometry);
    // Fix the overall sign so psi is the positive Perron vector.
    double mean = deterministic_sum(n, [&](size_t i) { return v[i]; });
    const double sign = (mean < 0.0) ? -1.0 : 1.0;
    for (size_t i = 0; i < n; ++i) sol.psi.data[i] = sign * v[i];
    sol.mu = ScalarVolume(q.geometry);
    const double psi2 = deterministic_sum(n, [&](size_t i) { return sol.psi.data[i] * sol.psi.data[i]; });
    for (size_t i = 0; i < n; ++i) sol.mu.data[i] = sol.psi.data[i] * sol.psi.data[i] / psi2;
    return sol;
}

ScalarVolume equilibrium_probability(const EspSolution &s) { return s.mu; }

GaussianEigen gaussian_kernel_eigen(const Mat3 &S) {
    validate_spd(S);
    GaussianEigen g;
    const double pi = 3.14159265358979323846;
    g.lambda = std::sqrt(pi * pi * pi / S.det());
    g.psi_constant = true;
    return g;
}

TransitionKernel make_transition_kernel(CouplingKernel q, const EspSolution &sol) {
    TransitionKernel t;
    t.lambda = sol.lambda;
    t.psi = sol.psi;
    t.coupling = std::make_shared<CouplingKernel>(std::move(q));
    return t;
}

TransitionKernel make_transition_kernel(CouplingKernel q, double tol, int max_iter,
                                        bool require_convergence) {
    EspSolution sol = dominant_eigenpair(q, tol, max_iter, require_convergence);
    return make_transition_kernel(std::move(q), sol);
}

ScalarVolume transition_apply(const ScalarVolume &s, const TransitionKernel &t) {
    if (!s.geometry.same_grid(t.psi.geometry))
        throw std::invalid_argument("transition_apply: geometry mismatch");
    const size_t n = s.data.size();
    std::vector<double> u(n), qu(n);
    for (size_t i = 0; i < n; ++i) u[i] = t.psi.data[i] * s.data[i];
    coupling_matvec(*t.coupling, u, qu);
    ScalarVolume out(s.geometry);
    const double inv_lambda = 1.0 / t.lambda;
    for (size_t i = 0; i < n; ++i) out.data[i] = qu[i] * inv_lambda / t.psi.data[i];
    return out;
}

VectorVolume nonlocal_force(const VectorVolume &f, const TransitionKernel &t) {
    if (!f.geometry.same_grid(t.psi.geometry))
        throw std::invalid_argument("nonlocal_force: geometry mismatch");
    const size_t n = f.data.size();
    VectorVolume out(f.geometry);
    std::vector<double> u(n), qu(n);
    for (int c = 0; c < 3; ++c) {
        for (size_t i = 0; i < n; ++i) u[i] = t.psi.data[i] * f.data[i][c];
        coupling_matvec(*t.coupling, u, qu);
        const double inv_lambda = 1.0 / t.lambda;
        for (size_t i = 0; i < n; ++i) out.data[i][c] = qu[i] * inv_lambda / t.psi.data[i];
    }
    return out;
}

} // namespace symreg
