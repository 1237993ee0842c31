// esp.hpp - entropy-spectrum phase-space regularization.
//
// A symmetric nonnegative coupling density Q over grid voxels defines a
// dominant eigenpair  lambda * psi = Q psi  (psi > 0, sum psi^2 = 1).  From it
// a row-stochastic transition kernel
//     rho(x', x) = Q(x, x') psi(x') / (lambda psi(x))
// is derived, whose stationary distribution is mu = psi^2.  The flow module
// uses rho as a structure-adapted smoother: the nonlocal force is the
// rho-weighted average of the local force field.
#pragma once

#include <array>
#include <memory>
#include <vector>

#include "symreg/volume.hpp"

namespace symreg {

enum class CouplingKind { adjacency, image_weighted, gaussian_stationary };
enum class Connectivity { faces6 = 6, edges18 = 18, corners26 = 26 };

// Symmetric coupling density.  Graph kinds (adjacency, image_weighted) couple
// voxels within the chosen neighbor connectivity; the gaussian_stationary kind
// couples voxels by exp(-d^T S d) over a truncated box stencil (d in mm).
struct CouplingKernel {
    CouplingKind kind = CouplingKind::adjacency;
    GridGeometry geometry;
    Connectivity connectivity = Connectivity::faces6;

    // image_weighted: weight exp(-beta |I(x) - I(x')|) cached per direction; entry
    // dir_weights[d][index(x)] couples x with x + dirs[d] (stored where in bounds).
    double beta = 1.0;
    std::vector<std::array<int, 3>> dirs;
    std::vector<std::vector<double>> dir_weights;

    // gaussian_stationary parameters.
    Mat3 S = Mat3::identity();   // SPD, units 1/mm^2
    bool periodic = false;
    bool separable = false;      // true when S is diagonal: three 1-D sweeps
    std::array<int, 3> radius{0, 0, 0};
    std::array<std::vector<double>, 3> axis_taps; // separable: tap t at offset t - radius[a]
    std::vector<std::array<int, 3>> box_offsets;  // general SPD fallback
    std::vector<double> box_weights;
};

CouplingKernel build_adjacency_coupling(const GridGeometry &g,
                                        Connectivity c = Connectivity::faces6);
CouplingKernel build_image_weighted_coupling(const ScalarVolume &image, double beta,
                                             Connectivity c = Connectivity::faces6);
// n_sigma: per-axis truncation radius in units of the Gaussian sigma implied by S
// (sigma_a = 1/sqrt(2 S_aa) for diagonal S).  Periodic stencils are capped at
// (dims-1)/2 per axis so wrapped offsets never alias.
CouplingKernel build_gaussian_coupling(const GridGeometry &g, const Mat3 &S,
                                       double n_sigma = 4.0, bool periodic = false);

// out = Q * in.  Gather-only: each output voxel reads its stencil, so the
// operation parallelizes without write conflicts and is worker-count-invariant.
void coupling_matvec(const CouplingKernel &q, const std::vector<double> &in,
                     std::vector<double> &out);

struct EspSolution {
    double lambda = 0.0;
    ScalarVolume psi; // dominant eigenvector, positive, sum psi^2 = 1
    ScalarVolume mu;  // equilibrium probability psi^2, sums to 1
    int iterations = 0;
    bool converged = false;
    double residual = 0.0; // max_x |Q psi - lambda psi| / lambda
};

// Shifted power iteration (Q + I keeps the dominant mode strictly separated on
// bipartite graphs) with Rayleigh-quotient eigenvalue estimates.  Converged when
// successive eigenvalue estimates differ by <= tol*lambda and successive iterates
// differ by <= tol in the max norm.  With require_convergence the operation
// throws on exhaustion of max_iter (message carries the residual); otherwise the
// best iterate is returned with converged = false, which is what the flow's
// regularizer setup uses on large grids.
EspSolution dominant_eigenpair(const CouplingKernel &q, double tol = 1e-10,
                               int max_iter = 5000, bool require_convergence = true);

// Equilibrium probability of the associated Markov process: mu = psi^2.
ScalarVolume equilibrium_probability(const EspSolution &s);

// Closed-form eigenpair of the continuum stationary Gaussian coupling
// exp(-d^T S d): lambda = sqrt(pi^3 / det S) with constant psi.
struct GaussianEigen {
    double lambda = 0.0;
    bool psi_constant = true;
};
GaussianEigen gaussian_kernel_eigen(const Mat3 &S);

// rho packaged for application.
struct TransitionKernel {
    std::shared_ptr<const CouplingKernel> coupling;
    double lambda = 0.0;
    ScalarVolume psi;
};

TransitionKernel make_transition_kernel(CouplingKernel q, const EspSolution &sol);
TransitionKernel make_transition_kernel(CouplingKernel q, double tol = 1e-10,
                                        int max_iter = 5000, bool require_convergence = true);

// Applies rho to a scalar channel: out(x) = sum_x' rho-weight(x, x') s(x'),
// evaluated as Q(psi .* s) / (lambda psi).  A constant field is preserved up to
// the eigenpair residual; with exact psi the weights are exactly row-stochastic.
ScalarVolume transition_apply(const ScalarVolume &s, const TransitionKernel &t);

// Componentwise rho application to a force field (the ESP nonlocal force).
VectorVolume nonlocal_force(const VectorVolume &f, const TransitionKernel &t);

} // namespace symreg
