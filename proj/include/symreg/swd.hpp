// swd.hpp - spherical wave decomposition.
//
// Volumes are expanded over a spherical domain of radius a in the orthonormal
// basis  R_ln(r) Y_lm(theta, phi)  with R_ln(r) = j_l(k_ln r) / sqrt(N_ln),
// where k_ln = z_ln / a (z_ln the n-th positive zero of j_l, Dirichlet boundary
// j_l(k a) = 0) and N_ln = (a^3/2) j_{l+1}(z_ln)^2.  Forward coefficients are
//     f_lmn = integral( v(r,theta,phi) R_ln(r) conj(Y_lm) r^2 dr dOmega )
// computed by Gauss-Legendre quadrature in cos(theta), uniform trapezoid in phi
// (evaluated as a direct DFT), and uniform radial shells.  The inverse transform
// synthesizes the series (optionally filtered per mode) onto a target grid.
// Radial and angular profiles and a scale/rotation similarity estimator are
// derived from restricted mode sets.
#pragma once

#include <complex>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "symreg/volume.hpp"

namespace symreg {

struct SwdBasis {
    double a = 0.0; // domain sphere radius, mm
    int l_max = 0;
    int n_max = 0;
    int n_r = 0;     // radial intervals (nodes n_r + 1)
    int n_theta = 0; // Gauss-Legendre nodes in cos(theta)
    int n_phi = 0;   // uniform azimuthal samples

    std::vector<double> zeros; // z_ln, [(l)*n_max + (n-1)]
    std::vector<double> norms; // N_ln, same layout

    std::vector<double> r_nodes, r_weights;         // trapezoid on [0, a]
    std::vector<double> theta_cos, theta_weights;   // GL nodes (as cos values) + weights

    std::vector<double> radial_quad;  // R_ln at quadrature nodes [(mode)*(n_r+1) + i]
    std::vector<double> radial_table; // R_ln on a uniform fine grid for synthesis
    int table_size = 0;

    size_t mode_ln(int l, int n) const {
        return static_cast<size_t>(l) * static_cast<size_t>(n_max) + static_cast<size_t>(n - 1);
    }
    double zero(int l, int n) const { return zeros[mode_ln(l, n)]; }
    double norm(int l, int n) const { return norms[mode_ln(l, n)]; }

    // R_ln(r) by linear interpolation of the fine table (0 outside [0, a]).
    double radial(int l, int n, double r) const;
};

// Builds the basis; quadrature sizes of 0 select defaults: n_theta = 2(l_max+1),
// n_phi = 2 l_max + 1, n_r = 20 * z_max (z_max the largest zero used).  Sizes
// below the Nyquist-style floors (n_theta >= 2(l_max+1), n_phi >= 2 l_max + 1,
// n_r >= z_max) are rejected as too coarse for the requested order.
SwdBasis build_swd_basis(double a, int l_max, int n_max, int n_r = 0, int n_theta = 0,
                         int n_phi = 0);

struct SwdCoefficients {
    std::shared_ptr<const SwdBasis> basis;
    Vec3 center; // expansion center, world mm
    std::vector<std::complex<double>> f; // (l, m = -l..l, n = 1..n_max) lexicographic

    size_t index(int l, int m, int n) const {
        const size_t lm = static_cast<size_t>(l) * static_cast<size_t>(l)
                          + static_cast<size_t>(m + l);
        return lm * static_cast<size_t>(basis->n_max) + static_cast<size_t>(n - 1);
    }
    std::complex<double> at(int l, int m, int n) const { return f[index(l, m, n)]; }
};

// Per-mode multiplier F_lmn: a gain over an (l, n) band, or an arbitrary custom
// multiplier when `custom` is set.
struct FilterSpec {
    int l_min = 0;
    int l_max = std::numeric_limits<int>::max();
    int n_min = 1;
    int n_max = std::numeric_limits<int>::max();
    double gain = 1.0;
    std::function<double(int l, int m, int n)> custom;

    double multiplier(int l, int m, int n) const {
        if (custom) return custom(l, m, n);
        const bool in = l >= l_min && l <= this->l_max && n >= n_min && n <= this->n_max;
        return in ? gain : 0.0;
    }
    static FilterSpec identity() { return FilterSpec{}; }
    static FilterSpec lowpass(int l_hi, int n_hi) {
        FilterSpec f;
        f.l_max = l_hi;
        f.n_max = n_hi;
        return f;
    }
};

// Forward transform about `center` (defaults to the volume's geometric center).
// Grid values are sampled trilinearly at the quadrature points; points beyond
// the volume's inscribed sphere contribute 0.  Each mode is divided by the
// spherically averaged trilinear sampling transfer at its wave number, so the
// coefficients estimate the underlying volume's integrals rather than its
// interpolant's (band-limited content round-trips to O(h^4)).
SwdCoefficients forward_swd(const ScalarVolume &v, std::shared_ptr<const SwdBasis> basis,
                            std::optional<Vec3> center = std::nullopt);

// Inverse transform: synthesizes the (filtered) series onto the target grid;
// voxels outside the domain sphere are 0.  The full complex series is summed
// and its real part returned.
ScalarVolume inverse_swd(const SwdCoefficients &c, const FilterSpec &filter,
                         const GridGeometry &target, std::optional<Vec3> center = std::nullopt);

// Spherically averaged radial profile from the (0,0,n) modes, sampled at
// n_samples uniform radii on [0, a]:  I(r) = (1/(2 sqrt(pi))) sum_n F f_00n R_0n(r).
std::vector<double> radial_profile(const SwdCoefficients &c, int n_samples,
                                   const FilterSpec &filter = FilterSpec::identity());

// Angular profile from the n = 1 modes on an n_theta x n_phi grid (theta row-major;
// theta_i = (i+1/2)pi/n_theta, phi_k = 2 pi k/n_phi):
//   I(theta, phi) = sum_l (1/sqrt(N_l1)) sum_m F f_lm1 Y_lm(theta, phi).
struct AngularProfile {
    int n_theta = 0, n_phi = 0;
    std::vector<double> values; // [i_theta * n_phi + i_phi]
};
AngularProfile angular_profile(const SwdCoefficients &c, int n_theta, int n_phi,
                               const FilterSpec &filter = FilterSpec::identity());

// Similarity parameters of the moving volume relative to the reference: the
// moving volume looks like the reference scaled by `scale` about `center` and
// rotated by `phi` about the polar (z) axis and `theta` about the y axis.
struct SimilarityParams {
    double scale = 1.0;
    double theta = 0.0; // radians
    double phi = 0.0;   // radians
    Vec3 center;
};

struct SimilaritySearchOptions {
    int profile_samples = 512;
    double scale_min = 0.5, scale_max = 2.0;
    int scale_grid = 96;
    double theta_range = 0.7853981633974483; // +-45 degrees
    double coarse_step = 0.17453292519943295; // 10 degrees
    int coarse_l = 8; // coarse pass order cap (and same cap for n)
    int angular_theta = 18, angular_phi = 36;
};

// Two-stage estimate: 1-D scale search on radial profiles (bracketed grid then
// golden section), then a 2-D angular-profile search on (theta, phi) shifts
// (10-degree coarse grid then local refinement), each first at coarse order
// min(coarse_l, l_max) and refined at full order.  Both coefficient sets must
// share a basis.
SimilarityParams estimate_similarity(const SwdCoefficients &reference,
                                     const SwdCoefficients &moving,
                                     const SimilaritySearchOptions &opts = {});

// Resamples v under the inverse of the similarity map S(x) = c + s R (x - c)
// (R = Ry(theta) Rz(phi)): out(x) = v(S^-1(x)), i.e. the features of v appear
// scaled by s and rotated forward.  With `invert` the forward map is sampled
// instead, undoing a previously applied transform.  When a synthesis basis is
// given, values inside the domain sphere are evaluated from the series
// (high-order interpolation); otherwise trilinear sampling is used.
ScalarVolume apply_similarity(const ScalarVolume &v, const SimilarityParams &p,
                              const GridGeometry &target,
                              const SwdBasis *synthesis_basis = nullptr, bool invert = false);

// Coefficient dump, little-endian:
//   bytes 0-7  magic "SREGSWD1"
//   8-15       float64 a
//   16-19      uint32 l_max
//   20-23      uint32 n_max
//   payload    complex64 (f32 re, f32 im) pairs in (l, m, n) lexicographic order
void save_swd_coefficients(const SwdCoefficients &c, const std::string &path);

// Normalized associated Legendre values with Condon-Shortley phase for m >= 0,
// packed as out[l(l+1)/2 + m]; Y_lm = out * exp(i m phi).  Exposed for tests.
void normalized_assoc_legendre(int l_max, double x, std::vector<double> &out);

// n-th positive zero of the spherical Bessel function j_l.  Exposed for tests.
double sph_bessel_zero(int l, int n);

} // namespace symreg
