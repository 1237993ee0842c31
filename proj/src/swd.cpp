// swd.cpp - spherical wave decomposition: basis construction, forward/inverse
// transforms, profiles, and the similarity (scale/rotation) estimator.
#include "symreg/swd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "symreg/parallel.hpp"

namespace symreg {

namespace {

constexpr double kPi = 3.14159265358979323846;

double sph_jl(int l, double x) { return std::sph_bessel(static_cast<unsigned>(l), x); }

// j_l'(x) = j_{l-1}(x) - ((l+1)/x) j_l(x) for l >= 1; j_0' = -j_1.
double sph_jl_deriv(int l, double x) {
    if (l == 0) return -std::sph_bessel(1u, x);
    return std::sph_bessel(static_cast<unsigned>(l - 1), x)
           - (l + 1.0) / x * std::sph_bessel(static_cast<unsigned>(l), x);
}

// Root of j_l inside (lo, hi); the bracket endpoints are zeros of j_{l-1}, which
// interlace the zeros of j_l, so j_l changes sign exactly once inside.
double refine_bessel_zero(int l, double lo, double hi) {
    double a = lo, b = hi;
    double fa = sph_jl(l, a);
    for (int it = 0; it < 64 && b - a > 1e-10; ++it) {
        const double mid = 0.5 * (a + b);
        const double fm = sph_jl(l, mid);
        if (fm == 0.0) return mid;
        if ((fa < 0.0) == (fm < 0.0)) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    double x = 0.5 * (a + b);
    for (int it = 0; it < 10; ++it) {
        const double f = sph_jl(l, x);
        const double d = sph_jl_deriv(l, x);
        if (d == 0.0) break;
        const double step = f / d;
        const double xn = x - step;
        if (!(xn > lo && xn < hi)) break;
        x = xn;
        if (std::fabs(step) < 1e-15 * x) break;
    }
    return x;
}

// zeros[l][n-1] for n = 1 .. n_top + (l_top - l); level l brackets come from the
// interlacing property z_{l-1,n} < z_{l,n} < z_{l-1,n+1}, seeded by z_{0,n} = n pi.
std::vector<std::vector<double>> bessel_zero_ladder(int l_top, int n_top) {
    std::vector<std::vector<double>> z(static_cast<size_t>(l_top) + 1);
    z[0].resize(static_cast<size_t>(n_top + l_top));
    for (int n = 1; n <= n_top + l_top; ++n) z[0][static_cast<size_t>(n - 1)] = n * kPi;
    for (int l = 1; l <= l_top; ++l) {
        const int count = n_top + (l_top - l);
        z[static_cast<size_t>(l)].resize(static_cast<size_t>(count));
        for (int n = 1; n <= count; ++n)
            z[static_cast<size_t>(l)][static_cast<size_t>(n - 1)] = refine_bessel_zero(
                l, z[static_cast<size_t>(l - 1)][static_cast<size_t>(n - 1)],
                z[static_cast<size_t>(l - 1)][static_cast<size_t>(n)]);
    }
    return z;
}

// Gauss-Legendre nodes (ascending) and weights on [-1, 1] by Newton iteration on P_n.
void gauss_legendre(int n, std::vector<double> &x, std::vector<double> &w) {
    x.assign(static_cast<size_t>(n), 0.0);
    w.assign(static_cast<size_t>(n), 0.0);
    auto legendre = [n](double t, double &pn, double &dpn) {
        double p0 = 1.0, p1 = t;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        pn = p1;
        dpn = (std::fabs(t) < 1.0) ? n * (t * p1 - p0) / (t * t - 1.0) : 0.0;
    };
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double t = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double pn = 0.0, dpn = 1.0;
        for (int it = 0; it < 100; ++it) {
            legendre(t, pn, dpn);
            const double dt = pn / dpn;
            t -= dt;
            if (std::fabs(dt) < 1e-15) break;
        }
        legendre(t, pn, dpn);
        const double wi = 2.0 / ((1.0 - t * t) * dpn * dpn);
        x[static_cast<size_t>(i)] = -t;
        x[static_cast<size_t>(n - 1 - i)] = t;
        w[static_cast<size_t>(i)] = wi;
        w[static_cast<size_t>(n - 1 - i)] = wi;
    }
}

size_t half_index(int l, int m) { return static_cast<size_t>(l) * (l + 1) / 2 + static_cast<size_t>(m); }

// Scratch buffers for per-point series evaluation (one per worker slice).
struct EvalScratch {
    std::vector<double> plm;
    std::vector<std::complex<double>> eim;
    std::vector<double> rln;
};

// sum over (l, m, n) of g_lmn R_ln(r) Y_lm at offset d from the expansion center;
// returns the real part, 0 outside the domain sphere.
double series_eval(const SwdBasis &B, const std::vector<std::complex<double>> &g, const Vec3 &d,
                   EvalScratch &sc) {
    const int L = B.l_max, N = B.n_max;
    const double r = d.norm();
    if (r > B.a) return 0.0;
    double cth = (r > 0.0) ? d.z / r : 1.0;
    cth = std::clamp(cth, -1.0, 1.0);
    const double phi = std::atan2(d.y, d.x);

    normalized_assoc_legendre(L, cth, sc.plm);
    sc.eim.resize(static_cast<size_t>(L) + 1);
    sc.eim[0] = {1.0, 0.0};
    const std::complex<double> e1(std::cos(phi), std::sin(phi));
    for (int m = 1; m <= L; ++m) sc.eim[static_cast<size_t>(m)] = sc.eim[static_cast<size_t>(m - 1)] * e1;

    sc.rln.resize(static_cast<size_t>(L + 1) * static_cast<size_t>(N));
    for (int l = 0; l <= L; ++l)
        for (int n = 1; n <= N; ++n)
            sc.rln[static_cast<size_t>(l) * N + static_cast<size_t>(n - 1)] = B.radial(l, n, r);

    double acc = 0.0;
    for (int l = 0; l <= L; ++l) {
        const double *R = &sc.rln[static_cast<size_t>(l) * N];
        for (int m = -l; m <= l; ++m) {
            const std::complex<double> *gl =
                &g[(static_cast<size_t>(l) * l + static_cast<size_t>(m + l)) * N];
            std::complex<double> A(0.0, 0.0);
            for (int n = 0; n < N; ++n) A += gl[static_cast<size_t>(n)] * R[n];
            const int am = m < 0 ? -m : m;
            double p = sc.plm[half_index(l, am)];
            if (m < 0 && (am & 1)) p = -p;
            const std::complex<double> e =
                (m >= 0) ? sc.eim[static_cast<size_t>(am)] : std::conj(sc.eim[static_cast<size_t>(am)]);
            acc += (A * e).real() * p;
        }
    }
    return acc;
}

// Angular series from the n = 1 modes with 1/sqrt(N_l1) weighting:
//   sum_l (1/sqrt(N_l1)) sum_m F f_lm1 Y_lm(theta, phi), real part.
double angular_eval(const SwdCoefficients &c, const FilterSpec &filter, double theta, double phi,
                    EvalScratch &sc) {
    const SwdBasis &B = *c.basis;
    const int L = B.l_max;
    const double cth = std::clamp(std::cos(theta), -1.0, 1.0);
    normalized_assoc_legendre(L, cth, sc.plm);
    sc.eim.resize(static_cast<size_t>(L) + 1);
    sc.eim[0] = {1.0, 0.0};
    const std::complex<double> e1(std::cos(phi), std::sin(phi));
    for (int m = 1; m <= L; ++m) sc.eim[static_cast<size_t>(m)] = sc.eim[static_cast<size_t>(m - 1)] * e1;

    double acc = 0.0;
    for (int l = 0; l <= L; ++l) {
        const double wl = 1.0 / std::sqrt(B.norm(l, 1));
        for (int m = -l; m <= l; ++m) {
            const double F = filter.multiplier(l, m, 1);
            if (F == 0.0) continue;
            const int am = m < 0 ? -m : m;
            double p = sc.plm[half_index(l, am)];
            if (m < 0 && (am & 1)) p = -p;
            const std::complex<double> e =
                (m >= 0) ? sc.eim[static_cast<size_t>(am)] : std::conj(sc.eim[static_cast<size_t>(am)]);
            acc += wl * F * (c.at(l, m, 1) * e).real() * p;
        }
    }
    return acc;
}

// Golden-section minimizer on [lo, hi].
template <typename F>
double golden_min(F f, double lo, double hi, int iters) {
    const double gr = 0.6180339887498949;
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < iters; ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = f(x2);
        }
    }
    return 0.5 * (lo + hi);
}

} // namespace

void normalized_assoc_legendre(int l_max, double x, std::vector<double> &out) {
    out.resize(static_cast<size_t>(l_max + 1) * static_cast<size_t>(l_max + 2) / 2);
    const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
    out[0] = std::sqrt(1.0 / (4.0 * kPi));
    if (l_max == 0) return;
    for (int m = 1; m <= l_max; ++m)
        out[half_index(m, m)] =
            -std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * out[half_index(m - 1, m - 1)];
    for (int m = 0; m < l_max; ++m)
        out[half_index(m + 1, m)] = x * std::sqrt(2.0 * m + 3.0) * out[half_index(m, m)];
    for (int m = 0; m <= l_max; ++m)
        for (int l = m + 2; l <= l_max; ++l) {
            const double lm2 = static_cast<double>(l) * l - static_cast<double>(m) * m;
            const double a = std::sqrt((4.0 * l * l - 1.0) / lm2);
            const double b = std::sqrt((2.0 * l + 1.0)
                                       * (static_cast<double>(l - 1) * (l - 1) - static_cast<double>(m) * m)
                                       / ((2.0 * l - 3.0) * lm2));
            out[half_index(l, m)] = a * x * out[half_index(l - 1, m)] - b * out[half_index(l - 2, m)];
        }
}

double sph_bessel_zero(int l, int n) {
    if (l < 0 || n < 1) throw std::invalid_argument("sph_bessel_zero: need l >= 0, n >= 1");
    if (l == 0) return n * kPi;
    const auto ladder = bessel_zero_ladder(l, n);
    return ladder[static_cast<size_t>(l)][static_cast<size_t>(n - 1)];
}

double SwdBasis::radial(int l, int n, double r) const {
    if (r < 0.0 || r > a) return 0.0;
    const size_t mo = mode_ln(l, n);
    const double u = r / a * (table_size - 1);
    const int i = std::min(static_cast<int>(u), table_size - 2);
    const double f = u - i;
    const double *t = &radial_table[mo * static_cast<size_t>(table_size)];
    return t[i] + f * (t[i + 1] - t[i]);
}

SwdBasis build_swd_basis(double a, int l_max, int n_max, int n_r, int n_theta, int n_phi) {
    if (!(a > 0.0) || !std::isfinite(a))
        throw std::invalid_argument("swd: domain radius must be positive and finite");
    if (l_max < 0 || l_max > 64) throw std::invalid_argument("swd: l_max out of range [0, 64]");
    if (n_max < 1 || n_max > 512) throw std::invalid_argument("swd: n_max out of range [1, 512]");

    SwdBasis b;
    b.a = a;
    b.l_max = l_max;
    b.n_max = n_max;

    const auto ladder = bessel_zero_ladder(l_max, n_max);
    const size_t modes = static_cast<size_t>(l_max + 1) * static_cast<size_t>(n_max);
    b.zeros.resize(modes);
    b.norms.resize(modes);
    for (int l = 0; l <= l_max; ++l)
        for (int n = 1; n <= n_max; ++n) {
            const double z = ladder[static_cast<size_t>(l)][static_cast<size_t>(n - 1)];
            const double jl1 = sph_jl(l + 1, z);
            b.zeros[b.mode_ln(l, n)] = z;
            b.norms[b.mode_ln(l, n)] = 0.5 * a * a * a * jl1 * jl1;
        }
    const double z_top = b.zero(l_max, n_max);

    // Quadrature sizes: defaults double the exactness floors; sizes below the
    // floors cannot resolve the requested order and are rejected.
    const int theta_floor = l_max + 1;
    const int phi_floor = 2 * l_max + 1;
    const int r_floor = std::max(8, static_cast<int>(std::ceil(z_top)));
    b.n_theta = n_theta > 0 ? n_theta : 2 * (l_max + 1);
    b.n_phi = n_phi > 0 ? n_phi : phi_floor;
    b.n_r = n_r > 0 ? n_r : std::max(64, static_cast<int>(std::ceil(20.0 * z_top)));
    if (b.n_theta < theta_floor)
        throw std::invalid_argument("swd: n_theta too coarse for l_max (need >= l_max + 1)");
    if (b.n_phi < phi_floor)
        throw std::invalid_argument("swd: n_phi too coarse for l_max (need >= 2 l_max + 1)");
    if (b.n_r < r_floor)
        throw std::invalid_argument("swd: n_r too coarse for the highest radial mode");

    const double h = a / b.n_r;
    b.r_nodes.resize(static_cast<size_t>(b.n_r) + 1);
    b.r_weights.resize(static_cast<size_t>(b.n_r) + 1);
    for (int i = 0; i <= b.n_r; ++i) {
        b.r_nodes[static_cast<size_t>(i)] = h * i;
        b.r_weights[static_cast<size_t>(i)] = (i == 0 || i == b.n_r) ? 0.5 * h : h;
    }

    gauss_legendre(b.n_theta, b.theta_cos, b.theta_weights);

    b.table_size = 8192;
    b.radial_quad.resize(modes * (static_cast<size_t>(b.n_r) + 1));
    b.radial_table.resize(modes * static_cast<size_t>(b.table_size));
    parallel_for(modes, [&](size_t m0, size_t m1) {
        for (size_t mo = m0; mo < m1; ++mo) {
            const int l = static_cast<int>(mo / static_cast<size_t>(n_max));
            const double k = b.zeros[mo] / a;
            const double invsq = 1.0 / std::sqrt(b.norms[mo]);
            double *quad = &b.radial_quad[mo * (static_cast<size_t>(b.n_r) + 1)];
            for (int i = 0; i <= b.n_r; ++i)
                quad[i] = sph_jl(l, k * b.r_nodes[static_cast<size_t>(i)]) * invsq;
            double *tab = &b.radial_table[mo * static_cast<size_t>(b.table_size)];
            for (int t = 0; t < b.table_size; ++t)
                tab[t] = sph_jl(l, k * (a * t / static_cast<double>(b.table_size - 1))) * invsq;
        }
    });
    return b;
}

SwdCoefficients forward_swd(const ScalarVolume &v, std::shared_ptr<const SwdBasis> basis,
                            std::optional<Vec3> center) {
    if (!basis) throw std::invalid_argument("forward_swd: null basis");
    v.geometry.validate();
    const SwdBasis &B = *basis;
    const int L = B.l_max, N = B.n_max, nr = B.n_r, nth = B.n_theta, nph = B.n_phi;
    const size_t n_lm = static_cast<size_t>(L + 1) * static_cast<size_t>(L + 1);

    SwdCoefficients out;
    out.basis = std::move(basis);
    out.center = center.value_or(v.geometry.center());
    out.f.assign(n_lm * static_cast<size_t>(N), {0.0, 0.0});

    // Largest sphere about the expansion center that stays inside the volume;
    // shells beyond it contribute nothing.
    const GridGeometry &g = v.geometry;
    double rbox = std::numeric_limits<double>::infinity();
    for (int axis = 0; axis < 3; ++axis) {
        const double lo = g.origin[axis];
        const double hi = g.origin[axis] + g.spacing[axis] * (g.dims[axis] - 1);
        rbox = std::min(rbox, std::min(out.center[axis] - lo, hi - out.center[axis]));
    }
    const double r_cut = std::min(B.a, std::max(0.0, rbox));

    const double dphi = 2.0 * kPi / nph;
    std::vector<double> cosm(static_cast<size_t>(L + 1) * static_cast<size_t>(nph));
    std::vector<double> sinm(cosm.size());
    for (int m = 0; m <= L; ++m)
        for (int k = 0; k < nph; ++k) {
            const double ang = m * (dphi * k);
            cosm[static_cast<size_t>(m) * nph + static_cast<size_t>(k)] = std::cos(ang);
            sinm[static_cast<size_t>(m) * nph + static_cast<size_t>(k)] = std::sin(ang);
        }

    const size_t half = static_cast<size_t>(L + 1) * static_cast<size_t>(L + 2) / 2;
    std::vector<double> plm_tab(static_cast<size_t>(nth) * half);
    {
        std::vector<double> tmp;
        for (int j = 0; j < nth; ++j) {
            normalized_assoc_legendre(L, B.theta_cos[static_cast<size_t>(j)], tmp);
            std::copy(tmp.begin(), tmp.end(), plm_tab.begin() + static_cast<size_t>(j) * half);
        }
    }

    // Stage 1: angular reduction per radial shell, G[i][lm] (rows are disjoint
    // across the parallel loop, so results are worker-count invariant).
    std::vector<std::complex<double>> G(static_cast<size_t>(nr + 1) * n_lm, {0.0, 0.0});
    parallel_for(static_cast<size_t>(nr) + 1, [&](size_t i0, size_t i1) {
        std::vector<double> ring(static_cast<size_t>(nph));
        std::vector<std::complex<double>> Fm(static_cast<size_t>(nth) * (2 * static_cast<size_t>(L) + 1));
        for (size_t i = i0; i < i1; ++i) {
            const double r = B.r_nodes[i];
            if (r == 0.0 || r > r_cut) continue;
            for (int j = 0; j < nth; ++j) {
                const double c = B.theta_cos[static_cast<size_t>(j)];
                const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
                for (int k = 0; k < nph; ++k) {
                    const double phi = dphi * k;
                    const Vec3 p{out.center.x + r * s * std::cos(phi),
                                 out.center.y + r * s * std::sin(phi), out.center.z + r * c};
                    ring[static_cast<size_t>(k)] = sample_trilinear(v, p);
                }
                std::complex<double> *row = &Fm[static_cast<size_t>(j) * (2 * static_cast<size_t>(L) + 1)];
                for (int m = 0; m <= L; ++m) {
                    const double *cm = &cosm[static_cast<size_t>(m) * nph];
                    const double *sm = &sinm[static_cast<size_t>(m) * nph];
                    double sc = 0.0, ss = 0.0;
                    for (int k = 0; k < nph; ++k) {
                        sc += ring[static_cast<size_t>(k)] * cm[k];
                        ss += ring[static_cast<size_t>(k)] * sm[k];
                    }
                    row[L + m] = {sc * dphi, -ss * dphi};
                    if (m > 0) row[L - m] = {sc * dphi, ss * dphi};
                }
            }
            std::complex<double> *Gi = &G[i * n_lm];
            for (int l = 0; l <= L; ++l)
                for (int m = -l; m <= l; ++m) {
                    const int am = m < 0 ? -m : m;
                    const double sgn = (m < 0 && (am & 1)) ? -1.0 : 1.0;
                    std::complex<double> acc(0.0, 0.0);
                    for (int j = 0; j < nth; ++j)
                        acc += Fm[static_cast<size_t>(j) * (2 * static_cast<size_t>(L) + 1)
                                  + static_cast<size_t>(L + m)]
                               * (plm_tab[static_cast<size_t>(j) * half + half_index(l, am)]
                                  * B.theta_weights[static_cast<size_t>(j)]);
                    Gi[static_cast<size_t>(l) * l + static_cast<size_t>(m + l)] = acc * sgn;
                }
        }
    });

    // Trilinear sampling attenuates a plane wave exp(i k.x) by the kernel
    // transfer prod_a sinc^2(k_a h_a / 2).  Dividing each mode by the spherical
    // average of that transfer at |k| = k_ln estimates the underlying volume's
    // integral rather than its interpolant's, removing the O(h^2) droop (the
    // residual is O(h^4) direction anisotropy).  Clamped so near-Nyquist modes
    // are never amplified more than 4x.
    std::vector<double> comp(static_cast<size_t>(L + 1) * static_cast<size_t>(N));
    {
        const int nct = 24, ncp = 48;
        std::vector<double> xs, ws;
        gauss_legendre(nct, xs, ws);
        auto sinc2 = [](double u) {
            if (std::abs(u) < 1e-8) return 1.0 - u * u / 3.0;
            const double s = std::sin(u) / u;
            return s * s;
        };
        for (int l = 0; l <= L; ++l)
            for (int n = 1; n <= N; ++n) {
                const double k = B.zero(l, n) / B.a;
                double avg = 0.0;
                for (int j = 0; j < nct; ++j) {
                    const double ct = xs[static_cast<size_t>(j)];
                    const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
                    double row = 0.0;
                    for (int p = 0; p < ncp; ++p) {
                        const double ph = (p + 0.5) * (2.0 * kPi / ncp);
                        row += sinc2(0.5 * k * st * std::cos(ph) * g.spacing[0])
                               * sinc2(0.5 * k * st * std::sin(ph) * g.spacing[1])
                               * sinc2(0.5 * k * ct * g.spacing[2]);
                    }
                    avg += ws[static_cast<size_t>(j)] * row;
                }
                avg /= 2.0 * ncp;
                comp[B.mode_ln(l, n)] = 1.0 / std::max(avg, 0.25);
            }
    }

    // Stage 2: radial reduction per (l, m), sequential over shells.
    std::vector<double> rw(static_cast<size_t>(nr) + 1);
    for (int i = 0; i <= nr; ++i)
        rw[static_cast<size_t>(i)] =
            B.r_nodes[static_cast<size_t>(i)] * B.r_nodes[static_cast<size_t>(i)]
            * B.r_weights[static_cast<size_t>(i)];
    parallel_for(n_lm, [&](size_t lm0, size_t lm1) {
        for (size_t lm = lm0; lm < lm1; ++lm) {
            const int l = static_cast<int>(std::sqrt(static_cast<double>(lm)));
            for (int n = 1; n <= N; ++n) {
                const double *R = &B.radial_quad[B.mode_ln(l, n) * (static_cast<size_t>(nr) + 1)];
                std::complex<double> acc(0.0, 0.0);
                for (int i = 0; i <= nr; ++i)
                    acc += G[static_cast<size_t>(i) * n_lm + lm] * (R[i] * rw[static_cast<size_t>(i)]);
                out.f[lm * static_cast<size_t>(N) + static_cast<size_t>(n - 1)] =
                    acc * comp[B.mode_ln(l, n)];
            }
        }
    });
    return out;
}

ScalarVolume inverse_swd(const SwdCoefficients &c, const FilterSpec &filter,
                         const GridGeometry &target, std::optional<Vec3> center) {
    if (!c.basis) throw std::invalid_argument("inverse_swd: coefficients have no basis");
    target.validate();
    const SwdBasis &B = *c.basis;
    const int L = B.l_max, N = B.n_max;
    const Vec3 ctr = center.value_or(c.center);

    std::vector<std::complex<double>> g(c.f.size());
    for (int l = 0; l <= L; ++l)
        for (int m = -l; m <= l; ++m)
            for (int n = 1; n <= N; ++n) {
                const size_t idx = c.index(l, m, n);
                g[idx] = c.f[idx] * filter.multiplier(l, m, n);
            }

    ScalarVolume out(target, 0.0);
    const int nx = target.dims[0], ny = target.dims[1];
    parallel_for(target.voxel_count(), [&](size_t v0, size_t v1) {
        EvalScratch sc;
        for (size_t vi = v0; vi < v1; ++vi) {
            const int i = static_cast<int>(vi % static_cast<size_t>(nx));
            const size_t t = vi / static_cast<size_t>(nx);
            const int j = static_cast<int>(t % static_cast<size_t>(ny));
            const int k = static_cast<int>(t / static_cast<size_t>(ny));
            const Vec3 d = target.world(i, j, k) - ctr;
            out.data[vi] = (d.norm() <= B.a) ? series_eval(B, g, d, sc) : 0.0;
        }
    });
    return out;
}

std::vector<double> radial_profile(const SwdCoefficients &c, int n_samples, const FilterSpec &filter) {
    if (!c.basis) throw std::invalid_argument("radial_profile: coefficients have no basis");
    if (n_samples < 2) throw std::invalid_argument("radial_profile: need at least 2 samples");
    const SwdBasis &B = *c.basis;
    const double y00 = 1.0 / (2.0 * std::sqrt(kPi));
    std::vector<double> out(static_cast<size_t>(n_samples), 0.0);
    for (int s = 0; s < n_samples; ++s) {
        const double r = B.a * s / static_cast<double>(n_samples - 1);
        double acc = 0.0;
        for (int n = 1; n <= B.n_max; ++n)
            acc += filter.multiplier(0, 0, n) * c.at(0, 0, n).real() * B.radial(0, n, r);
        out[static_cast<size_t>(s)] = acc * y00;
    }
    return out;
}

AngularProfile angular_profile(const SwdCoefficients &c, int n_theta, int n_phi,
                               const FilterSpec &filter) {
    if (!c.basis) throw std::invalid_argument("angular_profile: coefficients have no basis");
    if (n_theta < 1 || n_phi < 1)
        throw std::invalid_argument("angular_profile: grid sizes must be positive");
    AngularProfile ap;
    ap.n_theta = n_theta;
    ap.n_phi = n_phi;
    ap.values.assign(static_cast<size_t>(n_theta) * static_cast<size_t>(n_phi), 0.0);
    EvalScratch sc;
    for (int it = 0; it < n_theta; ++it) {
        const double th = kPi * (it + 0.5) / n_theta;
        for (int ip = 0; ip < n_phi; ++ip) {
            const double ph = 2.0 * kPi * ip / n_phi;
            ap.values[static_cast<size_t>(it) * n_phi + static_cast<size_t>(ip)] =
                angular_eval(c, filter, th, ph, sc);
        }
    }
    return ap;
}

SimilarityParams estimate_similarity(const SwdCoefficients &reference, const SwdCoefficients &moving,
                                     const SimilaritySearchOptions &opts) {
    if (!reference.basis || !moving.basis)
        throw std::invalid_argument("estimate_similarity: coefficients have no basis");
    const SwdBasis &B = *reference.basis;
    const SwdBasis &B1 = *moving.basis;
    if (B.a != B1.a || B.l_max != B1.l_max || B.n_max != B1.n_max)
        throw std::invalid_argument("estimate_similarity: coefficient sets must share a basis");

    SimilarityParams out;
    out.center = reference.center;

    // --- scale from radial profiles: minimize mean_i (p0(r_i) - p1(s r_i))^2 ---
    auto profile_objective = [&](const std::vector<double> &p0, const std::vector<double> &p1,
                                 double s) {
        const int n = static_cast<int>(p0.size());
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const double u = s * i; // r_i = a i/(n-1), so s r maps to sample index s i
            double v1 = 0.0;
            if (u <= n - 1.0) {
                const int t = std::min(static_cast<int>(u), n - 2);
                const double f = u - t;
                v1 = p1[static_cast<size_t>(t)]
                     + f * (p1[static_cast<size_t>(t) + 1] - p1[static_cast<size_t>(t)]);
            }
            const double dd = p0[static_cast<size_t>(i)] - v1;
            acc += dd * dd;
        }
        return acc / n;
    };

    const int cl = std::min(opts.coarse_l, B.l_max);
    const int cn = std::min(opts.coarse_l, B.n_max);
    const FilterSpec coarse = FilterSpec::lowpass(cl, cn);
    const auto p0c = radial_profile(reference, opts.profile_samples, coarse);
    const auto p1c = radial_profile(moving, opts.profile_samples, coarse);
    int best_i = 0;
    double best_m = std::numeric_limits<double>::infinity();
    for (int i = 0; i < opts.scale_grid; ++i) {
        const double s = opts.scale_min
                         + (opts.scale_max - opts.scale_min) * i / static_cast<double>(opts.scale_grid - 1);
        const double m = profile_objective(p0c, p1c, s);
        if (m < best_m) {
            best_m = m;
            best_i = i;
        }
    }
    const double ds = (opts.scale_max - opts.scale_min) / (opts.scale_grid - 1);
    const double s0 = opts.scale_min + ds * best_i;
    const double s_coarse =
        golden_min([&](double s) { return profile_objective(p0c, p1c, s); },
                   std::max(opts.scale_min, s0 - ds), std::min(opts.scale_max, s0 + ds), 48);
    const auto p0f = radial_profile(reference, opts.profile_samples);
    const auto p1f = radial_profile(moving, opts.profile_samples);
    out.scale = golden_min([&](double s) { return profile_objective(p0f, p1f, s); },
                           std::max(opts.scale_min, s_coarse - ds),
                           std::min(opts.scale_max, s_coarse + ds), 48);

    // --- rotation from angular profiles: match I0(theta, phi) against the moving
    // profile evaluated at shifted angles; rows shifted outside [0, pi] are masked ---
    if (B.l_max >= 1) {
        const int nth = opts.angular_theta, nph = opts.angular_phi;
        std::vector<double> th(static_cast<size_t>(nth)), sinw(static_cast<size_t>(nth));
        for (int i = 0; i < nth; ++i) {
            th[static_cast<size_t>(i)] = kPi * (i + 0.5) / nth;
            sinw[static_cast<size_t>(i)] = std::sin(th[static_cast<size_t>(i)]);
        }
        auto shift_objective = [&](const FilterSpec &filt, const std::vector<double> &ref_grid,
                                   double dth, double dph, EvalScratch &sc) {
            double acc = 0.0, wsum = 0.0;
            for (int i = 0; i < nth; ++i) {
                const double t1 = th[static_cast<size_t>(i)] + dth;
                if (t1 < 0.0 || t1 > kPi) continue;
                for (int p = 0; p < nph; ++p) {
                    const double ph = 2.0 * kPi * p / nph;
                    const double v1 = angular_eval(moving, filt, t1, ph + dph, sc);
                    const double dd = ref_grid[static_cast<size_t>(i) * nph + static_cast<size_t>(p)] - v1;
                    acc += sinw[static_cast<size_t>(i)] * dd * dd;
                    wsum += sinw[static_cast<size_t>(i)];
                }
            }
            return wsum > 0.0 ? acc / wsum : 0.0;
        };

        EvalScratch sc;
        const auto ref_coarse = angular_profile(reference, nth, nph, coarse);
        const int K = static_cast<int>(std::floor(opts.theta_range / opts.coarse_step + 1e-9));
        const int P = std::max(1, static_cast<int>(std::floor(2.0 * kPi / opts.coarse_step + 0.5)));
        double best_t = 0.0, best_p = 0.0;
        double best = std::numeric_limits<double>::infinity();
        for (int i = -K; i <= K; ++i)
            for (int p = 0; p < P; ++p) {
                const double dth = i * opts.coarse_step;
                const double dph = -kPi + 2.0 * kPi * p / P;
                const double m = shift_objective(coarse, ref_coarse.values, dth, dph, sc);
                if (m < best) {
                    best = m;
                    best_t = dth;
                    best_p = dph;
                }
            }

        const FilterSpec full = FilterSpec::identity();
        const auto ref_full = angular_profile(reference, nth, nph, full);
        double t_hat = best_t, p_hat = best_p;
        for (int round = 0; round < 2; ++round) {
            t_hat = golden_min(
                [&](double dt) { return shift_objective(full, ref_full.values, dt, p_hat, sc); },
                t_hat - opts.coarse_step, t_hat + opts.coarse_step, 40);
            p_hat = golden_min(
                [&](double dp) { return shift_objective(full, ref_full.values, t_hat, dp, sc); },
                p_hat - opts.coarse_step, p_hat + opts.coarse_step, 40);
        }
        out.theta = t_hat;
        out.phi = p_hat;
    }
    return out;
}

ScalarVolume apply_similarity(const ScalarVolume &v, const SimilarityParams &p,
                              const GridGeometry &target, const SwdBasis *synthesis_basis,
                              bool invert) {
    v.geometry.validate();
    target.validate();
    if (!(p.scale > 0.0) || !std::isfinite(p.scale))
        throw std::invalid_argument("apply_similarity: scale must be positive and finite");

    const double ct = std::cos(p.theta), st = std::sin(p.theta);
    const double cp = std::cos(p.phi), sp = std::sin(p.phi);
    Mat3 ry, rz;
    ry.m = {ct, 0.0, st, 0.0, 1.0, 0.0, -st, 0.0, ct};
    rz.m = {cp, -sp, 0.0, sp, cp, 0.0, 0.0, 0.0, 1.0};
    const Mat3 R = ry.mul(rz);
    const Mat3 Rt = R.transposed();

    // Forward map S(x) = c + s R (x - c); output samples v at S^-1 (or S with invert).
    auto map_point = [&](const Vec3 &x) {
        const Vec3 d = x - p.center;
        if (invert) return p.center + R.mul(d) * p.scale;
        return p.center + Rt.mul(d) * (1.0 / p.scale);
    };

    SwdCoefficients co;
    if (synthesis_basis) {
        std::shared_ptr<const SwdBasis> alias(std::shared_ptr<const SwdBasis>{}, synthesis_basis);
        co = forward_swd(v, alias);
    }

    ScalarVolume out(target, 0.0);
    const int nx = target.dims[0], ny = target.dims[1];
    parallel_for(target.voxel_count(), [&](size_t v0, size_t v1) {
        EvalScratch sc;
        for (size_t vi = v0; vi < v1; ++vi) {
            const int i = static_cast<int>(vi % static_cast<size_t>(nx));
            const size_t t = vi / static_cast<size_t>(nx);
            const int j = static_cast<int>(t % static_cast<size_t>(ny));
            const int k = static_cast<int>(t / static_cast<size_t>(ny));
            const Vec3 y = map_point(target.world(i, j, k));
            if (synthesis_basis) {
                const Vec3 d = y - co.center;
                if (d.norm() <= synthesis_basis->a) {
                    out.data[vi] = series_eval(*synthesis_basis, co.f, d, sc);
                    continue;
                }
            }
            out.data[vi] = sample_trilinear(v, y);
        }
    });
    return out;
}

void save_swd_coefficients(const SwdCoefficients &c, const std::string &path) {
    if (!c.basis) throw std::invalid_argument("save_swd_coefficients: coefficients have no basis");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_swd_coefficients: cannot open " + path);
    const char magic[8] = {'S', 'R', 'E', 'G', 'S', 'W', 'D', '1'};
    f.write(magic, 8);
    const double a = c.basis->a;
    const uint32_t lm = static_cast<uint32_t>(c.basis->l_max);
    const uint32_t nm = static_cast<uint32_t>(c.basis->n_max);
    f.write(reinterpret_cast<const char *>(&a), 8);
    f.write(reinterpret_cast<const char *>(&lm), 4);
    f.write(reinterpret_cast<const char *>(&nm), 4);
    std::vector<float> buf(c.f.size() * 2);
    for (size_t i = 0; i < c.f.size(); ++i) {
        buf[2 * i] = static_cast<float>(c.f[i].real());
        buf[2 * i + 1] = static_cast<float>(c.f[i].imag());
    }
    f.write(reinterpret_cast<const char *>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw std::runtime_error("save_swd_coefficients: write failed for " + path);
}

} // namespace symreg
