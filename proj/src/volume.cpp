// volume.cpp - sampling, gradients, and intensity metrics.
#include "symreg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "symreg/parallel.hpp"

namespace symreg {

double ScalarVolume::min_value() const {
    double m = HUGE_VAL;
    for (double v : data) m = std::min(m, v);
    return m;
}

double ScalarVolume::max_value() const {
    double m = -HUGE_VAL;
    for (double v : data) m = std::max(m, v);
    return m;
}

VectorVolume VectorVolume::identity_map(const GridGeometry &g) {
    VectorVolume out(g);
    const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
    parallel_for(static_cast<size_t>(nz), [&](size_t k0, size_t k1) {
        for (size_t k = k0; k < k1; ++k)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i)
                    out.at(i, j, static_cast<int>(k)) = g.world(i, j, static_cast<int>(k));
    });
    return out;
}

namespace {

// Shared corner/weight computation for clamped trilinear sampling.
struct TrilinearTaps {
    size_t c000, c100, c010, c110, c001, c101, c011, c111;
    double fx, fy, fz;
};

inline TrilinearTaps trilinear_taps(const GridGeometry &g, const Vec3 &world) {
    Vec3 u = g.to_voxel(world);
    // Clamp-to-edge: pull the sample point inside [0, dims-1] per axis.
    u.x = std::clamp(u.x, 0.0, static_cast<double>(g.dims[0] - 1));
    u.y = std::clamp(u.y, 0.0, static_cast<double>(g.dims[1] - 1));
    u.z = std::clamp(u.z, 0.0, static_cast<double>(g.dims[2] - 1));

    int i0 = static_cast<int>(u.x), j0 = static_cast<int>(u.y), k0 = static_cast<int>(u.z);
    i0 = std::min(i0, g.dims[0] - 2);
    j0 = std::min(j0, g.dims[1] - 2);
    k0 = std::min(k0, g.dims[2] - 2);

    TrilinearTaps t;
    t.fx = u.x - i0;
    t.fy = u.y - j0;
    t.fz = u.z - k0;
    t.c000 = g.index(i0, j0, k0);
    t.c100 = t.c000 + 1;
    t.c010 = t.c000 + static_cast<size_t>(g.dims[0]);
    t.c110 = t.c010 + 1;
    t.c001 = t.c000 + static_cast<size_t>(g.dims[0]) * static_cast<size_t>(g.dims[1]);
    t.c101 = t.c001 + 1;
    t.c011 = t.c001 + static_cast<size_t>(g.dims[0]);
    t.c111 = t.c011 + 1;
    return t;
}

} // namespace

double sample_trilinear(const ScalarVolume &v, const Vec3 &world) {
    const TrilinearTaps t = trilinear_taps(v.geometry, world);
    const auto &d = v.data;
    const double c00 = d[t.c000] + (d[t.c100] - d[t.c000]) * t.fx;
    const double c10 = d[t.c010] + (d[t.c110] - d[t.c010]) * t.fx;
    const double c01 = d[t.c001] + (d[t.c101] - d[t.c001]) * t.fx;
    const double c11 = d[t.c011] + (d[t.c111] - d[t.c011]) * t.fx;
    const double c0 = c00 + (c10 - c00) * t.fy;
    const double c1 = c01 + (c11 - c01) * t.fy;
    return c0 + (c1 - c0) * t.fz;
}

Vec3 sample_trilinear(const VectorVolume &v, const Vec3 &world) {
    const TrilinearTaps t = trilinear_taps(v.geometry, world);
    const auto &d = v.data;
    Vec3 out;
    for (int a = 0; a < 3; ++a) {
        const double c00 = d[t.c000][a] + (d[t.c100][a] - d[t.c000][a]) * t.fx;
        const double c10 = d[t.c010][a] + (d[t.c110][a] - d[t.c010][a]) * t.fx;
        const double c01 = d[t.c001][a] + (d[t.c101][a] - d[t.c001][a]) * t.fx;
        const double c11 = d[t.c011][a] + (d[t.c111][a] - d[t.c011][a]) * t.fx;
        const double c0 = c00 + (c10 - c00) * t.fy;
        const double c1 = c01 + (c11 - c01) * t.fy;
        out[a] = c0 + (c1 - c0) * t.fz;
    }
    return out;
}

VectorVolume gradient_central(const ScalarVolume &v) {
    const GridGeometry &g = v.geometry;
    VectorVolume out(g);
    const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
    const double ix = 1.0 / g.spacing[0], iy = 1.0 / g.spacing[1], iz = 1.0 / g.spacing[2];
    parallel_for(static_cast<size_t>(nz), [&](size_t k0, size_t k1) {
        for (int k = static_cast<int>(k0); k < static_cast<int>(k1); ++k)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i) {
                    Vec3 grad;
                    if (i == 0)           grad.x = (v.at(1, j, k) - v.at(0, j, k)) * ix;
                    else if (i == nx - 1) grad.x = (v.at(nx - 1, j, k) - v.at(nx - 2, j, k)) * ix;
                    else                  grad.x = (v.at(i + 1, j, k) - v.at(i - 1, j, k)) * (0.5 * ix);
                    if (j == 0)           grad.y = (v.at(i, 1, k) - v.at(i, 0, k)) * iy;
                    else if (j == ny - 1) grad.y = (v.at(i, ny - 1, k) - v.at(i, ny - 2, k)) * iy;
                    else                  grad.y = (v.at(i, j + 1, k) - v.at(i, j - 1, k)) * (0.5 * iy);
                    if (k == 0)           grad.z = (v.at(i, j, 1) - v.at(i, j, 0)) * iz;
                    else if (k == nz - 1) grad.z = (v.at(i, j, nz - 1) - v.at(i, j, nz - 2)) * iz;
                    else                  grad.z = (v.at(i, j, k + 1) - v.at(i, j, k - 1)) * (0.5 * iz);
                    out.at(i, j, k) = grad;
                }
    });
    return out;
}

double mean_squared_difference(const ScalarVolume &a, const ScalarVolume &b) {
    if (!a.geometry.same_grid(b.geometry))
        throw std::invalid_argument("mean_squared_difference: geometry mismatch");
    const size_t n = a.data.size();
    const double s = deterministic_sum(n, [&](size_t i) {
        const double d = a.data[i] - b.data[i];
        return d * d;
    });
    return s / static_cast<double>(n);
}

double rmsd(const ScalarVolume &a, const ScalarVolume &b) {
    return std::sqrt(mean_squared_difference(a, b));
}

} // namespace symreg
