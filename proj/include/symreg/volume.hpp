// volume.hpp - scalar/vector/matrix fields on a regular grid, sampling and gradients.
#pragma once

#include <vector>

#include "symreg/geometry.hpp"

namespace symreg {

// Scalar field stored row-major, x fastest.  Internal state is always float64;
// file payloads are float32 (see volume_io.hpp).
struct ScalarVolume {
    GridGeometry geometry;
    std::vector<double> data;

    ScalarVolume() = default;
    explicit ScalarVolume(const GridGeometry &g, double fill = 0.0)
        : geometry(g), data(g.voxel_count(), fill) {
        geometry.validate();
    }

    double &at(int i, int j, int k) { return data[geometry.index(i, j, k)]; }
    double at(int i, int j, int k) const { return data[geometry.index(i, j, k)]; }

    double min_value() const;
    double max_value() const;
};

// Per-voxel 3-vector field (same layout conventions as ScalarVolume).
struct VectorVolume {
    GridGeometry geometry;
    std::vector<Vec3> data;

    VectorVolume() = default;
    explicit VectorVolume(const GridGeometry &g, const Vec3 &fill = {})
        : geometry(g), data(g.voxel_count(), fill) {
        geometry.validate();
    }

    Vec3 &at(int i, int j, int k) { return data[geometry.index(i, j, k)]; }
    const Vec3 &at(int i, int j, int k) const { return data[geometry.index(i, j, k)]; }

    // Identity map: every voxel holds its own world position.
    static VectorVolume identity_map(const GridGeometry &g);
};

// Per-voxel 3x3 matrix field (Jacobians, metric tensors).
struct MatrixVolume {
    GridGeometry geometry;
    std::vector<Mat3> data;

    MatrixVolume() = default;
    explicit MatrixVolume(const GridGeometry &g, const Mat3 &fill = Mat3::identity())
        : geometry(g), data(g.voxel_count(), fill) {
        geometry.validate();
    }

    Mat3 &at(int i, int j, int k) { return data[geometry.index(i, j, k)]; }
    const Mat3 &at(int i, int j, int k) const { return data[geometry.index(i, j, k)]; }
};

// Trilinear sampling at a world position with clamp-to-edge (Neumann) behaviour:
// positions outside the domain are clamped to the boundary faces, so samples
// never produce NaN and boundary values extend flat.
double sample_trilinear(const ScalarVolume &v, const Vec3 &world);
Vec3 sample_trilinear(const VectorVolume &v, const Vec3 &world);

// Central-difference gradient with one-sided differences on the boundary faces,
// scaled by 1/spacing per axis (units: intensity per mm).
VectorVolume gradient_central(const ScalarVolume &v);

// Root-mean-square intensity difference of two volumes on the same grid.
// Uses the worker-count-invariant reduction; throws on geometry mismatch.
double rmsd(const ScalarVolume &a, const ScalarVolume &b);

// Mean over voxels of (a - b)^2, same reduction guarantees as rmsd.
double mean_squared_difference(const ScalarVolume &a, const ScalarVolume &b);

} // namespace symreg
