// geometry.hpp - small fixed-size vector/matrix types and regular-grid geometry.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace symreg {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    double &operator[](int i) { return (&x)[i]; }
    double operator[](int i) const { return (&x)[i]; }

    Vec3 operator+(const Vec3 &o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3 &o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 &operator+=(const Vec3 &o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3 &operator-=(const Vec3 &o) { x -= o.x; y -= o.y; z -= o.z; return *this; }

    double dot(const Vec3 &o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
};

inline Vec3 operator*(double s, const Vec3 &v) { return v * s; }

// 3x3 matrix, row-major storage.
struct Mat3 {
    std::array<double, 9> m{};

    static Mat3 identity() {
        Mat3 r;
        r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        return r;
    }

    double &operator()(int r, int c) { return m[static_cast<size_t>(3 * r + c)]; }
    double operator()(int r, int c) const { return m[static_cast<size_t>(3 * r + c)]; }

    Mat3 operator+(const Mat3 &o) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
        return r;
    }
    Mat3 operator*(double s) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] * s;
        return r;
    }

    Mat3 mul(const Mat3 &o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                r(i, j) = (*this)(i, 0) * o(0, j) + (*this)(i, 1) * o(1, j) + (*this)(i, 2) * o(2, j);
        return r;
    }

    Vec3 mul(const Vec3 &v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    // Row-vector product v^T M, used when a gradient (row) is pushed through a Jacobian.
    Vec3 mul_left(const Vec3 &v) const {
        return {m[0] * v.x + m[3] * v.y + m[6] * v.z,
                m[1] * v.x + m[4] * v.y + m[7] * v.z,
                m[2] * v.x + m[5] * v.y + m[8] * v.z};
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7])
             - m[1] * (m[3] * m[8] - m[5] * m[6])
             + m[2] * (m[3] * m[7] - m[4] * m[6]);
    }

    // Inverse via adjugate; throws if the determinant is too small to invert reliably.
    Mat3 inverse() const {
        const double d = det();
        if (!(std::fabs(d) > 1e-300)) throw std::runtime_error("Mat3::inverse: singular matrix");
        const double id = 1.0 / d;
        Mat3 r;
        r.m[0] = (m[4] * m[8] - m[5] * m[7]) * id;
        r.m[1] = (m[2] * m[7] - m[1] * m[8]) * id;
        r.m[2] = (m[1] * m[5] - m[2] * m[4]) * id;
        r.m[3] = (m[5] * m[6] - m[3] * m[8]) * id;
        r.m[4] = (m[0] * m[8] - m[2] * m[6]) * id;
        r.m[5] = (m[2] * m[3] - m[0] * m[5]) * id;
        r.m[6] = (m[3] * m[7] - m[4] * m[6]) * id;
        r.m[7] = (m[1] * m[6] - m[0] * m[7]) * id;
        r.m[8] = (m[0] * m[4] - m[1] * m[3]) * id;
        return r;
    }
};

// Regular axis-aligned grid: dims voxels per axis, positive spacing (mm), world origin
// at voxel (0,0,0).  Storage convention everywhere is row-major with x fastest.
struct GridGeometry {
    std::array<int, 3> dims{2, 2, 2};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::array<double, 3> origin{0.0, 0.0, 0.0};

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (dims[a] < 2) throw std::invalid_argument("GridGeometry: all dims must be >= 2");
            if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
                throw std::invalid_argument("GridGeometry: spacing must be positive and finite");
            if (!std::isfinite(origin[a]))
                throw std::invalid_argument("GridGeometry: origin must be finite");
        }
    }

    size_t voxel_count() const {
        return static_cast<size_t>(dims[0]) * static_cast<size_t>(dims[1]) * static_cast<size_t>(dims[2]);
    }

    size_t index(int i, int j, int k) const {
        return (static_cast<size_t>(k) * static_cast<size_t>(dims[1]) + static_cast<size_t>(j))
                   * static_cast<size_t>(dims[0])
               + static_cast<size_t>(i);
    }

    Vec3 world(int i, int j, int k) const {
        return {origin[0] + spacing[0] * i, origin[1] + spacing[1] * j, origin[2] + spacing[2] * k};
    }

    // Continuous voxel coordinate of a world position (not clamped).
    Vec3 to_voxel(const Vec3 &w) const {
        return {(w.x - origin[0]) / spacing[0], (w.y - origin[1]) / spacing[1], (w.z - origin[2]) / spacing[2]};
    }

    // Geometric center of the grid in world units.
    Vec3 center() const {
        return {origin[0] + spacing[0] * 0.5 * (dims[0] - 1),
                origin[1] + spacing[1] * 0.5 * (dims[1] - 1),
                origin[2] + spacing[2] * 0.5 * (dims[2] - 1)};
    }

    double voxel_volume() const { return spacing[0] * spacing[1] * spacing[2]; }
    double min_spacing() const { return std::min(spacing[0], std::min(spacing[1], spacing[2])); }

    bool same_grid(const GridGeometry &o) const {
        return dims == o.dims && spacing == o.spacing && origin == o.origin;
    }
};

} // namespace symreg
