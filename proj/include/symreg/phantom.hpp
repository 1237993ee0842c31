// phantom.hpp - analytic deformation phantoms and synthetic test volumes.
//
// Each warp family is a smooth (C-infinity) world-space map with a closed-form
// Jacobian, so ground truth is available everywhere: rotational families have
// det J = 1 exactly, compressive families have simple positive closed-form
// determinants.  The panel generator renders a textured reference volume and
// one warped moving volume per family, plus a JSON descriptor.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "symreg/volume.hpp"

namespace symreg {

enum class WarpKind {
    whirl,                 // rotation about z by a Gaussian bump angle in (rho, z)
    twist,                 // rotation about z by angle A tanh(z/w)
    stretch,               // y -> y + A w tanh(y/w), axis stretch saturating at +-A w
    compress_axial,        // (x, y) scaled by 1 - A exp(-z^2/2w^2): pinch near the mid-plane
    compress_longitudinal, // z scaled by 1 - A exp(-rho^2/2w^2): shortening near the axis
};

const char *warp_kind_name(WarpKind k);
std::optional<WarpKind> warp_kind_from_name(const std::string &name);
std::vector<WarpKind> all_warp_kinds();

// World-space warp y = phi(x) about `center` with characteristic width `extent`
// (mm) and dimensionless (or radian) `amplitude`.
struct AnalyticWarp {
    WarpKind kind = WarpKind::whirl;
    double amplitude = 0.0;
    Vec3 center;
    double extent = 1.0;
};

struct WarpSample {
    Vec3 y;        // phi(x)
    Mat3 jacobian; // d phi / dx, closed form
};

WarpSample eval_warp(const AnalyticWarp &w, const Vec3 &x);

// Analytic determinant of the warp Jacobian at x (no matrix assembly).
double warp_jacobian_det(const AnalyticWarp &w, const Vec3 &x);

// Solves phi(x) = y by damped Newton iteration (throws on non-convergence).
Vec3 invert_warp(const AnalyticWarp &w, const Vec3 &y, double tol = 1e-10, int max_iter = 100);

// Resamples v through the warp: out(x) = v(phi(x)), or out(x) = v(phi^-1(x))
// with `invert` (per-voxel Newton inversion).
ScalarVolume warp_volume_analytic(const ScalarVolume &v, const AnalyticWarp &w, bool invert = false);

// Family defaults scaled to the grid: center = grid center, extent = a fixed
// fraction of the smallest half-extent, amplitude chosen so the deformation is
// several voxels yet far from folding (det bounded well above zero).
AnalyticWarp default_warp(WarpKind kind, const GridGeometry &g);

// Solid ball of intensity 1 centered on the grid with a smoothstep edge ramp
// about one voxel wide; radius is a fraction of the smallest half-extent.
ScalarVolume make_sphere(const GridGeometry &g, double radius_frac = 0.30,
                         double ramp_voxels = 1.0);

// Classic C-versus-ball pair: the ball, and a "C" (the same ball with a smooth
// slab notch cut from the +x side) whose radius is adjusted so both shapes
// enclose the same integrated intensity to within 0.5%.
struct PhantomPair {
    ScalarVolume c_shape;
    ScalarVolume sphere;
};
PhantomPair make_c_sphere_pair(const GridGeometry &g);

// Deterministic smooth test texture: a broad base bump plus n_bumps random
// Gaussian bumps drawn from the seed (same seed, same volume, bit-for-bit).
ScalarVolume make_textured_blob(const GridGeometry &g, uint64_t seed, int n_bumps = 10);

struct PanelCase {
    std::string case_id;
    AnalyticWarp warp;
    std::string moving_file; // relative to the panel directory
};

struct PanelDescription {
    GridGeometry geometry;
    uint64_t seed = 0;
    std::string reference_file;
    std::vector<PanelCase> cases;
};

// Renders the five-family phantom panel into `dir`: a textured reference,
// one moving volume per warp family (reference resampled through the warp),
// and panel.json describing every case.
PanelDescription generate_panel(const std::string &dir, const GridGeometry &g, uint64_t seed);

// Reads a panel.json written by generate_panel.
PanelDescription load_panel_description(const std::string &path);

} // namespace symreg
