// phantom.cpp - analytic warp families, synthetic volumes, panel generation.
#include "symreg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "symreg/parallel.hpp"
#include "symreg/volume_io.hpp"

namespace symreg {

namespace {

void validate_warp(const AnalyticWarp &w) {
    if (!(w.extent > 0.0) || !std::isfinite(w.extent))
        throw std::invalid_argument("AnalyticWarp: extent must be positive and finite");
    if (!std::isfinite(w.amplitude)) throw std::invalid_argument("AnalyticWarp: non-finite amplitude");
    switch (w.kind) {
        case WarpKind::stretch:
            if (std::fabs(w.amplitude) >= 1.0)
                throw std::invalid_argument("AnalyticWarp: stretch needs |amplitude| < 1");
            break;
        case WarpKind::compress_axial:
        case WarpKind::compress_longitudinal:
            if (w.amplitude >= 1.0)
                throw std::invalid_argument("AnalyticWarp: compression needs amplitude < 1");
            break;
        default:
            break;
    }
}

double smoothstep01(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// Smooth 0->1 transition across u = 0, one `ramp` wide.
double smooth_edge(double u, double ramp) { return smoothstep01(u / ramp + 0.5); }

uint64_t splitmix64(uint64_t &s) {
    s += 0x9e3779b97f4a7c15ull;
    uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

double uniform01(uint64_t &s) { return static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53; }

double min_half_extent(const GridGeometry &g) {
    double e = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) e = std::min(e, 0.5 * g.spacing[a] * (g.dims[a] - 1));
    return e;
}

} // namespace

const char *warp_kind_name(WarpKind k) {
    switch (k) {
        case WarpKind::whirl: return "whirl";
        case WarpKind::twist: return "twist";
        case WarpKind::stretch: return "stretch";
        case WarpKind::compress_axial: return "compress_axial";
        case WarpKind::compress_longitudinal: return "compress_longitudinal";
    }
    return "unknown";
}

std::optional<WarpKind> warp_kind_from_name(const std::string &name) {
    for (WarpKind k : all_warp_kinds())
        if (name == warp_kind_name(k)) return k;
    return std::nullopt;
}

std::vector<WarpKind> all_warp_kinds() {
    return {WarpKind::whirl, WarpKind::twist, WarpKind::stretch, WarpKind::compress_axial,
            WarpKind::compress_longitudinal};
}

WarpSample eval_warp(const AnalyticWarp &w, const Vec3 &x) {
    validate_warp(w);
    const Vec3 u = x - w.center;
    const double A = w.amplitude, W = w.extent, iw2 = 1.0 / (W * W);
    WarpSample out;
    out.y = x;
    out.jacobian = Mat3::identity();

    switch (w.kind) {
        case WarpKind::whirl: {
            // Rotation about z by alpha(rho, z) = A exp(-(rho^2 + z^2) / 2W^2).
            // Any in-plane rotation with angle depending only on (rho, z) is
            // volume preserving: det J = 1 exactly.
            const double rho2 = u.x * u.x + u.y * u.y;
            const double alpha = A * std::exp(-0.5 * (rho2 + u.z * u.z) * iw2);
            const double beta = -alpha * iw2;      // (d alpha / d rho) / rho
            const double az = -alpha * u.z * iw2;  // d alpha / d z
            const double c = std::cos(alpha), s = std::sin(alpha);
            const double rx = u.x * c - u.y * s, ry = u.x * s + u.y * c;
            const double U = -u.x * s - u.y * c; // d rx / d alpha
            const double V = rx;                 // d ry / d alpha
            out.y = {w.center.x + rx, w.center.y + ry, x.z};
            out.jacobian.m = {c + U * beta * u.x, -s + U * beta * u.y, U * az,
                              s + V * beta * u.x, c + V * beta * u.y,  V * az,
                              0.0,                0.0,                 1.0};
            break;
        }
        case WarpKind::twist: {
            const double th = std::tanh(u.z / W);
            const double alpha = A * th;
            const double az = A * (1.0 - th * th) / W;
            const double c = std::cos(alpha), s = std::sin(alpha);
            const double rx = u.x * c - u.y * s, ry = u.x * s + u.y * c;
            const double U = -u.x * s - u.y * c, V = rx;
            out.y = {w.center.x + rx, w.center.y + ry, x.z};
            out.jacobian.m = {c, -s, U * az, s, c, V * az, 0.0, 0.0, 1.0};
            break;
        }
        case WarpKind::stretch: {
            const double th = std::tanh(u.y / W);
            out.y = {x.x, x.y + A * W * th, x.z};
            out.jacobian.m = {1.0, 0.0, 0.0, 0.0, 1.0 + A * (1.0 - th * th), 0.0, 0.0, 0.0, 1.0};
            break;
        }
        case WarpKind::compress_axial: {
            const double h = std::exp(-0.5 * u.z * u.z * iw2);
            const double f = 1.0 - A * h;
            const double hz = -u.z * h * iw2;
            out.y = {w.center.x + u.x * f, w.center.y + u.y * f, x.z};
            out.jacobian.m = {f, 0.0, -A * hz * u.x, 0.0, f, -A * hz * u.y, 0.0, 0.0, 1.0};
            break;
        }
        case WarpKind::compress_longitudinal: {
            const double rho2 = u.x * u.x + u.y * u.y;
            const double gfn = std::exp(-0.5 * rho2 * iw2);
            const double f = 1.0 - A * gfn;
            const double gx = -u.x * gfn * iw2, gy = -u.y * gfn * iw2;
            out.y = {x.x, x.y, w.center.z + u.z * f};
            out.jacobian.m = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -A * gx * u.z, -A * gy * u.z, f};
            break;
        }
    }
    return out;
}

double warp_jacobian_det(const AnalyticWarp &w, const Vec3 &x) {
    validate_warp(w);
    const Vec3 u = x - w.center;
    const double A = w.amplitude, W = w.extent, iw2 = 1.0 / (W * W);
    switch (w.kind) {
        case WarpKind::whirl:
        case WarpKind::twist:
            return 1.0;
        case WarpKind::stretch: {
            const double th = std::tanh(u.y / W);
            return 1.0 + A * (1.0 - th * th);
        }
        case WarpKind::compress_axial: {
            const double f = 1.0 - A * std::exp(-0.5 * u.z * u.z * iw2);
            return f * f;
        }
        case WarpKind::compress_longitudinal:
            return 1.0 - A * std::exp(-0.5 * (u.x * u.x + u.y * u.y) * iw2);
    }
    return 1.0;
}

Vec3 invert_warp(const AnalyticWarp &w, const Vec3 &y, double tol, int max_iter) {
    validate_warp(w);
    Vec3 x = y;
    double rn = (eval_warp(w, x).y - y).norm();
    for (int it = 0; it < max_iter; ++it) {
        if (rn <= tol) return x;
        const WarpSample s = eval_warp(w, x);
        const Vec3 r = s.y - y;
        const Vec3 step = s.jacobian.inverse().mul(r);
        double lambda = 1.0;
        bool accepted = false;
        for (int bt = 0; bt < 30; ++bt) {
            const Vec3 xn = x - step * lambda;
            const double rn2 = (eval_warp(w, xn).y - y).norm();
            if (rn2 < rn) {
                x = xn;
                rn = rn2;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!accepted) break;
    }
    if (rn <= tol) return x;
    throw std::runtime_error("invert_warp: Newton iteration did not converge");
}

ScalarVolume warp_volume_analytic(const ScalarVolume &v, const AnalyticWarp &w, bool invert) {
    validate_warp(w);
    v.geometry.validate();
    ScalarVolume out(v.geometry, 0.0);
    const int nx = v.geometry.dims[0], ny = v.geometry.dims[1];
    parallel_for(v.geometry.voxel_count(), [&](size_t v0, size_t v1) {
        for (size_t vi = v0; vi < v1; ++vi) {
            const int i = static_cast<int>(vi % static_cast<size_t>(nx));
            const size_t t = vi / static_cast<size_t>(nx);
            const int j = static_cast<int>(t % static_cast<size_t>(ny));
            const int k = static_cast<int>(t / static_cast<size_t>(ny));
            const Vec3 x = v.geometry.world(i, j, k);
            const Vec3 p = invert ? invert_warp(w, x) : eval_warp(w, x).y;
            out.data[vi] = sample_trilinear(v, p);
        }
    });
    return out;
}

AnalyticWarp default_warp(WarpKind kind, const GridGeometry &g) {
    g.validate();
    const double E = min_half_extent(g);
    AnalyticWarp w;
    w.kind = kind;
    w.center = g.center();
    switch (kind) {
        case WarpKind::whirl:
            w.amplitude = 0.5; // radians at the bump peak
            w.extent = 0.45 * E;
            break;
        case WarpKind::twist:
            w.amplitude = 0.4;
            w.extent = 0.5 * E;
            break;
        case WarpKind::stretch:
            w.amplitude = 0.3;
            w.extent = 0.5 * E;
            break;
        case WarpKind::compress_axial:
            w.amplitude = 0.25;
            w.extent = 0.5 * E;
            break;
        case WarpKind::compress_longitudinal:
            w.amplitude = 0.3;
            w.extent = 0.5 * E;
            break;
    }
    return w;
}

ScalarVolume make_sphere(const GridGeometry &g, double radius_frac, double ramp_voxels) {
    g.validate();
    if (!(radius_frac > 0.0) || !(ramp_voxels > 0.0))
        throw std::invalid_argument("make_sphere: radius_frac and ramp_voxels must be positive");
    const double R = radius_frac * min_half_extent(g);
    const double ramp = ramp_voxels * g.min_spacing();
    const Vec3 c = g.center();
    ScalarVolume out(g, 0.0);
    const int nx = g.dims[0], ny = g.dims[1];
    parallel_for(g.voxel_count(), [&](size_t v0, size_t v1) {
        for (size_t vi = v0; vi < v1; ++vi) {
            const int i = static_cast<int>(vi % static_cast<size_t>(nx));
            const size_t t = vi / static_cast<size_t>(nx);
            const int j = static_cast<int>(t % static_cast<size_t>(ny));
            const int k = static_cast<int>(t / static_cast<size_t>(ny));
            const double r = (g.world(i, j, k) - c).norm();
            out.data[vi] = smooth_edge(R - r, ramp);
        }
    });
    return out;
}

PhantomPair make_c_sphere_pair(const GridGeometry &g) {
    g.validate();
    PhantomPair pair;
    pair.sphere = make_sphere(g, 0.30, 1.0);
    const double target =
        std::accumulate(pair.sphere.data.begin(), pair.sphere.data.end(), 0.0);

    const double ramp = g.min_spacing();
    const Vec3 c = g.center();
    const double E = min_half_extent(g);
    const int nx = g.dims[0], ny = g.dims[1];

    auto render_c = [&](double rf) {
        const double R = rf * E;
        const double gap = 0.35 * R;
        ScalarVolume out(g, 0.0);
        parallel_for(g.voxel_count(), [&](size_t v0, size_t v1) {
            for (size_t vi = v0; vi < v1; ++vi) {
                const int i = static_cast<int>(vi % static_cast<size_t>(nx));
                const size_t t = vi / static_cast<size_t>(nx);
                const int j = static_cast<int>(t % static_cast<size_t>(ny));
                const int k = static_cast<int>(t / static_cast<size_t>(ny));
                const Vec3 u = g.world(i, j, k) - c;
                const double r = u.norm();
                const double ball = smooth_edge(R - r, ramp);
                const double notch =
                    smooth_edge(u.x, ramp) * smooth_edge(gap - std::fabs(u.y), ramp);
                out.data[vi] = ball * (1.0 - notch);
            }
        });
        return out;
    };

    // The notch removes mass, so grow the C radius until the integrated
    // intensities match within 0.5% (monotone in the radius -> bisection).
    double lo = 0.30, hi = 0.42;
    ScalarVolume best = render_c(lo);
    for (int it = 0; it < 24; ++it) {
        const double mid = 0.5 * (lo + hi);
        ScalarVolume cand = render_c(mid);
        const double mass = std::accumulate(cand.data.begin(), cand.data.end(), 0.0);
        best = std::move(cand);
        if (std::fabs(mass - target) <= 0.005 * target) break;
        if (mass < target)
            lo = mid;
        else
            hi = mid;
    }
    pair.c_shape = std::move(best);
    return pair;
}

ScalarVolume make_textured_blob(const GridGeometry &g, uint64_t seed, int n_bumps) {
    g.validate();
    if (n_bumps < 0) throw std::invalid_argument("make_textured_blob: n_bumps must be >= 0");
    const double E = min_half_extent(g);
    const Vec3 c = g.center();

    struct Bump {
        Vec3 pos;
        double inv2s2, amp;
    };
    std::vector<Bump> bumps;
    bumps.push_back({c, 1.0 / (2.0 * (0.6 * E) * (0.6 * E)), 1.0});
    uint64_t s = seed;
    for (int b = 0; b < n_bumps; ++b) {
        Bump bp;
        for (int a = 0; a < 3; ++a) {
            const double half = 0.5 * g.spacing[a] * (g.dims[a] - 1);
            bp.pos[a] = c[a] + (uniform01(s) * 1.6 - 0.8) * half;
        }
        const double sigma = (0.10 + 0.15 * uniform01(s)) * E;
        bp.inv2s2 = 1.0 / (2.0 * sigma * sigma);
        bp.amp = (0.35 + 0.65 * uniform01(s)) * ((splitmix64(s) & 1u) ? 1.0 : -1.0);
        bumps.push_back(bp);
    }

    ScalarVolume out(g, 0.0);
    const int nx = g.dims[0], ny = g.dims[1];
    parallel_for(g.voxel_count(), [&](size_t v0, size_t v1) {
        for (size_t vi = v0; vi < v1; ++vi) {
            const int i = static_cast<int>(vi % static_cast<size_t>(nx));
            const size_t t = vi / static_cast<size_t>(nx);
            const int j = static_cast<int>(t % static_cast<size_t>(ny));
            const int k = static_cast<int>(t / static_cast<size_t>(ny));
            const Vec3 x = g.world(i, j, k);
            double val = 0.0;
            for (const Bump &bp : bumps) {
                const Vec3 d = x - bp.pos;
                val += bp.amp * std::exp(-d.dot(d) * bp.inv2s2);
            }
            out.data[vi] = val;
        }
    });
    return out;
}

PanelDescription generate_panel(const std::string &dir, const GridGeometry &g, uint64_t seed) {
    g.validate();
    std::filesystem::create_directories(dir);

    PanelDescription pd;
    pd.geometry = g;
    pd.seed = seed;
    pd.reference_file = "reference.srv";

    const ScalarVolume ref = make_textured_blob(g, seed);
    save_volume(ref, dir + "/" + pd.reference_file);

    nlohmann::json cases = nlohmann::json::array();
    for (WarpKind kind : all_warp_kinds()) {
        PanelCase pc;
        pc.case_id = warp_kind_name(kind);
        pc.warp = default_warp(kind, g);
        pc.moving_file = std::string(warp_kind_name(kind)) + ".srv";
        const ScalarVolume moving = warp_volume_analytic(ref, pc.warp);
        save_volume(moving, dir + "/" + pc.moving_file);
        cases.push_back({{"case_id", pc.case_id},
                         {"warp_kind", warp_kind_name(kind)},
                         {"amplitude", pc.warp.amplitude},
                         {"extent", pc.warp.extent},
                         {"center", {pc.warp.center.x, pc.warp.center.y, pc.warp.center.z}},
                         {"moving_file", pc.moving_file}});
        pd.cases.push_back(std::move(pc));
    }

    nlohmann::json doc = {
        {"format", "symreg-panel-v1"},
        {"seed", seed},
        {"dims", {g.dims[0], g.dims[1], g.dims[2]}},
        {"spacing", {g.spacing[0], g.spacing[1], g.spacing[2]}},
        {"origin", {g.origin[0], g.origin[1], g.origin[2]}},
        {"reference_file", pd.reference_file},
        {"cases", cases},
    };
    std::ofstream f(dir + "/panel.json");
    if (!f) throw std::runtime_error("generate_panel: cannot write " + dir + "/panel.json");
    f << doc.dump(2) << "\n";
    return pd;
}

PanelDescription load_panel_description(const std::string &path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_panel_description: cannot open " + path);
    nlohmann::json doc = nlohmann::json::parse(f);
    if (doc.value("format", "") != "symreg-panel-v1")
        throw std::runtime_error("load_panel_description: unrecognized descriptor format");

    PanelDescription pd;
    for (int a = 0; a < 3; ++a) {
        pd.geometry.dims[a] = doc.at("dims").at(a).get<int>();
        pd.geometry.spacing[a] = doc.at("spacing").at(a).get<double>();
        pd.geometry.origin[a] = doc.at("origin").at(a).get<double>();
    }
    pd.geometry.validate();
    pd.seed = doc.at("seed").get<uint64_t>();
    pd.reference_file = doc.at("reference_file").get<std::string>();
    for (const auto &jc : doc.at("cases")) {
        PanelCase pc;
        pc.case_id = jc.at("case_id").get<std::string>();
        const auto kind = warp_kind_from_name(jc.at("warp_kind").get<std::string>());
        if (!kind) throw std::runtime_error("load_panel_description: unknown warp kind");
        pc.warp.kind = *kind;
        pc.warp.amplitude = jc.at("amplitude").get<double>();
        pc.warp.extent = jc.at("extent").get<double>();
        pc.warp.center = {jc.at("center").at(0).get<double>(), jc.at("center").at(1).get<double>(),
                          jc.at("center").at(2).get<double>()};
        pc.moving_file = jc.at("moving_file").get<std::string>();
        pd.cases.push_back(std::move(pc));
    }
    return pd;
}

} // namespace symreg
