#pragma once

/// Strip-supported vector fields and the discrete self-similar extension.
///
/// A StripField stores velocity samples on a StripGrid plus a fitted far-field
/// model A(direction, time) <x>^{-(1+gamma)} beyond the outermost shell.
/// Interpolation is cubic (Catmull-Rom) in log-radius and in log-time, and
/// either bilinear or truncated spherical-harmonic in angle. Time slices
/// outside [1, lambda^2) are never stored: the evaluator reaches them through
/// the exact identity v(x, lambda^2 t) = (1/lambda) v(x/lambda, t), so strip
/// boundary compatibility holds by construction.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "dsslab/common.hpp"
#include "dsslab/grid.hpp"

namespace dsslab {

enum class AngularInterp { bilinear, harmonic };

struct StripField {
    std::shared_ptr<const StripGrid> grid;
    double gamma = 0.5;
    AngularInterp ang_interp = AngularInterp::bilinear;
    std::vector<Vec3> samples;  // (time, shell, angle)
    std::vector<Vec3> tail;     // (time, angle) amplitudes

    // spherical-harmonic coefficients, present only after prepare_harmonic()
    std::vector<double> harm;       // (time, shell, coeff, component)
    std::vector<double> harm_tail;  // (time, coeff, component)

    size_t idx(int it, int ir, int ia) const {
        return (size_t(it) * grid->n_rho + ir) * grid->n_ang() + ia;
    }
    size_t tidx(int it, int ia) const { return size_t(it) * grid->n_ang() + ia; }
    Vec3& at(int it, int ir, int ia) { return samples[idx(it, ir, ia)]; }
    const Vec3& at(int it, int ir, int ia) const { return samples[idx(it, ir, ia)]; }
};

inline StripField make_strip_field(std::shared_ptr<const StripGrid> grid, double gamma) {
    require(gamma > 0.0 && gamma <= 1.0, "field: gamma must lie in (0,1]");
    StripField f;
    f.grid = std::move(grid);
    f.gamma = gamma;
    f.samples.assign(size_t(f.grid->n_time) * f.grid->n_rho * f.grid->n_ang(), Vec3{});
    f.tail.assign(size_t(f.grid->n_time) * f.grid->n_ang(), Vec3{});
    return f;
}

/// Least-squares fit of the tail amplitudes from the outermost two shells.
inline void fit_tail(StripField& f) {
    const StripGrid& g = *f.grid;
    int s0 = g.n_rho - 2, s1 = g.n_rho - 1;
    double w0 = std::pow(bracket(g.radius(s0)), -(1.0 + f.gamma));
    double w1 = std::pow(bracket(g.radius(s1)), -(1.0 + f.gamma));
    double denom = w0 * w0 + w1 * w1;
    for (int it = 0; it < g.n_time; ++it)
        for (int ia = 0; ia < g.n_ang(); ++ia) {
            Vec3 a = w0 * f.at(it, s0, ia) + w1 * f.at(it, s1, ia);
            f.tail[f.tidx(it, ia)] = (1.0 / denom) * a;
        }
}

namespace detail {

/// Angular interpolation stencil: value = sum w_k * ring_sample[idx_k].
struct AngStencil {
    std::vector<std::pair<int, double>> terms;
};

inline void ring_pair(const StripGrid& g, int itheta, double phi, double wgt,
                      AngStencil& st) {
    double u = phi * g.n_phi / (2.0 * kPi) - 0.5;
    int jp = int(std::floor(u));
    double fu = u - jp;
    int p0 = ((jp % g.n_phi) + g.n_phi) % g.n_phi;
    int p1 = (p0 + 1) % g.n_phi;
    st.terms.push_back({itheta * g.n_phi + p0, wgt * (1.0 - fu)});
    st.terms.push_back({itheta * g.n_phi + p1, wgt * fu});
}

inline AngStencil make_ang_stencil(const StripGrid& g, Vec3 dir) {
    AngStencil st;
    double c = std::min(1.0, std::max(-1.0, dir.z));
    double phi = std::atan2(dir.y, dir.x);
    if (phi < 0.0) phi += 2.0 * kPi;
    const std::vector<double>& ct = g.cos_theta;
    int nt = g.n_theta;
    if (c >= ct[size_t(nt - 1)]) {
        // continue the top ring through the pole: the point at colatitude
        // -theta equals the ring value at phi + pi, so interpolating linearly
        // in colatitude between the ring and its reflection is second order
        double th_top = std::acos(ct[size_t(nt - 1)]);
        double wr = (th_top - std::acos(c)) / (2.0 * th_top);
        ring_pair(g, nt - 1, phi, 1.0 - wr, st);
        ring_pair(g, nt - 1, phi + kPi, wr, st);
    } else if (c <= ct[0]) {
        double al_bot = kPi - std::acos(ct[0]);
        double wr = (al_bot - (kPi - std::acos(c))) / (2.0 * al_bot);
        ring_pair(g, 0, phi, 1.0 - wr, st);
        ring_pair(g, 0, phi + kPi, wr, st);
    } else {
        int lo = 0;
        while (lo + 1 < nt - 1 && ct[size_t(lo + 1)] <= c) ++lo;
        // interpolate in colatitude, where smooth fields stay analytic at the
        // poles; in cos(theta) they pick up square-root behavior instead
        double th_lo = std::acos(ct[size_t(lo)]), th_hi = std::acos(ct[size_t(lo + 1)]);
        double fc = (std::acos(c) - th_lo) / (th_hi - th_lo);
        ring_pair(g, lo, phi, 1.0 - fc, st);
        ring_pair(g, lo + 1, phi, fc, st);
    }
    return st;
}

/// Catmull-Rom weights for the four stencil points around fraction u in [0,1].
inline void catmull_rom(double u, double w[4]) {
    double u2 = u * u, u3 = u2 * u;
    w[0] = 0.5 * (-u3 + 2.0 * u2 - u);
    w[1] = 0.5 * (3.0 * u3 - 5.0 * u2 + 2.0);
    w[2] = 0.5 * (-3.0 * u3 + 4.0 * u2 + u);
    w[3] = 0.5 * (u3 - u2);
}

// ---- real spherical harmonics (4 pi - orthonormal) ----

inline int harm_lmax(const StripGrid& g) {
    return std::min(g.n_theta - 1, g.n_phi / 2 - 1);
}

inline int harm_count(int lmax) { return (lmax + 1) * (lmax + 1); }

/// Evaluate all basis functions at one direction. Layout per l: m = 0, then
/// (cos, sin) pairs for m = 1..l, skipping m > lmax implicitly by the caller.
inline void harm_basis(int lmax, Vec3 dir, std::vector<double>& y) {
    y.assign(size_t(harm_count(lmax)), 0.0);
    double c = dir.z;
    double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    double phi = std::atan2(dir.y, dir.x);
    // fully normalized associated Legendre values P[l][m]
    std::vector<double> P(size_t(lmax + 1) * (lmax + 1), 0.0);
    auto pidx = [lmax](int l, int m) { return size_t(l) * (lmax + 1) + m; };
    P[pidx(0, 0)] = std::sqrt(1.0 / (4.0 * kPi));
    for (int m = 1; m <= lmax; ++m)
        P[pidx(m, m)] = -std::sqrt(1.0 + 0.5 / m) * s * P[pidx(m - 1, m - 1)];
    for (int m = 0; m < lmax; ++m)
        P[pidx(m + 1, m)] = std::sqrt(2.0 * m + 3.0) * c * P[pidx(m, m)];
    for (int m = 0; m <= lmax; ++m)
        for (int l = m + 2; l <= lmax; ++l) {
            double a = std::sqrt((4.0 * l * l - 1.0) / (double(l) * l - double(m) * m));
            double b = std::sqrt(((2.0 * l + 1.0) * (l - 1.0 + m) * (l - 1.0 - m)) /
                                 ((2.0 * l - 3.0) * (double(l) * l - double(m) * m)));
            P[pidx(l, m)] = a * c * P[pidx(l - 1, m)] - b * P[pidx(l - 2, m)];
        }
    const double sq2 = std::sqrt(2.0);
    int k = 0;
    for (int l = 0; l <= lmax; ++l) {
        y[size_t(k++)] = P[pidx(l, 0)];
        for (int m = 1; m <= l; ++m) {
            y[size_t(k++)] = sq2 * P[pidx(l, m)] * std::cos(m * phi);
            y[size_t(k++)] = sq2 * P[pidx(l, m)] * std::sin(m * phi);
        }
    }
}

}  // namespace detail

/// Project all sample rings onto the spherical-harmonic basis. Call after the
/// samples are final; evaluation with AngularInterp::harmonic requires it.
inline void prepare_harmonic(StripField& f) {
    const StripGrid& g = *f.grid;
    int lmax = detail::harm_lmax(g);
    int nc = detail::harm_count(lmax);
    std::vector<std::vector<double>> basis(size_t(g.n_ang()));
    for (int ia = 0; ia < g.n_ang(); ++ia)
        detail::harm_basis(lmax, g.ang[size_t(ia)].dir, basis[size_t(ia)]);
    auto analyze = [&](auto sample_at, double* out) {
        for (int k = 0; k < nc * 3; ++k) out[k] = 0.0;
        for (int ia = 0; ia < g.n_ang(); ++ia) {
            Vec3 v = sample_at(ia);
            double w = g.ang[size_t(ia)].weight;
            for (int k = 0; k < nc; ++k) {
                double wy = w * basis[size_t(ia)][size_t(k)];
                out[k * 3 + 0] += wy * v.x;
                out[k * 3 + 1] += wy * v.y;
                out[k * 3 + 2] += wy * v.z;
            }
        }
    };
    f.harm.assign(size_t(g.n_time) * g.n_rho * nc * 3, 0.0);
    f.harm_tail.assign(size_t(g.n_time) * nc * 3, 0.0);
    for (int it = 0; it < g.n_time; ++it) {
        for (int ir = 0; ir < g.n_rho; ++ir)
            analyze([&](int ia) { return f.at(it, ir, ia); },
                    &f.harm[(size_t(it) * g.n_rho + ir) * nc * 3]);
        analyze([&](int ia) { return f.tail[f.tidx(it, ia)]; },
                &f.harm_tail[size_t(it) * nc * 3]);
    }
}

namespace detail {

/// Angular evaluation of one stored ring (shell or tail) at a direction.
inline Vec3 ring_eval(const StripField& f, int it, int ir_or_tail, bool is_tail,
                      const AngStencil& st, const std::vector<double>& basis) {
    const StripGrid& g = *f.grid;
    Vec3 out{};
    if (f.ang_interp == AngularInterp::harmonic) {
        int nc = harm_count(harm_lmax(g));
        const double* c = is_tail
                              ? &f.harm_tail[size_t(it) * nc * 3]
                              : &f.harm[(size_t(it) * g.n_rho + ir_or_tail) * nc * 3];
        for (int k = 0; k < nc; ++k) {
            double y = basis[size_t(k)];
            out.x += c[k * 3 + 0] * y;
            out.y += c[k * 3 + 1] * y;
            out.z += c[k * 3 + 2] * y;
        }
        return out;
    }
    for (const auto& [ia, w] : st.terms) {
        const Vec3& v = is_tail ? f.tail[f.tidx(it, ia)] : f.at(it, ir_or_tail, ia);
        out += w * v;
    }
    return out;
}

/// Evaluate one stored time slice at a spatial point.
inline Vec3 slice_eval(const StripField& f, int it, Vec3 x) {
    const StripGrid& g = *f.grid;
    double r = norm(x);
    std::vector<double> basis;
    if (r == 0.0) {
        // direction-free point: angular mean of the innermost shell
        Vec3 m{};
        double wsum = 0.0;
        for (int ia = 0; ia < g.n_ang(); ++ia) {
            m += g.ang[size_t(ia)].weight * f.at(it, 0, ia);
            wsum += g.ang[size_t(ia)].weight;
        }
        return (1.0 / wsum) * m;
    }
    Vec3 dir = (1.0 / r) * x;
    AngStencil st;
    if (f.ang_interp == AngularInterp::harmonic) {
        require(!f.harm.empty(), "field: prepare_harmonic() has not been called");
        harm_basis(harm_lmax(g), dir, basis);
    } else {
        st = make_ang_stencil(g, dir);
    }
    double tail_pow = std::pow(bracket(r), -(1.0 + f.gamma));
    double q = (std::log(r) - g.rho_min) / g.d_rho;
    if (q >= g.n_rho - 1) return tail_pow * ring_eval(f, it, 0, true, st, basis);
    if (q <= 0.0) return ring_eval(f, it, 0, false, st, basis);
    int iq = int(std::floor(q));
    double w[4];
    catmull_rom(q - iq, w);
    Vec3 out{};
    for (int m = 0; m < 4; ++m) {
        int s = iq - 1 + m;
        Vec3 val;
        if (s < 0) {
            val = ring_eval(f, it, 0, false, st, basis);
        } else if (s >= g.n_rho) {
            double rp = std::pow(bracket(std::exp(g.rho(s))), -(1.0 + f.gamma));
            val = rp * ring_eval(f, it, 0, true, st, basis);
        } else {
            val = ring_eval(f, it, s, false, st, basis);
        }
        out += w[m] * val;
    }
    return out;
}

}  // namespace detail

/// Interpolated value for t within [1, lambda^2]; the cubic time stencil
/// reaches across the strip boundary through the exact rescaling identity.
inline Vec3 strip_eval(const StripField& f, Vec3 x, double t) {
    const StripGrid& g = *f.grid;
    double l2 = g.lambda * g.lambda;
    require(t >= 1.0 - 1e-12 && t <= l2 * (1.0 + 1e-12), "strip_eval: t outside strip");
    double theta = g.n_time * std::log(std::max(t, 1.0)) / std::log(l2);
    if (theta > g.n_time) theta = g.n_time;
    int ib = int(std::floor(theta));
    double w[4];
    detail::catmull_rom(theta - ib, w);
    Vec3 out{};
    for (int m = 0; m < 4; ++m) {
        int s = ib - 1 + m;
        int e = s >= 0 ? s / g.n_time : -((-s - 1) / g.n_time + 1);
        int s0 = s - e * g.n_time;
        double scale = std::pow(g.lambda, double(-e));
        out += (w[m] * scale) * detail::slice_eval(f, s0, scale * x);
    }
    return out;
}

/// E v: reduce (x,t) to the strip by the unique epoch shift, then interpolate.
inline Vec3 dss_extend(const StripField& f, Vec3 x, double t) {
    if (!(t > 0.0)) fail("dss_extend: t must be positive");
    double tr = t;
    int k = strip_reduce(f.grid->lambda, tr);
    double scale = std::pow(f.grid->lambda, double(k));
    return scale * strip_eval(f, scale * x, tr);
}

/// Weighted sup norm: sup <x>^{1+gamma} |v| over samples and tail amplitudes.
inline double x_norm(const StripField& f) {
    const StripGrid& g = *f.grid;
    double best = 0.0;
    for (int ir = 0; ir < g.n_rho; ++ir) {
        double w = std::pow(bracket(g.radius(ir)), 1.0 + f.gamma);
        for (int it = 0; it < g.n_time; ++it)
            for (int ia = 0; ia < g.n_ang(); ++ia)
                best = std::max(best, w * norm(f.at(it, ir, ia)));
    }
    for (const Vec3& a : f.tail) best = std::max(best, norm(a));
    return best;
}

/// Same norm applied to the difference of two fields on one grid.
inline double x_norm_diff(const StripField& a, const StripField& b) {
    require(a.grid == b.grid && a.samples.size() == b.samples.size(),
            "x_norm_diff: fields live on different grids");
    const StripGrid& g = *a.grid;
    double best = 0.0;
    for (int ir = 0; ir < g.n_rho; ++ir) {
        double w = std::pow(bracket(g.radius(ir)), 1.0 + a.gamma);
        for (int it = 0; it < g.n_time; ++it)
            for (int ia = 0; ia < g.n_ang(); ++ia)
                best = std::max(best, w * norm(a.at(it, ir, ia) - b.at(it, ir, ia)));
    }
    for (size_t i = 0; i < a.tail.size(); ++i)
        best = std::max(best, norm(a.tail[i] - b.tail[i]));
    return best;
}

/// y := y + c x on samples and tail.
inline void field_axpy(double c, const StripField& x, StripField& y) {
    require(x.samples.size() == y.samples.size(), "field_axpy: size mismatch");
    for (size_t i = 0; i < y.samples.size(); ++i) y.samples[i] += c * x.samples[i];
    for (size_t i = 0; i < y.tail.size(); ++i) y.tail[i] += c * x.tail[i];
}

inline void field_scale(double c, StripField& y) {
    for (Vec3& v : y.samples) v = c * v;
    for (Vec3& v : y.tail) v = c * v;
}

/// Populate samples from an evaluator (x, t) -> velocity, then fit the tail.
template <class F>
inline void fill_field(StripField& f, F&& eval) {
    const StripGrid& g = *f.grid;
    for (int it = 0; it < g.n_time; ++it)
        for (int ir = 0; ir < g.n_rho; ++ir)
            for (int ia = 0; ia < g.n_ang(); ++ia)
                f.at(it, ir, ia) = eval(g.node(ir, ia), g.time_nodes[size_t(it)]);
    fit_tail(f);
}

// ---- snapshot persistence (plain text, bit-exact round trip) ----

inline void write_snapshot(const StripField& f, const std::string& path,
                           const std::string& config_hash = "0") {
    const StripGrid& g = *f.grid;
    FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) fail("write_snapshot: cannot open " + path);
    std::fprintf(fp, "dsslab-field-snapshot v1\n");
    std::fprintf(fp, "config_hash=%s\n", config_hash.c_str());
    std::fprintf(fp, "lambda=%.17g\n", g.lambda);
    std::fprintf(fp, "shells_per_epoch=%d\n", g.shells_per_epoch);
    std::fprintf(fp, "n_rho=%d\n", g.n_rho);
    std::fprintf(fp, "rho_min=%.17g\n", g.rho_min);
    std::fprintf(fp, "n_theta=%d\n", g.n_theta);
    std::fprintf(fp, "n_phi=%d\n", g.n_phi);
    std::fprintf(fp, "n_time=%d\n", g.n_time);
    std::fprintf(fp, "gamma=%.17g\n", f.gamma);
    std::fprintf(fp, "angular_interp=%s\n",
                 f.ang_interp == AngularInterp::harmonic ? "harmonic" : "bilinear");
    std::fprintf(fp, "samples=%zu\n", f.samples.size());
    for (int it = 0; it < g.n_time; ++it)
        for (int ir = 0; ir < g.n_rho; ++ir)
            for (int ia = 0; ia < g.n_ang(); ++ia) {
                const Vec3& v = f.at(it, ir, ia);
                std::fprintf(fp, "%d %d %d %.17g %.17g %.17g\n", it, ir, ia, v.x, v.y,
                             v.z);
            }
    std::fprintf(fp, "tail=%zu\n", f.tail.size());
    for (int it = 0; it < g.n_time; ++it)
        for (int ia = 0; ia < g.n_ang(); ++ia) {
            const Vec3& v = f.tail[f.tidx(it, ia)];
            std::fprintf(fp, "%d %d %.17g %.17g %.17g\n", it, ia, v.x, v.y, v.z);
        }
    std::fprintf(fp, "end\n");
    std::fclose(fp);
}

inline StripField read_snapshot(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "r");
    if (!fp) fail("read_snapshot: cannot open " + path);
    char line[512];
    auto next_line = [&]() -> std::string {
        if (!std::fgets(line, sizeof line, fp)) {
            std::fclose(fp);
            fail("read_snapshot: truncated file " + path);
        }
        std::string s(line);
        while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
        return s;
    };
    auto kv = [&](const std::string& key) -> std::string {
        std::string s = next_line();
        auto eq = s.find('=');
        if (eq == std::string::npos || s.substr(0, eq) != key) {
            std::fclose(fp);
            fail("read_snapshot: expected key " + key);
        }
        return s.substr(eq + 1);
    };
    if (next_line() != "dsslab-field-snapshot v1") {
        std::fclose(fp);
        fail("read_snapshot: unrecognized header in " + path);
    }
    kv("config_hash");
    GridSpec spec;
    spec.lambda = parse_double(kv("lambda"));
    spec.shells_per_epoch = int(parse_long(kv("shells_per_epoch")));
    spec.n_rho = int(parse_long(kv("n_rho")));
    spec.rho_min = parse_double(kv("rho_min"));
    spec.n_theta = int(parse_long(kv("n_theta")));
    spec.n_phi = int(parse_long(kv("n_phi")));
    spec.n_time = int(parse_long(kv("n_time")));
    double gamma = parse_double(kv("gamma"));
    std::string interp = kv("angular_interp");
    auto grid = std::make_shared<StripGrid>(make_strip_grid(spec));
    StripField f = make_strip_field(grid, gamma);
    f.ang_interp = interp == "harmonic" ? AngularInterp::harmonic : AngularInterp::bilinear;
    size_t ns = size_t(parse_long(kv("samples")));
    if (ns != f.samples.size()) {
        std::fclose(fp);
        fail("read_snapshot: sample count mismatch");
    }
    for (size_t i = 0; i < ns; ++i) {
        int it, ir, ia;
        double a, b, c;
        if (std::fscanf(fp, "%d %d %d %lg %lg %lg\n", &it, &ir, &ia, &a, &b, &c) != 6) {
            std::fclose(fp);
            fail("read_snapshot: bad sample record");
        }
        f.at(it, ir, ia) = {a, b, c};
    }
    size_t nt = size_t(parse_long(kv("tail")));
    if (nt != f.tail.size()) {
        std::fclose(fp);
        fail("read_snapshot: tail count mismatch");
    }
    for (size_t i = 0; i < nt; ++i) {
        int it, ia;
        double a, b, c;
        if (std::fscanf(fp, "%d %d %lg %lg %lg\n", &it, &ia, &a, &b, &c) != 5) {
            std::fclose(fp);
            fail("read_snapshot: bad tail record");
        }
        f.tail[f.tidx(it, ia)] = {a, b, c};
    }
    std::fclose(fp);
    if (f.ang_interp == AngularInterp::harmonic) prepare_harmonic(f);
    return f;
}

// ---- pointwise diagnostics ----

struct SwirlReport {
    double max_swirl = 0.0;
    int skipped = 0;
};

/// Max magnitude of the azimuthal component u . (-x2/r, x1/r, 0) over points.
template <class F>
inline SwirlReport swirl_component(F&& eval, const std::vector<Vec3>& points) {
    SwirlReport rep;
    for (const Vec3& x : points) {
        double r = std::hypot(x.x, x.y);
        if (r < 1e-13 * (1.0 + std::fabs(x.z))) {
            ++rep.skipped;
            continue;
        }
        Vec3 etheta{-x.y / r, x.x / r, 0.0};
        rep.max_swirl = std::max(rep.max_swirl, std::fabs(dot(eval(x), etheta)));
    }
    return rep;
}

/// Max central-difference divergence magnitude over probe points.
template <class F>
inline double divergence_residual(F&& eval, const std::vector<Vec3>& points, double h) {
    require(h > 0.0, "divergence_residual: h must be positive");
    Vec3 e[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    double worst = 0.0;
    for (const Vec3& x : points) {
        double div = 0.0;
        for (int i = 0; i < 3; ++i)
            div += (eval(x + h * e[i])[i] - eval(x - h * e[i])[i]) / (2.0 * h);
        worst = std::max(worst, std::fabs(div));
    }
    return worst;
}

}  // namespace dsslab
