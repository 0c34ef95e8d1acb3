#pragma once

/// Heat semigroup for discretely self-similar initial data.
///
/// The datum is a finite sum of separable channels
///
///   u0(y) = sum over (q, trig) of trig(q kappa log|y|) (1/|y|) A_q(yhat),
///
/// with polynomial angular parts A_q, so expanding A_q in real spherical
/// harmonics reduces the Gaussian convolution to one-dimensional radial
/// integrals: with R = |x|, z = R r / (2t) and itilde_l(z) = e^{-z} i_l(z)
/// (the scaled modified spherical Bessel function),
///
///   U(x,t) = 4 pi (4 pi t)^{-3/2} sum over channels, l, m of
///            a_lm Y_lm(xhat) Integral e^{-(R-r)^2/(4t)} itilde_l(z)
///                                    trig(q kappa log r) r dr.
///
/// The radial integral is taken over the ladder of annuli lambda^j <= r <=
/// lambda^{j+1}; each annulus maps onto the fundamental one by the exact
/// log-shift (the trig argument is reduced mod log lambda), the ladder is cut
/// outward where the Gaussian weight of the nearest annulus point drops below
/// 1e-16 and inward where the residual mass bound does. Node density per
/// annulus tracks both the Gaussian width and the channel oscillation, so
/// rough lacunary data integrates accurately too.

#include <cmath>
#include <vector>

#include "dsslab/common.hpp"
#include "dsslab/fields.hpp"
#include "dsslab/grid.hpp"
#include "dsslab/initial_data.hpp"
#include "dsslab/quadrature.hpp"

namespace dsslab {

/// One radial Fourier channel of the datum with its angular SH coefficients.
struct HeatChannel {
    int q = 0;
    bool use_sin = false;
    std::vector<Vec3> alm;  // (lmax+1)^2 coefficients of r u0 restricted to the channel
};

struct HeatExpansion {
    double lambda = 2.0;
    double kappa = 0.0;
    int lmax = 0;
    double c_star = 0.0;
    std::vector<HeatChannel> channels;

    int n_coef() const { return (lmax + 1) * (lmax + 1); }
    int q_max() const {
        int q = 0;
        for (const HeatChannel& c : channels) q = std::max(q, c.q);
        return q;
    }
};

namespace detail {

/// Scaled modified spherical Bessel functions e^{-z} i_l(z) for l = 0..lmax.
/// Small z uses the power series; large z the upward recurrence from the
/// closed forms for l = 0, 1 (stable once z dominates the order); in between
/// Miller's downward recurrence anchored on the closed form for l = 0, with
/// the starting order pushed past the turning point l ~ z so the unwanted
/// solution actually dies out.
inline void bessel_i_scaled(int lmax, double z, double* out) {
    require(z >= 0.0 && lmax >= 0 && lmax <= 24, "bessel: bad arguments");
    if (z < 1e-12) {
        out[0] = 1.0 - z;  // e^{-z} i_0(z) to first order
        for (int l = 1; l <= lmax; ++l) out[l] = 0.0;
        return;
    }
    if (z < 0.5) {
        double ez = std::exp(-z);
        for (int l = 0; l <= lmax; ++l) {
            // i_l(z) = z^l / (2l+1)!! * sum_k (z^2/2)^k / (k! (2l+3)(2l+5)...(2l+2k+1))
            double df = 1.0;
            for (int j = 2 * l + 1; j > 1; j -= 2) df *= j;
            double term = 1.0, sum = 1.0;
            for (int k = 1; k <= 12; ++k) {
                term *= 0.5 * z * z / (k * (2.0 * l + 2.0 * k + 1.0));
                sum += term;
                if (term < 1e-18 * sum) break;
            }
            out[l] = ez * std::pow(z, double(l)) / df * sum;
        }
        return;
    }
    double i0 = -std::expm1(-2.0 * z) / (2.0 * z);
    if (z >= std::max(30.0, 2.0 * lmax)) {
        out[0] = i0;
        if (lmax >= 1) out[1] = ((z - 1.0) + (z + 1.0) * std::exp(-2.0 * z)) / (2.0 * z * z);
        for (int l = 1; l < lmax; ++l)
            out[l + 1] = out[l - 1] - (2.0 * l + 1.0) / z * out[l];
        return;
    }
    int top = lmax + 16 + int(2.0 * z);
    std::vector<double> p(size_t(top) + 2, 0.0);
    p[size_t(top) + 1] = 0.0;
    p[size_t(top)] = 1e-250;
    for (int l = top; l >= 1; --l)
        p[size_t(l) - 1] = p[size_t(l) + 1] + (2.0 * l + 1.0) / z * p[size_t(l)];
    double scale = i0 / p[0];
    for (int l = 0; l <= lmax; ++l) out[l] = scale * p[size_t(l)];
}

}  // namespace detail

/// Build the channel expansion of a datum: an exact radial DFT over one log
/// period combined with an exact spherical-harmonic projection of the (poly-
/// nomial) angular parts; the reconstruction error is pure rounding.
inline HeatExpansion heat_expansion(const DssInitialData& d) {
    HeatExpansion e;
    e.lambda = d.lambda;
    e.kappa = d.kappa;
    e.c_star = d.c_star;
    int deg = 0, q_max = 0;
    for (const PotentialTerm& t : d.terms) {
        deg = std::max(deg, t.ex + t.ey + t.ez);
        q_max = std::max(q_max, t.q);
    }
    if (d.terms.empty()) return e;
    e.lmax = deg + 1;
    int nc = e.n_coef();

    // angular quadrature exact through polynomial degree 2 lmax + 1
    int n_theta = e.lmax + 2, n_phi = 2 * e.lmax + 4;
    Quad1D gl = gauss_legendre(n_theta);
    struct ANode {
        Vec3 dir;
        double w;
    };
    std::vector<ANode> ang;
    for (int it = 0; it < n_theta; ++it)
        for (int ip = 0; ip < n_phi; ++ip) {
            double c = gl.nodes[size_t(it)], s = std::sqrt(std::max(0.0, 1.0 - c * c));
            double ph = 2.0 * kPi * (ip + 0.5) / n_phi;
            ang.push_back({{s * std::cos(ph), s * std::sin(ph), c},
                           gl.weights[size_t(it)] * 2.0 * kPi / n_phi});
        }

    int nrho = 4 * (q_max + 1);
    double dl = std::log(d.lambda);
    std::vector<std::vector<double>> basis(ang.size());
    std::vector<std::vector<Vec3>> samples(ang.size());  // r u0(r dir) at rho nodes
    for (size_t ia = 0; ia < ang.size(); ++ia) {
        detail::harm_basis(e.lmax, ang[ia].dir, basis[ia]);
        samples[ia].resize(size_t(nrho));
        for (int n = 0; n < nrho; ++n) {
            double r = std::exp(dl * n / nrho);
            samples[ia][size_t(n)] = r * d.velocity(r * ang[ia].dir);
        }
    }

    // per (q, trig) channel: Fourier-analyze r u0 in rho, SH-project in angle
    for (int q = 0; q <= q_max; ++q)
        for (int trig = 0; trig < (q == 0 ? 1 : 2); ++trig) {
            HeatChannel ch;
            ch.q = q;
            ch.use_sin = trig == 1;
            ch.alm.assign(size_t(nc), Vec3{});
            double amax = 0.0;
            for (size_t ia = 0; ia < ang.size(); ++ia) {
                Vec3 acc{};
                for (int n = 0; n < nrho; ++n) {
                    double rho = dl * n / nrho;
                    double w = trig == 0 ? std::cos(q * e.kappa * rho)
                                         : std::sin(q * e.kappa * rho);
                    acc += ((q == 0 ? 1.0 : 2.0) / nrho * w) * samples[ia][size_t(n)];
                }
                for (int k = 0; k < nc; ++k)
                    ch.alm[size_t(k)] += (ang[ia].w * basis[ia][size_t(k)]) * acc;
            }
            for (const Vec3& a : ch.alm) amax = std::max(amax, norm(a));
            if (amax > 1e-13 * std::max(1.0, d.c_star)) e.channels.push_back(ch);
        }
    return e;
}

/// Reconstruct u0 from its channel expansion (diagnostic; exact to rounding).
inline Vec3 heat_reconstruct(const HeatExpansion& e, Vec3 x) {
    double r = norm(x);
    require(r > 0.0, "heat_reconstruct: undefined at the origin");
    std::vector<double> y;
    detail::harm_basis(e.lmax, (1.0 / r) * x, y);
    double rho = std::log(r);
    Vec3 out{};
    for (const HeatChannel& ch : e.channels) {
        double w = ch.use_sin ? std::sin(ch.q * e.kappa * rho)
                              : std::cos(ch.q * e.kappa * rho);
        Vec3 a{};
        for (int k = 0; k < e.n_coef(); ++k) a += y[size_t(k)] * ch.alm[size_t(k)];
        out += (w / r) * a;
    }
    return out;
}

/// Radial factors I[l][channel] for one (R, t): the annulus-ladder integrals
/// Integral e^{-(R-r)^2/(4t)} itilde_l(R r/(2t)) trig(q kappa rho) r dr.
inline std::vector<double> heat_radial(const HeatExpansion& e, double R, double t) {
    require(t > 0.0, "heat_radial: t must be positive");
    int nl = e.lmax + 1, nch = int(e.channels.size());
    std::vector<double> acc(size_t(nl) * nch, 0.0);
    if (nch == 0) return acc;
    double dl = std::log(e.lambda);
    double reach = 12.2 * std::sqrt(t);
    double r_hi = R + reach;
    double r_lo = std::max(1e-8 * std::sqrt(t), R - reach);
    int j_hi = int(std::floor(std::log(r_hi) / dl)) + 1;
    int j_lo = int(std::floor(std::log(r_lo) / dl));
    // node density per unit rho: resolve the fastest channel oscillation and
    // the Gaussian width, whichever is stricter at the annulus radius
    double d_osc = 8.0 * e.q_max() / dl + 4.0;
    Quad1D gl = gauss_legendre(12);
    std::vector<double> bi(size_t(nl), 0.0);
    for (int j = j_hi; j >= j_lo; --j) {
        double a = std::max(double(j) * dl, std::log(r_lo));
        double b = std::min(double(j + 1) * dl, std::log(r_hi));
        if (b <= a) continue;
        double d_gauss = 3.0 * std::exp(b) / std::sqrt(t);
        int panels = 1 + int((b - a) * std::max(d_osc, d_gauss) / 12.0);
        for (int p = 0; p < panels; ++p) {
            double pa = a + (b - a) * p / panels, pb = a + (b - a) * (p + 1) / panels;
            for (int n = 0; n < 12; ++n) {
                double rho = 0.5 * (pa + pb) + 0.5 * (pb - pa) * gl.nodes[size_t(n)];
                double w = 0.5 * (pb - pa) * gl.weights[size_t(n)];
                double r = std::exp(rho);
                double g = std::exp(-(R - r) * (R - r) / (4.0 * t)) * r * r * w;
                if (g == 0.0) continue;
                detail::bessel_i_scaled(e.lmax, R * r / (2.0 * t), bi.data());
                double rho_f = rho - j * dl;  // exact shift to the fundamental annulus
                for (int c = 0; c < nch; ++c) {
                    const HeatChannel& ch = e.channels[size_t(c)];
                    double trig = ch.use_sin ? std::sin(ch.q * e.kappa * rho_f)
                                             : std::cos(ch.q * e.kappa * rho_f);
                    for (int l = 0; l < nl; ++l)
                        acc[size_t(l) * nch + c] += g * trig * bi[size_t(l)];
                }
            }
        }
    }
    return acc;
}

/// Combine radial factors with the angular synthesis at direction xhat.
inline Vec3 heat_synthesize(const HeatExpansion& e, const std::vector<double>& radial,
                            double t, Vec3 dir) {
    int nl = e.lmax + 1, nch = int(e.channels.size());
    if (nch == 0) return {};
    std::vector<double> y;
    detail::harm_basis(e.lmax, dir, y);
    double pref = 4.0 * kPi * std::pow(4.0 * kPi * t, -1.5);
    Vec3 out{};
    for (int c = 0; c < nch; ++c) {
        const HeatChannel& ch = e.channels[size_t(c)];
        int k = 0;
        for (int l = 0; l < nl; ++l) {
            double il = radial[size_t(l) * nch + c];
            for (int m = 0; m < 2 * l + 1; ++m, ++k)
                out += (il * y[size_t(k)]) * ch.alm[size_t(k)];
        }
    }
    return pref * out;
}

/// U(x,t) = e^{t Laplace} u0 at one space-time point. The evaluation first
/// reduces t to the fundamental strip through the DSS identity U(x,t) =
/// lambda U(lambda x, lambda^2 t), which u0 inherits exactly.
inline Vec3 heat_semigroup(const HeatExpansion& e, Vec3 x, double t) {
    require(t > 0.0, "heat_semigroup: t must be positive");
    if (e.channels.empty()) return {};
    double tr = t;
    int k = strip_reduce(e.lambda, tr);
    double scale = std::pow(e.lambda, double(k));
    Vec3 xs = scale * x;
    double R = norm(xs);
    Vec3 dir = R > 0.0 ? (1.0 / R) * xs : Vec3{0.0, 0.0, 1.0};
    std::vector<double> radial = heat_radial(e, R, tr);
    return scale * heat_synthesize(e, radial, tr, dir);
}

}  // namespace dsslab
