#pragma once

/// Divergence-free discretely self-similar initial data.
///
/// The datum is built as u0 = curl psi where the vector potential
///
///   psi(x) = sum over terms of  trig(q kappa rho) * c * M(xhat),
///
/// with rho = log|x|, kappa = 2 pi / log(lambda), trig in {cos, sin}, c a
/// constant vector and M a monomial in the unit direction xhat. Every term is
/// invariant under x -> lambda x, so psi(lambda x) = psi(x) and the curl is
/// automatically DSS with factor lambda: u0(x) = lambda u0(lambda x). The
/// curl is evaluated analytically through the chain rule, so divergence
/// freeness and the DSS identity hold to rounding, not to quadrature.
///
/// Rough data in C^gamma (but not C^1) comes from a lacunary radial series:
/// frequencies q = 2^level with amplitudes 2^{-level (1+gamma)}, which puts
/// the potential in C^{1+gamma} and its curl in C^gamma.

#include <cmath>
#include <string>
#include <vector>

#include "dsslab/common.hpp"

namespace dsslab {

enum class HolderClass { c_one_beta, c_gamma };

/// One product term of the potential: trig(q kappa rho) * coef * xhat-monomial.
struct PotentialTerm {
    int q = 0;
    bool use_sin = false;
    Vec3 coef;
    int ex = 0, ey = 0, ez = 0;
};

struct ProfileSpec {
    int n_radial = 2;        // radial Fourier modes 0..n_radial
    int ang_degree = 2;      // maximal monomial degree in the direction
    int terms_per_mode = 3;  // random monomials per radial mode (0 = zero datum)
    std::uint64_t seed = 1;
    HolderClass holder = HolderClass::c_one_beta;
    double holder_exponent = 0.5;  // beta for smooth data, gamma for rough
    int lacunary_levels = 5;       // rough case: frequencies 2^level
};

struct DssInitialData {
    double lambda = 2.0;
    double kappa = 0.0;  // 2 pi / log(lambda)
    double c_star = 0.0;
    HolderClass holder = HolderClass::c_one_beta;
    double holder_exponent = 0.5;
    bool axisym_noswirl = false;
    std::vector<PotentialTerm> terms;

    Vec3 potential(Vec3 x) const;
    Vec3 velocity(Vec3 x) const;
};

namespace detail {

inline double int_pow(double b, int e) {
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

/// Monomial value and its gradient with respect to the unit direction.
inline void mono_eval(const PotentialTerm& t, Vec3 xh, double& m, Vec3& mg) {
    double px = int_pow(xh.x, t.ex), py = int_pow(xh.y, t.ey), pz = int_pow(xh.z, t.ez);
    m = px * py * pz;
    mg.x = t.ex == 0 ? 0.0 : t.ex * int_pow(xh.x, t.ex - 1) * py * pz;
    mg.y = t.ey == 0 ? 0.0 : t.ey * px * int_pow(xh.y, t.ey - 1) * pz;
    mg.z = t.ez == 0 ? 0.0 : t.ez * px * py * int_pow(xh.z, t.ez - 1);
}

}  // namespace detail

inline Vec3 DssInitialData::potential(Vec3 x) const {
    double r = norm(x);
    require(r > 0.0, "initial data: potential is undefined at the origin");
    double rho = std::log(r);
    Vec3 xh = (1.0 / r) * x;
    Vec3 psi{};
    for (const PotentialTerm& t : terms) {
        double ph = kappa * t.q * rho;
        double g = t.use_sin ? std::sin(ph) : std::cos(ph);
        double m;
        Vec3 mg;
        detail::mono_eval(t, xh, m, mg);
        psi += (g * m) * t.coef;
    }
    return psi;
}

inline Vec3 DssInitialData::velocity(Vec3 x) const {
    double r = norm(x);
    require(r > 0.0, "initial data: velocity is undefined at the origin");
    double rho = std::log(r);
    Vec3 xh = (1.0 / r) * x;
    double grad[3][3] = {};  // grad[j][k] = d_j psi_k
    for (const PotentialTerm& t : terms) {
        double ph = kappa * t.q * rho;
        double g = t.use_sin ? std::sin(ph) : std::cos(ph);
        double gp = kappa * t.q * (t.use_sin ? std::cos(ph) : -std::sin(ph));
        double m;
        Vec3 mg;
        detail::mono_eval(t, xh, m, mg);
        double xdg = dot(xh, mg);
        for (int j = 0; j < 3; ++j) {
            // d_j of rho is xh_j / r; d_j of xhat_m is (delta_jm - xh_j xh_m)/r
            double dj = (gp * xh[j] * m + g * (mg[j] - xh[j] * xdg)) / r;
            for (int k = 0; k < 3; ++k) grad[j][k] += dj * t.coef[k];
        }
    }
    return {grad[1][2] - grad[2][1], grad[2][0] - grad[0][2], grad[0][1] - grad[1][0]};
}

namespace detail {

/// Sampled sup of |x| |u0(x)| over the fundamental annulus 1 <= |x| <= lambda:
/// a dense product grid plus a random sweep against grid-aligned blind spots.
inline double fundamental_sup(const DssInitialData& d) {
    Rng rng(0x5eedf00dULL);
    double sup = 0.0;
    for (int ir = 0; ir <= 24; ++ir) {
        double r = std::exp(std::log(d.lambda) * ir / 24.0);
        for (int jt = 0; jt < 24; ++jt) {
            double th = kPi * (jt + 0.5) / 24.0;
            for (int kp = 0; kp < 48; ++kp) {
                double ph = 2.0 * kPi * kp / 48.0;
                Vec3 x{r * std::sin(th) * std::cos(ph), r * std::sin(th) * std::sin(ph),
                       r * std::cos(th)};
                sup = std::max(sup, r * norm(d.velocity(x)));
            }
        }
        for (int ia = 0; ia < 64; ++ia) {
            Vec3 x = r * rng.unit_vector();
            sup = std::max(sup, r * norm(d.velocity(x)));
        }
    }
    return sup;
}

/// Shared tail of both constructors: normalize so the sampled annulus sup of
/// |x||u0| equals c_star_target, skipping the rescale for the zero datum.
inline void normalize_datum(DssInitialData& d, double c_star_target) {
    double sup = fundamental_sup(d);
    if (sup == 0.0) {
        d.c_star = 0.0;
        return;
    }
    double s = c_star_target / sup;
    for (PotentialTerm& t : d.terms) t.coef = s * t.coef;
    d.c_star = c_star_target;
}

}  // namespace detail

/// General divergence-free DSS datum from randomized log-periodic profiles.
inline DssInitialData make_initial_data(const ProfileSpec& spec, double lambda,
                                        double c_star_target) {
    require(lambda > 1.0, "initial data: lambda must exceed 1");
    require(c_star_target > 0.0, "initial data: C_star target must be positive");
    require(spec.n_radial >= 0 && spec.ang_degree >= 0 && spec.terms_per_mode >= 0,
            "initial data: profile counts must be nonnegative");
    DssInitialData d;
    d.lambda = lambda;
    d.kappa = 2.0 * kPi / std::log(lambda);
    d.holder = spec.holder;
    d.holder_exponent = spec.holder_exponent;
    Rng rng(spec.seed);
    auto push_random_term = [&](int q, bool use_sin, double amp) {
        PotentialTerm t;
        t.q = q;
        t.use_sin = use_sin;
        int deg = int(rng.uniform(0.0, spec.ang_degree + 1.0));
        for (int i = 0; i < deg; ++i) {
            int axis = int(rng.uniform(0.0, 3.0));
            (axis == 0 ? t.ex : axis == 1 ? t.ey : t.ez) += 1;
        }
        t.coef = amp * rng.unit_vector();
        d.terms.push_back(t);
    };
    if (spec.holder == HolderClass::c_gamma) {
        require(spec.holder_exponent > 0.0 && spec.holder_exponent < 1.0,
                "initial data: rough exponent gamma must lie in (0,1)");
        require(spec.lacunary_levels >= 1, "initial data: need at least one level");
        for (int level = 0; level < spec.lacunary_levels; ++level) {
            int q = 1 << level;
            double amp = std::pow(2.0, -level * (1.0 + spec.holder_exponent));
            for (int j = 0; j < spec.terms_per_mode; ++j) {
                push_random_term(q, false, amp);
                push_random_term(q, true, amp);
            }
        }
    } else {
        for (int q = 0; q <= spec.n_radial; ++q)
            for (int j = 0; j < spec.terms_per_mode; ++j) {
                double amp = 1.0 / (1.0 + q);
                push_random_term(q, false, amp);
                if (q > 0) push_random_term(q, true, amp);
            }
    }
    detail::normalize_datum(d, c_star_target);
    return d;
}

/// Axisymmetric no-swirl datum: psi = g(rho) P(cos theta) sin(theta) e_theta.
/// In Cartesian form sin(theta) e_theta = (-xhat_2, xhat_1, 0), a polynomial
/// in the direction, so the general evaluator applies; the curl of such a
/// field has no azimuthal component identically.
inline DssInitialData make_axisym_noswirl(const ProfileSpec& spec, double lambda,
                                          double c_star_target) {
    require(lambda > 1.0, "initial data: lambda must exceed 1");
    require(c_star_target > 0.0, "initial data: C_star target must be positive");
    DssInitialData d;
    d.lambda = lambda;
    d.kappa = 2.0 * kPi / std::log(lambda);
    d.holder = spec.holder;
    d.holder_exponent = spec.holder_exponent;
    d.axisym_noswirl = true;
    Rng rng(spec.seed);
    auto push_pair = [&](int q, bool use_sin, double amp, int p) {
        PotentialTerm t;
        t.q = q;
        t.use_sin = use_sin;
        t.coef = {-amp, 0.0, 0.0};
        t.ex = 0;
        t.ey = 1;
        t.ez = p;
        d.terms.push_back(t);
        t.coef = {0.0, amp, 0.0};
        t.ex = 1;
        t.ey = 0;
        d.terms.push_back(t);
    };
    if (spec.terms_per_mode > 0)
        for (int q = 0; q <= spec.n_radial; ++q)
            for (int p = 0; p <= spec.ang_degree; ++p) {
                double amp = rng.uniform(-1.0, 1.0) / ((1.0 + q) * (1.0 + p));
                push_pair(q, false, amp, p);
                if (q > 0)
                    push_pair(q, true, rng.uniform(-1.0, 1.0) / ((1.0 + q) * (1.0 + p)), p);
            }
    detail::normalize_datum(d, c_star_target);
    return d;
}

}  // namespace dsslab
