#pragma once

/// Closed-form kernels of the non-stationary Stokes system.
///
/// Everything radial is expressed through the similarity variable
/// xi = r/(2 sqrt(t)). With zhat = z/r and E = exp(-xi^2), F = erf(xi):
///
///   Gamma(z,t) = (4 pi t)^{-3/2} E                          (heat kernel)
///   Psi(z,t)   = F/(4 pi r)                                 (potential of Gamma)
///   S_ij(z,t)  = (1/(4 pi r^3)) [ P(xi) d_ij + R(xi) zhat_i zhat_j ]
///   dS_kij     = (1/(4 pi r^4)) [ g1 d_ij zhat_k
///                                 + g2 (d_ik zhat_j + d_jk zhat_i)
///                                 + g3 zhat_i zhat_j zhat_k ]
///
///   P  = (4 xi^3 + 2 xi) E / sqrt(pi) - F
///   R  = 3 F - (4 xi^3 + 6 xi) E / sqrt(pi)
///   g1 = xi P' - 3P,  g2 = R,  g3 = xi R' - 5R
///
/// The forms follow from S = Gamma I + Hess Psi and satisfy Delta Psi = -Gamma,
/// trace S = 2 Gamma, div_i S_ij = 0; the test suite certifies them against an
/// independent quadrature + finite-difference oracle of the definition.
///
/// Time integration against polynomials is exact: for each profile i and
/// degree j <= 3,   int_ta^tb g_i(r/(2 sqrt(tau))) tau^j dtau
///                = r^{2j+2}/(2 4^j) (J_ij(xi(tb)) - J_ij(xi(ta)))
/// with J_ij(xi) = int_xi^inf g_i(u) u^{-2j-3} du in closed form below, and a
/// power-series branch at small xi where the closed forms lose digits.

#include <cmath>
#include <utility>
#include <vector>

#include "dsslab/common.hpp"

namespace dsslab {

inline constexpr double kInvSqrtPi = 0.56418958354775628695;

/// Heat kernel Gamma(x,t); t must be positive.
inline double heat_kernel(Vec3 x, double t) {
    if (!(t > 0.0)) fail("heat_kernel: t must be positive");
    double q = dot(x, x) / (4.0 * t);
    return std::pow(4.0 * kPi * t, -1.5) * std::exp(-q);
}

namespace kern {

// Profile switch points. Below kSeriesXi the erf-based closed forms cancel
// catastrophically and the power series is exact to ~1e-11; above kErfcXi the
// erf forms cancel instead and the complementary forms take over.
inline constexpr double kSeriesXi = 0.35;
inline constexpr double kMomentSeriesXi = 0.25;
inline constexpr double kErfcXi = 1.6;

// Series coefficients over sqrt(pi): g_i(xi) = xi^5 sum_n b_i[n] xi^{2n},
// P(xi) = xi^3 sum_n p[n] xi^{2n}, R(xi) = xi^5 sum_n b_2[n] xi^{2n}.
inline constexpr int kSeriesTerms = 7;
inline constexpr double kSeriesG1[kSeriesTerms] = {
    -3.6108133347056404, 3.8687285728989003, -2.0060074081698001,
    0.68386616187606819, -0.17359679493777116, 0.035105129642971501,
    -0.0059000217887347061};
inline constexpr double kSeriesG2[kSeriesTerms] = {
    0.90270333367641009, -0.64478809548315008, 0.25075092602122501,
    -0.068386616187606816, 0.014466399578147597, -0.0025075092602122501,
    0.00036875136179591913};
inline constexpr double kSeriesG3[kSeriesTerms] = {
    0.0, -1.2895761909663002, 1.0030037040849, -0.41031969712564093,
    0.11573119662518078, -0.025075092602122501, 0.00442501634155103};
inline constexpr double kSeriesP[kSeriesTerms] = {
    1.5045055561273502, -1.8054066673528202, 0.96718214322472507,
    -0.33433456802830003, 0.085483270234508524, -0.017359679493777116,
    0.0029254274702476251};

inline double series_eval(const double* c, double xi2) {
    double s = c[kSeriesTerms - 1];
    for (int n = kSeriesTerms - 2; n >= 0; --n) s = c[n] + xi2 * s;
    return s;
}

/// P(xi)/xi^3 and R(xi)/xi^3 (finite, nonzero limits at 0).
inline void pr_over_xi3(double xi, double& p3, double& r3) {
    if (!(xi < 27.0)) {
        double i3 = 1.0 / (xi * xi * xi);
        p3 = -i3;
        r3 = 3.0 * i3;
        return;
    }
    double xi2 = xi * xi;
    if (xi < kSeriesXi) {
        p3 = series_eval(kSeriesP, xi2);
        r3 = xi2 * series_eval(kSeriesG2, xi2);
        return;
    }
    double E = std::exp(-xi2) * kInvSqrtPi;
    double i3 = 1.0 / (xi2 * xi);
    if (xi < kErfcXi) {
        double F = std::erf(xi);
        p3 = ((4.0 * xi2 * xi + 2.0 * xi) * E - F) * i3;
        r3 = (3.0 * F - (4.0 * xi2 * xi + 6.0 * xi) * E) * i3;
    } else {
        double C = std::erfc(xi);
        p3 = ((4.0 * xi2 * xi + 2.0 * xi) * E - 1.0 + C) * i3;
        r3 = (3.0 - 3.0 * C - (4.0 * xi2 * xi + 6.0 * xi) * E) * i3;
    }
}

/// Gradient profiles g1, g2, g3.
inline void g_profiles(double xi, double& g1, double& g2, double& g3) {
    if (!(xi < 27.0)) {
        // frozen limits; deviation is below one ulp long before this point
        g1 = 3.0;
        g2 = 3.0;
        g3 = -15.0;
        return;
    }
    double xi2 = xi * xi;
    if (xi < kSeriesXi) {
        double p5 = xi2 * xi2 * xi;
        g1 = p5 * series_eval(kSeriesG1, xi2);
        g2 = p5 * series_eval(kSeriesG2, xi2);
        g3 = p5 * series_eval(kSeriesG3, xi2);
        return;
    }
    double E = std::exp(-xi2) * kInvSqrtPi;
    double x3 = xi2 * xi, x5 = xi2 * x3;
    if (xi < kErfcXi) {
        double F = std::erf(xi);
        g1 = 3.0 * F - (8.0 * x5 + 4.0 * x3 + 6.0 * xi) * E;
        g2 = 3.0 * F - (4.0 * x3 + 6.0 * xi) * E;
        g3 = (8.0 * x5 + 20.0 * x3 + 30.0 * xi) * E - 15.0 * F;
    } else {
        double C = std::erfc(xi);
        g1 = 3.0 - 3.0 * C - (8.0 * x5 + 4.0 * x3 + 6.0 * xi) * E;
        g2 = 3.0 - 3.0 * C - (4.0 * x3 + 6.0 * xi) * E;
        g3 = 15.0 * C - 15.0 + (8.0 * x5 + 20.0 * x3 + 30.0 * xi) * E;
    }
}

/// All twelve moment antiderivatives J[i][j], i = profile-1, j = tau power.
inline void eval_J(double xi, double J[3][4]) {
    double xi2 = xi * xi;
    double u = 1.0 / xi, u2 = u * u, u3 = u2 * u, u4 = u2 * u2;
    double u5 = u4 * u, u6 = u4 * u2, u7 = u6 * u, u8 = u4 * u4;
    double E = (xi2 < 708.0) ? std::exp(-xi2) * kInvSqrtPi : 0.0;
    if (xi < kErfcXi) {
        double Fm1 = -std::erfc(xi);  // erf(xi) - 1, stable both ways here
        double F = 1.0 + Fm1;
        J[0][0] = -4.0 * xi * E + Fm1 - 3.0 * E * u + 1.5 * F * u2;
        J[0][1] = 3.0 * Fm1 - E * (u + 1.5 * u3) + 0.75 * F * u4;
        J[0][2] = -(20.0 / 3.0) * Fm1 - E * ((20.0 / 3.0) * u + (2.0 / 3.0) * u3 + u5) +
                  0.5 * F * u6;
        J[0][3] = (14.0 / 3.0) * Fm1 +
                  E * ((14.0 / 3.0) * u - (7.0 / 3.0) * u3 - 0.5 * u5 - 0.75 * u7) +
                  0.375 * F * u8;
        J[1][0] = -Fm1 - 3.0 * E * u + 1.5 * F * u2;
        J[1][1] = -Fm1 - E * (u + 1.5 * u3) + 0.75 * F * u4;
        J[1][2] = (4.0 / 3.0) * Fm1 + E * ((4.0 / 3.0) * u - (2.0 / 3.0) * u3 - u5) +
                  0.5 * F * u6;
        J[1][3] = -(2.0 / 3.0) * Fm1 +
                  E * (-(2.0 / 3.0) * u + (1.0 / 3.0) * u3 - 0.5 * u5 - 0.75 * u7) +
                  0.375 * F * u8;
        J[2][0] = 4.0 * xi * E + 3.0 * Fm1 + 15.0 * E * u - 7.5 * F * u2;
        J[2][1] = Fm1 + E * (5.0 * u + 7.5 * u3) - 3.75 * F * u4;
        J[2][2] = (4.0 / 3.0) * Fm1 + E * ((4.0 / 3.0) * u + (10.0 / 3.0) * u3 + 5.0 * u5) -
                  2.5 * F * u6;
        J[2][3] = -2.0 * Fm1 + E * (-2.0 * u + u3 + 2.5 * u5 + 3.75 * u7) -
                  1.875 * F * u8;
    } else {
        double C = std::erfc(xi);
        J[0][0] = 1.5 * u2 - (1.0 + 1.5 * u2) * C - E * (4.0 * xi + 3.0 * u);
        J[0][1] = 0.75 * u4 - (3.0 + 0.75 * u4) * C - E * (u + 1.5 * u3);
        J[0][2] = 0.5 * u6 + (20.0 / 3.0 - 0.5 * u6) * C -
                  E * ((20.0 / 3.0) * u + (2.0 / 3.0) * u3 + u5);
        J[0][3] = 0.375 * u8 - (14.0 / 3.0 + 0.375 * u8) * C +
                  E * ((14.0 / 3.0) * u - (7.0 / 3.0) * u3 - 0.5 * u5 - 0.75 * u7);
        J[1][0] = 1.5 * u2 + (1.0 - 1.5 * u2) * C - 3.0 * E * u;
        J[1][1] = 0.75 * u4 + (1.0 - 0.75 * u4) * C - E * (u + 1.5 * u3);
        J[1][2] = 0.5 * u6 - (4.0 / 3.0 + 0.5 * u6) * C +
                  E * ((4.0 / 3.0) * u - (2.0 / 3.0) * u3 - u5);
        J[1][3] = 0.375 * u8 + (2.0 / 3.0 - 0.375 * u8) * C +
                  E * (-(2.0 / 3.0) * u + (1.0 / 3.0) * u3 - 0.5 * u5 - 0.75 * u7);
        J[2][0] = -7.5 * u2 + (7.5 * u2 - 3.0) * C + E * (4.0 * xi + 15.0 * u);
        J[2][1] = -3.75 * u4 + (3.75 * u4 - 1.0) * C + E * (5.0 * u + 7.5 * u3);
        J[2][2] = -2.5 * u6 + (2.5 * u6 - 4.0 / 3.0) * C +
                  E * ((4.0 / 3.0) * u + (10.0 / 3.0) * u3 + 5.0 * u5);
        J[2][3] = -1.875 * u8 + (1.875 * u8 + 2.0) * C +
                  E * (-2.0 * u + u3 + 2.5 * u5 + 3.75 * u7);
    }
}

/// Exact tau-moments m[i][j] = int_ta^tb g_{i+1}(r/(2 sqrt(tau))) tau^j dtau
/// for j = 0..jmax (jmax <= 3). ta = 0 is allowed; r must be positive.
inline void kernel_moments(double r, double ta, double tb, int jmax, double m[3][4]) {
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j <= jmax; ++j) m[i][j] = 0.0;
    if (!(tb > ta) || !(r > 0.0)) return;
    double tau_split = 4.0 * r * r;  // xi(tau_split) = kMomentSeriesXi
    double t1 = std::min(tb, tau_split);
    if (t1 > ta) {
        // closed-form branch over [ta, t1]
        double Ja[3][4], Jb[3][4];
        bool have_a = ta > 0.0;
        if (have_a) eval_J(r / (2.0 * std::sqrt(ta)), Ja);
        eval_J(r / (2.0 * std::sqrt(t1)), Jb);
        double r2 = r * r, pref = 0.5 * r2;
        for (int j = 0; j <= jmax; ++j) {
            for (int i = 0; i < 3; ++i)
                m[i][j] = pref * (Jb[i][j] - (have_a ? Ja[i][j] : 0.0));
            pref *= 0.25 * r2;
        }
    }
    if (tb > tau_split) {
        // series branch over [max(ta, tau_split), tb]
        double a = std::max(ta, tau_split);
        double h2 = 0.25 * r * r;  // (r/2)^2
        double hp = h2 * h2 * std::sqrt(h2);  // (r/2)^5
        for (int n = 0; n < kSeriesTerms; ++n) {
            for (int j = 0; j <= jmax; ++j) {
                double p = j - 1.5 - n;
                double iv = (std::pow(tb, p) - std::pow(a, p)) / p;
                double w = hp * iv;
                m[0][j] += kSeriesG1[n] * w;
                m[1][j] += kSeriesG2[n] * w;
                m[2][j] += kSeriesG3[n] * w;
            }
            hp *= h2;
        }
    }
}

}  // namespace kern

/// Oseen tensor evaluation at one space-time point.
struct KernelValue {
    double tensor[3][3];
    Vec3 x;
    double t;
};

inline KernelValue oseen_tensor(Vec3 x, double t) {
    if (!(t > 0.0)) fail("oseen_tensor: t must be positive");
    KernelValue out;
    out.x = x;
    out.t = t;
    double r = norm(x);
    double xi = r / (2.0 * std::sqrt(t));
    double p3, r3;
    kern::pr_over_xi3(xi, p3, r3);
    // 1/(4 pi r^3) * xi^3 = 1/(32 pi t^{3/2})
    double pref = 1.0 / (32.0 * kPi * std::pow(t, 1.5));
    double diag = pref * p3;
    if (r == 0.0) {
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) out.tensor[i][j] = (i == j) ? diag : 0.0;
        return out;
    }
    Vec3 zh = (1.0 / r) * x;
    double off = pref * r3;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            out.tensor[i][j] = diag * (i == j ? 1.0 : 0.0) + off * zh[i] * zh[j];
    return out;
}

/// Spatial gradient grad[k][i][j] = d_k S_ij in closed form.
struct OseenGrad {
    double d[3][3][3];
};

inline OseenGrad oseen_grad(Vec3 x, double t) {
    if (!(t > 0.0)) fail("oseen_grad: t must be positive");
    OseenGrad out{};
    double r = norm(x);
    if (r == 0.0) return out;  // odd in x, vanishes at the origin
    double xi = r / (2.0 * std::sqrt(t));
    double g1, g2, g3;
    kern::g_profiles(xi, g1, g2, g3);
    double pref;
    if (xi < kern::kSeriesXi) {
        // write g_i = xi^5 h_i and fold xi^5/r^4 = r/(32 t^{5/2})
        double s = xi * xi;
        s = s * s * xi;
        g1 /= s;
        g2 /= s;
        g3 /= s;
        pref = r / (128.0 * kPi * std::pow(t, 2.5));
    } else {
        pref = 1.0 / (4.0 * kPi * r * r * r * r);
    }
    Vec3 zh = (1.0 / r) * x;
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double v = g1 * (i == j ? zh[k] : 0.0) + g3 * zh[i] * zh[j] * zh[k];
                if (i == k) v += g2 * zh[j];
                if (j == k) v += g2 * zh[i];
                out.d[k][i][j] = pref * v;
            }
    return out;
}

/// Frobenius magnitude of S and of its gradient, for bound sweeps.
inline double oseen_tensor_norm(Vec3 x, double t) {
    KernelValue kv = oseen_tensor(x, t);
    double s = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) s += kv.tensor[i][j] * kv.tensor[i][j];
    return std::sqrt(s);
}

inline double oseen_grad_norm(Vec3 x, double t) {
    OseenGrad g = oseen_grad(x, t);
    double s = 0.0;
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) s += g.d[k][i][j] * g.d[k][i][j];
    return std::sqrt(s);
}

/// sup over samples of |D^ell S(x,t)| (|x|+sqrt(t))^{3+ell}, ell in {0,1}.
inline double kernel_bound_fit(int ell, const std::vector<std::pair<Vec3, double>>& samples) {
    require(ell == 0 || ell == 1, "kernel_bound_fit: ell must be 0 or 1");
    if (samples.empty()) fail("kernel_bound_fit: empty sample set");
    double c = 0.0;
    for (const auto& [x, t] : samples) {
        double w = norm(x) + std::sqrt(t);
        double mag = (ell == 0) ? oseen_tensor_norm(x, t) : oseen_grad_norm(x, t);
        c = std::max(c, mag * std::pow(w, 3 + ell));
    }
    return c;
}

/// Log-spaced (x,t) sweep along fixed directions, for bound fits.
inline std::vector<std::pair<Vec3, double>> kernel_sweep(double r_lo, double r_hi, int n_r,
                                                         double t_lo, double t_hi, int n_t) {
    const Vec3 dirs[] = {{1, 0, 0}, {0, 0, 1}, {0.57735026918962576, 0.57735026918962576,
                                                0.57735026918962576}};
    std::vector<std::pair<Vec3, double>> out;
    out.reserve(size_t(n_r) * n_t * 3);
    for (int a = 0; a < n_r; ++a) {
        double r = r_lo * std::pow(r_hi / r_lo, n_r == 1 ? 0.0 : double(a) / (n_r - 1));
        for (int b = 0; b < n_t; ++b) {
            double t = t_lo * std::pow(t_hi / t_lo, n_t == 1 ? 0.0 : double(b) / (n_t - 1));
            for (const Vec3& d : dirs) out.push_back({r * d, t});
        }
    }
    return out;
}

}  // namespace dsslab
