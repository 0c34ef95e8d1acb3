#pragma once

/// Gauss-Legendre rules, Legendre polynomial helpers and a recursive
/// adaptive Simpson integrator for test oracles and calibration integrals.

#include <cmath>
#include <functional>
#include <vector>

#include "dsslab/common.hpp"

namespace dsslab {

/// Legendre polynomial P_n(x) on [-1,1] by the three-term recurrence.
inline double legendre(int n, double x) {
    if (n == 0) return 1.0;
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    return n == 0 ? p0 : p1;
}

struct Quad1D {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [-1,1]; exact for polynomials of degree 2n-1.
inline Quad1D gauss_legendre(int n) {
    require(n >= 1, "gauss_legendre: n >= 1");
    Quad1D q;
    q.nodes.resize(n);
    q.weights.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        // Tricomi initial guess, then Newton on P_n.
        double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            double pn = (n == 1) ? p1 : p1;
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            double dx = pn / dp;
            x -= dx;
            if (std::fabs(dx) < 1e-15) break;
        }
        // One clean recompute of P_{n-1} at the converged node for the weight.
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        double w = 2.0 / ((1.0 - x * x) * dp * dp);
        q.nodes[i] = -x;
        q.weights[i] = w;
        q.nodes[n - 1 - i] = x;
        q.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) q.nodes[n / 2] = 0.0;
    return q;
}

/// The same rule mapped to [a,b].
inline Quad1D gauss_legendre(int n, double a, double b) {
    Quad1D q = gauss_legendre(n);
    double c = 0.5 * (a + b), h = 0.5 * (b - a);
    for (int i = 0; i < n; ++i) {
        q.nodes[i] = c + h * q.nodes[i];
        q.weights[i] *= h;
    }
    return q;
}

/// Projection of sampled values onto Legendre coefficients: given f at the
/// nodes of an n-point Gauss rule on [-1,1], returns c_0..c_{deg} with
/// f ~= sum c_k P_k; exact when f is a polynomial of degree <= deg < n.
inline std::vector<double> legendre_fit(const Quad1D& rule, const std::vector<double>& f,
                                        int deg) {
    require(f.size() == rule.nodes.size(), "legendre_fit: size mismatch");
    std::vector<double> c(deg + 1, 0.0);
    for (int k = 0; k <= deg; ++k) {
        double s = 0.0;
        for (size_t q = 0; q < f.size(); ++q)
            s += rule.weights[q] * legendre(k, rule.nodes[q]) * f[q];
        c[k] = (2.0 * k + 1.0) / 2.0 * s;
    }
    return c;
}

namespace detail {
inline double adaptive_simpson_rec(const std::function<double(double)>& f, double a,
                                   double b, double fa, double fm, double fb, double whole,
                                   double tol, int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    double err = left + right - whole;
    if (depth <= 0 || std::fabs(err) < 15.0 * tol)
        return left + right + err / 15.0;
    return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}
}  // namespace detail

/// Adaptive Simpson on [a,b] with absolute tolerance tol.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol, int max_depth = 28) {
    double m = 0.5 * (a + b);
    double fa = f(a), fm = f(m), fb = f(b);
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return detail::adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

/// Least-squares slope of y against x (used for log-log decay fits).
struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double stderr_slope = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    size_t n = x.size();
    require(n >= 2 && y.size() == n, "fit_line: need >= 2 points");
    double sx = 0.0, sy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
    }
    double mx = sx / n, my = sy / n;
    double sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    require(sxx > 0.0, "fit_line: degenerate abscissae");
    LineFit out;
    out.slope = sxy / sxx;
    out.intercept = my - out.slope * mx;
    if (n > 2) {
        double ss = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double r = y[i] - (out.intercept + out.slope * x[i]);
            ss += r * r;
        }
        out.stderr_slope = std::sqrt(ss / double(n - 2) / sxx);
    }
    return out;
}

}  // namespace dsslab
