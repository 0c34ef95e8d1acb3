#pragma once

/// Log-radial x spherical sampling of the fundamental strip Q = R^3 x [1, L^2).
///
/// Shells sit at rho = log|x| with spacing d_rho = log(lambda)/shells_per_epoch,
/// so multiplying |x| by lambda is an exact integer shell shift. Angular nodes
/// form a Gauss-Legendre (cos colatitude) x uniform (longitude) product rule
/// whose weights sum to 4 pi; longitudes are offset by half a cell so the node
/// set is closed under the antipodal map when n_phi is even. Time slices are
/// t_i = lambda^{2 i / n_time}, which include t = 1 and exclude t = lambda^2.

#include <cmath>
#include <memory>
#include <vector>

#include "dsslab/common.hpp"
#include "dsslab/quadrature.hpp"

namespace dsslab {

struct GridSpec {
    double lambda = 2.0;
    int shells_per_epoch = 3;
    int n_rho = 48;
    double rho_min = -5.5;
    int n_theta = 4;
    int n_phi = 8;
    int n_time = 8;
};

struct AngularNode {
    Vec3 dir;
    double weight;
    int antipode;
};

struct StripGrid {
    double lambda = 2.0;
    int shells_per_epoch = 3;
    int n_rho = 0;
    double rho_min = 0.0, rho_max = 0.0, d_rho = 0.0;
    int n_theta = 0, n_phi = 0;
    int n_time = 0;
    std::vector<AngularNode> ang;
    std::vector<double> cos_theta;
    std::vector<double> time_nodes;

    int n_ang() const { return n_theta * n_phi; }
    double rho(int ir) const { return rho_min + ir * d_rho; }
    double radius(int ir) const { return std::exp(rho(ir)); }
    Vec3 node(int ir, int ia) const { return radius(ir) * ang[size_t(ia)].dir; }
    double phi(int ip) const { return 2.0 * kPi * (ip + 0.5) / n_phi; }
};

inline StripGrid make_strip_grid(const GridSpec& spec) {
    require(spec.lambda > 1.0, "grid: lambda must exceed 1");
    require(spec.n_rho >= 2 && spec.n_theta >= 2 && spec.n_phi >= 2 && spec.n_time >= 2,
            "grid: all resolution counts must be at least 2");
    require(spec.shells_per_epoch >= 1, "grid: shells_per_epoch must be positive");
    require(spec.n_phi % 2 == 0, "grid: n_phi must be even for antipodal closure");

    StripGrid g;
    g.lambda = spec.lambda;
    g.shells_per_epoch = spec.shells_per_epoch;
    g.n_rho = spec.n_rho;
    g.d_rho = std::log(spec.lambda) / spec.shells_per_epoch;
    g.rho_min = spec.rho_min;
    g.rho_max = spec.rho_min + (spec.n_rho - 1) * g.d_rho;
    g.n_theta = spec.n_theta;
    g.n_phi = spec.n_phi;
    g.n_time = spec.n_time;

    Quad1D gl = gauss_legendre(spec.n_theta);
    g.cos_theta = gl.nodes;
    double wphi = 2.0 * kPi / spec.n_phi;
    g.ang.resize(size_t(spec.n_theta) * spec.n_phi);
    for (int it = 0; it < spec.n_theta; ++it) {
        double c = gl.nodes[size_t(it)];
        double s = std::sqrt(std::max(0.0, 1.0 - c * c));
        for (int ip = 0; ip < spec.n_phi; ++ip) {
            double phi = g.phi(ip);
            AngularNode node;
            node.dir = {s * std::cos(phi), s * std::sin(phi), c};
            node.weight = gl.weights[size_t(it)] * wphi;
            node.antipode = (spec.n_theta - 1 - it) * spec.n_phi +
                            (ip + spec.n_phi / 2) % spec.n_phi;
            g.ang[size_t(it) * spec.n_phi + ip] = node;
        }
    }

    g.time_nodes.resize(size_t(spec.n_time));
    for (int i = 0; i < spec.n_time; ++i)
        g.time_nodes[size_t(i)] = std::pow(spec.lambda, 2.0 * i / spec.n_time);
    g.time_nodes[0] = 1.0;
    return g;
}

/// Unique k with 1 <= lambda^{2k} t < lambda^2; t is replaced by the reduction.
inline int strip_reduce(double lambda, double& t) {
    if (!(t > 0.0)) fail("strip_reduce: t must be positive");
    double l2 = lambda * lambda;
    int k = -int(std::floor(std::log(t) / std::log(l2)));
    double tr = t * std::pow(l2, double(k));
    while (tr < 1.0) {
        ++k;
        tr = t * std::pow(l2, double(k));
    }
    while (tr >= l2) {
        --k;
        tr = t * std::pow(l2, double(k));
    }
    t = tr;
    return k;
}

}  // namespace dsslab
