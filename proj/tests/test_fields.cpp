#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dsslab/fields.hpp"

using namespace dsslab;

namespace {

std::shared_ptr<const StripGrid> test_grid(int n_theta = 6, int n_phi = 12,
                                           int n_rho = 32, int n_time = 6,
                                           int shells_per_epoch = 3) {
    GridSpec spec;
    spec.lambda = 2.0;
    spec.shells_per_epoch = shells_per_epoch;
    spec.n_rho = n_rho;
    spec.rho_min = -3.6;
    spec.n_theta = n_theta;
    spec.n_phi = n_phi;
    spec.n_time = n_time;
    return std::make_shared<StripGrid>(make_strip_grid(spec));
}

// smooth reference field, self-similar so it is DSS for every lambda:
// both terms scale as v(x,t) = L v(Lx, L^2 t) and decay like |x|^{-2}
Vec3 reference_field(Vec3 x, double t) {
    Vec3 a{1.0, 0.5, -0.25};
    double q = dot(x, x) + 2.0 * t;
    Vec3 rot = cross(x, a);
    return (std::sqrt(t) / q) * a + (std::sqrt(t) / std::pow(q, 1.5)) * rot;
}

}  // namespace

TEST_CASE("strip grid satisfies its construction invariants") {
    auto g = test_grid();
    double wsum = 0.0;
    for (const AngularNode& n : g->ang) {
        CHECK(n.weight > 0.0);
        wsum += n.weight;
        Vec3 anti = g->ang[size_t(n.antipode)].dir;
        CHECK(norm(anti + n.dir) < 1e-14);
        CHECK(std::fabs(norm(n.dir) - 1.0) < 1e-14);
    }
    CHECK(std::fabs(wsum - 4.0 * kPi) < 1e-12 * 4.0 * kPi);
    CHECK(g->time_nodes[0] == 1.0);
    CHECK(g->time_nodes.back() < g->lambda * g->lambda);
    CHECK(std::fabs(g->d_rho * g->shells_per_epoch - std::log(g->lambda)) < 1e-15);

    GridSpec bad;
    bad.lambda = 0.9;
    CHECK_THROWS(make_strip_grid(bad));
    bad = GridSpec{};
    bad.n_phi = 7;
    CHECK_THROWS(make_strip_grid(bad));
    bad = GridSpec{};
    bad.n_time = 1;
    CHECK_THROWS(make_strip_grid(bad));
}

TEST_CASE("strip reduction finds the unique epoch") {
    double t = 3.0;
    int k = strip_reduce(1.2, t);
    CHECK(k == -3);
    CHECK(std::fabs(t - 1.004693) < 1e-5);

    // integer-scan oracle across many decades
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        double lambda = 1.1 + 2.0 * rng.uniform();
        double tq = std::pow(10.0, -8.0 + 16.0 * rng.uniform());
        double tr = tq;
        int kk = strip_reduce(lambda, tr);
        CHECK(tr >= 1.0);
        CHECK(tr < lambda * lambda);
        bool found = false;
        for (int j = -200; j <= 200; ++j) {
            double cand = tq * std::pow(lambda * lambda, double(j));
            if (cand >= 1.0 && cand < lambda * lambda) {
                CHECK(j == kk);
                found = true;
                break;
            }
        }
        CHECK(found);
    }
    double bad = -1.0;
    CHECK_THROWS(strip_reduce(2.0, bad));
}

TEST_CASE("field values at grid nodes are reproduced") {
    auto g = test_grid();
    StripField f = make_strip_field(g, 1.0);
    fill_field(f, reference_field);
    for (int it = 0; it < g->n_time; it += 2)
        for (int ir = 1; ir < g->n_rho; ir += 7)
            for (int ia = 0; ia < g->n_ang(); ia += 5) {
                Vec3 x = g->node(ir, ia);
                Vec3 v = strip_eval(f, x, g->time_nodes[size_t(it)]);
                Vec3 ref = f.at(it, ir, ia);
                CHECK(norm(v - ref) <= 1e-12 * (norm(ref) + 1e-12));
            }
}

TEST_CASE("dss extension reduces to the strip correctly") {
    auto g = test_grid();
    StripField f = make_strip_field(g, 1.0);
    fill_field(f, reference_field);
    Vec3 x{0.7, -0.4, 1.1};

    // inside the strip the extension is plain interpolation
    Vec3 inside = dss_extend(f, x, 1.0);
    Vec3 direct = strip_eval(f, x, 1.0);
    CHECK(norm(inside - direct) == 0.0);

    // t = lambda^2 forces k = -1
    Vec3 wrapped = dss_extend(f, x, 4.0);
    Vec3 expected = 0.5 * strip_eval(f, 0.5 * x, 1.0);
    CHECK(norm(wrapped - expected) <= 1e-13 * norm(expected));

    // coherence: both reductions of the same space-time point agree
    Rng rng(5);
    for (int trial = 0; trial < 40; ++trial) {
        Vec3 p = (0.3 + 3.0 * rng.uniform()) * rng.unit_vector();
        double t = 1.05 + 2.8 * rng.uniform();
        int j = int(rng.uniform(-3.0, 4.0));
        double lj = std::pow(g->lambda, double(j));
        Vec3 a = dss_extend(f, lj * p, lj * lj * t);
        Vec3 b = (1.0 / lj) * dss_extend(f, p, t);
        CHECK(norm(a - b) <= 1e-12 * (norm(b) + 1e-15));
    }
    CHECK_THROWS(dss_extend(f, x, 0.0));
}

TEST_CASE("interpolation converges to a smooth reference field") {
    auto coarse = test_grid(6, 12, 32, 6, 3);
    auto fine = test_grid(12, 24, 64, 12, 6);
    StripField fc = make_strip_field(coarse, 1.0);
    StripField ff = make_strip_field(fine, 1.0);
    fill_field(fc, reference_field);
    fill_field(ff, reference_field);

    Rng rng(11);
    double sup = 0.08;  // field magnitude scale near |x| ~ 1
    double worst_c = 0.0, worst_f = 0.0;
    for (int trial = 0; trial < 300; ++trial) {
        double r = std::exp(rng.uniform(-2.8, 3.1));
        Vec3 x = r * rng.unit_vector();
        double t = std::exp(rng.uniform(0.0, std::log(4.0) * 0.999));
        Vec3 exact = reference_field(x, t);
        double denom = norm(exact) + 0.01 * sup;
        worst_c = std::max(worst_c, norm(strip_eval(fc, x, t) - exact) / denom);
        worst_f = std::max(worst_f, norm(strip_eval(ff, x, t) - exact) / denom);
    }
    CHECK(worst_c < 0.08);
    CHECK(worst_f < worst_c / 2.8);

    // the far field rides the fitted tail model; probing along exact grid
    // directions isolates the tail from angular interpolation error
    for (int trial = 0; trial < 50; ++trial) {
        double r = std::exp(rng.uniform(3.3, 4.4));
        Vec3 dir = coarse->ang[size_t(int(rng.uniform(0.0, double(coarse->n_ang()))))].dir;
        Vec3 x = r * dir;
        double t = std::exp(rng.uniform(0.0, std::log(4.0) * 0.999));
        Vec3 exact = reference_field(x, t);
        CHECK(norm(strip_eval(fc, x, t) - exact) <= 0.02 * norm(exact) + 1e-9);
    }
}

TEST_CASE("tail model recovers an exact power-law field") {
    auto g = test_grid();
    double gamma = 0.4;
    StripField f = make_strip_field(g, gamma);
    auto model = [&](Vec3 x, double t) {
        Vec3 amp{1.0 + 0.2 * x.z / norm(x), -0.5, 0.3 * t};
        return std::pow(bracket(norm(x)), -(1.0 + gamma)) * amp;
    };
    fill_field(f, model);
    for (int it = 0; it < g->n_time; ++it)
        for (int ia = 0; ia < g->n_ang(); ia += 3) {
            Vec3 amp{1.0 + 0.2 * g->ang[size_t(ia)].dir.z, -0.5,
                     0.3 * g->time_nodes[size_t(it)]};
            Vec3 got = f.tail[f.tidx(it, ia)];
            CHECK(norm(got - amp) <= 1e-12 * norm(amp));
        }
    // beyond the last shell the model is evaluated exactly
    Vec3 dir = g->ang[3].dir;
    Vec3 far = (4.0 * std::exp(g->rho_max)) * dir;
    Vec3 v = strip_eval(f, far, 1.0);
    CHECK(norm(v - model(far, 1.0)) <= 1e-12 * norm(v));
}

TEST_CASE("weighted sup norm behaves like a norm") {
    auto g = test_grid(4, 8, 24, 4);
    StripField zero = make_strip_field(g, 0.5);
    CHECK(x_norm(zero) == 0.0);

    // gamma = 1 makes the weight cancel the model exactly
    StripField unit = make_strip_field(g, 1.0);
    fill_field(unit, [](Vec3 x, double) {
        return std::pow(bracket(norm(x)), -2.0) * Vec3{1, 0, 0};
    });
    CHECK(std::fabs(x_norm(unit) - 1.0) < 1e-13);

    Rng rng(23);
    StripField a = make_strip_field(g, 0.5);
    StripField b = make_strip_field(g, 0.5);
    for (size_t i = 0; i < a.samples.size(); ++i) {
        a.samples[i] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        b.samples[i] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    }
    fit_tail(a);
    fit_tail(b);
    StripField two = a;
    field_scale(2.0, two);
    CHECK(std::fabs(x_norm(two) - 2.0 * x_norm(a)) <= 1e-12 * x_norm(a));
    StripField sum = a;
    field_axpy(1.0, b, sum);
    CHECK(x_norm(sum) <= x_norm(a) + x_norm(b) + 1e-12);
    StripField diff = a;
    field_axpy(-1.0, b, diff);
    CHECK(std::fabs(x_norm_diff(a, b) - x_norm(diff)) <= 1e-12);
}

TEST_CASE("snapshot round trip is bit exact") {
    auto g = test_grid(4, 8, 16, 4);
    StripField f = make_strip_field(g, 0.37);
    Rng rng(99);
    for (Vec3& v : f.samples)
        v = {std::ldexp(rng.uniform(-1, 1), int(rng.uniform(-30, 30))),
             rng.uniform(-1, 1), rng.uniform(-1, 1)};
    fit_tail(f);

    std::string p1 = "snapshot_rt_1.txt", p2 = "snapshot_rt_2.txt";
    write_snapshot(f, p1, "deadbeef");
    StripField r = read_snapshot(p1);
    REQUIRE(r.samples.size() == f.samples.size());
    for (size_t i = 0; i < f.samples.size(); ++i) {
        CHECK(r.samples[i].x == f.samples[i].x);
        CHECK(r.samples[i].y == f.samples[i].y);
        CHECK(r.samples[i].z == f.samples[i].z);
    }
    for (size_t i = 0; i < f.tail.size(); ++i) CHECK(norm(r.tail[i] - f.tail[i]) == 0.0);
    CHECK(r.gamma == f.gamma);
    CHECK(r.grid->lambda == g->lambda);

    write_snapshot(r, p2, "deadbeef");
    std::ifstream s1(p1), s2(p2);
    std::stringstream b1, b2;
    b1 << s1.rdbuf();
    b2 << s2.rdbuf();
    CHECK(b1.str() == b2.str());
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("divergence residual diagnostic calibrates correctly") {
    std::vector<Vec3> pts;
    Rng rng(3);
    for (int i = 0; i < 30; ++i) pts.push_back(2.0 * rng.unit_vector());

    auto constant = [](Vec3) { return Vec3{0.3, -1.0, 2.0}; };
    CHECK(divergence_residual(constant, pts, 0.05) < 1e-12);

    auto linear = [](Vec3 x) { return x; };
    CHECK(std::fabs(divergence_residual(linear, pts, 0.05) - 3.0) < 1e-10);

    // curl fields are divergence free; the stencil error decays like h^2
    auto curlish = [](Vec3 x) {
        return Vec3{std::sin(x.y * x.z), std::sin(x.z + x.x * x.x),
                    std::cos(x.x * x.y)};
    };
    auto analytic_div_free = [&](Vec3 x) {
        // curl of curlish computed by nested differences is overkill; instead use
        // u = curl psi with psi = curlish evaluated analytically via finite h in
        // the residual itself: the residual of an exact curl decays as h^2
        double h = 1e-4;
        Vec3 e[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        Vec3 u{};
        for (int i = 0; i < 3; ++i) {
            Vec3 dp = curlish(x + h * e[i]), dm = curlish(x - h * e[i]);
            Vec3 d = (1.0 / (2.0 * h)) * (dp - dm);
            // accumulate epsilon_{ijk} d_j psi_k
            int j = (i + 1) % 3, k = (i + 2) % 3;
            u[j] -= d[k];
            u[k] += d[j];
        }
        return u;
    };
    double r1 = divergence_residual(analytic_div_free, pts, 0.2);
    double r2 = divergence_residual(analytic_div_free, pts, 0.1);
    CHECK(r1 / r2 > 2.5);
    CHECK(r1 / r2 < 6.0);
}

TEST_CASE("swirl component measures the azimuthal part") {
    std::vector<Vec3> pts = {{1, 0, 0}, {0, 2, 1}, {-1, 1, 0.5}};
    auto axial = [](Vec3) { return Vec3{0, 0, 1}; };
    CHECK(swirl_component(axial, pts).max_swirl < 1e-15);

    auto azimuthal = [](Vec3 x) {
        double r = std::hypot(x.x, x.y);
        return Vec3{-x.y / r, x.x / r, 0.0};
    };
    SwirlReport rep = swirl_component(azimuthal, pts);
    CHECK(std::fabs(rep.max_swirl - 1.0) < 1e-14);

    std::vector<Vec3> axis_pts = {{0, 0, 1}, {1, 0, 0}};
    SwirlReport rep2 = swirl_component(axial, axis_pts);
    CHECK(rep2.skipped == 1);
}

TEST_CASE("spherical harmonic interpolation is exact on band-limited data") {
    auto g = test_grid(6, 12, 16, 4);
    int lmax = detail::harm_lmax(*g);
    REQUIRE(lmax >= 4);

    // orthonormality of the basis under the grid quadrature
    std::vector<std::vector<double>> ys(size_t(g->n_ang()));
    for (int ia = 0; ia < g->n_ang(); ++ia)
        detail::harm_basis(lmax, g->ang[size_t(ia)].dir, ys[size_t(ia)]);
    int nc = detail::harm_count(lmax);
    for (int a : {0, 1, 4, 7, nc - 1})
        for (int b : {0, 2, 5, nc - 2}) {
            double ip = 0.0;
            for (int ia = 0; ia < g->n_ang(); ++ia)
                ip += g->ang[size_t(ia)].weight * ys[size_t(ia)][size_t(a)] *
                      ys[size_t(ia)][size_t(b)];
            CHECK(std::fabs(ip - (a == b ? 1.0 : 0.0)) < 1e-12);
        }

    // a low-degree angular field is reproduced exactly between nodes
    auto band_limited = [&](Vec3 dir) {
        std::vector<double> y;
        detail::harm_basis(lmax, dir, y);
        return Vec3{0.4 * y[0] + 0.8 * y[3] - 0.3 * y[6],
                    y[1] - 0.5 * y[8],
                    0.7 * y[2] + 0.2 * y[12]};
    };
    StripField f = make_strip_field(g, 0.5);
    fill_field(f, [&](Vec3 x, double) { return band_limited((1.0 / norm(x)) * x); });
    StripField fh = f;
    fh.ang_interp = AngularInterp::harmonic;
    prepare_harmonic(fh);

    Rng rng(41);
    double r = g->radius(5);
    double worst_bi = 0.0, worst_sh = 0.0;
    for (int trial = 0; trial < 60; ++trial) {
        Vec3 dir = rng.unit_vector();
        Vec3 exact = band_limited(dir);
        worst_bi = std::max(worst_bi, norm(strip_eval(f, r * dir, 1.0) - exact));
        worst_sh = std::max(worst_sh, norm(strip_eval(fh, r * dir, 1.0) - exact));
    }
    CHECK(worst_sh < 1e-11);
    CHECK(worst_bi > 100.0 * std::max(worst_sh, 1e-14));
}

TEST_CASE("time interpolation is continuous across the strip boundary") {
    auto g = test_grid();
    StripField f = make_strip_field(g, 1.0);
    fill_field(f, reference_field);
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Vec3 x = (0.5 + 2.0 * rng.uniform()) * rng.unit_vector();
        Vec3 below = strip_eval(f, x, 4.0 * (1.0 - 1e-10));
        Vec3 wrap = dss_extend(f, x, 4.0);
        CHECK(norm(below - wrap) <= 1e-7 * (norm(wrap) + 1e-12));
    }
}
