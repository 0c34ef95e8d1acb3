#pragma once

/// Fixed-point solver on the fundamental strip.
///
/// The unknown is the correction v in the weighted sup-norm space measured by
/// x_norm; the map is
///
///   K(v, sigma) = Phi[ -(sigma U + Ev) tensor (sigma U + Ev) ]
///
/// restricted to the strip, where U is the caloric extension of the datum and
/// Ev the self-similar extension of v. A solution of v = K(v, 1) assembles to
/// the velocity u = U + Ev. Picard iteration with optional Anderson mixing
/// solves each fixed sigma; a continuation loop raises sigma from the
/// small-data regime toward 1, warm-starting every step and halving the step
/// on failure. Continuation may legitimately stall: that outcome is reported
/// with a full trace, not treated as an error.
///
/// The caloric part is precomputed at the exact source-quadrature sample
/// points of the convolution once per solver, so each iteration pays only for
/// the extension of v and the convolution itself.

#include <cstring>
#include <deque>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dsslab/heat.hpp"
#include "dsslab/initial_data.hpp"
#include "dsslab/stokes_conv.hpp"

namespace dsslab {

struct SolverParams {
    double gamma = 0.5;      // weight exponent of the solution space
    double tol = 2e-5;       // fixed-point tolerance in the weighted sup norm
    int max_iter = 40;       // map evaluations per sigma step
    double damping = 1.0;    // mixing weight; drops to 0.5 on residual growth
    int anderson_depth = 3;  // history length of the mixing, 0 = plain Picard
    double sigma0 = 0.0;     // first continuation target; 0 picks 0.05 / C_star
    double sigma_target = 1.0;
    double min_step = 1e-3;    // continuation stops rather than step below this
    int map_eval_budget = 400;  // total map evaluations across the continuation
};

struct AprioriReport {
    double u_const = 0.0;  // sup |u| (|x| + sqrt t)
    double v_const = 0.0;  // sup |v| sqrt(t) br(x / sqrt t)^2
    double v_gamma = 0.0;  // sup |v| sqrt(t) br(x / sqrt t)^{1 + gamma}
    bool finite = true;
};

struct SolveResult {
    StripField v;
    double sigma = 0.0;
    std::vector<double> residual_history;  // |K(v_n) - v_n| per iteration
    double final_residual = 0.0;           // |K(v) - v| of the returned field
    int iterations = 0;                    // map evaluations spent
    bool converged = false;
    bool diverged = false;  // residual grew 10x over five iterations
    AprioriReport apriori;
};

enum class ContinuationStatus { reached_sigma_1, step_underflow, iteration_budget };

inline const char* to_string(ContinuationStatus s) {
    switch (s) {
        case ContinuationStatus::reached_sigma_1: return "reached_sigma_1";
        case ContinuationStatus::step_underflow: return "step_underflow";
        default: return "iteration_budget";
    }
}

struct ContinuationStep {
    double sigma = 0.0;
    double v_norm = 0.0;
    double step = 0.0;
    bool converged = false;
    int iterations = 0;
    double final_residual = 0.0;
};

struct ContinuationTrace {
    std::vector<ContinuationStep> steps;     // accepted; sigma strictly increases
    std::vector<ContinuationStep> attempts;  // every trial, failures included
    ContinuationStatus status = ContinuationStatus::iteration_budget;
    SolveResult last;  // solution at the highest accepted sigma
    int map_evals = 0;
};

namespace detail {

/// Hash key for caching an evaluation at exact (point, time) arguments.
struct ArgKey {
    double w[4];
    bool operator==(const ArgKey& o) const {
        return std::memcmp(w, o.w, sizeof w) == 0;
    }
};

struct ArgKeyHash {
    size_t operator()(const ArgKey& k) const {
        unsigned char b[sizeof k.w];
        std::memcpy(b, k.w, sizeof b);
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : b) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return size_t(h);
    }
};

using ArgCache = std::unordered_map<ArgKey, Vec3, ArgKeyHash>;

inline ArgKey arg_key(Vec3 x, double t) {
    return ArgKey{{x.x, x.y, x.z, t}};
}

}  // namespace detail

/// One datum, target grid and quadrature bound together with the caloric
/// cache; exposes the fixed-point map, the Picard loop and the continuation.
class Solver {
  public:
    Solver(DssInitialData u0, std::shared_ptr<const StripGrid> grid,
           QuadratureSpec spec, SolverParams params, const ThreadPool& pool)
        : u0_(std::move(u0)),
          grid_(std::move(grid)),
          params_(params),
          pool_(pool) {
        require(params_.gamma > 0.0 && params_.gamma < 1.0,
                "solver: gamma must lie in (0,1)");
        require(params_.tol > 0.0, "solver: tol must be positive");
        require(params_.max_iter >= 1, "solver: max_iter must be at least 1");
        require(params_.damping > 0.0 && params_.damping <= 1.0,
                "solver: damping must lie in (0,1]");
        require(params_.anderson_depth >= 0 && params_.anderson_depth <= 3,
                "solver: anderson_depth must lie in [0,3]");
        require(params_.sigma_target > 0.0 && params_.sigma_target <= 1.0,
                "solver: sigma_target must lie in (0,1]");
        require(params_.sigma0 >= 0.0 && params_.sigma0 <= params_.sigma_target,
                "solver: sigma0 must lie in [0, sigma_target]");
        require(params_.min_step > 0.0, "solver: min_step must be positive");
        require(params_.map_eval_budget >= 1, "solver: empty evaluation budget");
        spec_ = resolve_quadrature(spec, *grid_);
        heat_ = heat_expansion(u0_);
        cache_ = build_cache(spec_);
    }

    const DssInitialData& datum() const { return u0_; }
    const HeatExpansion& heat() const { return heat_; }
    const QuadratureSpec& spec() const { return spec_; }
    const SolverParams& params() const { return params_; }
    const std::shared_ptr<const StripGrid>& grid() const { return grid_; }

    /// Caloric part U at any (x, t); cached at the quadrature sample points.
    Vec3 caloric(Vec3 x, double t) const {
        if (!cache_.empty()) {
            auto it = cache_.find(detail::arg_key(x, t));
            if (it != cache_.end()) return it->second;
        }
        return heat_semigroup(heat_, x, t);
    }

    /// Assembled solution sigma U + Ev at any (x, t) with t > 0.
    Vec3 assembled(const StripField& v, double sigma, Vec3 x, double t) const {
        Vec3 w = dss_extend(v, x, t);
        if (sigma != 0.0) w += sigma * caloric(x, t);
        return w;
    }

    /// All-zero field in the solution space.
    StripField zero_field() const { return make_strip_field(grid_, params_.gamma); }

    /// One application of the fixed-point map.
    StripField k_map(const StripField& v, double sigma) const {
        return k_map_with(v, sigma, spec_, cache_);
    }

    /// Damped Picard iteration at fixed sigma with optional Anderson mixing
    /// over the trailing residuals. The convergence test is the fixed-point
    /// residual |K(v_n) - v_n| itself, so a converged result returns the
    /// iterate whose residual was measured, not the freshly mixed one.
    SolveResult picard_solve(double sigma, StripField v_init,
                             int eval_cap = 0) const {
        require(sigma >= 0.0 && sigma <= 1.0, "solver: sigma must lie in [0,1]");
        require(v_init.grid == grid_, "solver: v_init lives on a foreign grid");
        int cap = params_.max_iter;
        if (eval_cap > 0 && eval_cap < cap) cap = eval_cap;

        SolveResult res;
        res.sigma = sigma;
        StripField v = std::move(v_init);
        v.gamma = params_.gamma;
        double eff_damping = params_.damping;
        std::deque<StripField> vh, wh;  // trailing iterates and their images

        for (int n = 0; n < cap; ++n) {
            StripField w = k_map(v, sigma);
            ++res.iterations;
            double r = x_norm_diff(w, v);
            res.residual_history.push_back(r);
            res.final_residual = r;
            if (!std::isfinite(r)) {
                res.diverged = true;
                break;
            }
            if (r <= params_.tol) {
                res.converged = true;
                break;
            }
            size_t m = res.residual_history.size();
            if (m >= 6 && r > 10.0 * res.residual_history[m - 6]) {
                res.diverged = true;
                break;
            }
            if (m >= 2 && r > res.residual_history[m - 2] && eff_damping > 0.5) {
                eff_damping = 0.5;
                vh.clear();
                wh.clear();
            }
            v = next_iterate(v, w, eff_damping, vh, wh);
        }
        res.v = std::move(v);
        res.apriori = apriori_monitor(res.v, sigma);
        return res;
    }

    /// Path-following in sigma from the small-data regime to sigma_target.
    /// Accepted steps warm-start the next one; a failed step is halved until
    /// it would drop below min_step. Failure of the very first step is an
    /// error: no part of the path was established.
    ContinuationTrace continuation() const {
        ContinuationTrace tr;
        double c_star = u0_.c_star;
        double sigma0 = params_.sigma0;
        if (sigma0 == 0.0)
            sigma0 = c_star > 0.0
                         ? std::min(params_.sigma_target, 0.05 / c_star)
                         : params_.sigma_target;
        double sigma_acc = 0.0;
        double step = sigma0;
        StripField v = zero_field();
        bool underflow = false;

        while (true) {
            if (tr.map_evals >= params_.map_eval_budget) {
                tr.status = ContinuationStatus::iteration_budget;
                break;
            }
            double sigma = std::min(sigma_acc + step, params_.sigma_target);
            SolveResult res = picard_solve(
                sigma, v, params_.map_eval_budget - tr.map_evals);
            tr.map_evals += res.iterations;
            ContinuationStep st;
            st.sigma = sigma;
            st.v_norm = x_norm(res.v);
            st.step = sigma - sigma_acc;
            st.converged = res.converged;
            st.iterations = res.iterations;
            st.final_residual = res.final_residual;
            tr.attempts.push_back(st);
            if (res.converged) {
                tr.steps.push_back(st);
                sigma_acc = sigma;
                v = res.v;
                tr.last = std::move(res);
                if (sigma_acc >= params_.sigma_target) {
                    tr.status = ContinuationStatus::reached_sigma_1;
                    break;
                }
                step = std::min(1.6 * step, params_.sigma_target - sigma_acc);
            } else {
                if (tr.steps.empty())
                    fail("continuation: the first step at sigma=" +
                         format_g17(sigma) +
                         " did not converge; reduce sigma0 or C_star");
                step *= 0.5;
                if (sigma_acc + step <= sigma_acc ||
                    step < params_.min_step) {
                    underflow = true;
                    tr.status = ContinuationStatus::step_underflow;
                    break;
                }
            }
        }
        if (!underflow && tr.steps.empty())
            fail("continuation: no step was attempted within the budget");
        return tr;
    }

    /// Fitted constants of the standard pointwise bounds over the strip grid:
    /// sup |u| (|x| + sqrt t) for the assembled solution and the two weighted
    /// sup norms of the correction. Weights use the parabolic bracket, so the
    /// constants are invariant under relabeling t by lambda^2 t.
    AprioriReport apriori_monitor(const StripField& v, double sigma) const {
        const StripGrid& g = *grid_;
        size_t n_nodes = size_t(g.n_time) * g.n_rho * g.n_ang();
        std::vector<double> fits(3 * n_nodes);
        pool_.parallel_for(n_nodes, [&](size_t idx) {
            int ia = int(idx % g.n_ang());
            int ir = int((idx / g.n_ang()) % g.n_rho);
            int it = int(idx / (size_t(g.n_rho) * g.n_ang()));
            Vec3 x = g.node(ir, ia);
            double t = g.time_nodes[size_t(it)];
            double rt = std::sqrt(t);
            Vec3 vv = v.at(it, ir, ia);
            Vec3 uu = vv;
            if (sigma != 0.0) uu += sigma * caloric(x, t);
            double z = norm(x) / rt;
            fits[3 * idx] = norm(uu) * (norm(x) + rt);
            fits[3 * idx + 1] = norm(vv) * rt * bracket(z) * bracket(z);
            fits[3 * idx + 2] =
                norm(vv) * rt * std::pow(bracket(z), 1.0 + params_.gamma);
        });
        AprioriReport rep;
        for (size_t i = 0; i < n_nodes; ++i) {
            rep.u_const = std::max(rep.u_const, fits[3 * i]);
            rep.v_const = std::max(rep.v_const, fits[3 * i + 1]);
            rep.v_gamma = std::max(rep.v_gamma, fits[3 * i + 2]);
        }
        rep.finite = std::isfinite(rep.u_const) && std::isfinite(rep.v_const) &&
                     std::isfinite(rep.v_gamma);
        return rep;
    }

    /// Independent recomputation of the fixed-point residual |v - K(v, sigma)|
    /// on a finer quadrature; the certificate for a converged result.
    double certify(const StripField& v, double sigma) const {
        QuadratureSpec fine = refine_spec(spec_);
        detail::ArgCache cache = build_cache(fine);
        StripField w = k_map_with(v, sigma, fine, cache);
        return x_norm_diff(v, w);
    }

  private:
    /// Caloric values at the exact source sample points of one quadrature.
    detail::ArgCache build_cache(const QuadratureSpec& spec) const {
        detail::ArgCache cache;
        if (u0_.c_star == 0.0) return cache;
        StripGrid lad = phi_source_ladder(*grid_, spec);
        std::vector<std::pair<Vec3, double>> args;
        for_each_force_sample(lad, spec.time_res, grid_->lambda,
                              [&](Vec3 y, double s) { args.push_back({y, s}); });
        std::vector<Vec3> vals(args.size());
        pool_.parallel_for(args.size(), [&](size_t i) {
            vals[i] = heat_semigroup(heat_, args[i].first, args[i].second);
        });
        cache.reserve(2 * args.size());
        for (size_t i = 0; i < args.size(); ++i)
            cache[detail::arg_key(args[i].first, args[i].second)] = vals[i];
        return cache;
    }

    StripField k_map_with(const StripField& v, double sigma,
                          const QuadratureSpec& spec,
                          const detail::ArgCache& cache) const {
        require(sigma >= 0.0 && sigma <= 1.0, "solver: sigma must lie in [0,1]");
        ForceField f = nonlinearity(
            [this, &cache](Vec3 y, double s) {
                if (!cache.empty()) {
                    auto it = cache.find(detail::arg_key(y, s));
                    if (it != cache.end()) return it->second;
                }
                return heat_semigroup(heat_, y, s);
            },
            v, sigma);
        PhiResult r = phi_apply(f, grid_, spec, pool_);
        StripField w = std::move(r.field);
        w.gamma = params_.gamma;
        fit_tail(w);
        return w;
    }

    /// Next iterate from the current pair (v, K v): damped Picard, optionally
    /// Anderson-corrected over the trailing history. The least-squares system
    /// is a small ridge-regularized normal equation in the plain l2 product
    /// of the sample vectors; wild extrapolation weights fall back to the
    /// plain damped step for that iteration.
    StripField next_iterate(const StripField& v, const StripField& w,
                            double damping, std::deque<StripField>& vh,
                            std::deque<StripField>& wh) const {
        int depth = params_.anderson_depth;
        auto mixed = [&](const StripField& a, const StripField& b) {
            // (1 - damping) a + damping b
            StripField m = a;
            field_scale(1.0 - damping, m);
            field_axpy(damping, b, m);
            return m;
        };
        if (depth == 0) return mixed(v, w);

        int m = int(vh.size());
        double theta[3] = {};
        bool use = false;
        if (m > 0) {
            auto res_dot = [&](const StripField& va, const StripField& wa,
                               const StripField& vb, const StripField& wb) {
                double d = 0.0;
                for (size_t i = 0; i < v.samples.size(); ++i) {
                    Vec3 ra = wa.samples[i] - va.samples[i];
                    Vec3 rb = wb.samples[i] - vb.samples[i];
                    d += dot(ra, rb);
                }
                for (size_t i = 0; i < v.tail.size(); ++i) {
                    Vec3 ra = wa.tail[i] - va.tail[i];
                    Vec3 rb = wb.tail[i] - vb.tail[i];
                    d += dot(ra, rb);
                }
                return d;
            };
            // G_j = F(v_{n-j}) - F(v_n); minimize |F_n + sum theta_j G_j|
            double a[3][3] = {}, b[3] = {};
            double fn_fn = res_dot(v, w, v, w);
            double gj_fn[3] = {}, gj_gk[3][3] = {};
            for (int j = 0; j < m; ++j) {
                gj_fn[j] = res_dot(vh[size_t(j)], wh[size_t(j)], v, w) - fn_fn;
                for (int k = 0; k <= j; ++k) {
                    gj_gk[j][k] =
                        res_dot(vh[size_t(j)], wh[size_t(j)], vh[size_t(k)],
                                wh[size_t(k)]) -
                        res_dot(vh[size_t(j)], wh[size_t(j)], v, w) -
                        res_dot(vh[size_t(k)], wh[size_t(k)], v, w) + fn_fn;
                    gj_gk[k][j] = gj_gk[j][k];
                }
            }
            double ridge = 0.0;
            for (int j = 0; j < m; ++j) ridge += gj_gk[j][j];
            ridge = 1e-10 * (ridge / m) + 1e-300;
            for (int j = 0; j < m; ++j) {
                a[j][j] = gj_gk[j][j] + ridge;
                for (int k = 0; k < m; ++k)
                    if (k != j) a[j][k] = gj_gk[j][k];
                b[j] = -gj_fn[j];
            }
            use = solve3(a, b, theta, m);
            for (int j = 0; j < m; ++j)
                if (std::abs(theta[j]) > 10.0) use = false;
        }

        StripField vbar = v, wbar = w;
        if (use) {
            for (int j = 0; j < m; ++j) {
                field_axpy(theta[j], vh[size_t(j)], vbar);
                field_axpy(-theta[j], v, vbar);
                field_axpy(theta[j], wh[size_t(j)], wbar);
                field_axpy(-theta[j], w, wbar);
            }
        }
        StripField out = mixed(vbar, wbar);
        vh.push_front(v);
        wh.push_front(w);
        while (int(vh.size()) > depth) {
            vh.pop_back();
            wh.pop_back();
        }
        return out;
    }

    /// Gaussian elimination with partial pivoting for the m x m corner.
    static bool solve3(double a[3][3], double b[3], double x[3], int m) {
        int piv[3] = {0, 1, 2};
        for (int c = 0; c < m; ++c) {
            int best = c;
            for (int r = c + 1; r < m; ++r)
                if (std::abs(a[piv[r]][c]) > std::abs(a[piv[best]][c])) best = r;
            std::swap(piv[c], piv[best]);
            double d = a[piv[c]][c];
            if (std::abs(d) < 1e-280) return false;
            for (int r = c + 1; r < m; ++r) {
                double f = a[piv[r]][c] / d;
                for (int k = c; k < m; ++k) a[piv[r]][k] -= f * a[piv[c]][k];
                b[piv[r]] -= f * b[piv[c]];
            }
        }
        for (int c = m - 1; c >= 0; --c) {
            double s = b[piv[c]];
            for (int k = c + 1; k < m; ++k) s -= a[piv[c]][k] * x[k];
            x[c] = s / a[piv[c]][c];
        }
        return true;
    }

    DssInitialData u0_;
    std::shared_ptr<const StripGrid> grid_;
    SolverParams params_;
    const ThreadPool& pool_;
    QuadratureSpec spec_;
    HeatExpansion heat_;
    detail::ArgCache cache_;
};

}  // namespace dsslab
