#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "localnewton/objective.hpp"

namespace localnewton {

class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class LineSearchError : public SolverError {
public:
    LineSearchError(const std::string& what, double last_alpha)
        : SolverError(what), last_alpha_(last_alpha) {}
    double last_alpha() const { return last_alpha_; }

private:
    double last_alpha_;
};

struct CgConfig {
    double tol = 1e-8;   // relative residual threshold
    int max_iters = 250;

    static CgConfig for_dimension(long d, double tol = 1e-8) {
        return CgConfig{tol, static_cast<int>(std::min<long>(d, 250))};
    }
};

struct CgResult {
    Vector direction;
    double residual_norm = 0.0;
    int iterations = 0;
};

// Conjugate gradients for H p = g from p0 = 0 (fresh solve, no warm start).
// Stops when ||H p - g|| <= tol * ||g|| or at max_iters. The operator must be
// SPD on the probed subspace; breakdown or non-finite values throw.
template <class Op>
CgResult cg_solve(const Op& apply_h, const Vector& g, const CgConfig& cfg,
                  const std::function<void(const Vector&)>& iterate_observer = nullptr) {
    if (!(g.norm() > 0.0)) throw std::invalid_argument("cg_solve: zero right-hand side");
    if (cfg.max_iters < 1 || !(cfg.tol > 0.0) || cfg.tol >= 1.0)
        throw std::invalid_argument("cg_solve: bad config");

    const double threshold = cfg.tol * g.norm();
    Vector x = Vector::Zero(g.size());
    Vector r = g;
    Vector dir = r;
    double rr = r.squaredNorm();

    int it = 0;
    while (it < cfg.max_iters) {
        Vector hd = apply_h(dir);
        const double dhd = dir.dot(hd);
        if (!std::isfinite(dhd) || !hd.allFinite())
            throw SolverError("cg_solve: non-finite value during iteration");
        if (dhd <= 0.0)
            throw SolverError("cg_solve: operator not positive definite on probed subspace");
        const double alpha = rr / dhd;
        x.noalias() += alpha * dir;
        r.noalias() -= alpha * hd;
        ++it;
        if (iterate_observer) iterate_observer(x);
        const double rr_next = r.squaredNorm();
        if (std::sqrt(rr_next) <= threshold) {
            rr = rr_next;
            break;
        }
        dir = r + (rr_next / rr) * dir;
        rr = rr_next;
    }
    return CgResult{std::move(x), std::sqrt(rr), it};
}

struct LineSearchConfig {
    double beta = 0.1;         // Armijo slope parameter, in (0, 1/2]
    double alpha_init = 1.0;   // first trial step
    double shrink = 0.5;       // multiplicative backtrack factor
    int max_backtracks = 50;
    std::optional<double> alpha_star_cap;  // analytic cap; trials start at min(alpha_init, cap)

    void validate() const {
        if (!(beta > 0.0) || beta > 0.5)
            throw std::invalid_argument("line search: beta must be in (0, 1/2]");
        if (!(shrink > 0.0) || shrink >= 1.0)
            throw std::invalid_argument("line search: shrink must be in (0, 1)");
        if (!(alpha_init > 0.0))
            throw std::invalid_argument("line search: alpha_init must be positive");
        if (max_backtracks < 0) throw std::invalid_argument("line search: bad max_backtracks");
        if (alpha_star_cap && !(*alpha_star_cap > 0.0))
            throw std::invalid_argument("line search: cap must be positive");
    }
};

// Backtracking search for the sufficient-decrease condition
//   f(w - alpha p) <= f(w) - alpha beta p^T g,
// minimizing via w - alpha p, so p^T g > 0 is required. With a cap set the
// first trial is min(alpha_init, cap): the accepted step is the largest
// candidate not exceeding the cap.
template <class F>
double armijo_backtrack(const F& f_eval, const Vector& w, const Vector& p, const Vector& g,
                        const LineSearchConfig& cfg) {
    cfg.validate();
    const double slope = p.dot(g);
    if (!(slope > 0.0))
        throw std::invalid_argument("armijo_backtrack: p is not a descent direction (p^T g <= 0)");

    const double f0 = f_eval(w);
    double alpha = cfg.alpha_star_cap ? std::min(cfg.alpha_init, *cfg.alpha_star_cap)
                                      : cfg.alpha_init;
    for (int k = 0; k <= cfg.max_backtracks; ++k) {
        const double trial = f_eval(w - alpha * p);
        if (trial <= f0 - alpha * cfg.beta * slope) return alpha;
        // Requested decrement below the resolution of f in double precision:
        // the condition is vacuous at this scale and the trial value is noise.
        if (alpha * cfg.beta * slope <= 1e-15 * std::max(1.0, std::abs(f0))) return alpha;
        alpha *= cfg.shrink;
    }
    throw LineSearchError("armijo_backtrack: max_backtracks exhausted (curvature assumptions "
                          "likely violated); last trial alpha = " +
                              std::to_string(alpha / cfg.shrink),
                          alpha / cfg.shrink);
}

// Analytic step cap min{ (1-beta) kappa / M, 2 beta kappa^2 / (3 M [M - kappa/4]) },
// clamped to <= 1.
inline double alpha_star(const CurvatureBounds& bounds, double beta) {
    if (!(beta > 0.0) || beta > 0.5)
        throw std::invalid_argument("alpha_star: beta must be in (0, 1/2]");
    if (!(bounds.kappa > 0.0) || !(bounds.M > 0.0) || bounds.kappa > bounds.M)
        throw std::invalid_argument("alpha_star: need 0 < kappa <= M");
    const double denom = bounds.M - bounds.kappa / 4.0;
    if (!(denom > 0.0)) throw std::invalid_argument("alpha_star: M <= kappa/4, formula invalid");
    const double t1 = (1.0 - beta) * bounds.kappa / bounds.M;
    const double t2 = 2.0 * beta * bounds.kappa * bounds.kappa / (3.0 * bounds.M * denom);
    return std::min(std::min(t1, t2), 1.0);
}

// Alternative sufficient cap 2 (1-beta) kappa (1-eps) / (M (1+eps)), kept for
// comparison against the primary formula above.
inline double alpha_star_appendix(const CurvatureBounds& bounds, double beta, double epsilon) {
    if (!(beta > 0.0) || beta > 0.5)
        throw std::invalid_argument("alpha_star_appendix: beta must be in (0, 1/2]");
    if (!(epsilon > 0.0) || epsilon >= 1.0)
        throw std::invalid_argument("alpha_star_appendix: epsilon must be in (0, 1)");
    if (!(bounds.kappa > 0.0) || !(bounds.M > 0.0))
        throw std::invalid_argument("alpha_star_appendix: need positive kappa, M");
    const double cap =
        2.0 * (1.0 - beta) * bounds.kappa * (1.0 - epsilon) / (bounds.M * (1.0 + epsilon));
    return std::min(cap, 1.0);
}

}  // namespace localnewton
