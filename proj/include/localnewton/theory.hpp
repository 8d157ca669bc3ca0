#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "localnewton/localnewton.hpp"
#include "localnewton/newton.hpp"
#include "localnewton/objective.hpp"
#include "localnewton/synth.hpp"

namespace localnewton {

// Derived constants of the convergence analysis, recomputed from the bounds
// and tolerances by the closed-form expressions. The L > 1 descent constant
// is stated twice in the analysis with different values; both are kept.
struct TheoryParams {
    // inputs
    CurvatureBounds bounds;
    double epsilon = 0.0;      // spectral tolerance, (0, 1/2]
    double epsilon1 = 0.0;     // gradient-alignment tolerance, (0, 1/2)
    double delta_prob = 0.0;   // failure probability, (0, 1)
    long s = 0;                // shard size
    double beta = 0.0;         // line-search slope parameter
    int worker_count = 1;      // K (enters the first L > 1 constant)
    double G = 0.0;            // min shard gradient norm (measured)
    // derived
    double alpha_star_value = 0.0;
    double psi = 0.0;          // alpha* beta / (M (1+eps))
    double eta = 0.0;          // Gamma (1 + sqrt(2 log(1/delta))) / sqrt(s)
    double C1 = 0.0;           // (1-eps) psi / 2 - eps1 / (kappa (1-eps))
    double C2 = 0.0;           // psi (1-eps) / 2
    double rho1 = 0.0;         // 1 - 2 kappa C1
    double rho2 = 0.0;         // 1 - 2 kappa C2
    double C_lgt1_a = 0.0;     // psi - (M - kappa(1-eps)^2) / (2 K kappa^2 (1-eps)^2)
    double C_lgt1_b = 0.0;     // psi (1-eps)^3 / 2

    static TheoryParams make(const CurvatureBounds& bounds, double epsilon, double epsilon1,
                             double delta_prob, long s, double beta, int worker_count = 1,
                             double G = 0.0) {
        if (!(epsilon > 0.0) || epsilon > 0.5)
            throw std::invalid_argument("theory: epsilon must be in (0, 1/2]");
        if (!(epsilon1 >= 0.0) || epsilon1 >= 0.5)
            throw std::invalid_argument("theory: epsilon1 must be in [0, 1/2)");
        if (!(delta_prob > 0.0) || delta_prob >= 1.0)
            throw std::invalid_argument("theory: delta_prob must be in (0, 1)");
        if (s < 1) throw std::invalid_argument("theory: s must be >= 1");

        TheoryParams p;
        p.bounds = bounds;
        p.epsilon = epsilon;
        p.epsilon1 = epsilon1;
        p.delta_prob = delta_prob;
        p.s = s;
        p.beta = beta;
        p.worker_count = worker_count;
        p.G = G;

        const double kappa = bounds.kappa;
        const double M = bounds.M;
        p.alpha_star_value = alpha_star(bounds, beta);
        p.psi = p.alpha_star_value * beta / (M * (1.0 + epsilon));
        p.eta = (1.0 + std::sqrt(2.0 * std::log(1.0 / delta_prob))) * bounds.Gamma /
                std::sqrt(static_cast<double>(s));
        p.C1 = (1.0 - epsilon) * p.psi / 2.0 - epsilon1 / (kappa * (1.0 - epsilon));
        p.C2 = p.psi * (1.0 - epsilon) / 2.0;
        p.rho1 = 1.0 - 2.0 * kappa * p.C1;
        p.rho2 = 1.0 - 2.0 * kappa * p.C2;
        const double om = 1.0 - epsilon;
        p.C_lgt1_a = p.psi - (M - kappa * om * om) /
                                 (2.0 * worker_count * kappa * kappa * om * om);
        p.C_lgt1_b = p.psi * om * om * om / 2.0;
        if (!(p.psi > 0.0)) throw std::runtime_error("theory: psi must be positive");
        return p;
    }
};

// ceil( (4 B / (kappa eps^2)) log(2 d / delta) ): the shard size above which
// the subsampled Hessian respects the (1 +- eps) spectral band w.p. 1 - delta.
inline long required_sample_size(const CurvatureBounds& bounds, double epsilon,
                                 double delta_prob, long d) {
    if (!(epsilon > 0.0) || epsilon > 0.5)
        throw std::invalid_argument("required_sample_size: epsilon in (0, 1/2]");
    if (!(delta_prob > 0.0) || delta_prob >= 1.0)
        throw std::invalid_argument("required_sample_size: delta in (0, 1)");
    if (!(bounds.kappa > 0.0)) throw std::invalid_argument("required_sample_size: kappa > 0");
    const double bound = 4.0 * bounds.B / (bounds.kappa * epsilon * epsilon) *
                         std::log(2.0 * static_cast<double>(d) / delta_prob);
    return static_cast<long>(std::ceil(bound));
}

// First s entries of a seeded partial Fisher-Yates over [0, n), returned in
// ascending order so evaluation order (and hence summation order) is a
// function of the chosen set alone; at s = n the full set is reproduced
// exactly.
template <class Rng>
std::vector<int> sample_without_replacement(long n, long s, Rng& rng) {
    std::vector<int> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    for (long i = 0; i < s; ++i) {
        const long j = i + static_cast<long>(bounded_uniform(rng, static_cast<std::uint64_t>(n - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(s));
    std::sort(pool.begin(), pool.end());
    return pool;
}

struct ConcentrationResult {
    double failure_rate = 0.0;
    int trials = 0;
    CurvatureBounds bounds_used;
    std::vector<std::pair<double, double>> extreme_eigs;  // (lambda_min, lambda_max) per trial
};

// Draws `trials` uniform size-s subsets and checks the subsampled Hessian at w
// against (1-eps) kappa <= lambda_min and lambda_max <= (1+eps) M, with the
// bounds estimated at the same iterate.
inline ConcentrationResult check_hessian_concentration(const ObjectiveModel& model,
                                                       const Vector& w, long s, int trials,
                                                       double epsilon, std::uint64_t seed) {
    const long n = model.dataset().n();
    const long d = model.dataset().d();
    if (s < 1 || s > n) throw std::invalid_argument("concentration: s must be in [1, n]");
    if (d > 500) throw std::invalid_argument("concentration: dense eigensolve limited to d <= 500");

    ConcentrationResult res;
    const Vector probe[] = {w};
    res.bounds_used = model.estimate_bounds(probe);
    res.trials = trials;
    res.extreme_eigs.reserve(static_cast<std::size_t>(trials));

    const double lo = (1.0 - epsilon) * res.bounds_used.kappa;
    const double hi = (1.0 + epsilon) * res.bounds_used.M;
    auto rng = make_rng(seed, "theory/concentration");
    int failures = 0;
    for (int t = 0; t < trials; ++t) {
        const std::vector<int> subset = sample_without_replacement(n, s, rng);
        const Matrix H = model.explicit_hessian(w, subset);
        Eigen::SelfAdjointEigenSolver<Matrix> eig(H, Eigen::EigenvaluesOnly);
        if (eig.info() != Eigen::Success)
            throw std::runtime_error("concentration: eigensolver failure");
        const double lmin = eig.eigenvalues().minCoeff();
        const double lmax = eig.eigenvalues().maxCoeff();
        res.extreme_eigs.emplace_back(lmin, lmax);
        if (lmin < lo || lmax > hi) ++failures;
    }
    res.failure_rate = static_cast<double>(failures) / static_cast<double>(trials);
    return res;
}

struct DeviationStats {
    long s = 0;
    double mean_dev = 0.0;
    double quantile95_dev = 0.0;
};

// ||g^S(w) - g(w)|| over `trials` uniform subsets for each requested s.
inline std::vector<DeviationStats> check_gradient_deviation(const ObjectiveModel& model,
                                                            const Vector& w,
                                                            const std::vector<long>& s_values,
                                                            int trials, std::uint64_t seed) {
    const long n = model.dataset().n();
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    const Vector g_full = model.gradient(w, all);

    std::vector<DeviationStats> out;
    auto rng = make_rng(seed, "theory/deviation");
    for (const long s : s_values) {
        if (s < 1 || s > n) throw std::invalid_argument("deviation: s must be in [1, n]");
        std::vector<double> devs(static_cast<std::size_t>(trials));
        for (int t = 0; t < trials; ++t) {
            const std::vector<int> subset = sample_without_replacement(n, s, rng);
            devs[static_cast<std::size_t>(t)] = (model.gradient(w, subset) - g_full).norm();
        }
        std::sort(devs.begin(), devs.end());
        double mean = 0.0;
        for (double v : devs) mean += v;
        mean /= static_cast<double>(trials);
        const std::size_t q95 = static_cast<std::size_t>(
            std::ceil(0.95 * static_cast<double>(trials))) - 1;
        out.push_back(DeviationStats{s, mean, devs[q95]});
    }
    return out;
}

struct DescentRecord {
    int worker_id = 0;
    double decrease = 0.0;
    double psi_bound = 0.0;  // psi ||g^k||^2
    double grad_norm = 0.0;
    double alpha = 0.0;
    bool satisfied = false;
};

struct DescentCheck {
    double alpha_star_cap = 0.0;
    double psi = 0.0;
    std::vector<DescentRecord> workers;
};

// One capped local Newton step per worker from the common iterate w, checking
// the per-step decrease f^k(w) - f^k(w') >= psi ||g^k||^2. Violations are
// collected, not thrown.
inline DescentCheck check_descent_lemma(const ObjectiveModel& model, const Partition& partition,
                                        const Vector& w, const CurvatureBounds& bounds,
                                        double epsilon, LineSearchConfig ls,
                                        const CgConfig& cg) {
    DescentCheck out;
    out.alpha_star_cap = alpha_star(bounds, ls.beta);
    out.psi = out.alpha_star_cap * ls.beta / (bounds.M * (1.0 + epsilon));
    ls.alpha_star_cap = out.alpha_star_cap;

    for (std::size_t k = 0; k < partition.shards.size(); ++k) {
        const IndexSpan shard(partition.shards[k]);
        DescentRecord rec;
        rec.worker_id = static_cast<int>(k);
        const double f_before = model.value(w, shard);
        const Vector g = model.gradient(w, shard);
        rec.grad_norm = g.norm();
        rec.psi_bound = out.psi * g.squaredNorm();
        if (rec.grad_norm == 0.0) {
            rec.decrease = 0.0;
            rec.satisfied = true;  // both sides zero
            out.workers.push_back(rec);
            continue;
        }
        WorkerState st{static_cast<int>(k), partition.shards[k], w, 0.0, 0.0};
        st = local_newton_step(model, std::move(st), ls, cg);
        rec.decrease = f_before - model.value(st.w, shard);
        rec.alpha = st.last_alpha;
        rec.satisfied = rec.decrease >= rec.psi_bound;
        out.workers.push_back(rec);
    }
    return out;
}

struct FloorPoint {
    long s = 0;
    double gap = 0.0;  // f(w_bar_inf) - f(w*)
};

// For each shard size: builds K heterogeneous least-squares shards, runs
// LocalNewton (L >= 2, gamma = 0) until the round-over-round loss change drops
// below 1e-12, and measures the loss gap against the dense normal-equations
// solution over the union.
inline std::vector<FloorPoint> measure_error_floor(const FloorShardOptions& base_options, int L,
                                                   const std::vector<long>& s_values,
                                                   std::uint64_t seed) {
    if (L < 2) throw std::invalid_argument("measure_error_floor: L must be >= 2");
    std::vector<FloorPoint> out;
    for (const long s : s_values) {
        FloorShardOptions opt = base_options;
        opt.shard_size = s;
        opt.seed = derive_seed(seed, "floor/s" + std::to_string(s));
        const FloorShards shards = make_floor_shards(opt);
        const ObjectiveModel model(shards.data, LossKind::least_squares, 0.0);
        const std::vector<int> all = shards.partition.union_indices();

        // exact solve needs a tight inner tolerance so stagnation is clean
        const CgConfig cg{1e-14, static_cast<int>(std::min<long>(shards.data.d() * 4, 500))};
        LineSearchConfig ls;
        const Vector w0 = Vector::Zero(shards.data.d());

        double f_prev = model.value(w0, all);
        Vector w_final = w0;
        SyncSchedule sched{L, static_cast<long>(L) * 50};
        run_localnewton(model, shards.partition, sched, ls, cg, w0, 1,
                        [&](int, int, const Vector& w_bar, std::span<const WorkerState>) {
                            const double f_now = model.value(w_bar, all);
                            w_final = w_bar;
                            const bool stagnated = std::abs(f_prev - f_now) < 1e-12;
                            f_prev = f_now;
                            return !stagnated;
                        });

        // normal equations over the union
        const long d = shards.data.d();
        Matrix xtx = Matrix::Zero(d, d);
        Vector xty = Vector::Zero(d);
        for (const int j : all) {
            xtx.noalias() += shards.data.features.row(j).transpose() * shards.data.features.row(j);
            xty.noalias() += shards.data.labels[j] * shards.data.features.row(j).transpose();
        }
        Eigen::LDLT<Matrix> ldlt(xtx);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
            throw std::runtime_error("measure_error_floor: singular normal equations");
        const Vector w_star = ldlt.solve(xty);
        if (!w_star.allFinite())
            throw std::runtime_error("measure_error_floor: singular normal equations");

        out.push_back(FloorPoint{s, model.value(w_final, all) - model.value(w_star, all)});
    }
    return out;
}

// Least-squares slope of log(y) against log(x).
inline double log_log_slope(const std::vector<std::pair<double, double>>& points) {
    const double n = static_cast<double>(points.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [x, y] : points) {
        const double lx = std::log(x), ly = std::log(y);
        sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// Spearman rank correlation (no tie handling; inputs are distinct in use).
inline double spearman_rho(const std::vector<std::pair<double, double>>& points) {
    const std::size_t n = points.size();
    std::vector<std::size_t> ix(n), iy(n);
    std::iota(ix.begin(), ix.end(), 0);
    std::iota(iy.begin(), iy.end(), 0);
    std::sort(ix.begin(), ix.end(),
              [&](std::size_t a, std::size_t b) { return points[a].first < points[b].first; });
    std::sort(iy.begin(), iy.end(),
              [&](std::size_t a, std::size_t b) { return points[a].second < points[b].second; });
    std::vector<double> rx(n), ry(n);
    for (std::size_t r = 0; r < n; ++r) {
        rx[ix[r]] = static_cast<double>(r);
        ry[iy[r]] = static_cast<double>(r);
    }
    double d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double diff = rx[i] - ry[i];
        d2 += diff * diff;
    }
    const double nn = static_cast<double>(n);
    return 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
}

}  // namespace localnewton
