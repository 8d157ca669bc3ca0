// Acceptance suite: one test case per criterion, run in declaration order.
// A listener prints one [PASS]/[FAIL] line per criterion.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include "localnewton/adaptive.hpp"
#include "localnewton/baselines.hpp"
#include "localnewton/harness.hpp"
#include "localnewton/localnewton.hpp"
#include "localnewton/synth.hpp"
#include "localnewton/theory.hpp"

using namespace localnewton;

namespace {

class CriterionReporter : public Catch::EventListenerBase {
public:
    using Catch::EventListenerBase::EventListenerBase;
    void testCaseEnded(const Catch::TestCaseStats& stats) override {
        const bool ok = stats.totals.assertions.failed == 0 && !stats.aborting;
        std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", stats.testInfo->name.c_str());
        std::fflush(stdout);
    }
};
CATCH_REGISTER_LISTENER(CriterionReporter)

// Criterion 1/11 share one head-to-head run on the synthetic logistic
// benchmark: n = 20000, d = 100, K = 100, gamma = 1/n.
struct HeadToHead {
    double f0 = 0.0;
    double delta = 0.0;
    double target = 0.0;  // GIANT-optimal loss + 1e-3
    std::optional<int> giant_rounds;
    std::optional<int> adaptive_rounds;
    std::vector<int> adaptive_round_ids;
    std::vector<int> adaptive_L;
    std::vector<Phase> adaptive_phase;
    std::vector<double> adaptive_loss;
};

const HeadToHead& head_to_head() {
    static const HeadToHead cached = [] {
        const long n = 20000;
        const int d = 100, K = 100, budget = 45;
        auto synth = make_logistic({.n = n,
                                    .d = d,
                                    .seed = 20202,
                                    .noise = 0.1,
                                    .feature_scale = 8.0,
                                    .cov_rank = 12});
        const double gamma = 1.0 / static_cast<double>(n);
        ObjectiveModel model(synth.data, LossKind::logistic_l2, gamma);
        const Partition part = partition_uniform(n, K, derive_seed(4, "partition"));
        const std::vector<int> all = part.union_indices();
        const LineSearchConfig ls;
        const CgConfig cg = CgConfig::for_dimension(d);
        const int threads = resolve_threads(0);

        HeadToHead h;
        h.f0 = model.value(Vector::Zero(d), all);
        h.delta = 1e-4 * h.f0;

        // GIANT run over the same partition and budget
        std::vector<std::pair<int, double>> giant_trace;
        Vector w = Vector::Zero(d);
        int rounds = 0;
        while (rounds + kGiantRoundsPerIteration <= budget) {
            w = giant_iteration(model, part, w, ls, cg, threads).w;
            rounds += kGiantRoundsPerIteration;
            giant_trace.emplace_back(rounds, model.value(w, all));
        }
        double giant_best = giant_trace.front().second;
        for (const auto& [r, loss] : giant_trace) giant_best = std::min(giant_best, loss);
        h.target = giant_best + 1e-3;
        for (const auto& [r, loss] : giant_trace)
            if (!h.giant_rounds && loss <= h.target) h.giant_rounds = r;

        // Adaptive LocalNewton, L0 = 3, delta = 1e-4 f(w0), full budget
        run_adaptive(model, part, 3, h.delta, ls, cg, Vector::Zero(d), budget, threads,
                     [&](int rounds_used, int, const Vector&, int L, Phase phase, double f_now) {
                         h.adaptive_round_ids.push_back(rounds_used);
                         h.adaptive_L.push_back(L);
                         h.adaptive_phase.push_back(phase);
                         h.adaptive_loss.push_back(f_now);
                         if (!h.adaptive_rounds && f_now <= h.target)
                             h.adaptive_rounds = rounds_used;
                         return true;
                     });
        return h;
    }();
    return cached;
}

Vector normal_equations(const Dataset& ds, const std::vector<int>& idx) {
    const long d = ds.d();
    Matrix xtx = Matrix::Zero(d, d);
    Vector xty = Vector::Zero(d);
    for (int j : idx) {
        xtx.noalias() += ds.features.row(j).transpose() * ds.features.row(j);
        xty.noalias() += ds.labels[j] * ds.features.row(j).transpose();
    }
    return xtx.ldlt().solve(xty);
}

Vector fd_gradient(const ObjectiveModel& m, const Vector& w, IndexSpan subset) {
    const double h = 1e-6 * (1.0 + w.norm());
    Vector g(w.size());
    for (long i = 0; i < w.size(); ++i) {
        Vector hi = w, lo = w;
        hi[i] += h;
        lo[i] -= h;
        g[i] = (m.value(hi, subset) - m.value(lo, subset)) / (2.0 * h);
    }
    return g;
}

Vector gaussian_elimination(Matrix a, Vector b) {
    const long n = b.size();
    for (long col = 0; col < n; ++col) {
        long pivot = col;
        for (long r = col + 1; r < n; ++r)
            if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
        a.row(col).swap(a.row(pivot));
        std::swap(b[col], b[pivot]);
        for (long r = col + 1; r < n; ++r) {
            const double f = a(r, col) / a(col, col);
            a.row(r) -= f * a.row(col);
            b[r] -= f * b[col];
        }
    }
    Vector x = Vector::Zero(n);
    for (long r = n - 1; r >= 0; --r) {
        double acc = b[r];
        for (long c = r + 1; c < n; ++c) acc -= a(r, c) * x[c];
        x[r] = acc / a(r, r);
    }
    return x;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("criterion 1: adaptive reaches the GIANT-optimal loss in <= 70% of GIANT's rounds") {
    const HeadToHead& h = head_to_head();
    REQUIRE(h.giant_rounds.has_value());
    REQUIRE(h.adaptive_rounds.has_value());
    const double ratio =
        static_cast<double>(*h.adaptive_rounds) / static_cast<double>(*h.giant_rounds);
    INFO("giant rounds " << *h.giant_rounds << ", adaptive rounds " << *h.adaptive_rounds
                         << ", ratio " << ratio);
    std::printf("       adaptive %d rounds vs giant %d rounds to loss %.6f (ratio %.3f)\n",
                *h.adaptive_rounds, *h.giant_rounds, h.target, ratio);
    CHECK(ratio <= 0.70);
}

TEST_CASE("criterion 2: one local Newton step solves a full-rank least-squares shard") {
    auto synth = make_least_squares({.n = 30, .d = 5, .seed = 900, .noise = 0.3});
    ObjectiveModel m(synth.data, LossKind::least_squares, 0.0);
    std::vector<int> shard(30);
    std::iota(shard.begin(), shard.end(), 0);
    const Vector w_star = normal_equations(synth.data, shard);

    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 3; ++trial) {
        Vector w0(5);
        for (int i = 0; i < 5; ++i) w0[i] = 3.0 * gaussian(rng);
        WorkerState st{0, shard, w0, 0.0, 0.0};
        st = local_newton_step(m, std::move(st), LineSearchConfig{}, CgConfig{1e-12, 100});
        REQUIRE(st.last_alpha == 1.0);
        REQUIRE((st.w - w_star).norm() <= 1e-8 * (1.0 + w_star.norm()));
    }
}

TEST_CASE("criterion 3: LocalNewton stagnates at the averaged shard optima on unregularized "
          "least squares") {
    FloorShardOptions opt;
    opt.workers = 5;
    opt.shard_size = 64;
    opt.d = 8;
    opt.seed = 77;
    const FloorShards fs = make_floor_shards(opt);
    ObjectiveModel m(fs.data, LossKind::least_squares, 0.0);
    const std::vector<int> all = fs.partition.union_indices();

    Vector expected = Vector::Zero(opt.d);
    for (const auto& shard : fs.partition.shards)
        expected += normal_equations(fs.data, shard);
    expected /= static_cast<double>(opt.workers);

    std::vector<Vector> syncs;
    run_localnewton(m, fs.partition, SyncSchedule{3, 9}, LineSearchConfig{}, CgConfig{1e-14, 64},
                    Vector::Zero(opt.d), 1,
                    [&](int, int, const Vector& w_bar, std::span<const WorkerState>) {
                        syncs.push_back(w_bar);
                        return true;
                    });
    REQUIRE(syncs.size() == 3);
    CHECK((syncs[0] - expected).norm() <= 1e-8 * (1.0 + expected.norm()));
    for (std::size_t r = 1; r < syncs.size(); ++r)
        CHECK((syncs[r] - syncs[0]).norm() <= 1e-8 * (1.0 + syncs[0].norm()));

    const Vector w_star = normal_equations(fs.data, all);
    const double gap = m.value(syncs.back(), all) - m.value(w_star, all);
    CHECK(gap > 0.0);

    // identical shards: no gap
    FloorShardOptions same = opt;
    same.identical_shards = true;
    const FloorShards fs2 = make_floor_shards(same);
    ObjectiveModel m2(fs2.data, LossKind::least_squares, 0.0);
    const std::vector<int> all2 = fs2.partition.union_indices();
    Vector last;
    run_localnewton(m2, fs2.partition, SyncSchedule{3, 9}, LineSearchConfig{},
                    CgConfig{1e-14, 64}, Vector::Zero(opt.d), 1,
                    [&](int, int, const Vector& w_bar, std::span<const WorkerState>) {
                        last = w_bar;
                        return true;
                    });
    const Vector w_star2 = normal_equations(fs2.data, all2);
    CHECK(std::abs(m2.value(last, all2) - m2.value(w_star2, all2)) <= 1e-10);
}

TEST_CASE("criterion 4: error-floor loss gap scales in the expected band over s") {
    FloorShardOptions opt;
    opt.workers = 8;
    opt.d = 10;
    const std::vector<long> s_values{64, 128, 256, 512, 1024, 2048};
    std::vector<std::pair<double, double>> mean_gaps;
    for (long s : s_values) mean_gaps.emplace_back(static_cast<double>(s), 0.0);
    const int seeds = 10;
    for (int sd = 0; sd < seeds; ++sd) {
        const auto pts = measure_error_floor(opt, 2, s_values, 5000 + 13 * sd);
        for (std::size_t i = 0; i < pts.size(); ++i) mean_gaps[i].second += pts[i].gap / seeds;
    }
    const double slope = log_log_slope(mean_gaps);
    const double rho = spearman_rho(mean_gaps);
    std::printf("       floor slope %.3f (band [-1.4, -0.6]), spearman %.3f\n", slope, rho);
    CHECK(slope >= -1.4);
    CHECK(slope <= -0.6);
    CHECK(rho <= -0.9);
}

TEST_CASE("criterion 5: subsampled Hessian eigenvalue bounds hold at the predicted rate") {
    auto synth = make_logistic({.n = 4000, .d = 20, .seed = 5005, .noise = 0.4});
    const double gamma = 0.1;
    ObjectiveModel m(synth.data, LossKind::logistic_l2, gamma);
    Vector w(20);
    auto rng = make_rng(31, "probe");
    for (int i = 0; i < 20; ++i) w[i] = 0.1 * gaussian(rng);

    const Vector probes[] = {w};
    const CurvatureBounds bounds = m.estimate_bounds(probes);
    const double epsilon = 0.5, delta = 0.1;
    const long s_req = required_sample_size(bounds, epsilon, delta, 20);
    REQUIRE(s_req <= 4000);

    const int trials = 500;
    const auto res = check_hessian_concentration(m, w, s_req, trials, epsilon, 616);
    // one-sided 99% binomial band around the nominal failure probability
    const double band = delta + 2.326 * std::sqrt(delta * (1.0 - delta) / trials);
    std::printf("       s_req=%ld failure rate %.4f vs band %.4f\n", s_req, res.failure_rate,
                band);
    CHECK(res.failure_rate <= band);
}

TEST_CASE("criterion 6: local gradient deviation scales like 1/sqrt(s) below the eta curve") {
    auto synth = make_logistic({.n = 32768, .d = 15, .seed = 606, .noise = 0.4});
    ObjectiveModel m(synth.data, LossKind::logistic_l2, 0.01);
    Vector w(15);
    auto rng = make_rng(32, "probe");
    for (int i = 0; i < 15; ++i) w[i] = 0.3 * gaussian(rng);

    // measured Gamma at the probe iterate
    double Gamma = 0.0;
    for (long j = 0; j < synth.data.n(); ++j)
        Gamma = std::max(Gamma, m.sample_gradient(w, static_cast<int>(j)).norm());

    const std::vector<long> s_values{32, 64, 128, 256, 512, 1024, 2048, 4096};
    const auto stats = check_gradient_deviation(m, w, s_values, 150, 661);
    std::vector<std::pair<double, double>> pts;
    for (const auto& st : stats) {
        const double eta = (1.0 + std::sqrt(2.0 * std::log(1.0 / 0.05))) * Gamma /
                           std::sqrt(static_cast<double>(st.s));
        CHECK(st.quantile95_dev <= eta);
        pts.emplace_back(static_cast<double>(st.s), st.quantile95_dev);
    }
    const double slope = log_log_slope(pts);
    std::printf("       deviation q95 slope %.3f (band [-0.65, -0.35])\n", slope);
    CHECK(slope >= -0.65);
    CHECK(slope <= -0.35);
}

TEST_CASE("criterion 7: every worker satisfies the per-step descent bound under the cap") {
    auto synth = make_logistic({.n = 3200, .d = 20, .seed = 707, .noise = 0.3});
    const double gamma = 0.01;
    ObjectiveModel m(synth.data, LossKind::logistic_l2, gamma);
    const Partition p = partition_uniform(3200, 16, 19);  // s = 200, d = 20

    Vector w(20);
    auto rng = make_rng(33, "probe");
    for (int i = 0; i < 20; ++i) w[i] = 0.1 * gaussian(rng);

    const Vector probes[] = {w};
    const CurvatureBounds bounds = m.estimate_bounds(probes);
    LineSearchConfig ls;
    ls.beta = 0.1;
    const DescentCheck check =
        check_descent_lemma(m, p, w, bounds, 0.3, ls, CgConfig{1e-10, 100});
    int satisfied = 0;
    for (const auto& rec : check.workers) satisfied += rec.satisfied ? 1 : 0;
    std::printf("       %d/%zu workers satisfy decrease >= psi ||g||^2 (psi %.3e)\n", satisfied,
                check.workers.size(), check.psi);
    CHECK(satisfied == static_cast<int>(check.workers.size()));
}

TEST_CASE("criterion 8: communication-round accounting identities") {
    namespace fsys = std::filesystem;
    const fsys::path dir =
        fsys::temp_directory_path() / ("ln_acc8_" + std::to_string(std::random_device{}()));
    fsys::create_directories(dir);
    auto synth = make_logistic({.n = 240, .d = 5, .seed = 808, .noise = 0.4});
    const std::string train = (dir / "train.libsvm").string();
    {
        std::ofstream out(train, std::ios::binary);
        out << serialize_libsvm(synth.data);
    }

    // GIANT charges exactly 3 per iteration, three budgets
    for (int budget : {3, 9, 10}) {
        ExperimentConfig cfg;
        cfg.algo = Algo::giant;
        cfg.train_path = train;
        cfg.workers = 4;
        cfg.max_rounds = budget;
        const RunMetrics mm = run_experiment(cfg);
        REQUIRE(static_cast<int>(mm.rows.size()) == budget / 3);
        for (std::size_t i = 0; i < mm.rows.size(); ++i) {
            CHECK(mm.rows[i].round == 3 * static_cast<int>(i + 1));
            CHECK(mm.rows[i].local_iters_cum == static_cast<long>(i + 1));
        }
    }
    // fixed-L LocalNewton charges 1 round per L local iterations
    for (int L : {1, 2, 4}) {
        ExperimentConfig cfg;
        cfg.algo = Algo::localnewton;
        cfg.train_path = train;
        cfg.workers = 4;
        cfg.local_iters = L;
        cfg.max_rounds = 4;
        const RunMetrics mm = run_experiment(cfg);
        REQUIRE(mm.rows.size() == 4);
        for (std::size_t i = 0; i < mm.rows.size(); ++i) {
            CHECK(mm.rows[i].round == static_cast<int>(i + 1));
            CHECK(mm.rows[i].local_iters_cum == static_cast<long>(i + 1) * L);
        }
    }
    // Local SGD and BFGS charge 1 per round
    for (Algo algo : {Algo::local_sgd, Algo::bfgs}) {
        for (int budget : {2, 3, 5}) {
            ExperimentConfig cfg;
            cfg.algo = algo;
            cfg.train_path = train;
            cfg.workers = 4;
            cfg.max_rounds = budget;
            cfg.sgd_step = 0.05;
            const RunMetrics mm = run_experiment(cfg);
            REQUIRE(static_cast<int>(mm.rows.size()) == budget);
            for (std::size_t i = 0; i < mm.rows.size(); ++i) {
                CHECK(mm.rows[i].round == static_cast<int>(i + 1));
                CHECK(mm.rows[i].local_iters_cum == static_cast<long>(i + 1));
            }
        }
    }
    fsys::remove_all(dir);
}

TEST_CASE("criterion 9: runs are bit-identical across repeats and thread-pool sizes") {
    namespace fsys = std::filesystem;
    const fsys::path dir =
        fsys::temp_directory_path() / ("ln_acc9_" + std::to_string(std::random_device{}()));
    fsys::create_directories(dir);
    auto synth = make_logistic({.n = 300, .d = 6, .seed = 909, .noise = 0.4});
    const std::string train = (dir / "train.libsvm").string();
    {
        std::ofstream out(train, std::ios::binary);
        out << serialize_libsvm(synth.data);
    }
    for (Algo algo : {Algo::adaptive, Algo::localnewton, Algo::local_sgd}) {
        ExperimentConfig cfg;
        cfg.algo = algo;
        cfg.train_path = train;
        cfg.workers = 10;
        cfg.local_iters = 2;
        cfg.l0 = 2;
        cfg.max_rounds = 6;
        cfg.seed = 4242;
        cfg.sgd_step = 0.05;
        const std::string a = (dir / "a.csv").string();
        const std::string b = (dir / "b.csv").string();
        const std::string c = (dir / "c.csv").string();
        run_experiment(cfg, ExecutionOptions{1, a});
        run_experiment(cfg, ExecutionOptions{1, b});
        run_experiment(cfg, ExecutionOptions{4, c});
        const std::string bytes = slurp(a);
        REQUIRE(!bytes.empty());
        CHECK(bytes == slurp(b));
        CHECK(bytes == slurp(c));
    }
    fsys::remove_all(dir);
}

TEST_CASE("criterion 10: correctness oracles (finite differences, direct solve, extended mean)") {
    // gradient and Hessian-vector products vs central differences, 20 probes per model
    auto logit = make_logistic({.n = 60, .d = 6, .seed = 1010, .noise = 0.4});
    auto ls = make_least_squares({.n = 60, .d = 6, .seed = 1011, .noise = 0.2});
    const ObjectiveModel models[] = {ObjectiveModel(logit.data, LossKind::logistic_l2, 0.02),
                                     ObjectiveModel(ls.data, LossKind::least_squares, 0.01)};
    std::mt19937_64 rng(2027);
    for (const auto& m : models) {
        for (int probe = 0; probe < 20; ++probe) {
            Vector w(6);
            for (int i = 0; i < 6; ++i) w[i] = gaussian(rng);
            std::vector<int> subset;
            const long lo = static_cast<long>(bounded_uniform(rng, 40));
            for (long j = lo; j < lo + 15; ++j) subset.push_back(static_cast<int>(j));
            const Vector g = m.gradient(w, subset);
            REQUIRE((g - fd_gradient(m, w, subset)).norm() / std::max(1.0, g.norm()) < 1e-5);
            const Matrix H = m.explicit_hessian(w, subset);
            Vector v(6);
            for (int i = 0; i < 6; ++i) v[i] = gaussian(rng);
            const Vector hv = m.hessian_vec(w, v, subset);
            REQUIRE((hv - H * v).norm() <= 1e-10 * std::max(1.0, hv.norm()));
        }
    }
    // CG vs dense direct solve, d = 8
    for (int trial = 0; trial < 5; ++trial) {
        Matrix a(8, 8);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) a(i, j) = gaussian(rng);
        const Matrix h = a * a.transpose() + 0.5 * Matrix::Identity(8, 8);
        Vector g(8);
        for (int i = 0; i < 8; ++i) g[i] = gaussian(rng);
        const CgResult r =
            cg_solve([&](const Vector& v) { return Vector(h * v); }, g, CgConfig{1e-12, 200});
        const Vector exact = gaussian_elimination(h, g);
        REQUIRE((r.direction - exact).norm() <= 1e-8 * exact.norm());
    }
    // averaging vs extended-precision mean, K = 100
    std::vector<WorkerState> states(100);
    std::vector<long double> acc(24, 0.0L);
    for (auto& s : states) {
        s.w = Vector(24);
        for (int i = 0; i < 24; ++i) {
            s.w[i] = gaussian(rng) * std::exp(5.0 * gaussian(rng));
            acc[static_cast<std::size_t>(i)] += static_cast<long double>(s.w[i]);
        }
    }
    const Vector avg = average_models(states);
    for (int i = 0; i < 24; ++i) {
        const double exact = static_cast<double>(acc[static_cast<std::size_t>(i)] / 100.0L);
        REQUIRE(std::abs(avg[i] - exact) <= 1e-12 * std::max(1.0, std::abs(exact)));
    }
}

TEST_CASE("criterion 11: the adaptive control trace is well-formed") {
    const HeadToHead& h = head_to_head();
    REQUIRE(!h.adaptive_L.empty());

    // L sequence non-increasing, ends in phase = giant
    for (std::size_t i = 1; i < h.adaptive_L.size(); ++i)
        CHECK(h.adaptive_L[i] <= h.adaptive_L[i - 1]);
    CHECK(h.adaptive_phase.back() == Phase::giant);

    // every L change (and the switch) coincides with a block whose decrement < delta
    for (std::size_t i = 0; i < h.adaptive_L.size(); ++i) {
        const bool l_dropped = i + 1 < h.adaptive_L.size() &&
                               (h.adaptive_L[i + 1] < h.adaptive_L[i] ||
                                (h.adaptive_phase[i] == Phase::local_newton &&
                                 h.adaptive_phase[i + 1] == Phase::giant));
        if (!l_dropped) continue;
        const double prev_loss = i == 0 ? h.f0 : h.adaptive_loss[i - 1];
        const double decrement = prev_loss - h.adaptive_loss[i];
        INFO("change after block " << i << " decrement " << decrement << " delta " << h.delta);
        CHECK(decrement < h.delta);
    }
}
