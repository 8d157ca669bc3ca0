#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "localnewton/adaptive.hpp"
#include "localnewton/baselines.hpp"
#include "localnewton/dataset.hpp"
#include "localnewton/localnewton.hpp"
#include "localnewton/objective.hpp"

namespace localnewton {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Algo { localnewton, adaptive, giant, local_sgd, bfgs };

inline const char* algo_name(Algo a) {
    switch (a) {
        case Algo::localnewton: return "localnewton";
        case Algo::adaptive: return "adaptive";
        case Algo::giant: return "giant";
        case Algo::local_sgd: return "localsgd";
        case Algo::bfgs: return "bfgs";
    }
    return "?";
}

inline Algo parse_algo(std::string_view s) {
    if (s == "localnewton") return Algo::localnewton;
    if (s == "adaptive") return Algo::adaptive;
    if (s == "giant") return Algo::giant;
    if (s == "localsgd" || s == "local_sgd" || s == "local-sgd") return Algo::local_sgd;
    if (s == "bfgs") return Algo::bfgs;
    throw ConfigError("unknown algorithm '" + std::string(s) + "'");
}

struct ExperimentConfig {
    Algo algo = Algo::localnewton;
    std::string train_path;
    std::string test_path;                 // empty = no test metrics
    LossKind loss = LossKind::logistic_l2;
    int workers = 100;                     // K
    int local_iters = 1;                   // L for fixed-L LocalNewton
    int l0 = 3;                            // initial L for the adaptive scheme
    std::optional<double> delta;           // adaptive decrement; default 1e-4 * f(w0)
    std::optional<double> gamma;           // regularization; default 1/n
    std::uint64_t seed = 0;
    int max_rounds = 30;
    bool expand_features = false;          // pairwise feature expansion on load
    LineSearchConfig ls;
    CgConfig cg{1e-8, 0};                  // max_iters 0 = min(d, 250)
    double sgd_step = 0.0;                 // 0 = tuned table value by dataset name
    int sgd_batch = 1;
    int sgd_epochs = 1;

    void validate() const {
        if (train_path.empty()) throw ConfigError("missing training dataset path");
        if (workers < 1) throw ConfigError("workers must be >= 1");
        if (local_iters < 1) throw ConfigError("local iterations must be >= 1");
        if (l0 < 1) throw ConfigError("l0 must be >= 1");
        if (max_rounds < 1) throw ConfigError("max_rounds must be >= 1");
        if (gamma && *gamma < 0.0) throw ConfigError("gamma must be >= 0");
        if (delta && !(*delta > 0.0)) throw ConfigError("delta must be > 0");
    }
};

namespace detail {

inline std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// Canonical one-line rendering of every semantic configuration field;
// execution details (thread count, output paths) are deliberately excluded so
// runs that must be bit-identical share it.
inline std::string canonical_config_string(const ExperimentConfig& cfg) {
    std::ostringstream ss;
    ss << "algo=" << algo_name(cfg.algo) << ";train=" << cfg.train_path
       << ";test=" << cfg.test_path
       << ";loss=" << (cfg.loss == LossKind::logistic_l2 ? "logistic" : "least_squares")
       << ";k=" << cfg.workers << ";l=" << cfg.local_iters << ";l0=" << cfg.l0
       << ";delta=" << (cfg.delta ? detail::fmt_real(*cfg.delta) : "auto")
       << ";gamma=" << (cfg.gamma ? detail::fmt_real(*cfg.gamma) : "auto")
       << ";seed=" << cfg.seed << ";max-rounds=" << cfg.max_rounds
       << ";expand=" << cfg.expand_features << ";ls-beta=" << detail::fmt_real(cfg.ls.beta)
       << ";ls-alpha-init=" << detail::fmt_real(cfg.ls.alpha_init)
       << ";ls-shrink=" << detail::fmt_real(cfg.ls.shrink)
       << ";ls-max-backtracks=" << cfg.ls.max_backtracks << ";ls-cap="
       << (cfg.ls.alpha_star_cap ? detail::fmt_real(*cfg.ls.alpha_star_cap) : "off")
       << ";cg-tol=" << detail::fmt_real(cfg.cg.tol) << ";cg-max-iters=" << cfg.cg.max_iters
       << ";sgd-step=" << detail::fmt_real(cfg.sgd_step) << ";sgd-batch=" << cfg.sgd_batch
       << ";sgd-epochs=" << cfg.sgd_epochs;
    return ss.str();
}

inline std::string config_hash(const ExperimentConfig& cfg) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical_config_string(cfg))));
    return buf;
}

struct MetricsRow {
    int round = 0;               // cumulative communication rounds charged
    long local_iters_cum = 0;
    double train_loss = 0.0;
    std::optional<double> test_accuracy;
    double grad_norm = 0.0;
    int L_current = 1;
    std::string phase;
};

struct RunMeta {
    std::string algo;
    std::string dataset;
    int workers = 0;
    std::uint64_t seed = 0;
    std::string config;  // hash of params
    std::string params;  // full canonical field rendering
    double initial_train_loss = 0.0;
};

struct RunMetrics {
    RunMeta meta;
    std::vector<MetricsRow> rows;
};

// Streams rows as they are recorded; each row is flushed so a crashed run
// leaves a valid prefix.
class MetricsWriter {
public:
    MetricsWriter() = default;

    explicit MetricsWriter(const std::string& path, const RunMeta& meta) {
        if (path.empty()) return;
        out_.open(path, std::ios::binary | std::ios::trunc);
        if (!out_) throw std::runtime_error("cannot open metrics output " + path);
        out_ << "# algo=" << meta.algo << "\n# dataset=" << meta.dataset
             << "\n# k=" << meta.workers << "\n# seed=" << meta.seed
             << "\n# config=" << meta.config << "\n# params=" << meta.params
             << "\n# initial_train_loss=" << detail::fmt_real(meta.initial_train_loss) << "\n";
        out_ << "round,local_iters,train_loss,test_acc,grad_norm,L,phase\n";
        out_.flush();
    }

    void row(const MetricsRow& r) {
        if (!out_.is_open()) return;
        out_ << r.round << ',' << r.local_iters_cum << ',' << detail::fmt_real(r.train_loss)
             << ',' << (r.test_accuracy ? detail::fmt_real(*r.test_accuracy) : "") << ','
             << detail::fmt_real(r.grad_norm) << ',' << r.L_current << ',' << r.phase << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

// Fraction of test samples with sign(w.x) = y; sign(0) counts as +1.
inline double accuracy(const Vector& w, const Dataset& test) {
    if (test.n() == 0) throw std::invalid_argument("accuracy: empty test set");
    if (test.d() != w.size()) throw std::invalid_argument("accuracy: dimension mismatch");
    long correct = 0;
    for (long i = 0; i < test.n(); ++i) {
        const double pred = test.features.row(i).dot(w) >= 0.0 ? 1.0 : -1.0;
        if (pred == test.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.n());
}

struct ExecutionOptions {
    int threads = 1;
    std::string csv_path;  // empty = in-memory metrics only
};

// Runs the configured algorithm on in-memory datasets. Deterministic for a
// fixed (config, seed) regardless of thread count: per-worker computations are
// self-contained and every reduction is order-fixed.
inline RunMetrics run_experiment_on(const ExperimentConfig& cfg, const Dataset& train,
                                    const Dataset* test, const ExecutionOptions& opts = {}) {
    cfg.validate();
    if (train.n() < cfg.workers)
        throw ConfigError("dataset has fewer samples than workers");

    const double gamma = cfg.gamma ? *cfg.gamma : 1.0 / static_cast<double>(train.n());
    const ObjectiveModel model(train, cfg.loss, gamma);
    const Partition partition =
        partition_uniform(train.n(), cfg.workers, derive_seed(cfg.seed, "partition"));
    const std::vector<int> all = partition.union_indices();
    const Vector w0 = Vector::Zero(train.d());
    const double f0 = model.value(w0, all);

    CgConfig cg = cfg.cg;
    if (cg.max_iters <= 0) cg = CgConfig::for_dimension(train.d(), cg.tol);

    RunMetrics metrics;
    metrics.meta = RunMeta{algo_name(cfg.algo),
                           cfg.train_path.empty() ? "synthetic" : cfg.train_path,
                           cfg.workers, cfg.seed, config_hash(cfg),
                           canonical_config_string(cfg), f0};
    MetricsWriter writer;
    if (!opts.csv_path.empty()) writer = MetricsWriter(opts.csv_path, metrics.meta);

    auto record = [&](int round, long iters_cum, const Vector& w_bar, int L, const char* phase,
                      std::optional<double> loss_hint) {
        MetricsRow row;
        row.round = round;
        row.local_iters_cum = iters_cum;
        row.train_loss = loss_hint ? *loss_hint : model.value(w_bar, all);
        if (test) row.test_accuracy = accuracy(w_bar, *test);
        row.grad_norm = model.gradient(w_bar, all).norm();
        if (!std::isfinite(row.train_loss) || !std::isfinite(row.grad_norm))
            throw SolverError("non-finite metrics at communication round " +
                              std::to_string(round));
        row.L_current = L;
        row.phase = phase;
        writer.row(row);
        metrics.rows.push_back(std::move(row));
    };

    switch (cfg.algo) {
        case Algo::localnewton: {
            long iters_cum = 0;
            SyncSchedule sched{cfg.local_iters,
                               static_cast<long>(cfg.local_iters) * cfg.max_rounds};
            run_localnewton(model, partition, sched, cfg.ls, cg, w0, opts.threads,
                            [&](int round, int iters, const Vector& w_bar,
                                std::span<const WorkerState>) {
                                iters_cum += iters;
                                record(round, iters_cum, w_bar, cfg.local_iters, "localnewton",
                                       std::nullopt);
                                return true;
                            });
            break;
        }
        case Algo::adaptive: {
            const double delta = cfg.delta ? *cfg.delta : 1e-4 * f0;
            long iters_cum = 0;
            run_adaptive(model, partition, cfg.l0, delta, cfg.ls, cg, w0, cfg.max_rounds,
                         opts.threads,
                         [&](int rounds_used, int iters, const Vector& w_bar, int L, Phase phase,
                             double f_now) {
                             iters_cum += iters;
                             record(rounds_used, iters_cum, w_bar, L, phase_name(phase), f_now);
                             return true;
                         });
            break;
        }
        case Algo::giant: {
            Vector w = w0;
            int iter = 0;
            while ((iter + 1) * kGiantRoundsPerIteration <= cfg.max_rounds) {
                GiantResult step = giant_iteration(model, partition, w, cfg.ls, cg, opts.threads);
                w = std::move(step.w);
                ++iter;
                record(iter * kGiantRoundsPerIteration, iter, w, 1, "giant", std::nullopt);
            }
            break;
        }
        case Algo::local_sgd: {
            SgdConfig sgd{cfg.sgd_step, cfg.sgd_batch, cfg.sgd_epochs};
            if (sgd.step_size <= 0.0) {
                const auto tuned = table_sgd_step(cfg.train_path, partition.shard_size);
                if (!tuned)
                    throw ConfigError(
                        "no tuned SGD step size for this dataset; pass --sgd-step");
                sgd.step_size = *tuned;
            }
            std::vector<WorkerState> states = init_workers(partition, w0);
            for (int round = 1; round <= cfg.max_rounds; ++round) {
                Vector w_bar =
                    local_sgd_round(model, partition, states, sgd,
                                    derive_seed(cfg.seed, "sgd/round" + std::to_string(round)),
                                    opts.threads);
                record(round, round, w_bar, 1, "localsgd", std::nullopt);
            }
            break;
        }
        case Algo::bfgs: {
            LineSearchConfig ls = cfg.ls;
            if (const auto tuned = table_bfgs_alpha(cfg.train_path); tuned && cfg.ls.alpha_init == 1.0)
                ls.alpha_init = *tuned;
            BfgsState state = BfgsState::identity(train.d());
            Vector w = w0;
            for (int round = 1; round <= cfg.max_rounds; ++round) {
                w = bfgs_iteration(model, all, std::move(w), state, ls);
                record(round, round, w, 1, "bfgs", std::nullopt);
            }
            break;
        }
    }
    return metrics;
}

inline RunMetrics run_experiment(const ExperimentConfig& cfg, const ExecutionOptions& opts = {}) {
    cfg.validate();
    const bool classification = cfg.loss == LossKind::logistic_l2;
    Dataset train = load_libsvm_file(cfg.train_path, std::nullopt, classification);
    if (cfg.expand_features) train = expand_pairwise(train);
    std::optional<Dataset> test;
    if (!cfg.test_path.empty()) {
        test = load_libsvm_file(cfg.test_path, train.d(), classification);
        if (cfg.expand_features) test = expand_pairwise(*test);
    }
    return run_experiment_on(cfg, train, test ? &*test : nullptr, opts);
}

}  // namespace localnewton
