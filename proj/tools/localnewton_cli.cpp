// Command-line front end: run experiments, compare algorithms round-for-round,
// validate the analytical claims, and generate synthetic LIBSVM datasets.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 runtime error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "localnewton/harness.hpp"
#include "localnewton/synth.hpp"
#include "localnewton/theory.hpp"

namespace fs = std::filesystem;
using namespace localnewton;

namespace {

struct CommonOptions {
    ExperimentConfig cfg;
    std::string algo_name;
    std::string loss_name = "logistic";
    double delta_flag = 0.0;      // 0 = auto (1e-4 * f(w0))
    double gamma_flag = -1.0;     // < 0 = auto (1/n)
    double ls_cap = 0.0;          // 0 = off
    int threads = 1;
    std::string output_dir = ".";
};

void add_experiment_flags(CLI::App* cmd, CommonOptions& opt, bool with_algo) {
    if (with_algo)
        cmd->add_option("--algo", opt.algo_name,
                        "algorithm: localnewton | adaptive | giant | localsgd | bfgs")
            ->required();
    cmd->add_option("--train", opt.cfg.train_path, "training set (LIBSVM, .gz accepted)")
        ->required();
    cmd->add_option("--test", opt.cfg.test_path, "test set (LIBSVM, .gz accepted)");
    cmd->add_option("--loss", opt.loss_name, "loss family: logistic | least_squares")
        ->check(CLI::IsMember({"logistic", "least_squares"}));
    cmd->add_option("--k", opt.cfg.workers, "number of workers K (default 100)");
    cmd->add_option("--l", opt.cfg.local_iters, "local iterations per round (localnewton)");
    cmd->add_option("--l0", opt.cfg.l0, "initial L for the adaptive scheme (default 3)");
    cmd->add_option("--delta", opt.delta_flag,
                    "adaptive minimum loss decrement (default 1e-4 * initial loss)");
    cmd->add_option("--gamma", opt.gamma_flag, "L2 regularization (default 1/n)");
    cmd->add_option("--seed", opt.cfg.seed, "global seed");
    cmd->add_option("--max-rounds", opt.cfg.max_rounds, "communication-round budget");
    cmd->add_flag("--expand", opt.cfg.expand_features, "pairwise feature expansion on load");
    cmd->add_option("--ls-beta", opt.cfg.ls.beta, "Armijo slope parameter in (0, 1/2]");
    cmd->add_option("--ls-alpha-init", opt.cfg.ls.alpha_init, "initial trial step");
    cmd->add_option("--ls-shrink", opt.cfg.ls.shrink, "backtrack factor in (0, 1)");
    cmd->add_option("--ls-max-backtracks", opt.cfg.ls.max_backtracks, "backtrack budget");
    cmd->add_option("--ls-cap", opt.ls_cap, "analytic step cap (0 = off)");
    cmd->add_option("--cg-tol", opt.cfg.cg.tol, "CG relative residual tolerance");
    cmd->add_option("--cg-max-iters", opt.cfg.cg.max_iters, "CG iteration cap (0 = min(d,250))");
    cmd->add_option("--sgd-step", opt.cfg.sgd_step, "Local SGD step size (0 = tuned table)");
    cmd->add_option("--sgd-batch", opt.cfg.sgd_batch, "Local SGD mini-batch size");
    cmd->add_option("--sgd-epochs", opt.cfg.sgd_epochs, "Local SGD epochs per round");
    cmd->add_option("--threads", opt.threads, "worker thread pool size (execution detail)");
    cmd->add_option("--output-dir", opt.output_dir, "directory for CSV/report output");
}

ExperimentConfig finalize(const CommonOptions& opt) {
    ExperimentConfig cfg = opt.cfg;
    cfg.loss = opt.loss_name == "least_squares" ? LossKind::least_squares
                                                : LossKind::logistic_l2;
    if (opt.delta_flag > 0.0) cfg.delta = opt.delta_flag;
    if (opt.gamma_flag >= 0.0) cfg.gamma = opt.gamma_flag;
    if (opt.ls_cap > 0.0) cfg.ls.alpha_star_cap = opt.ls_cap;
    return cfg;
}

std::string dataset_stem(const std::string& path) {
    std::string stem = fs::path(path).filename().string();
    while (true) {
        const auto dot = stem.rfind('.');
        if (dot == std::string::npos || dot == 0) break;
        stem.resize(dot);
    }
    return stem.empty() ? "data" : stem;
}

int cmd_run(const CommonOptions& opt) {
    ExperimentConfig cfg = finalize(opt);
    cfg.algo = parse_algo(opt.algo_name);
    fs::create_directories(opt.output_dir);
    ExecutionOptions exec;
    exec.threads = opt.threads;
    exec.csv_path = (fs::path(opt.output_dir) /
                     (std::string(algo_name(cfg.algo)) + "_" + dataset_stem(cfg.train_path) +
                      "_" + std::to_string(cfg.seed) + ".csv"))
                        .string();
    const RunMetrics metrics = run_experiment(cfg, exec);
    std::printf("wrote %s (%zu rounds recorded)\n", exec.csv_path.c_str(),
                metrics.rows.size());
    if (!metrics.rows.empty())
        std::printf("final train_loss=%.6g grad_norm=%.3g phase=%s\n",
                    metrics.rows.back().train_loss, metrics.rows.back().grad_norm,
                    metrics.rows.back().phase.c_str());
    return 0;
}

int cmd_compare(const CommonOptions& opt, const std::vector<std::string>& algos,
                double target_loss) {
    if (algos.size() < 2) throw ConfigError("compare needs at least two --algos");
    fs::create_directories(opt.output_dir);
    const std::string combined_path =
        (fs::path(opt.output_dir) /
         ("compare_" + dataset_stem(opt.cfg.train_path) + "_" + std::to_string(opt.cfg.seed) +
          ".csv"))
            .string();
    std::ofstream combined(combined_path, std::ios::binary);
    combined << "algo,round,local_iters,train_loss,test_acc,grad_norm,L,phase\n";

    struct Entry {
        std::string algo;
        std::optional<int> rounds_to_target;
    };
    std::vector<Entry> entries;
    for (const std::string& name : algos) {
        ExperimentConfig cfg = finalize(opt);
        cfg.algo = parse_algo(name);
        ExecutionOptions exec;
        exec.threads = opt.threads;
        const RunMetrics metrics = run_experiment(cfg, exec);
        Entry e{name, std::nullopt};
        for (const auto& row : metrics.rows) {
            combined << name << ',' << row.round << ',' << row.local_iters_cum << ','
                     << detail::fmt_real(row.train_loss) << ','
                     << (row.test_accuracy ? detail::fmt_real(*row.test_accuracy) : "") << ','
                     << detail::fmt_real(row.grad_norm) << ',' << row.L_current << ','
                     << row.phase << '\n';
            if (!e.rounds_to_target && row.train_loss <= target_loss)
                e.rounds_to_target = row.round;
        }
        entries.push_back(e);
    }

    int worst = 0;
    for (const auto& e : entries)
        if (e.rounds_to_target) worst = std::max(worst, *e.rounds_to_target);
    std::printf("target train loss: %.6g (identical partition seed %llu)\n", target_loss,
                static_cast<unsigned long long>(opt.cfg.seed));
    std::printf("%-14s %-18s %s\n", "algo", "rounds-to-target", "ratio-vs-worst");
    for (const auto& e : entries) {
        if (e.rounds_to_target)
            std::printf("%-14s %-18d %.3f\n", e.algo.c_str(), *e.rounds_to_target,
                        worst > 0 ? static_cast<double>(*e.rounds_to_target) / worst : 0.0);
        else
            std::printf("%-14s %-18s %s\n", e.algo.c_str(), "—", "—");
    }
    std::printf("wrote %s\n", combined_path.c_str());
    return 0;
}

struct TheoryOptions {
    std::uint64_t seed = 0;
    int trials = 500;
    double epsilon = 0.3;
    double epsilon1 = 0.1;
    double delta_prob = 0.1;
    std::string output_dir = ".";
};

int cmd_theory(const TheoryOptions& opt) {
    fs::create_directories(opt.output_dir);
    const std::string report_path = (fs::path(opt.output_dir) / "theory_report.txt").string();
    const std::string raw_path = (fs::path(opt.output_dir) / "theory_raw.csv").string();
    std::ofstream report(report_path, std::ios::binary);
    std::ofstream raw(raw_path, std::ios::binary);
    raw << "check,param,trial,value_a,value_b\n";
    auto emit = [&](const std::string& line) {
        std::cout << line << '\n';
        report << line << '\n';
    };

    // shared logistic test problem
    auto synth = make_logistic({.n = 4000, .d = 20, .seed = opt.seed, .noise = 0.4});
    const double gamma = 0.1;
    ObjectiveModel model(synth.data, LossKind::logistic_l2, gamma);
    Vector w(20);
    auto rng = make_rng(opt.seed, "theory/probe");
    for (int i = 0; i < 20; ++i) w[i] = 0.1 * gaussian(rng);
    const Vector probes[] = {w};
    const CurvatureBounds bounds = model.estimate_bounds(probes);

    emit("== curvature bounds (measured on the probe iterate) ==");
    emit("kappa=" + detail::fmt_real(bounds.kappa) + " M=" + detail::fmt_real(bounds.M) +
         " B=" + detail::fmt_real(bounds.B) + " Gamma=" + detail::fmt_real(bounds.Gamma));
    emit("(Gamma is measured on the visited iterates, not a global supremum)");

    const long s_req = required_sample_size(bounds, 0.5, opt.delta_prob, 20);
    const TheoryParams params =
        TheoryParams::make(bounds, opt.epsilon, opt.epsilon1, opt.delta_prob, s_req, 0.1, 16);
    emit("== derived constants ==");
    emit("alpha_star=" + detail::fmt_real(params.alpha_star_value) +
         " psi=" + detail::fmt_real(params.psi) + " eta(s_req)=" + detail::fmt_real(params.eta));
    emit("C1=" + detail::fmt_real(params.C1) + " C2=" + detail::fmt_real(params.C2) +
         " rho1=" + detail::fmt_real(params.rho1) + " rho2=" + detail::fmt_real(params.rho2));
    emit("L>1 descent constant, both printed forms: C_a=" + detail::fmt_real(params.C_lgt1_a) +
         " C_b=" + detail::fmt_real(params.C_lgt1_b));

    // 1. Hessian eigenvalue concentration
    emit("== hessian concentration ==");
    emit("required sample size s >= " + std::to_string(s_req) + " (eps=0.5, delta=" +
         detail::fmt_real(opt.delta_prob) + ")");
    const auto conc =
        check_hessian_concentration(model, w, std::min<long>(s_req, 4000), opt.trials, 0.5,
                                    opt.seed);
    for (std::size_t t = 0; t < conc.extreme_eigs.size(); ++t)
        raw << "concentration," << std::min<long>(s_req, 4000) << ',' << t << ','
            << detail::fmt_real(conc.extreme_eigs[t].first) << ','
            << detail::fmt_real(conc.extreme_eigs[t].second) << '\n';
    const double band =
        opt.delta_prob + 2.326 * std::sqrt(opt.delta_prob * (1.0 - opt.delta_prob) /
                                           static_cast<double>(opt.trials));
    emit("failure rate " + detail::fmt_real(conc.failure_rate) + " vs band " +
         detail::fmt_real(band) + (conc.failure_rate <= band ? "  [ok]" : "  [VIOLATION]"));

    // 2. gradient deviation scaling
    emit("== gradient deviation ==");
    const std::vector<long> s_values{32, 64, 128, 256, 512, 1024, 2048};
    const auto devs = check_gradient_deviation(model, w, s_values, 150, opt.seed + 1);
    std::vector<std::pair<double, double>> pts;
    bool below_eta = true;
    for (const auto& d : devs) {
        const double eta = (1.0 + std::sqrt(2.0 * std::log(1.0 / 0.05))) * bounds.Gamma /
                           std::sqrt(static_cast<double>(d.s));
        raw << "deviation," << d.s << ",summary," << detail::fmt_real(d.mean_dev) << ','
            << detail::fmt_real(d.quantile95_dev) << '\n';
        emit("s=" + std::to_string(d.s) + " mean=" + detail::fmt_real(d.mean_dev) +
             " q95=" + detail::fmt_real(d.quantile95_dev) + " eta=" + detail::fmt_real(eta));
        below_eta = below_eta && d.quantile95_dev <= eta;
        pts.emplace_back(static_cast<double>(d.s), d.quantile95_dev);
    }
    emit("q95 log-log slope = " + detail::fmt_real(log_log_slope(pts)) +
         " (theory -1/2); everywhere below eta: " + (below_eta ? "yes" : "NO"));

    // 3. descent lemma with the analytic cap
    emit("== per-worker descent with the analytic cap ==");
    const Partition part = partition_uniform(4000, 16, derive_seed(opt.seed, "partition"));
    LineSearchConfig ls;
    ls.beta = 0.1;
    const DescentCheck desc =
        check_descent_lemma(model, part, w, bounds, opt.epsilon, ls, CgConfig{1e-10, 100});
    int ok = 0;
    for (const auto& rec : desc.workers) {
        raw << "descent," << rec.worker_id << ",step," << detail::fmt_real(rec.decrease) << ','
            << detail::fmt_real(rec.psi_bound) << '\n';
        ok += rec.satisfied ? 1 : 0;
    }
    emit("cap=" + detail::fmt_real(desc.alpha_star_cap) + " psi=" + detail::fmt_real(desc.psi) +
         "; " + std::to_string(ok) + "/" + std::to_string(desc.workers.size()) +
         " workers satisfy the psi bound");

    // 4. error floor scaling
    emit("== least-squares error floor ==");
    FloorShardOptions floor_opt;
    floor_opt.workers = 8;
    floor_opt.d = 10;
    const std::vector<long> floor_s{64, 128, 256, 512, 1024, 2048};
    std::vector<std::pair<double, double>> mean_gaps;
    for (long s : floor_s) mean_gaps.emplace_back(static_cast<double>(s), 0.0);
    const int n_seeds = 10;
    for (int sd = 0; sd < n_seeds; ++sd) {
        const auto points = measure_error_floor(floor_opt, 2, floor_s, opt.seed + 100 + sd);
        for (std::size_t i = 0; i < points.size(); ++i) {
            raw << "floor," << points[i].s << ',' << sd << ','
                << detail::fmt_real(points[i].gap) << ",\n";
            mean_gaps[i].second += points[i].gap / n_seeds;
        }
    }
    for (const auto& [s, gap] : mean_gaps)
        emit("s=" + std::to_string(static_cast<long>(s)) + " mean gap=" + detail::fmt_real(gap));
    emit("gap log-log slope = " + detail::fmt_real(log_log_slope(mean_gaps)) +
         ", spearman rho = " + detail::fmt_real(spearman_rho(mean_gaps)));

    std::printf("wrote %s and %s\n", report_path.c_str(), raw_path.c_str());
    return 0;
}

struct GenSynthOptions {
    std::string task = "logistic";
    long n = 0;
    int d = 0;
    std::uint64_t seed = 0;
    double noise = 0.1;
    double margin = 0.0;
    double feature_scale = 1.0;
    int cov_rank = 0;
    long test_n = 0;
    std::string out;
    std::string test_out;
};

int cmd_gen_synth(const GenSynthOptions& opt) {
    if (opt.n < 1 || opt.d < 1) throw ConfigError("gen-synth: need positive --n and --d");
    if (opt.test_n > 0 && opt.test_out.empty())
        throw ConfigError("gen-synth: --test-n requires --test-out");

    Dataset pool;
    if (opt.task == "logistic") {
        const auto synth = make_logistic({.n = opt.n + opt.test_n,
                                          .d = opt.d,
                                          .seed = opt.seed,
                                          .noise = opt.noise,
                                          .margin = opt.margin,
                                          .feature_scale = opt.feature_scale,
                                          .cov_rank = opt.cov_rank});
        pool = synth.data;
        std::printf("task=logistic n=%ld d=%d seed=%llu noise=%g margin=%g scale=%g "
                    "cov_rank=%d |w_true|=%g\n",
                    opt.n, opt.d, static_cast<unsigned long long>(opt.seed), opt.noise,
                    opt.margin, opt.feature_scale, opt.cov_rank, synth.w_true.norm());
    } else if (opt.task == "least_squares") {
        const auto synth = make_least_squares(
            {.n = opt.n + opt.test_n, .d = opt.d, .seed = opt.seed, .noise = opt.noise});
        pool = synth.data;
        std::printf("task=least_squares n=%ld d=%d seed=%llu noise=%g |w_true|=%g\n", opt.n,
                    opt.d, static_cast<unsigned long long>(opt.seed), opt.noise,
                    synth.w_true.norm());
    } else {
        throw ConfigError("gen-synth: task must be logistic or least_squares");
    }

    Dataset train;
    train.features = pool.features.topRows(opt.n);
    train.labels = pool.labels.head(opt.n);
    std::ofstream out(opt.out, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + opt.out);
    out << serialize_libsvm(train);
    std::printf("wrote %s\n", opt.out.c_str());

    if (opt.test_n > 0) {
        Dataset test;
        test.features = pool.features.bottomRows(opt.test_n);
        test.labels = pool.labels.tail(opt.test_n);
        std::ofstream tout(opt.test_out, std::ios::binary);
        if (!tout) throw std::runtime_error("cannot open " + opt.test_out);
        tout << serialize_libsvm(test);
        std::printf("wrote %s\n", opt.test_out.c_str());
    }
    return 0;
}

// Flat key=value config support: `--config <file>` merges each `key=value`
// line as `--key value` unless that flag was given explicitly, so flags
// override config-file values 1:1.
std::vector<std::string> merge_config_args(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string config_path;
    for (std::size_t i = 0; i < args.size();) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
            args.erase(args.begin() + static_cast<long>(i),
                       args.begin() + static_cast<long>(i) + 2);
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
            args.erase(args.begin() + static_cast<long>(i));
        } else {
            ++i;
        }
    }
    if (config_path.empty()) return args;

    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config file " + config_path);
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=', first);
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key=value");
        const std::string key = line.substr(first, eq - first);
        const std::string value = line.substr(eq + 1);
        const std::string flag = "--" + key;
        bool given = false;
        for (const auto& a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
        if (given) continue;
        args.push_back(flag);
        if (!value.empty()) args.push_back(value);
    }
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LocalNewton: distributed second-order optimization with local averaging"};
    app.require_subcommand(1);

    CommonOptions run_opt;
    CLI::App* run = app.add_subcommand("run", "run one algorithm and record per-round metrics");
    add_experiment_flags(run, run_opt, /*with_algo=*/true);

    CommonOptions cmp_opt;
    std::vector<std::string> cmp_algos;
    double target_loss = 0.0;
    CLI::App* compare =
        app.add_subcommand("compare", "run several algorithms under one partition seed");
    add_experiment_flags(compare, cmp_opt, /*with_algo=*/false);
    compare->add_option("--algos", cmp_algos, "comma-separated algorithms")
        ->required()
        ->delimiter(',');
    compare->add_option("--target-loss", target_loss, "training-loss target")->required();

    TheoryOptions theory_opt;
    CLI::App* theory =
        app.add_subcommand("theory", "empirical validators for the analytical claims");
    theory->add_option("--seed", theory_opt.seed, "seed");
    theory->add_option("--trials", theory_opt.trials, "subset draws per check");
    theory->add_option("--epsilon", theory_opt.epsilon, "spectral tolerance");
    theory->add_option("--epsilon1", theory_opt.epsilon1, "gradient-alignment tolerance");
    theory->add_option("--delta-prob", theory_opt.delta_prob, "failure probability");
    theory->add_option("--output-dir", theory_opt.output_dir, "report/CSV directory");

    GenSynthOptions gen_opt;
    CLI::App* gen = app.add_subcommand("gen-synth", "generate a synthetic LIBSVM dataset");
    gen->add_option("--task", gen_opt.task, "logistic | least_squares");
    gen->add_option("--n", gen_opt.n, "training samples")->required();
    gen->add_option("--d", gen_opt.d, "feature dimension")->required();
    gen->add_option("--seed", gen_opt.seed, "seed");
    gen->add_option("--noise", gen_opt.noise, "label noise scale");
    gen->add_option("--margin", gen_opt.margin, "separability margin (> 0 = separable)");
    gen->add_option("--feature-scale", gen_opt.feature_scale, "feature magnitude");
    gen->add_option("--cov-rank", gen_opt.cov_rank, "feature covariance rank (0 = isotropic)");
    gen->add_option("--out", gen_opt.out, "output path")->required();
    gen->add_option("--test-n", gen_opt.test_n, "held-out test samples");
    gen->add_option("--test-out", gen_opt.test_out, "test output path");

    try {
        std::vector<std::string> args = merge_config_args(argc, argv);
        std::reverse(args.begin(), args.end());  // App::parse consumes a reversed vector
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (run->parsed()) return cmd_run(run_opt);
        if (compare->parsed()) return cmd_compare(cmp_opt, cmp_algos, target_loss);
        if (theory->parsed()) return cmd_theory(theory_opt);
        if (gen->parsed()) return cmd_gen_synth(gen_opt);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
