#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "localnewton/harness.hpp"
#include "localnewton/synth.hpp"

using namespace localnewton;
using Catch::Matchers::WithinAbs;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("ln_harness_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string write_synth_train(const TempDir& dir, long n, int d, std::uint64_t seed,
                              double noise = 0.4) {
    auto synth = make_logistic({.n = n, .d = d, .seed = seed, .noise = noise});
    const std::string path = dir.file("train.libsvm");
    std::ofstream out(path, std::ios::binary);
    out << serialize_libsvm(synth.data);
    return path;
}

}  // namespace

TEST_CASE("accuracy basics", "[harness]") {
    auto synth = make_logistic({.n = 500, .d = 6, .seed = 5, .margin = 0.05});
    SECTION("a perfect separator scores 1") {
        CHECK(accuracy(synth.w_true, synth.data) == 1.0);
    }
    SECTION("the zero vector predicts +1 everywhere") {
        long positives = 0;
        for (long i = 0; i < synth.data.n(); ++i)
            if (synth.data.labels[i] > 0) ++positives;
        CHECK_THAT(accuracy(Vector::Zero(6), synth.data),
                   WithinAbs(static_cast<double>(positives) / 500.0, 1e-15));
    }
    SECTION("random weights on balanced random labels sit near 1/2") {
        std::mt19937_64 rng(8);
        Dataset ds;
        const long n = 10000;
        ds.features = RowMatrix(n, 4);
        ds.labels = Vector(n);
        for (long i = 0; i < n; ++i) {
            for (int j = 0; j < 4; ++j) ds.features(i, j) = gaussian(rng);
            ds.labels[i] = (rng() & 1) ? 1.0 : -1.0;  // independent of features
        }
        Vector w(4);
        for (int j = 0; j < 4; ++j) w[j] = gaussian(rng);
        CHECK_THAT(accuracy(w, ds), WithinAbs(0.5, 0.02));
    }
    SECTION("empty test set is an error") {
        Dataset empty;
        empty.features = RowMatrix(0, 2);
        empty.labels = Vector(0);
        CHECK_THROWS(accuracy(Vector::Zero(2), empty));
    }
}

TEST_CASE("config hash changes iff a semantic field changes", "[harness]") {
    ExperimentConfig base;
    base.algo = Algo::localnewton;
    base.train_path = "train.libsvm";
    base.seed = 7;
    const std::string h0 = config_hash(base);
    CHECK(config_hash(base) == h0);

    auto changed = [&](auto mutate) {
        ExperimentConfig c = base;
        mutate(c);
        return config_hash(c) != h0;
    };
    CHECK(changed([](ExperimentConfig& c) { c.algo = Algo::giant; }));
    CHECK(changed([](ExperimentConfig& c) { c.train_path = "other"; }));
    CHECK(changed([](ExperimentConfig& c) { c.test_path = "t"; }));
    CHECK(changed([](ExperimentConfig& c) { c.loss = LossKind::least_squares; }));
    CHECK(changed([](ExperimentConfig& c) { c.workers = 3; }));
    CHECK(changed([](ExperimentConfig& c) { c.local_iters = 2; }));
    CHECK(changed([](ExperimentConfig& c) { c.l0 = 4; }));
    CHECK(changed([](ExperimentConfig& c) { c.delta = 0.5; }));
    CHECK(changed([](ExperimentConfig& c) { c.gamma = 0.5; }));
    CHECK(changed([](ExperimentConfig& c) { c.seed = 8; }));
    CHECK(changed([](ExperimentConfig& c) { c.max_rounds = 9; }));
    CHECK(changed([](ExperimentConfig& c) { c.expand_features = true; }));
    CHECK(changed([](ExperimentConfig& c) { c.ls.beta = 0.2; }));
    CHECK(changed([](ExperimentConfig& c) { c.ls.alpha_init = 0.5; }));
    CHECK(changed([](ExperimentConfig& c) { c.ls.shrink = 0.25; }));
    CHECK(changed([](ExperimentConfig& c) { c.ls.max_backtracks = 7; }));
    CHECK(changed([](ExperimentConfig& c) { c.ls.alpha_star_cap = 0.4; }));
    CHECK(changed([](ExperimentConfig& c) { c.cg.tol = 1e-6; }));
    CHECK(changed([](ExperimentConfig& c) { c.cg.max_iters = 13; }));
    CHECK(changed([](ExperimentConfig& c) { c.sgd_step = 0.125; }));
    CHECK(changed([](ExperimentConfig& c) { c.sgd_batch = 2; }));
    CHECK(changed([](ExperimentConfig& c) { c.sgd_epochs = 2; }));
}

TEST_CASE("giant round accounting yields one row per three rounds", "[harness]") {
    TempDir dir;
    ExperimentConfig cfg;
    cfg.algo = Algo::giant;
    cfg.train_path = write_synth_train(dir, 120, 4, 21);
    cfg.workers = 4;
    cfg.max_rounds = 9;
    cfg.seed = 1;
    const RunMetrics m = run_experiment(cfg);
    REQUIRE(m.rows.size() == 3);
    CHECK(m.rows[0].round == 3);
    CHECK(m.rows[1].round == 6);
    CHECK(m.rows[2].round == 9);
    CHECK(m.rows[2].local_iters_cum == 3);
}

TEST_CASE("csv runs are byte-identical across repeats and thread counts", "[harness]") {
    TempDir dir;
    ExperimentConfig cfg;
    cfg.algo = Algo::adaptive;
    cfg.train_path = write_synth_train(dir, 160, 5, 31);
    cfg.workers = 8;
    cfg.max_rounds = 8;
    cfg.l0 = 2;
    cfg.seed = 99;

    ExecutionOptions a{1, dir.file("a.csv")};
    ExecutionOptions b{1, dir.file("b.csv")};
    ExecutionOptions c{4, dir.file("c.csv")};
    run_experiment(cfg, a);
    run_experiment(cfg, b);
    run_experiment(cfg, c);
    const std::string bytes = slurp(a.csv_path);
    REQUIRE(!bytes.empty());
    CHECK(bytes == slurp(b.csv_path));
    CHECK(bytes == slurp(c.csv_path));
}

TEST_CASE("csv carries the schema header and flushed complete rows", "[harness]") {
    TempDir dir;
    ExperimentConfig cfg;
    cfg.algo = Algo::localnewton;
    cfg.train_path = write_synth_train(dir, 90, 3, 41);
    cfg.workers = 3;
    cfg.local_iters = 2;
    cfg.max_rounds = 4;
    ExecutionOptions opts{1, dir.file("run.csv")};
    const RunMetrics m = run_experiment(cfg, opts);
    const std::string bytes = slurp(opts.csv_path);
    CHECK(bytes.find("round,local_iters,train_loss,test_acc,grad_norm,L,phase\n") !=
          std::string::npos);
    CHECK(bytes.find("# config=" + m.meta.config) != std::string::npos);
    // every configured value round-trips into the meta header
    CHECK(bytes.find(";k=3;") != std::string::npos);
    CHECK(bytes.find(";l=2;") != std::string::npos);
    CHECK(bytes.find(";max-rounds=4;") != std::string::npos);
    CHECK(bytes.find('\r') == std::string::npos);  // LF endings only
    // one line per round after the header
    const auto header_end =
        bytes.find("round,local_iters,train_loss,test_acc,grad_norm,L,phase\n");
    const std::string body = bytes.substr(header_end);
    CHECK(std::count(body.begin(), body.end(), '\n') == 1 + 4);
}

TEST_CASE("metrics rows expose the accounting identities", "[harness]") {
    TempDir dir;
    const std::string train = write_synth_train(dir, 120, 4, 51);
    for (int L : {1, 2, 3}) {
        ExperimentConfig cfg;
        cfg.algo = Algo::localnewton;
        cfg.train_path = train;
        cfg.workers = 4;
        cfg.local_iters = L;
        cfg.max_rounds = 5;
        const RunMetrics m = run_experiment(cfg);
        REQUIRE(m.rows.size() == 5);
        for (std::size_t i = 0; i < m.rows.size(); ++i) {
            CHECK(m.rows[i].round == static_cast<int>(i) + 1);
            CHECK(m.rows[i].local_iters_cum == static_cast<long>(i + 1) * L);
        }
    }
    ExperimentConfig cfg;
    cfg.algo = Algo::bfgs;
    cfg.train_path = train;
    cfg.workers = 4;
    cfg.max_rounds = 4;
    const RunMetrics m = run_experiment(cfg);
    REQUIRE(m.rows.size() == 4);
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
        CHECK(m.rows[i].round == static_cast<int>(i) + 1);
        CHECK(m.rows[i].local_iters_cum == static_cast<long>(i) + 1);
    }
}

TEST_CASE("separable synthetic data reaches perfect test accuracy", "[harness]") {
    TempDir dir;
    auto train = make_logistic({.n = 600, .d = 8, .seed = 61, .margin = 0.1});
    // hold out the tail of one generated pool so train and test share the truth
    Dataset test_half;
    test_half.features = train.data.features.bottomRows(200);
    test_half.labels = train.data.labels.tail(200);
    Dataset train_half;
    train_half.features = train.data.features.topRows(400);
    train_half.labels = train.data.labels.head(400);

    {
        std::ofstream out(dir.file("train.libsvm"), std::ios::binary);
        out << serialize_libsvm(train_half);
        std::ofstream out2(dir.file("test.libsvm"), std::ios::binary);
        out2 << serialize_libsvm(test_half);
    }
    ExperimentConfig cfg;
    cfg.algo = Algo::giant;
    cfg.train_path = dir.file("train.libsvm");
    cfg.test_path = dir.file("test.libsvm");
    cfg.workers = 4;
    cfg.max_rounds = 30;
    const RunMetrics m = run_experiment(cfg);
    REQUIRE(!m.rows.empty());
    REQUIRE(m.rows.back().test_accuracy.has_value());
    CHECK(*m.rows.back().test_accuracy == 1.0);
}

TEST_CASE("missing sgd step without a tuned dataset name is a config error", "[harness]") {
    TempDir dir;
    ExperimentConfig cfg;
    cfg.algo = Algo::local_sgd;
    cfg.train_path = write_synth_train(dir, 60, 3, 71);
    cfg.workers = 3;
    cfg.max_rounds = 2;
    CHECK_THROWS_AS(run_experiment(cfg), ConfigError);
    cfg.sgd_step = 0.05;
    CHECK_NOTHROW(run_experiment(cfg));
}
