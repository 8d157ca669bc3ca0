#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>

#include "localnewton/dataset.hpp"
#include "localnewton/rng.hpp"

namespace localnewton {

struct SynthResult {
    Dataset data;
    Vector w_true;
};

struct LogisticSynthOptions {
    long n = 1000;
    int d = 20;
    std::uint64_t seed = 0;
    double noise = 0.1;         // additive noise inside the sign()
    double margin = 0.0;        // > 0: rejection-sample a separable margin, noise ignored
    double feature_scale = 1.0;
    int cov_rank = 0;           // 0 = isotropic; r > 0 = rank-r feature covariance
};

namespace detail {

inline Matrix orthonormal_columns(int d, int r, std::mt19937_64& rng) {
    Matrix a(d, r);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < r; ++j) a(i, j) = gaussian(rng);
    Eigen::HouseholderQR<Matrix> qr(a);
    Matrix q = qr.householderQ() * Matrix::Identity(d, r);
    return q;
}

}  // namespace detail

// Gaussian features, ground-truth direction drawn once, labels
// y = sign(w.x + noise). With cov_rank = r the features live on a rank-r
// subspace (x = scale * A z / sqrt(r), A orthonormal), which keeps the
// per-shard estimation problem effectively r-dimensional. With margin > 0
// samples are redrawn until |w.x| >= margin and labels carry no noise, so the
// dataset is linearly separable by construction.
inline SynthResult make_logistic(const LogisticSynthOptions& opt) {
    if (opt.n < 1 || opt.d < 1) throw std::invalid_argument("make_logistic: bad sizes");
    if (opt.cov_rank < 0 || opt.cov_rank > opt.d)
        throw std::invalid_argument("make_logistic: cov_rank must be in [0, d]");
    auto rng = make_rng(opt.seed, "synth/logistic");

    Dataset ds;
    ds.features = RowMatrix::Zero(opt.n, opt.d);
    ds.labels = Vector::Zero(opt.n);
    Vector w_true;

    if (opt.cov_rank > 0) {
        const int r = opt.cov_rank;
        const Matrix basis = detail::orthonormal_columns(opt.d, r, rng);
        Vector u(r);
        for (int i = 0; i < r; ++i) u[i] = gaussian(rng);
        u.normalize();
        w_true = basis * u / opt.feature_scale;
        const double zscale = opt.feature_scale / std::sqrt(static_cast<double>(r));
        Vector z(r);
        for (long i = 0; i < opt.n; ++i) {
            double m;
            for (;;) {
                for (int j = 0; j < r; ++j) z[j] = gaussian(rng);
                m = u.dot(z) / std::sqrt(static_cast<double>(r));
                if (opt.margin <= 0.0 || std::abs(m) >= opt.margin) break;
            }
            ds.features.row(i) = (zscale * (basis * z)).transpose();
            const double shifted = opt.margin > 0.0 ? m : m + opt.noise * gaussian(rng);
            ds.labels[i] = shifted >= 0.0 ? 1.0 : -1.0;
        }
    } else {
        w_true = Vector(opt.d);
        for (int i = 0; i < opt.d; ++i) w_true[i] = gaussian(rng);
        const double xscale = opt.feature_scale / std::sqrt(static_cast<double>(opt.d));
        Vector x(opt.d);
        for (long i = 0; i < opt.n; ++i) {
            double m;
            for (;;) {
                for (int j = 0; j < opt.d; ++j) x[j] = xscale * gaussian(rng);
                m = w_true.dot(x);
                if (opt.margin <= 0.0 || std::abs(m) >= opt.margin) break;
            }
            ds.features.row(i) = x.transpose();
            const double shifted = opt.margin > 0.0 ? m : m + opt.noise * gaussian(rng);
            ds.labels[i] = shifted >= 0.0 ? 1.0 : -1.0;
        }
    }

    if (opt.margin > 0.0) {
        for (long i = 0; i < opt.n; ++i)
            if (ds.labels[i] * ds.features.row(i).dot(w_true) < opt.margin * 0.999)
                throw std::logic_error("make_logistic: separability check failed");
    }
    return SynthResult{std::move(ds), std::move(w_true)};
}

struct LeastSquaresSynthOptions {
    long n = 1000;
    int d = 10;
    std::uint64_t seed = 0;
    double noise = 0.1;  // y = X w + noise * eps
};

inline SynthResult make_least_squares(const LeastSquaresSynthOptions& opt) {
    if (opt.n < 1 || opt.d < 1) throw std::invalid_argument("make_least_squares: bad sizes");
    auto rng = make_rng(opt.seed, "synth/least_squares");
    Dataset ds;
    ds.features = RowMatrix::Zero(opt.n, opt.d);
    ds.labels = Vector::Zero(opt.n);
    Vector w_true(opt.d);
    for (int i = 0; i < opt.d; ++i) w_true[i] = gaussian(rng);
    for (long i = 0; i < opt.n; ++i) {
        for (int j = 0; j < opt.d; ++j) ds.features(i, j) = gaussian(rng);
        ds.labels[i] = ds.features.row(i).dot(w_true) + opt.noise * gaussian(rng);
    }
    return SynthResult{std::move(ds), std::move(w_true)};
}

struct FloorShardOptions {
    int workers = 8;        // K
    long shard_size = 64;   // s
    int d = 10;
    std::uint64_t seed = 0;
    double noise = 0.5;
    double het_lo = 0.25;   // per-shard per-dimension scale range (loguniform)
    double het_hi = 4.0;
    bool identical_shards = false;
};

struct FloorShards {
    Dataset data;         // shard-consecutive rows, n = K * s
    Partition partition;  // shard k = rows [k*s, (k+1)*s)
    Vector w_true;
};

// K least-squares shards from one generating distribution: shard k draws its
// own per-dimension design scales, shares the truth, and adds independent
// noise. The covariance heterogeneity is what keeps the averaged local optima
// away from the union solution. With identical_shards the first shard is
// replicated K times.
inline FloorShards make_floor_shards(const FloorShardOptions& opt) {
    if (opt.workers < 1 || opt.shard_size < 1 || opt.d < 1)
        throw std::invalid_argument("make_floor_shards: bad sizes");
    auto rng = make_rng(opt.seed, "synth/floor");
    const long n = static_cast<long>(opt.workers) * opt.shard_size;

    FloorShards out;
    out.data.features = RowMatrix::Zero(n, opt.d);
    out.data.labels = Vector::Zero(n);
    out.w_true = Vector(opt.d);
    for (int i = 0; i < opt.d; ++i) out.w_true[i] = gaussian(rng);

    const double log_lo = std::log(opt.het_lo);
    const double log_hi = std::log(opt.het_hi);
    Vector scales(opt.d);
    for (int k = 0; k < opt.workers; ++k) {
        if (k == 0 || !opt.identical_shards)
            for (int j = 0; j < opt.d; ++j)
                scales[j] = std::exp(log_lo + (log_hi - log_lo) * uniform_double(rng));
        for (long i = 0; i < opt.shard_size; ++i) {
            const long row = static_cast<long>(k) * opt.shard_size + i;
            if (opt.identical_shards && k > 0) {
                out.data.features.row(row) = out.data.features.row(i);
                out.data.labels[row] = out.data.labels[i];
                continue;
            }
            for (int j = 0; j < opt.d; ++j)
                out.data.features(row, j) = scales[j] * gaussian(rng);
            out.data.labels[row] =
                out.data.features.row(row).dot(out.w_true) + opt.noise * gaussian(rng);
        }
    }

    out.partition.worker_count = opt.workers;
    out.partition.shard_size = static_cast<int>(opt.shard_size);
    out.partition.shards.resize(static_cast<std::size_t>(opt.workers));
    for (int k = 0; k < opt.workers; ++k) {
        auto& shard = out.partition.shards[static_cast<std::size_t>(k)];
        shard.resize(static_cast<std::size_t>(opt.shard_size));
        for (long i = 0; i < opt.shard_size; ++i)
            shard[static_cast<std::size_t>(i)] = static_cast<int>(k * opt.shard_size + i);
    }
    return out;
}

}  // namespace localnewton
