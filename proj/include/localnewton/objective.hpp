#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "localnewton/dataset.hpp"
#include "localnewton/rng.hpp"

namespace localnewton {

using IndexSpan = std::span<const int>;

enum class LossKind { logistic_l2, least_squares };

// sigma(z) = 1 / (1 + exp(-z)), branch-free against overflow
inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(-z)), stable on both tails
inline double log1p_exp_neg(double z) {
    return std::log1p(std::exp(-std::abs(z))) + std::max(-z, 0.0);
}

struct CurvatureBounds {
    double kappa = 0.0;  // strong-convexity lower bound
    double M = 0.0;      // smoothness upper bound
    double B = 0.0;      // per-sample Hessian spectral bound
    double Gamma = 0.0;  // max per-sample gradient norm over the probe set
};

class ObjectiveModel;

// Hessian-vector product over a fixed (w, subset) pair. Per-sample curvature
// weights are cached once so repeated applications (CG) cost two passes over
// the subset rows.
class HessianOperator {
public:
    HessianOperator(const Dataset& data, LossKind kind, double gamma, const Vector& w,
                    IndexSpan subset)
        : data_(&data), kind_(kind), gamma_(gamma), subset_(subset) {
        if (subset.empty()) throw std::invalid_argument("hessian operator: empty subset");
        if (kind == LossKind::logistic_l2) {
            weights_.resize(subset.size());
            for (std::size_t i = 0; i < subset.size(); ++i) {
                const int j = subset[i];
                const double z = data.labels[j] * data.features.row(j).dot(w);
                weights_[i] = sigmoid(z) * sigmoid(-z);  // variance form of sigma'
            }
        }
    }

    Vector operator()(const Vector& v) const {
        Vector out = Vector::Zero(v.size());
        const double inv = 1.0 / static_cast<double>(subset_.size());
        if (kind_ == LossKind::logistic_l2) {
            for (std::size_t i = 0; i < subset_.size(); ++i) {
                const int j = subset_[i];
                const double a = data_->features.row(j).dot(v);
                out.noalias() += (weights_[i] * a * inv) * data_->features.row(j).transpose();
            }
        } else {
            for (const int j : subset_) {
                const double a = data_->features.row(j).dot(v);
                out.noalias() += (2.0 * a * inv) * data_->features.row(j).transpose();
            }
        }
        out.noalias() += gamma_ * v;
        return out;
    }

private:
    const Dataset* data_;
    LossKind kind_;
    double gamma_;
    IndexSpan subset_;
    std::vector<double> weights_;
};

// Loss model over a dataset: L2-regularized logistic regression or linear
// least squares. Every evaluation averages the per-sample data term over the
// given index subset and applies the (gamma/2)||w||^2 regularizer once, so
// the global objective is exactly the mean of the shard objectives.
class ObjectiveModel {
public:
    ObjectiveModel(const Dataset& data, LossKind kind, double gamma)
        : data_(&data), kind_(kind), gamma_(gamma) {
        if (gamma < 0.0) throw std::invalid_argument("objective: gamma must be >= 0");
    }

    LossKind kind() const { return kind_; }
    double gamma() const { return gamma_; }
    const Dataset& dataset() const { return *data_; }

    double value(const Vector& w, IndexSpan subset) const {
        check_subset(subset);
        // Kahan compensated sum; shard means must recombine to the full-set
        // value within 1e-12 relative.
        double sum = 0.0, comp = 0.0;
        auto add = [&](double term) {
            const double y = term - comp;
            const double t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        };
        if (kind_ == LossKind::logistic_l2) {
            for (const int j : subset)
                add(log1p_exp_neg(data_->labels[j] * data_->features.row(j).dot(w)));
        } else {
            for (const int j : subset) {
                const double r = data_->labels[j] - data_->features.row(j).dot(w);
                add(r * r);
            }
        }
        return sum / static_cast<double>(subset.size()) + 0.5 * gamma_ * w.squaredNorm();
    }

    Vector gradient(const Vector& w, IndexSpan subset) const {
        check_subset(subset);
        Vector g = Vector::Zero(w.size());
        const double inv = 1.0 / static_cast<double>(subset.size());
        if (kind_ == LossKind::logistic_l2) {
            for (const int j : subset) {
                const double y = data_->labels[j];
                const double z = y * data_->features.row(j).dot(w);
                g.noalias() += (-y * sigmoid(-z) * inv) * data_->features.row(j).transpose();
            }
        } else {
            for (const int j : subset) {
                const double r = data_->labels[j] - data_->features.row(j).dot(w);
                g.noalias() += (-2.0 * r * inv) * data_->features.row(j).transpose();
            }
        }
        g.noalias() += gamma_ * w;
        return g;
    }

    HessianOperator hessian_operator(const Vector& w, IndexSpan subset) const {
        return HessianOperator(*data_, kind_, gamma_, w, subset);
    }

    Vector hessian_vec(const Vector& w, const Vector& v, IndexSpan subset) const {
        return hessian_operator(w, subset)(v);
    }

    Matrix explicit_hessian(const Vector& w, IndexSpan subset) const {
        check_subset(subset);
        const long d = data_->d();
        Matrix H = Matrix::Zero(d, d);
        const double inv = 1.0 / static_cast<double>(subset.size());
        for (const int j : subset) {
            double weight;
            if (kind_ == LossKind::logistic_l2) {
                const double z = data_->labels[j] * data_->features.row(j).dot(w);
                weight = sigmoid(z) * sigmoid(-z) * inv;
            } else {
                weight = 2.0 * inv;
            }
            H.noalias() +=
                weight * data_->features.row(j).transpose() * data_->features.row(j);
        }
        H.diagonal().array() += gamma_;
        return H;
    }

    // Per-sample gradient (regularizer included, matching the f_j convention).
    Vector sample_gradient(const Vector& w, int j) const {
        Vector g(w.size());
        if (kind_ == LossKind::logistic_l2) {
            const double y = data_->labels[j];
            const double z = y * data_->features.row(j).dot(w);
            g = (-y * sigmoid(-z)) * data_->features.row(j).transpose();
        } else {
            const double r = data_->labels[j] - data_->features.row(j).dot(w);
            g = (-2.0 * r) * data_->features.row(j).transpose();
        }
        g.noalias() += gamma_ * w;
        return g;
    }

    // kappa = gamma exactly (the data term is PSD); M = gamma + largest data
    // Hessian eigenvalue over the probes (power iteration, tol 1e-6);
    // B bounds a single sample's Hessian; Gamma the per-sample gradient norm.
    CurvatureBounds estimate_bounds(std::span<const Vector> probe_iterates) const {
        if (probe_iterates.empty())
            throw std::invalid_argument("estimate_bounds: probe set must be nonempty");
        std::vector<int> all(static_cast<std::size_t>(data_->n()));
        for (long i = 0; i < data_->n(); ++i) all[static_cast<std::size_t>(i)] = static_cast<int>(i);

        CurvatureBounds b;
        b.kappa = gamma_;
        double max_row_sq = 0.0;
        for (long j = 0; j < data_->n(); ++j)
            max_row_sq = std::max(max_row_sq, data_->features.row(j).squaredNorm());
        b.B = gamma_ + (kind_ == LossKind::logistic_l2 ? 0.25 : 2.0) * max_row_sq;

        for (const Vector& w : probe_iterates) {
            b.M = std::max(b.M, top_eigenvalue(hessian_operator(w, all), data_->d()));
            for (long j = 0; j < data_->n(); ++j)
                b.Gamma = std::max(b.Gamma, sample_gradient(w, static_cast<int>(j)).norm());
        }
        return b;
    }

private:
    void check_subset(IndexSpan subset) const {
        if (subset.empty()) throw std::invalid_argument("objective: empty index subset");
    }

    template <class Op>
    static double top_eigenvalue(const Op& H, long d) {
        std::mt19937_64 rng(0x7F4A7C15ull);
        Vector v(d);
        for (long i = 0; i < d; ++i) v[i] = gaussian(rng);
        v.normalize();
        double lambda = 0.0;
        for (int it = 0; it < 1000; ++it) {
            Vector hv = H(v);
            const double next = v.dot(hv);
            if (!std::isfinite(next))
                throw std::runtime_error("estimate_bounds: non-finite eigenvalue estimate");
            const double norm = hv.norm();
            if (norm == 0.0) return 0.0;
            v = hv / norm;
            if (it > 0 && std::abs(next - lambda) <= 1e-6 * std::abs(next)) return next;
            lambda = next;
        }
        return lambda;
    }

    const Dataset* data_;
    LossKind kind_;
    double gamma_;
};

}  // namespace localnewton
