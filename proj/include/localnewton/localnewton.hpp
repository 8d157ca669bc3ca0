#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "localnewton/dataset.hpp"
#include "localnewton/newton.hpp"
#include "localnewton/objective.hpp"
#include "localnewton/parallel.hpp"

namespace localnewton {

class WorkerError : public SolverError {
public:
    WorkerError(int worker_id, const std::string& what)
        : SolverError("worker " + std::to_string(worker_id) + ": " + what),
          worker_id_(worker_id) {}
    int worker_id() const { return worker_id_; }

private:
    int worker_id_;
};

struct WorkerState {
    int worker_id = 0;
    std::vector<int> shard;
    Vector w;
    double last_grad_norm = 0.0;
    double last_alpha = 0.0;
};

// L local iterations between syncs over a horizon of T local iterations;
// the implied sync set is {0, L, 2L, ...}.
struct SyncSchedule {
    int local_iters_per_round = 1;  // L
    long total_local_iters = 1;     // T

    long rounds() const {
        return (total_local_iters + local_iters_per_round - 1) / local_iters_per_round;
    }
    void validate() const {
        if (local_iters_per_round < 1) throw std::invalid_argument("schedule: L must be >= 1");
        if (total_local_iters < 1) throw std::invalid_argument("schedule: T must be >= 1");
    }
};

// One damped Newton iteration on the worker's shard: gradient, CG direction,
// Armijo step on the shard loss. A worker at an exact stationary point skips
// the step.
inline WorkerState local_newton_step(const ObjectiveModel& model, WorkerState state,
                                     const LineSearchConfig& ls, const CgConfig& cg) {
    const IndexSpan shard(state.shard);
    Vector g = model.gradient(state.w, shard);
    const double gn = g.norm();
    state.last_grad_norm = gn;
    state.last_alpha = 0.0;
    if (gn == 0.0) return state;
    try {
        const auto hvp = model.hessian_operator(state.w, shard);
        CgResult sol = cg_solve(hvp, g, cg);
        const double alpha = armijo_backtrack(
            [&](const Vector& v) { return model.value(v, shard); }, state.w, sol.direction, g,
            ls);
        state.w.noalias() -= alpha * sol.direction;
        state.last_alpha = alpha;
    } catch (const std::exception& e) {
        throw WorkerError(state.worker_id, e.what());
    }
    return state;
}

// Arithmetic mean in ascending worker_id order with pairwise summation.
inline Vector average_models(std::span<const WorkerState> states) {
    if (states.empty()) throw std::invalid_argument("average_models: no workers");
    const long d = states[0].w.size();
    for (const auto& s : states)
        if (s.w.size() != d) throw std::invalid_argument("average_models: dimension mismatch");

    const std::function<Vector(std::size_t, std::size_t)> sum_range =
        [&](std::size_t lo, std::size_t hi) -> Vector {
        if (hi - lo == 1) return states[lo].w;
        const std::size_t mid = lo + (hi - lo) / 2;
        return sum_range(lo, mid) + sum_range(mid, hi);
    };
    return sum_range(0, states.size()) / static_cast<double>(states.size());
}

inline std::vector<WorkerState> init_workers(const Partition& partition, const Vector& w0) {
    std::vector<WorkerState> states;
    states.reserve(partition.shards.size());
    for (std::size_t k = 0; k < partition.shards.size(); ++k)
        states.push_back(WorkerState{static_cast<int>(k), partition.shards[k], w0, 0.0});
    return states;
}

// One sync block: every worker runs `iters` local Newton steps from its
// current iterate, then the master averages and broadcasts. Worker loops are
// independent and may run on a pool; the reduction order is fixed by
// worker_id, so the result does not depend on scheduling.
inline Vector run_sync_block(const ObjectiveModel& model, std::vector<WorkerState>& states,
                             int iters, const LineSearchConfig& ls, const CgConfig& cg,
                             int threads = 1) {
    parallel_for(states.size(), threads, [&](std::size_t k) {
        for (int i = 0; i < iters; ++i)
            states[k] = local_newton_step(model, std::move(states[k]), ls, cg);
    });
    Vector w_bar = average_models(states);
    for (auto& s : states) s.w = w_bar;
    return w_bar;
}

// Called after each sync (= one charged communication round). Return false to
// stop the run early.
using RoundObserver = std::function<bool(int round, int iters_this_round, const Vector& w_bar,
                                         std::span<const WorkerState> states)>;

// Algorithm: all workers start from w0; between consecutive syncs each runs L
// local Newton iterations on its own shard; at a sync the master averages the
// local models and broadcasts. One communication round is charged per sync
// (gather + broadcast together).
inline int run_localnewton(const ObjectiveModel& model, const Partition& partition,
                           const SyncSchedule& sched, const LineSearchConfig& ls,
                           const CgConfig& cg, const Vector& w0, int threads = 1,
                           const RoundObserver& observer = nullptr) {
    sched.validate();
    if (!w0.allFinite()) throw std::invalid_argument("run_localnewton: non-finite w0");
    std::vector<WorkerState> states = init_workers(partition, w0);
    const long rounds = sched.rounds();
    long done = 0;
    for (long r = 1; r <= rounds; ++r) {
        const int iters = static_cast<int>(
            std::min<long>(sched.local_iters_per_round, sched.total_local_iters - done));
        Vector w_bar = run_sync_block(model, states, iters, ls, cg, threads);
        done += iters;
        if (observer && !observer(static_cast<int>(r), iters, w_bar, states)) return static_cast<int>(r);
    }
    return static_cast<int>(rounds);
}

}  // namespace localnewton
