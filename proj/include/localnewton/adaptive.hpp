#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "localnewton/baselines.hpp"
#include "localnewton/localnewton.hpp"

namespace localnewton {

enum class Phase { local_newton, giant };

inline const char* phase_name(Phase p) {
    return p == Phase::local_newton ? "localnewton" : "giant";
}

// Master-side control state: L only ever decreases, and once the phase is
// giant it never reverts.
struct AdaptiveState {
    int L_current = 1;
    double f_prev = 0.0;
    double delta = 0.0;  // minimum decrement in the global loss
    Phase phase = Phase::local_newton;
};

// If the global loss did not decrease by at least delta: switch to GIANT at
// L = 1, otherwise decrement L. f_prev always becomes f_now.
inline AdaptiveState adapt(AdaptiveState state, double f_now) {
    if (!std::isfinite(f_now)) throw std::invalid_argument("adapt: non-finite loss");
    if (state.phase == Phase::local_newton && state.f_prev - f_now < state.delta) {
        if (state.L_current == 1)
            state.phase = Phase::giant;
        else
            state.L_current -= 1;
    }
    state.f_prev = f_now;
    return state;
}

// Called after every recorded block (one sync for LocalNewton phases, one
// GIANT iteration after the switch). rounds_used is the cumulative
// communication-round count. Return false to stop early.
using AdaptiveObserver = std::function<bool(int rounds_used, int local_iters, const Vector& w_bar,
                                            int L_used, Phase phase, double f_now)>;

// Alternates LocalNewton sync blocks at the current L with the adapt() rule;
// once the phase flips to giant, the remaining round budget runs GIANT seeded
// at the last averaged iterate (3 rounds per iteration).
inline int run_adaptive(const ObjectiveModel& model, const Partition& partition, int L0,
                        double delta, const LineSearchConfig& ls, const CgConfig& cg,
                        const Vector& w0, int budget_rounds, int threads = 1,
                        const AdaptiveObserver& observer = nullptr) {
    if (L0 < 1) throw std::invalid_argument("run_adaptive: L0 must be >= 1");
    if (!(delta > 0.0)) throw std::invalid_argument("run_adaptive: delta must be > 0");
    const std::vector<int> all = partition.union_indices();

    std::vector<WorkerState> states = init_workers(partition, w0);
    AdaptiveState ctl{L0, model.value(w0, all), delta, Phase::local_newton};
    Vector w_bar = w0;
    int rounds_used = 0;

    while (rounds_used < budget_rounds) {
        if (ctl.phase == Phase::local_newton) {
            const int L_used = ctl.L_current;
            w_bar = run_sync_block(model, states, L_used, ls, cg, threads);
            rounds_used += 1;
            const double f_now = model.value(w_bar, all);
            if (observer &&
                !observer(rounds_used, L_used, w_bar, L_used, Phase::local_newton, f_now))
                return rounds_used;
            ctl = adapt(ctl, f_now);
        } else {
            if (rounds_used + kGiantRoundsPerIteration > budget_rounds) break;
            GiantResult step = giant_iteration(model, partition, w_bar, ls, cg, threads);
            w_bar = std::move(step.w);
            rounds_used += kGiantRoundsPerIteration;
            const double f_now = model.value(w_bar, all);
            ctl.f_prev = f_now;
            if (observer && !observer(rounds_used, 1, w_bar, ctl.L_current, Phase::giant, f_now))
                return rounds_used;
        }
    }
    return rounds_used;
}

}  // namespace localnewton
