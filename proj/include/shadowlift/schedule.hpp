#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "shadowlift/tensor.hpp"

namespace shadowlift {

enum class ScheduleKind { linear };

// Diffusion time steps are 1-based (t in [1, T]) throughout the API.
// Storage is 0-based: betas[t-1] and alpha_bars[t-1] belong to step t.
struct NoiseSchedule {
    int T = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    ScheduleKind kind = ScheduleKind::linear;
    std::vector<double> betas;
    std::vector<double> alpha_bars;

    double beta(int t) const;
    // alpha_bar(0) is the virtual step before t = 1 and equals exactly 1.
    double alpha_bar(int t) const;
};

NoiseSchedule make_noise_schedule(int T, double beta_start, double beta_end,
                                  ScheduleKind kind = ScheduleKind::linear);

// sqrt(abar_t) * z + sqrt(1 - abar_t) * eps
Tensor forward_noise(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& sched);

struct DDIMPlan {
    std::vector<int> taus;  // strictly increasing, last == T
    std::vector<double> sigmas;
    double eta = 0.0;

    int steps() const { return static_cast<int>(taus.size()); }
    // Time step preceding taus[index]; 0 (abar = 1) for the first entry.
    int previous_tau(int index) const { return index > 0 ? taus[index - 1] : 0; }
};

DDIMPlan make_ddim_plan(const NoiseSchedule& sched, int S, double eta);

// One reverse update from taus[step_index] to its predecessor, given the
// clean-sample prediction z_hat made at that step.
Tensor ddim_step(const Tensor& z_tau, const Tensor& z_hat, int step_index, const DDIMPlan& plan,
                 const NoiseSchedule& sched, const Tensor& noise);

// (z_t, z_cond, t) -> clean-sample prediction.
using PredictCleanFn = std::function<Tensor(const Tensor&, const Tensor&, int)>;

// Draws z_T ~ N(0, I) shaped like z_cond from rng_seed and runs the plan in
// decreasing tau. With eta == 0 the result depends only on the seed, z_cond
// and the predictor.
Tensor sample(const PredictCleanFn& predict_clean, const Tensor& z_cond, const DDIMPlan& plan,
              const NoiseSchedule& sched, std::uint64_t rng_seed);

}  // namespace shadowlift
