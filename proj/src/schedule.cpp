#include "shadowlift/schedule.hpp"

#include <cmath>

#include "shadowlift/error.hpp"

namespace shadowlift {

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > T) throw Error(Errc::out_of_range, "time step " + std::to_string(t) + " outside [1, T]");
    return betas[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    if (t < 1 || t > T) throw Error(Errc::out_of_range, "time step " + std::to_string(t) + " outside [1, T]");
    return alpha_bars[t - 1];
}

NoiseSchedule make_noise_schedule(int T, double beta_start, double beta_end, ScheduleKind kind) {
    if (T < 1) throw Error(Errc::invalid_range, "schedule needs T >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw Error(Errc::invalid_range, "schedule needs 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.kind = kind;
    s.betas.resize(T);
    s.alpha_bars.resize(T);
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
        s.betas[i] = beta_start + (beta_end - beta_start) * frac;
        prod *= 1.0 - s.betas[i];
        s.alpha_bars[i] = prod;
    }
    return s;
}

Tensor forward_noise(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& sched) {
    require_same_shape(z, eps, "forward_noise");
    if (t < 1 || t > sched.T) throw Error(Errc::out_of_range, "time step " + std::to_string(t) + " outside [1, T]");
    const double ab = sched.alpha_bar(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor out(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = a * z[i] + b * eps[i];
    return out;
}

DDIMPlan make_ddim_plan(const NoiseSchedule& sched, int S, double eta) {
    if (S < 1 || S > sched.T)
        throw Error(Errc::out_of_range, "DDIM step count " + std::to_string(S) + " outside [1, T]");
    if (!(eta >= 0.0 && eta <= 1.0)) throw Error(Errc::invalid_range, "eta must lie in [0, 1]");
    DDIMPlan plan;
    plan.eta = eta;
    plan.taus.resize(S);
    plan.sigmas.resize(S);
    for (int j = 0; j < S; ++j) {
        const long back = static_cast<long>(S - 1 - j) * sched.T / S;
        plan.taus[j] = sched.T - static_cast<int>(back);
    }
    for (int j = 0; j < S; ++j) {
        const double ab = sched.alpha_bar(plan.taus[j]);
        const double ab_prev = sched.alpha_bar(plan.previous_tau(j));
        plan.sigmas[j] = eta == 0.0 ? 0.0
                                    : eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
    }
    return plan;
}

Tensor ddim_step(const Tensor& z_tau, const Tensor& z_hat, int step_index, const DDIMPlan& plan,
                 const NoiseSchedule& sched, const Tensor& noise) {
    if (step_index < 0 || step_index >= plan.steps())
        throw Error(Errc::out_of_range, "DDIM step index " + std::to_string(step_index) + " out of range");
    require_same_shape(z_tau, z_hat, "ddim_step");
    const double sigma = plan.sigmas[step_index];
    if (sigma > 0.0) require_same_shape(z_tau, noise, "ddim_step noise");
    const double ab = sched.alpha_bar(plan.taus[step_index]);
    const double ab_prev = sched.alpha_bar(plan.previous_tau(step_index));
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    const double sa_prev = std::sqrt(ab_prev);
    Tensor out(z_tau.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double eps_hat = (z_tau[i] - sa * z_hat[i]) / sb;
        out[i] = sa_prev * z_hat[i] + dir * eps_hat + (sigma > 0.0 ? sigma * noise[i] : 0.0);
    }
    return out;
}

Tensor sample(const PredictCleanFn& predict_clean, const Tensor& z_cond, const DDIMPlan& plan,
              const NoiseSchedule& sched, std::uint64_t rng_seed) {
    Rng rng(rng_seed);
    Tensor z = randn(z_cond.shape(), rng);
    const Tensor no_noise;
    for (int j = plan.steps() - 1; j >= 0; --j) {
        Tensor z_hat = predict_clean(z, z_cond, plan.taus[j]);
        if (plan.sigmas[j] > 0.0) {
            Tensor noise = randn(z.shape(), rng);
            z = ddim_step(z, z_hat, j, plan, sched, noise);
        } else {
            z = ddim_step(z, z_hat, j, plan, sched, no_noise);
        }
    }
    return z;
}

}  // namespace shadowlift
