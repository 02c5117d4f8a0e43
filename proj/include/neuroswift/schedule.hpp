#pragma once

#include <cmath>
#include <vector>

#include "neuroswift/rng.hpp"
#include "neuroswift/tensor.hpp"

namespace neuroswift {

// Linear beta schedule over N timesteps. Arrays are 1-indexed by timestep;
// index 0 holds the conventions beta[0] = 0, alpha[0] = 1, alpha_bar[0] = 1,
// so tau = 0 is the exact identity path.
struct NoiseSchedule {
    std::size_t n = 0;
    std::vector<double> beta;       // [0..N]
    std::vector<double> alpha;      // alpha[t] = 1 - beta[t]
    std::vector<double> alpha_bar;  // prod_{u<=t} alpha[u], alpha_bar[0] = 1

    void check_t(std::size_t t, const char* what) const {
        if (t < 1 || t > n) {
            throw ConfigError(std::string(what) + ": timestep " + std::to_string(t) +
                              " outside [1," + std::to_string(n) + "]");
        }
    }
};

inline NoiseSchedule make_schedule(std::size_t n, double beta_start, double beta_end) {
    if (n < 1) throw ConfigError("make_schedule: N must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.n = n;
    s.beta.resize(n + 1, 0.0);
    s.alpha.resize(n + 1, 1.0);
    s.alpha_bar.resize(n + 1, 1.0);
    for (std::size_t t = 1; t <= n; ++t) {
        s.beta[t] = n == 1 ? beta_start
                           : beta_start + (beta_end - beta_start) *
                                              static_cast<double>(t - 1) /
                                              static_cast<double>(n - 1);
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    }
    return s;
}

// tau = N - floor(N * s) for structural strength s in (0,1].
inline std::size_t initial_step(std::size_t n, double strength) {
    if (!(strength > 0.0) || strength > 1.0) {
        throw ConfigError("initial_step: structural strength must be in (0,1]");
    }
    const double floored = std::floor(static_cast<double>(n) * strength);
    return n - static_cast<std::size_t>(floored);
}

// One-step noising with caller-provided noise:
// z_tau = sqrt(alpha_bar[tau]) z + sqrt(1 - alpha_bar[tau]) eps
inline Tensor add_noise_with(const Tensor& z, std::size_t tau, const NoiseSchedule& s,
                             const Tensor& eps) {
    if (tau > s.n) throw ConfigError("add_noise: tau out of range");
    if (tau == 0) return z;  // alpha_bar[0] = 1 exactly; identity, bit for bit
    require_same_dims(z, eps, "add_noise");
    const double a = std::sqrt(s.alpha_bar[tau]);
    const double b = std::sqrt(1.0 - s.alpha_bar[tau]);
    Tensor out(z.dims());
    for (std::size_t i = 0; i < z.numel(); ++i) out[i] = a * z[i] + b * eps[i];
    return out;
}

inline Tensor add_noise(const Tensor& z, std::size_t tau, const NoiseSchedule& s, RngStream& rng) {
    if (tau > s.n) throw ConfigError("add_noise: tau out of range");
    if (tau == 0) return z;
    return add_noise_with(z, tau, s, normal_draw(rng, z.dims()));
}

// Ancestral update:
// z_{t-1} = (z_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
//           + sqrt(beta_t) * eps        (eps suppressed when !add_noise_flag)
inline Tensor denoise_step(const Tensor& z_t, std::size_t t, const Tensor& eps_hat,
                           const NoiseSchedule& s, RngStream& rng, bool add_noise_flag) {
    s.check_t(t, "denoise_step");
    require_same_dims(z_t, eps_hat, "denoise_step");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha[t]);
    // beta = 0 is the degenerate no-op step even when alpha_bar is still 1
    const double coef = s.beta[t] == 0.0 ? 0.0 : s.beta[t] / std::sqrt(1.0 - s.alpha_bar[t]);
    Tensor out(z_t.dims());
    for (std::size_t i = 0; i < z_t.numel(); ++i) {
        out[i] = inv_sqrt_alpha * (z_t[i] - coef * eps_hat[i]);
    }
    if (add_noise_flag && s.beta[t] > 0.0) {
        const double sigma = std::sqrt(s.beta[t]);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += sigma * rng.next_normal();
    }
    return out;
}

}  // namespace neuroswift
