#pragma once

// Conditioned forward diffusion q(x_t | x_0, z): marginal sampling, the
// transition coefficients between two times, and the exact Gaussian
// posterior q(x_s | x_t, x_0, z). All quantities are elementwise over [B,d].

#include <stdexcept>
#include <utility>

#include "mulan/schedules.hpp"
#include "mulan/tensor.hpp"

namespace mulan {

template <class R>
struct MarginalParamsT {
    TensorT<R> alpha, sigma;  // [B,d], alpha^2 + sigma^2 = 1
};

template <class R>
struct PosteriorParamsT {
    TensorT<R> mu;   // [B,d]
    TensorT<R> var;  // [B,d], positive for 0 < s < t
};

template <class R>
MarginalParamsT<R> marginal_params(const GammaOutputT<R>& g) {
    auto [a, s] = alpha_sigma_from_gamma(g.gamma);
    return {a, s};
}

// x_t = alpha_t(z) * x0 + sigma_t(z) * eps; eps supplied by the caller.
template <class R>
TensorT<R> sample_marginal(const TensorT<R>& x0, const MarginalParamsT<R>& mp, const TensorT<R>& eps) {
    if (x0.shape != eps.shape) throw std::invalid_argument("sample_marginal: x0/eps shape mismatch");
    return add(mul(mp.alpha, x0), mul(mp.sigma, eps));
}

template <class R>
struct TransitionCoeffsT {
    TensorT<R> alpha_ts;  // alpha_t / alpha_s
    TensorT<R> var_ts;    // sigma_t^2 - alpha_ts^2 * sigma_s^2
};

// Transition kernel coefficients for s < t. The kernel variance is the
// product form sigma_t^2 - alpha_{t|s}^2 * sigma_s^2, which is the one that
// makes the marginals compose (alpha_{t|s}^2 sigma_s^2 + var_{t|s} = sigma_t^2).
template <class R>
TransitionCoeffsT<R> transition_coeffs(const GammaOutputT<R>& gs, const GammaOutputT<R>& gt) {
    auto [alpha_s, sigma_s] = alpha_sigma_from_gamma(gs.gamma);
    auto [alpha_t, sigma_t] = alpha_sigma_from_gamma(gt.gamma);
    TransitionCoeffsT<R> out;
    out.alpha_ts = div(alpha_t, alpha_s);
    out.var_ts = sub(square(sigma_t), mul(square(out.alpha_ts), square(sigma_s)));
    return out;
}

// q(x_s | x_t, x_0, z) for 0 < s < t:
//   mu  = (alpha_{t|s} sigma_s^2 / sigma_t^2) x_t + (var_{t|s} alpha_s / sigma_t^2) x_0
//   var = sigma_s^2 var_{t|s} / sigma_t^2
template <class R>
PosteriorParamsT<R> posterior_params(const TensorT<R>& x_t, const TensorT<R>& x0, const GammaOutputT<R>& gs,
                                     const GammaOutputT<R>& gt) {
    auto [alpha_s, sigma_s] = alpha_sigma_from_gamma(gs.gamma);
    auto [alpha_t, sigma_t] = alpha_sigma_from_gamma(gt.gamma);
    TensorT<R> var_s = square(sigma_s);
    TensorT<R> var_t = square(sigma_t);
    TensorT<R> alpha_ts = div(alpha_t, alpha_s);
    TensorT<R> var_ts = sub(var_t, mul(square(alpha_ts), var_s));
    PosteriorParamsT<R> out;
    out.mu = add(mul(div(mul(alpha_ts, var_s), var_t), x_t), mul(div(mul(var_ts, alpha_s), var_t), x0));
    out.var = div(mul(var_s, var_ts), var_t);
    return out;
}

}  // namespace mulan
