#pragma once

// The four-term bound: reconstruction, diffusion (discrete and continuous
// forms), diffusion prior, and latent prior, reported in nats and bpd.
//
// Randomness contract for nelbo (fixed draw order, one stream):
//   1. latent posterior noise ([B,m] normals, or the subset sampler's draws)
//   2. per-example time: u ~ U[0,1) (continuous) or i ~ U{2..T} (discrete)
//   3. diffusion noise eps, [B,d] normals, row-major
//   4. reconstruction noise, [B,d] normals, row-major
// Evaluation paths key one stream per example index, which makes paired
// (common-random-number) comparisons across models exact.

#include <cmath>
#include <stdexcept>

#include "mulan/aux_latent.hpp"
#include "mulan/forward_process.hpp"
#include "mulan/model.hpp"
#include "mulan/reverse_model.hpp"

namespace mulan {

enum class LossMode { Continuous, Discrete };

struct NelboBreakdown {
    double recons_nats = 0, diffusion_nats = 0, prior_nats = 0, latent_nats = 0;
    double total_bpd = 0;
    double total_nats() const { return recons_nats + diffusion_nats + prior_nats + latent_nats; }
};

template <class R>
struct NelboResultT {
    TensorT<R> total;  // scalar batch mean, nats; on the tape when params are attached
    NelboBreakdown breakdown;
};

namespace detail {

template <class R>
TensorT<R> randn_tensor(std::vector<int> shape, Rng& rng) {
    auto t = TensorT<R>::zeros(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) (*t.data)[static_cast<size_t>(i)] = static_cast<R>(rng.normal());
    return t;
}

// q(z|x0) draw (values only, one example) and its KL against the prior
template <class R, class M>
std::pair<TensorT<R>, double> sample_posterior_latent(const M& model, const TensorT<R>& x0, Rng& rng) {
    if constexpr (requires { model.encoder; model.cfg; }) {
        switch (model.cfg.latent.kind) {
            case LatentKind::None: break;
            case LatentKind::Gaussian: {
                auto post = model.encoder.gaussian(x0);
                auto noise = randn_tensor<R>({1, model.cfg.latent.m}, rng);
                auto z = add(post.mu, mul(exp(mul(TensorT<R>::scalar(R(0.5)), post.log_var)), noise));
                return {z.detached(), static_cast<double>(kl_gaussian(post)[0])};
            }
            case LatentKind::Subset: {
                auto post = model.encoder.subset(x0);
                auto z = sample_subset(post, model.cfg.latent, rng);
                return {z.detached(), static_cast<double>(kl_subset_uniform(post.logits)[0])};
            }
        }
    }
    return {TensorT<R>{}, 0.0};
}

}  // namespace detail

// eps_hat implied by the network output under the model's parameterization
template <class R, class M>
TensorT<R> predict_eps(const M& model, const TensorT<R>& x_t, const TensorT<R>& z, const GammaOutputT<R>& g) {
    TensorT<R> raw = model.denoise_raw(x_t, z, g);
    auto [alpha, sigma] = alpha_sigma_from_gamma(g.gamma);
    switch (model.param_kind()) {
        case ParamKind::Eps: return raw;
        case ParamKind::X0: return x0_to_eps(x_t, raw, alpha, sigma);
        case ParamKind::V: return add(mul(sigma, x_t), mul(alpha, raw));  // eps = sigma x_t + alpha v
    }
    throw std::invalid_argument("predict_eps: unknown parameterization");
}

// KL(q(x_1|x_0,z) || N(0,I)) per example, [B,1]
template <class R, class M>
TensorT<R> loss_prior(const M& model, const TensorT<R>& x0, const TensorT<R>& z) {
    const int B = x0.shape[0];
    auto g1 = model.gamma(z, TensorT<R>::full({B, 1}, R(1)));
    auto [alpha1, sigma1] = alpha_sigma_from_gamma(g1.gamma);
    TensorT<R> var1 = square(sigma1);
    TensorT<R> terms = sub(sub(add(square(mul(alpha1, x0)), var1), TensorT<R>::scalar(R(1))), log(var1));
    return mul(TensorT<R>::scalar(R(0.5)), sum(terms, {-1}, true));
}

// -log p(x0 | x_{t(1)}, z) with a unit-variance Gaussian decoder around the
// prediction; single-sample estimate, [B,1]
template <class R, class M>
TensorT<R> loss_recons(const M& model, const TensorT<R>& x0, const TensorT<R>& z, int T, const TensorT<R>& eps) {
    const int B = x0.shape[0];
    const int d = x0.shape[1];
    auto g = model.gamma(z, TensorT<R>::full({B, 1}, static_cast<R>(1.0 / T)));
    auto mp = marginal_params(g);
    auto x_t1 = sample_marginal(x0, mp, eps);
    auto x0_hat = model.predict_x0(x_t1, z, g);
    TensorT<R> sq = sum(square(sub(x0, x0_hat)), {-1}, true);
    const R c = static_cast<R>(0.5 * d * std::log(2.0 * M_PI));
    return add(mul(TensorT<R>::scalar(R(0.5)), sq), TensorT<R>::scalar(c));
}

// pointwise continuous-time integrand at (t, eps):
//   1/2 (eps - eps_hat)^T diag(dgamma/dt) (eps - eps_hat), [B,1]
template <class R, class M>
TensorT<R> diffusion_integrand_continuous(const M& model, const TensorT<R>& x0, const TensorT<R>& z,
                                          const TensorT<R>& t, const TensorT<R>& eps) {
    auto g = model.gamma(z, t);
    auto mp = marginal_params(g);
    auto x_t = sample_marginal(x0, mp, eps);
    auto eps_hat = predict_eps(model, x_t, z, g);
    TensorT<R> resid = sub(eps, eps_hat);
    return mul(TensorT<R>::scalar(R(0.5)), sum(mul(square(resid), g.dgamma_dt), {-1}, true));
}

// exact per-step KL for step i of a T-grid:
//   1/2 (eps - eps_hat)^T diag(expm1(gamma(t) - gamma(s))) (eps - eps_hat), [B,1]
template <class R, class M>
TensorT<R> diffusion_step_kl(const M& model, const TensorT<R>& x0, const TensorT<R>& z, const TensorT<R>& t_s,
                             const TensorT<R>& t_t, const TensorT<R>& eps) {
    auto gs = model.gamma(z, t_s);
    auto gt = model.gamma(z, t_t);
    auto mp = marginal_params(gt);
    auto x_t = sample_marginal(x0, mp, eps);
    auto eps_hat = predict_eps(model, x_t, z, gt);
    TensorT<R> resid = sub(eps, eps_hat);
    TensorT<R> weight = expm1(sub(gt.gamma, gs.gamma));
    return mul(TensorT<R>::scalar(R(0.5)), sum(mul(square(resid), weight), {-1}, true));
}

// unbiased single-i estimator: (T-1) * KL_i with i ~ U{2..T} per example;
// stratified mode spreads the batch across the grid (one draw per stratum)
template <class R, class M>
TensorT<R> loss_diffusion_discrete(const M& model, const TensorT<R>& x0, const TensorT<R>& z, int T, Rng& rng,
                                   bool stratified = false) {
    if (T < 2) throw std::invalid_argument("loss_diffusion_discrete: T must be >= 2");
    const int B = x0.shape[0];
    auto ts = TensorT<R>::zeros({B, 1});
    auto tt = TensorT<R>::zeros({B, 1});
    for (int b = 0; b < B; ++b) {
        double u = rng.uniform();
        double frac = stratified ? (b + u) / B : u;
        int i = 2 + static_cast<int>(frac * (T - 1));
        i = std::min(i, T);
        ts.at(b, 0) = static_cast<R>(double(i - 1) / T);
        tt.at(b, 0) = static_cast<R>(double(i) / T);
    }
    auto eps = detail::randn_tensor<R>({B, x0.shape[1]}, rng);
    return mul(TensorT<R>::scalar(static_cast<R>(T - 1)), diffusion_step_kl(model, x0, z, ts, tt, eps));
}

// full sum over i = 2..T, fresh eps per step (deterministic given the rng)
template <class R, class M>
TensorT<R> loss_diffusion_discrete_full(const M& model, const TensorT<R>& x0, const TensorT<R>& z, int T, Rng& rng) {
    if (T < 2) throw std::invalid_argument("loss_diffusion_discrete_full: T must be >= 2");
    const int B = x0.shape[0];
    TensorT<R> acc = TensorT<R>::zeros({B, 1});
    for (int i = 2; i <= T; ++i) {
        auto ts = TensorT<R>::full({B, 1}, static_cast<R>(double(i - 1) / T));
        auto tt = TensorT<R>::full({B, 1}, static_cast<R>(double(i) / T));
        auto eps = detail::randn_tensor<R>({B, x0.shape[1]}, rng);
        acc = add(acc, diffusion_step_kl(model, x0, z, ts, tt, eps));
    }
    return acc;
}

// single-t MC estimator of the continuous-time diffusion loss
template <class R, class M>
TensorT<R> loss_diffusion_continuous(const M& model, const TensorT<R>& x0, const TensorT<R>& z, Rng& rng,
                                     bool stratified = false) {
    const int B = x0.shape[0];
    auto t = TensorT<R>::zeros({B, 1});
    for (int b = 0; b < B; ++b) {
        double u = rng.uniform();
        t.at(b, 0) = static_cast<R>(stratified ? (b + u) / B : u);
    }
    auto eps = detail::randn_tensor<R>({B, x0.shape[1]}, rng);
    return diffusion_integrand_continuous(model, x0, z, t, eps);
}

struct NelboOptions {
    LossMode mode = LossMode::Continuous;
    int T = 128;              // grid for the discrete loss; also fixes t(1) for recons
    bool stratified_t = false;
};

template <class R, class M>
NelboResultT<R> nelbo(const M& model, const TensorT<R>& x0, const NelboOptions& opt, Rng& rng) {
    if (opt.T < 2) throw std::invalid_argument("nelbo: T must be >= 2");
    const int B = x0.shape[0];
    const int d = x0.shape[1];

    // 1. latent
    TensorT<R> z{};
    TensorT<R> latent_kl = TensorT<R>::zeros({B, 1});
    if constexpr (requires { model.encoder; model.cfg; }) {
        switch (model.cfg.latent.kind) {
            case LatentKind::None: break;
            case LatentKind::Gaussian: {
                auto post = model.encoder.gaussian(x0);
                auto noise = detail::randn_tensor<R>({B, model.cfg.latent.m}, rng);
                z = add(post.mu, mul(exp(mul(TensorT<R>::scalar(R(0.5)), post.log_var)), noise));
                latent_kl = kl_gaussian(post);
                break;
            }
            case LatentKind::Subset: {
                auto post = model.encoder.subset(x0);
                z = sample_subset(post, model.cfg.latent, rng);
                latent_kl = kl_subset_uniform(post.logits);
                break;
            }
        }
    }

    // 2.-3. diffusion term
    TensorT<R> diffusion = (opt.mode == LossMode::Continuous)
                               ? loss_diffusion_continuous(model, x0, z, rng, opt.stratified_t)
                               : loss_diffusion_discrete(model, x0, z, opt.T, rng, opt.stratified_t);

    // 4. reconstruction at t(1) = 1/T
    auto eps_rec = detail::randn_tensor<R>({B, d}, rng);
    TensorT<R> recons = loss_recons(model, x0, z, opt.T, eps_rec);

    TensorT<R> prior = loss_prior(model, x0, z);

    TensorT<R> per_example = add(add(recons, diffusion), add(prior, latent_kl));
    NelboResultT<R> out;
    out.total = mean(per_example);
    out.breakdown.recons_nats = static_cast<double>(mean(recons.detached()).value());
    out.breakdown.diffusion_nats = static_cast<double>(mean(diffusion.detached()).value());
    out.breakdown.prior_nats = static_cast<double>(mean(prior.detached()).value());
    out.breakdown.latent_nats = static_cast<double>(mean(latent_kl.detached()).value());
    out.breakdown.total_bpd = out.breakdown.total_nats() / (d * std::log(2.0));
    return out;
}

inline double nats_to_bpd(double nats, int d) { return nats / (d * std::log(2.0)); }

}  // namespace mulan
