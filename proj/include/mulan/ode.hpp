#pragma once

// Exact likelihood through the probability-flow ODE: drift/diffusion
// coefficients, divergence estimation (exact via d reverse passes, or
// Hutchinson with one fixed Rademacher probe per trajectory), an adaptive
// Dormand-Prince 5(4) integrator with PI step control, the lifted bound with
// the latent KL, and the truncated-normal / importance-weighted
// dequantization bounds.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mulan/aux_latent.hpp"
#include "mulan/losses.hpp"
#include "mulan/model.hpp"

namespace mulan {

template <class R>
struct FlowCoeffsT {
    TensorT<R> f;   // drift scale: -1/2 sigmoid(gamma) * dgamma/dt
    TensorT<R> g2;  // squared diffusion scale: sigmoid(gamma) * dgamma/dt = -2f
};

// Shared product keeps g2 == -2f exact down to the last bit.
template <class R>
FlowCoeffsT<R> flow_coeffs(const GammaOutputT<R>& g) {
    TensorT<R> q = mul(sigmoid(g.gamma), g.dgamma_dt);
    return {mul(TensorT<R>::scalar(R(-0.5)), q), q};
}

// dx/dt = f * x - 1/2 g^2 * score
template <class R, class M>
TensorT<R> flow_field(const M& model, const TensorT<R>& x, const TensorT<R>& z, const GammaOutputT<R>& g) {
    auto fc = flow_coeffs(g);
    TensorT<R> s = model.score(x, z, g);
    return add(mul(fc.f, x), mul(mul(TensorT<R>::scalar(R(-0.5)), fc.g2), s));
}

enum class DivergenceMode { Exact, Hutchinson };

// Field value and its divergence at one state. Exact mode runs d reverse
// passes over one forward tape; Hutchinson contracts a single probe.
template <class R, class M>
std::pair<std::vector<double>, double> flow_and_divergence(const M& model, const std::vector<double>& xv,
                                                           const TensorT<R>& z, double t, DivergenceMode mode,
                                                           const std::vector<double>* probe) {
    const int d = static_cast<int>(xv.size());
    TapeT<R> tape;
    auto x = TensorT<R>::zeros({1, d});
    for (int j = 0; j < d; ++j) x.at(0, j) = static_cast<R>(xv[static_cast<size_t>(j)]);
    x = tape.leaf(x);
    auto g = model.gamma(z, TensorT<R>::full({1, 1}, static_cast<R>(t)));
    auto h = flow_field(model, x, z, g);

    std::vector<double> hv(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) hv[static_cast<size_t>(j)] = static_cast<double>(h.at(0, j));

    double div = 0.0;
    if (mode == DivergenceMode::Exact) {
        for (int j = 0; j < d; ++j) {
            auto cot = TensorT<R>::zeros({1, d});
            cot.at(0, j) = R(1);
            tape.backward_seed(h, cot);
            div += static_cast<double>(tape.grad(x).at(0, j));
        }
    } else {
        if (!probe || probe->size() != static_cast<size_t>(d))
            throw std::invalid_argument("divergence: hutchinson mode needs a probe of length d");
        auto cot = TensorT<R>::zeros({1, d});
        for (int j = 0; j < d; ++j) cot.at(0, j) = static_cast<R>((*probe)[static_cast<size_t>(j)]);
        tape.backward_seed(h, cot);
        auto gx = tape.grad(x);
        for (int j = 0; j < d; ++j) div += (*probe)[static_cast<size_t>(j)] * static_cast<double>(gx.at(0, j));
    }
    return {hv, div};
}

struct OdeSolution {
    std::vector<double> y;
    double logdet = 0.0;  // last component when the state is augmented
    int nfe = 0;
    int accepted = 0;
    int rejected = 0;
};

// Dormand-Prince 5(4) with FSAL, RMS error norm over atol + rtol*|y|, and a
// PI controller on the step size. Handles decreasing spans.
inline OdeSolution integrate_rk45(const std::function<std::vector<double>(double, const std::vector<double>&)>& f,
                                  std::vector<double> y0, double t0, double t1, double atol = 1e-5,
                                  double rtol = 1e-5) {
    static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static const double a21 = 1.0 / 5;
    static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                        a65 = -5103.0 / 18656;
    static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static const double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                        e4 = 125.0 / 192 - 393.0 / 640, e5 = -2187.0 / 6784 + 92097.0 / 339200,
                        e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;

    const size_t n = y0.size();
    const double dir = (t1 >= t0) ? 1.0 : -1.0;
    const double span = std::abs(t1 - t0);
    OdeSolution sol;
    sol.y = std::move(y0);

    std::vector<double> k1 = f(t0, sol.y);
    sol.nfe = 1;

    auto scaled_norm = [&](const std::vector<double>& e, const std::vector<double>& ya, const std::vector<double>& yb) {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double sc = atol + rtol * std::max(std::abs(ya[i]), std::abs(yb[i]));
            double q = e[i] / sc;
            acc += q * q;
        }
        return std::sqrt(acc / static_cast<double>(n));
    };

    // initial step from the magnitude of y and f
    double d0 = 0, d1 = 0;
    for (size_t i = 0; i < n; ++i) {
        double sc = atol + rtol * std::abs(sol.y[i]);
        d0 += (sol.y[i] / sc) * (sol.y[i] / sc);
        d1 += (k1[i] / sc) * (k1[i] / sc);
    }
    d0 = std::sqrt(d0 / n);
    d1 = std::sqrt(d1 / n);
    double h = (d1 > 1e-12) ? 0.01 * d0 / d1 : 1e-4;
    h = std::min(h, 0.5 * span);
    h = std::max(h, 1e-8);

    double t = t0;
    double err_prev = 1.0;
    std::vector<double> yt(n), ynew(n), yerr(n);
    std::vector<std::vector<double>> K(7, std::vector<double>(n));

    const double landing = 1e-14 * std::max(1.0, span);
    while (dir * (t1 - t) > landing) {
        h = std::min(h, std::abs(t1 - t));
        if (h < 1e-12) throw std::runtime_error("integrate_rk45: step size underflow");
        const double hd = dir * h;

        K[0] = k1;
        auto stage = [&](double frac, std::initializer_list<std::pair<int, double>> terms) {
            for (size_t i = 0; i < n; ++i) {
                double acc = sol.y[i];
                for (auto [idx, w] : terms) acc += hd * w * K[static_cast<size_t>(idx)][i];
                yt[i] = acc;
            }
            return f(t + frac * hd, yt);
        };
        K[1] = stage(c2, {{0, a21}});
        K[2] = stage(c3, {{0, a31}, {1, a32}});
        K[3] = stage(c4, {{0, a41}, {1, a42}, {2, a43}});
        K[4] = stage(c5, {{0, a51}, {1, a52}, {2, a53}, {3, a54}});
        K[5] = stage(1.0, {{0, a61}, {1, a62}, {2, a63}, {3, a64}, {4, a65}});
        for (size_t i = 0; i < n; ++i)
            ynew[i] = sol.y[i] + hd * (b1 * K[0][i] + b3 * K[2][i] + b4 * K[3][i] + b5 * K[4][i] + b6 * K[5][i]);
        K[6] = f(t + hd, ynew);
        sol.nfe += 6;

        for (size_t i = 0; i < n; ++i)
            yerr[i] = hd * (e1 * K[0][i] + e3 * K[2][i] + e4 * K[3][i] + e5 * K[4][i] + e6 * K[5][i] + e7 * K[6][i]);
        double err = scaled_norm(yerr, sol.y, ynew);
        if (!std::isfinite(err)) err = 1e6;  // non-finite stage: force a hard reject

        if (err <= 1.0) {
            t += hd;
            sol.y = ynew;
            k1 = K[6];  // FSAL
            ++sol.accepted;
            double grow = 0.9 * std::pow(std::max(err, 1e-10), -0.17) * std::pow(err_prev, 0.04);
            h *= std::clamp(grow, 0.2, 10.0);
            err_prev = std::max(err, 1e-10);
        } else {
            ++sol.rejected;
            h *= std::clamp(0.9 * std::pow(err, -0.2), 0.2, 0.9);
        }
    }
    if (!sol.y.empty()) sol.logdet = sol.y.back();
    return sol;
}

struct OdeLikelihoodOptions {
    int latent_samples = 1;
    DivergenceMode mode = DivergenceMode::Exact;
    double atol = 1e-5;
    double rtol = 1e-5;
    double t_eps = 1e-5;  // integration endpoints clamped to [t_eps, 1 - t_eps]
};

struct OdeLikelihoodResult {
    double logp_nats = 0;  // lower bound on log p(x0)
    double bpd = 0;        // -logp / (d ln 2)
    int nfe = 0;
    int accepted = 0;
    int rejected = 0;
};

// log p(x0) >= E_q(z|x0)[ log p(x1) - int tr grad(h) dt ] - KL(q(z|x0) || p(z)),
// integrating the augmented [x; logdet] state from data to noise.
template <class R, class M>
OdeLikelihoodResult log_likelihood_ode(const M& model, const TensorT<R>& x0, Rng& rng,
                                       const OdeLikelihoodOptions& opt = {}) {
    const int d = x0.shape[1];
    OdeLikelihoodResult out;
    double inner_acc = 0.0;
    double kl = 0.0;
    for (int k = 0; k < opt.latent_samples; ++k) {
        auto [z, kl_k] = detail::sample_posterior_latent(model, x0, rng);
        kl = kl_k;  // deterministic in x0

        std::vector<double> probe;
        if (opt.mode == DivergenceMode::Hutchinson) {
            probe.resize(static_cast<size_t>(d));
            for (auto& p : probe) p = rng.rademacher();
        }

        auto field = [&](double t, const std::vector<double>& y) {
            std::vector<double> xv(y.begin(), y.begin() + d);
            auto [hv, div] = flow_and_divergence(model, xv, z, t, opt.mode, probe.empty() ? nullptr : &probe);
            hv.push_back(div);
            return hv;
        };

        std::vector<double> y0(static_cast<size_t>(d) + 1, 0.0);
        for (int j = 0; j < d; ++j) y0[static_cast<size_t>(j)] = static_cast<double>(x0.at(0, j));
        auto sol = integrate_rk45(field, std::move(y0), opt.t_eps, 1.0 - opt.t_eps, opt.atol, opt.rtol);
        out.nfe += sol.nfe;
        out.accepted += sol.accepted;
        out.rejected += sol.rejected;

        double log_prior = 0.0;
        for (int j = 0; j < d; ++j) {
            double v = sol.y[static_cast<size_t>(j)];
            log_prior += -0.5 * v * v - 0.5 * std::log(2.0 * M_PI);
        }
        // instantaneous change of variables, integrating data -> noise:
        // log p(x(0)) = log p(x(1)) + int_0^1 tr grad(h) dt
        inner_acc += log_prior + sol.logdet;
    }
    out.logp_nats = inner_acc / opt.latent_samples - kl;
    out.bpd = -out.logp_nats / (d * std::log(2.0));
    return out;
}

// Probability-flow sampler: x1 ~ N(0,I) integrated from t=1 back to t=0.
template <class R, class M>
TensorT<R> ode_sample(const M& model, const TensorT<R>& z, int d, Rng& rng, double atol = 1e-5, double rtol = 1e-5,
                      double t_eps = 1e-5) {
    std::vector<double> y(static_cast<size_t>(d));
    for (auto& v : y) v = rng.normal();
    auto field = [&](double t, const std::vector<double>& yv) {
        auto x = TensorT<R>::zeros({1, d});
        for (int j = 0; j < d; ++j) x.at(0, j) = static_cast<R>(yv[static_cast<size_t>(j)]);
        auto g = model.gamma(z, TensorT<R>::full({1, 1}, static_cast<R>(t)));
        auto h = flow_field(model, x, z, g);
        std::vector<double> hv(static_cast<size_t>(d));
        for (int j = 0; j < d; ++j) hv[static_cast<size_t>(j)] = static_cast<double>(h.at(0, j));
        return hv;
    };
    auto sol = integrate_rk45(field, std::move(y), 1.0 - t_eps, t_eps, atol, rtol);
    auto out = TensorT<R>::zeros({1, d});
    for (int j = 0; j < d; ++j) out.at(0, j) = static_cast<R>(sol.y[static_cast<size_t>(j)]);
    return out;
}

// ---- dequantization ----

namespace dequant {

inline constexpr double kTau = 3.0;
inline constexpr double kZ = 0.9974613;
inline constexpr double kCorrectionPerDim = -0.01522;

inline double sigma_eps_ratio() { return std::exp(-0.5 * 13.3); }                 // sigma_eps / alpha_eps
inline double sigma_eps() { return std::sqrt(1.0 / (1.0 + std::exp(13.3))); }     // sqrt(sigmoid(-13.3))
inline double log_sigma_eps() { return 0.5 * (-13.3 + std::log1p(std::exp(-13.3))); }

// N(0,1) truncated to [-tau, tau] by rejection (acceptance ~ 0.9973 at tau=3)
inline double truncated_normal(Rng& rng, double tau = kTau) {
    for (;;) {
        double x = rng.normal();
        if (std::abs(x) <= tau) return x;
    }
}

}  // namespace dequant

struct DequantResult {
    double bound_nats = 0;  // lower bound on log P(x0)
    double bpd = 0;
    int nfe = 0;
};

// Truncated-normal dequantization bound, single dequantization draw:
// log P(x0) >= E[log p(x0 + (sigma_eps/alpha_eps) eps_hat)]
//              + d/2 (1 + log(2 pi sigma_eps^2)) - 0.01522 d
template <class R, class M>
DequantResult dequant_bound_tn(const M& model, const TensorT<R>& x0q, Rng& rng,
                               const OdeLikelihoodOptions& opt = {}) {
    const int d = x0q.shape[1];
    const double ratio = dequant::sigma_eps_ratio();
    auto y = x0q.clone();
    for (int j = 0; j < d; ++j) y.at(0, j) += static_cast<R>(ratio * dequant::truncated_normal(rng));
    auto lik = log_likelihood_ode(model, y, rng, opt);
    const double s2 = dequant::sigma_eps() * dequant::sigma_eps();
    DequantResult out;
    out.bound_nats = lik.logp_nats + 0.5 * d * (1.0 + std::log(2.0 * M_PI * s2)) + dequant::kCorrectionPerDim * d;
    out.bpd = -out.bound_nats / (d * std::log(2.0));
    out.nfe = lik.nfe;
    return out;
}

// Importance-weighted variant over K truncated-normal draws:
// log P(x0) >= log(1/K sum_k p(x0 + ratio eps_k) / q(eps_k)) + d log sigma_eps
template <class R, class M>
DequantResult dequant_bound_iw(const M& model, const TensorT<R>& x0q, int K, Rng& rng,
                               const OdeLikelihoodOptions& opt = {}) {
    if (K < 1) throw std::invalid_argument("dequant_bound_iw: K must be >= 1");
    const int d = x0q.shape[1];
    const double ratio = dequant::sigma_eps_ratio();
    std::vector<double> logw(static_cast<size_t>(K));
    DequantResult out;
    for (int k = 0; k < K; ++k) {
        std::vector<double> eps(static_cast<size_t>(d));
        for (auto& e : eps) e = dequant::truncated_normal(rng);
        auto y = x0q.clone();
        double sq = 0.0;
        for (int j = 0; j < d; ++j) {
            y.at(0, j) += static_cast<R>(ratio * eps[static_cast<size_t>(j)]);
            sq += eps[static_cast<size_t>(j)] * eps[static_cast<size_t>(j)];
        }
        auto lik = log_likelihood_ode(model, y, rng, opt);
        out.nfe += lik.nfe;
        double logq = -0.5 * sq - d * (0.5 * std::log(2.0 * M_PI) + std::log(dequant::kZ));
        logw[static_cast<size_t>(k)] = lik.logp_nats - logq;
    }
    double mx = logw[0];
    for (double v : logw) mx = std::max(mx, v);
    double acc = 0.0;
    for (double v : logw) acc += std::exp(v - mx);
    out.bound_nats = mx + std::log(acc / K) + d * dequant::log_sigma_eps();
    out.bpd = -out.bound_nats / (d * std::log(2.0));
    return out;
}

}  // namespace mulan
