#pragma once

// Denoiser network and the three interchangeable output parameterizations
// (x0 / eps / v), score conversion, the conditional reverse transition, and
// ancestral sampling.

#include <stdexcept>

#include "mulan/forward_process.hpp"
#include "mulan/nn.hpp"
#include "mulan/schedules.hpp"
#include "mulan/tensor.hpp"

namespace mulan {

enum class ParamKind { X0, Eps, V };

// Sinusoidal embedding of the schedule-consistent time signal: the mean of
// gamma across dimensions, rescaled to [0,1].
template <class R>
TensorT<R> time_embedding(const TensorT<R>& gamma, double gamma_min, double gamma_max, int embed_dim) {
    const int half = embed_dim / 2;
    TensorT<R> u = mean(gamma, {-1}, true);  // [B,1]
    u = mul(sub(u, TensorT<R>::scalar(static_cast<R>(gamma_min))),
            TensorT<R>::scalar(static_cast<R>(1.0 / (gamma_max - gamma_min))));
    std::vector<TensorT<R>> cols;
    cols.reserve(static_cast<size_t>(2 * half));
    for (int j = 0; j < half; ++j) {
        R freq = static_cast<R>(M_PI * std::pow(2.0, j));
        TensorT<R> arg = mul(TensorT<R>::scalar(freq), u);
        cols.push_back(sin(arg));
        cols.push_back(cos(arg));
    }
    return concat_cols(cols);
}

// MLP denoiser conditioned by concatenation: [x_t || temb(gamma) || z].
template <class R>
struct DenoiserT {
    int d = 0, m = 0, temb_dim = 16;
    double gamma_min = -13.30, gamma_max = 5.0;
    ParamKind kind = ParamKind::Eps;
    MlpT<R> net;

    DenoiserT() = default;

    DenoiserT(int d_, int m_, int hidden, int temb_dim_, ParamKind kind_, double gmin, double gmax, Rng& rng)
        : d(d_), m(m_), temb_dim(temb_dim_), gamma_min(gmin), gamma_max(gmax), kind(kind_) {
        net = MlpT<R>(d + temb_dim + m, {hidden, hidden}, d, rng);
    }

    TensorT<R> operator()(const TensorT<R>& x_t, const TensorT<R>& z, const GammaOutputT<R>& g) const {
        TensorT<R> temb = time_embedding(g.gamma, gamma_min, gamma_max, temb_dim);
        std::vector<TensorT<R>> parts = {x_t, temb};
        if (m > 0) parts.push_back(z);
        return net(concat_cols(parts));
    }

    void collect(const std::string& prefix, std::vector<NamedParam<R>>& out) { net.collect(prefix, out); }
};

// x0 = (x_t - sigma * eps_hat) / alpha
template <class R>
TensorT<R> eps_to_x0(const TensorT<R>& x_t, const TensorT<R>& eps_hat, const TensorT<R>& alpha,
                     const TensorT<R>& sigma) {
    for (int64_t i = 0; i < alpha.size(); ++i)
        if (static_cast<double>((*alpha.data)[static_cast<size_t>(i)]) < 1e-20)
            throw std::runtime_error("eps_to_x0: alpha vanished");
    return div(sub(x_t, mul(sigma, eps_hat)), alpha);
}

// eps = (x_t - alpha * x0_hat) / sigma
template <class R>
TensorT<R> x0_to_eps(const TensorT<R>& x_t, const TensorT<R>& x0_hat, const TensorT<R>& alpha,
                     const TensorT<R>& sigma) {
    return div(sub(x_t, mul(alpha, x0_hat)), sigma);
}

// x0 = alpha * x_t - sigma * v_hat
template <class R>
TensorT<R> v_to_x0(const TensorT<R>& x_t, const TensorT<R>& v_hat, const TensorT<R>& alpha, const TensorT<R>& sigma) {
    return sub(mul(alpha, x_t), mul(sigma, v_hat));
}

template <class R>
TensorT<R> output_to_x0(const TensorT<R>& x_t, const TensorT<R>& raw, ParamKind kind, const GammaOutputT<R>& g) {
    auto [alpha, sigma] = alpha_sigma_from_gamma(g.gamma);
    switch (kind) {
        case ParamKind::X0: return raw;
        case ParamKind::Eps: return eps_to_x0(x_t, raw, alpha, sigma);
        case ParamKind::V: return v_to_x0(x_t, raw, alpha, sigma);
    }
    throw std::invalid_argument("output_to_x0: unknown parameterization");
}

// Score s_theta(x_t, z, t):
//   eps kind: -eps_hat / sigma
//   v kind:   -x_t - exp(-gamma/2) * v_hat
//   x0 kind:  converted to eps first
template <class R>
TensorT<R> score_from_output(const TensorT<R>& x_t, const TensorT<R>& raw, ParamKind kind, const GammaOutputT<R>& g) {
    auto [alpha, sigma] = alpha_sigma_from_gamma(g.gamma);
    switch (kind) {
        case ParamKind::Eps: return neg(div(raw, sigma));
        case ParamKind::V:
            return sub(neg(x_t), mul(exp(mul(TensorT<R>::scalar(R(-0.5)), g.gamma)), raw));
        case ParamKind::X0: return neg(div(x0_to_eps(x_t, raw, alpha, sigma), sigma));
    }
    throw std::invalid_argument("score_from_output: unknown parameterization");
}

// p_theta(x_s | x_t, z): the q posterior with x0 replaced by the prediction.
// Same code path as the forward posterior, so the variances match exactly.
template <class R>
PosteriorParamsT<R> reverse_transition(const TensorT<R>& x_t, const TensorT<R>& x0_hat, const GammaOutputT<R>& gs,
                                       const GammaOutputT<R>& gt) {
    return posterior_params(x_t, x0_hat, gs, gt);
}

// Ancestral sampler: x_1 ~ N(0,I), then x_{s(i)} ~ p_theta(x_s | x_t, z) for
// i = T..2; the final step emits the transition mean without noise.
// Model requirements: gamma(z,t), predict_x0(x_t,z,g).
template <class R, class M>
TensorT<R> ancestral_sample(const M& model, const TensorT<R>& z, int d, int T, Rng& rng) {
    if (T < 2) throw std::invalid_argument("ancestral_sample: T must be >= 2");
    auto x = TensorT<R>::zeros({1, d});
    for (int j = 0; j < d; ++j) x.at(0, j) = static_cast<R>(rng.normal());
    for (int i = T; i >= 1; --i) {
        const double s = double(i - 1) / T;
        const double t = double(i) / T;
        auto gs = model.gamma(z, TensorT<R>::from({1, 1}, {static_cast<R>(s)}));
        auto gt = model.gamma(z, TensorT<R>::from({1, 1}, {static_cast<R>(t)}));
        auto x0_hat = model.predict_x0(x, z, gt);
        auto pp = reverse_transition(x, x0_hat, gs, gt);
        if (i == 1) {
            x = pp.mu;
        } else {
            auto next = TensorT<R>::zeros({1, d});
            for (int j = 0; j < d; ++j)
                next.at(0, j) = static_cast<R>(double(pp.mu.at(0, j)) +
                                               std::sqrt(double(pp.var.at(0, j))) * rng.normal());
            x = next;
        }
    }
    return x;
}

}  // namespace mulan
