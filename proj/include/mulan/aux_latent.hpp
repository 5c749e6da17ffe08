#pragma once

// Auxiliary latent z: Gaussian and k-hot subset posteriors q(z|x0), prior
// sampling, KL terms, and the Gumbel / Sum-of-Gamma top-k subset sampler
// with straight-through (identity) gradients.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "mulan/nn.hpp"
#include "mulan/rng.hpp"
#include "mulan/schedules.hpp"
#include "mulan/tensor.hpp"

namespace mulan {

enum class LatentKind { None, Gaussian, Subset };
enum class SubsetNoise { Gumbel, SumOfGamma };

struct LatentConfig {
    LatentKind kind = LatentKind::None;
    int m = 0;
    int k = 0;                 // subset size (Subset kind)
    double sog_tau = 1.0;      // SoG temperature
    int sog_s = 10;            // SoG summand count
    SubsetNoise noise = SubsetNoise::Gumbel;
};

template <class R>
struct GaussianPosteriorT {
    TensorT<R> mu;       // [B,m]
    TensorT<R> log_var;  // [B,m]
};

template <class R>
struct SubsetPosteriorT {
    TensorT<R> logits;  // [B,m]
    int k = 0;
};

// Encoder: 2-hidden-layer MLP of width 4m, swish; head emits 2m values
// (mu || log_var) for the Gaussian posterior or m logits for the subset one.
template <class R>
struct EncoderT {
    LatentConfig cfg;
    MlpT<R> net;

    EncoderT() = default;

    EncoderT(int d, const LatentConfig& c, Rng& rng) : cfg(c) {
        const int width = 4 * c.m;
        const int out = (c.kind == LatentKind::Gaussian) ? 2 * c.m : c.m;
        net = MlpT<R>(d, {width, width}, out, rng);
    }

    GaussianPosteriorT<R> gaussian(const TensorT<R>& x0) const {
        TensorT<R> h = net(x0);
        return {slice_cols(h, 0, cfg.m), slice_cols(h, cfg.m, cfg.m)};
    }

    SubsetPosteriorT<R> subset(const TensorT<R>& x0) const { return {net(x0), cfg.k}; }

    void collect(const std::string& prefix, std::vector<NamedParam<R>>& out) { net.collect(prefix, out); }
};

// KL(N(mu, diag(sigma^2)) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 1 - log sigma^2),
// one value per example ([B,1]).
template <class R>
TensorT<R> kl_gaussian(const GaussianPosteriorT<R>& post) {
    TensorT<R> var = exp(post.log_var);
    TensorT<R> terms = sub(sub(add(square(post.mu), var), TensorT<R>::scalar(R(1))), post.log_var);
    return mul(TensorT<R>::scalar(R(0.5)), sum(terms, {-1}, true));
}

// SoG(k, tau, s) = (tau/k) (sum_{i=1..s} Gamma(1/k, k/i) - log s)
inline double sog_sample(double tau, int s_terms, int k, Rng& rng) {
    double acc = 0.0;
    for (int i = 1; i <= s_terms; ++i) acc += rng.gamma(1.0 / k, double(k) / i);
    return tau / k * (acc - std::log(double(s_terms)));
}

template <class R>
TensorT<R> sog_noise(double tau, int s_terms, int k, std::vector<int> shape, Rng& rng) {
    if (k < 1 || s_terms < 1 || tau <= 0.0) throw std::invalid_argument("sog_noise: bad config");
    auto out = TensorT<R>::zeros(std::move(shape));
    for (int64_t i = 0; i < out.size(); ++i) (*out.data)[static_cast<size_t>(i)] = static_cast<R>(sog_sample(tau, s_terms, k, rng));
    return out;
}

inline double gumbel_sample(double tau, Rng& rng) {
    double u = rng.uniform();
    if (u < 0x1.0p-53) u = 0x1.0p-53;
    return -tau * std::log(-std::log(u));
}

// k-hot vector marking the k largest scores; ties break toward lower index.
inline std::vector<int> topk_indices(const std::vector<double>& scores, int k) {
    const int m = static_cast<int>(scores.size());
    if (k > m || k < 0) throw std::invalid_argument("topk: k out of range");
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)]; });
    std::vector<int> idx(order.begin(), order.begin() + k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

template <class R>
TensorT<R> topk_khot(const std::vector<double>& scores, int k) {
    auto idx = topk_indices(scores, k);
    auto z = TensorT<R>::zeros({static_cast<int>(scores.size())});
    for (int i : idx) (*z.data)[static_cast<size_t>(i)] = R(1);
    return z;
}

// Sampled k-hot rows for a batch of logits. Values come from perturbed top-k;
// the backward pass treats dz/dtheta as the identity (straight-through).
template <class R>
TensorT<R> sample_subset(const SubsetPosteriorT<R>& post, const LatentConfig& cfg, Rng& rng) {
    const int B = post.logits.shape[0];
    const int m = post.logits.shape[1];
    auto khot = TensorT<R>::zeros({B, m});
    for (int b = 0; b < B; ++b) {
        std::vector<double> scores(static_cast<size_t>(m));
        for (int j = 0; j < m; ++j) {
            double noise = (cfg.noise == SubsetNoise::Gumbel) ? gumbel_sample(cfg.sog_tau, rng)
                                                              : sog_sample(cfg.sog_tau, cfg.sog_s, post.k, rng);
            scores[static_cast<size_t>(j)] = double(post.logits.at(b, j)) + noise;
        }
        auto idx = topk_indices(scores, post.k);
        for (int j : idx) khot.at(b, j) = R(1);
    }

    TensorT<R> theta = post.logits;
    auto back = [theta](const TensorT<R>& g, TapeT<R>& tp) {
        if (theta.tracked()) tp.accumulate(theta.node, g);
    };
    return detail::make_op<R>("subset_straight_through", khot.shape, std::move(*khot.data), {&post.logits},
                              std::move(back));
}

// Uniform random k-subset (theta = 0 prior).
template <class R>
TensorT<R> sample_subset_prior(int m, int k, Rng& rng) {
    std::vector<double> scores(static_cast<size_t>(m));
    for (auto& s : scores) s = gumbel_sample(1.0, rng);
    return topk_khot<R>(scores, k);
}

// Exact weighted-reservoir subset probability: sum over all k! orderings of
// the subset of the sequential sampling probabilities. Factorial enumeration,
// guarded to small m.
inline double subset_prob_oracle(const std::vector<int>& khot, const std::vector<double>& w) {
    const int m = static_cast<int>(w.size());
    if (m > 10) throw std::invalid_argument("subset_prob_oracle: m too large for enumeration");
    double Z = 0.0;
    for (double x : w) {
        if (x <= 0.0) throw std::invalid_argument("subset_prob_oracle: weights must be positive");
        Z += x;
    }
    std::vector<int> idx;
    for (int i = 0; i < m; ++i)
        if (khot[static_cast<size_t>(i)]) idx.push_back(i);
    std::sort(idx.begin(), idx.end());
    double total = 0.0;
    do {
        double rem = Z, p = 1.0;
        for (int i : idx) {
            p *= w[static_cast<size_t>(i)] / rem;
            rem -= w[static_cast<size_t>(i)];
        }
        total += p;
    } while (std::next_permutation(idx.begin(), idx.end()));
    return total;
}

// Categorical surrogate KL for the k-hot posterior against the uniform prior:
// sum_i p_i (log p_i + log m) with p = softmax(theta), reported per example
// ([B,1]). Nonnegative; zero exactly at theta = const.
template <class R>
TensorT<R> kl_subset_uniform(const TensorT<R>& theta) {
    const int B = theta.shape[0];
    const int m = theta.shape[1];
    // row max as an untracked shift; softmax is invariant to it
    auto shift = TensorT<R>::zeros({B, 1});
    for (int b = 0; b < B; ++b) {
        R mx = theta.at(b, 0);
        for (int j = 1; j < m; ++j) mx = std::max(mx, theta.at(b, j));
        shift.at(b, 0) = mx;
    }
    TensorT<R> centered = sub(theta, detail::expand_cols(shift, m));
    TensorT<R> e = exp(centered);
    TensorT<R> denom = sum(e, {-1}, true);
    TensorT<R> p = div(e, detail::expand_cols(denom, m));
    TensorT<R> logp = sub(centered, detail::expand_cols(log(denom), m));
    TensorT<R> terms = mul(p, add(logp, TensorT<R>::scalar(static_cast<R>(std::log(double(m))))));
    return sum(terms, {-1}, true);
}

}  // namespace mulan
