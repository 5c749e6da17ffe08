#pragma once

// Shared fixtures for the test suites: tensors filled from a seeded stream,
// a pluggable model whose network is a closed-form function, and a midpoint
// quadrature of the continuous diffusion loss.

#include <functional>
#include <vector>

#include "mulan/losses.hpp"
#include "mulan/model.hpp"
#include "mulan/rng.hpp"

namespace mulan::testutil {

template <class R>
TensorT<R> randn(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    auto t = TensorT<R>::zeros(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) (*t.data)[static_cast<size_t>(i)] = static_cast<R>(rng.normal() * scale);
    return t;
}

// Stands in for DiffusionModelT wherever the losses/ODE only need the model
// concept; the "network" is an arbitrary function of (x_t, z, gamma).
template <class R>
struct FixtureModelT {
    int d = 0;
    ParamKind kind = ParamKind::X0;
    ScheduleVariantT<R> schedule;
    std::function<TensorT<R>(const TensorT<R>&, const TensorT<R>&, const GammaOutputT<R>&)> raw;

    int data_dim() const { return d; }
    int latent_dim() const { return 0; }
    ParamKind param_kind() const { return kind; }
    GammaOutputT<R> gamma(const TensorT<R>& z, const TensorT<R>& t) const { return eval_gamma(schedule, z, t); }
    TensorT<R> denoise_raw(const TensorT<R>& x_t, const TensorT<R>& z, const GammaOutputT<R>& g) const {
        return raw(x_t, z, g);
    }
    TensorT<R> predict_x0(const TensorT<R>& x_t, const TensorT<R>& z, const GammaOutputT<R>& g) const {
        return output_to_x0(x_t, raw(x_t, z, g), kind, g);
    }
    TensorT<R> score(const TensorT<R>& x_t, const TensorT<R>& z, const GammaOutputT<R>& g) const {
        return score_from_output(x_t, raw(x_t, z, g), kind, g);
    }
};

// n-point midpoint rule over t of the pointwise continuous integrand.
// eps only matters for models whose prediction depends on x_t.
template <class R, class M>
double quadrature_continuous_loss(const M& model, const TensorT<R>& x0, const TensorT<R>& z, int n,
                                  const TensorT<R>& eps) {
    double acc = 0.0;
    const int B = x0.shape[0];
    for (int j = 0; j < n; ++j) {
        double t = (j + 0.5) / n;
        auto tt = TensorT<R>::full({B, 1}, static_cast<R>(t));
        auto v = diffusion_integrand_continuous(model, x0, z, tt, eps);
        acc += static_cast<double>(mean(v.detached()).value()) / n;
    }
    return acc;
}

// x0_hat = x0* - c(gamma) with a dense mixing matrix: bounded, smooth, and a
// non-conservative field over multivariate schedules. Used to probe the
// line-integral (non-)invariance with zero Monte Carlo noise.
template <class R>
FixtureModelT<R> offset_fixture(int d, const ScheduleVariantT<R>& schedule, const TensorT<R>& x0_star, uint64_t seed,
                                double amp = 0.4) {
    FixtureModelT<R> m;
    m.d = d;
    m.kind = ParamKind::X0;
    m.schedule = schedule;
    Rng rng(seed, 77);
    auto W = randn<R>({d, d}, rng, 1.0 / std::sqrt(double(d)));
    TensorT<R> x0c = x0_star.clone();
    m.raw = [x0c, W, amp](const TensorT<R>&, const TensorT<R>&, const GammaOutputT<R>& g) {
        auto u = mul(TensorT<R>::scalar(R(0.2)), g.gamma);
        auto c = mul(TensorT<R>::scalar(static_cast<R>(amp)), sigmoid(matmul(u, W)));
        return sub(x0c, c);
    };
    return m;
}

}  // namespace mulan::testutil
