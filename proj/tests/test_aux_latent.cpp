#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "mulan/aux_latent.hpp"
#include "mulan/rng.hpp"

using namespace mulan;

TEST_CASE("encoder: zero weights give the standard-normal posterior") {
    LatentConfig cfg;
    cfg.kind = LatentKind::Gaussian;
    cfg.m = 4;
    Rng rng(1, 0);
    EncoderT<float> enc(8, cfg, rng);
    for (auto& layer : enc.net.layers) {
        for (auto& v : *layer.w.data) v = 0.0f;
        for (auto& v : *layer.b.data) v = 0.0f;
    }
    auto x0 = Tensor::full({2, 8}, 0.7f);
    auto post = enc.gaussian(x0);
    for (int64_t i = 0; i < post.mu.size(); ++i) {
        CHECK(post.mu[i] == 0.0f);
        CHECK(post.log_var[i] == 0.0f);
    }
    CHECK(kl_gaussian(post)[0] == doctest::Approx(0.0));

    // fixed seed -> identical posteriors
    Rng r2(1, 0);
    EncoderT<float> enc2(8, cfg, r2);
    Rng xs(3, 3);
    auto x = Tensor::zeros({1, 8});
    for (int64_t i = 0; i < x.size(); ++i) (*x.data)[i] = float(xs.normal());
    Rng r3(1, 0);
    EncoderT<float> enc3(8, cfg, r3);
    auto p2 = enc2.gaussian(x), p3 = enc3.gaussian(x);
    for (int64_t i = 0; i < p2.mu.size(); ++i) CHECK(p2.mu[i] == p3.mu[i]);
}

TEST_CASE("kl_gaussian closed form and MC oracle") {
    // mu=[1], var=1 -> 0.5
    GaussianPosteriorT<float> p1{Tensor::from({1, 1}, {1.0f}), Tensor::zeros({1, 1})};
    CHECK(kl_gaussian(p1)[0] == doctest::Approx(0.5));

    // random posterior vs E_q[log q - log p], 1e6 samples
    const int m = 3;
    Rng rng(9, 1);
    std::vector<float> mu(m), lv(m);
    for (int j = 0; j < m; ++j) {
        mu[j] = float(rng.normal() * 0.7);
        lv[j] = float(rng.normal() * 0.5);
    }
    GaussianPosteriorT<float> post{Tensor::from({1, m}, std::vector<float>(mu)),
                                   Tensor::from({1, m}, std::vector<float>(lv))};
    double closed = kl_gaussian(post)[0];

    const int N = 1000000;
    double acc = 0, acc2 = 0;
    for (int i = 0; i < N; ++i) {
        double term = 0;
        for (int j = 0; j < m; ++j) {
            double sd = std::exp(0.5 * lv[j]);
            double zv = mu[j] + sd * rng.normal();
            double logq = -0.5 * std::log(2 * M_PI) - 0.5 * lv[j] - 0.5 * (zv - mu[j]) * (zv - mu[j]) / (sd * sd);
            double logp = -0.5 * std::log(2 * M_PI) - 0.5 * zv * zv;
            term += logq - logp;
        }
        acc += term;
        acc2 += term * term;
    }
    double mc = acc / N;
    double se = std::sqrt((acc2 / N - mc * mc) / N);
    CHECK(std::abs(mc - closed) < 3 * se);

    // nonnegativity on random posteriors
    for (int t = 0; t < 50; ++t) {
        GaussianPosteriorT<float> pr{Tensor::from({1, 1}, {float(rng.normal())}),
                                     Tensor::from({1, 1}, {float(rng.normal())})};
        CHECK(kl_gaussian(pr)[0] >= 0.0f);
    }
}

TEST_CASE("sum-of-gamma noise statistics") {
    Rng rng(4, 7);
    // exact mean at k=1, s=10 is tau*(H_10 - ln 10)
    const int N = 1000000;
    double acc = 0;
    for (int i = 0; i < N; ++i) acc += sog_sample(1.0, 10, 1, rng);
    double h10 = 0;
    for (int i = 1; i <= 10; ++i) h10 += 1.0 / i;
    double exact = h10 - std::log(10.0);
    // Var of Gumbel ~ pi^2/6; SE ~ sqrt(1.64/N)
    CHECK(std::abs(acc / N - exact) < 4 * std::sqrt(1.7 / N));

    // s=100 approximates the Gumbel mean (Euler-Mascheroni) within 0.02
    double acc100 = 0;
    const int N2 = 200000;
    for (int i = 0; i < N2; ++i) acc100 += sog_sample(1.0, 100, 1, rng);
    CHECK(std::abs(acc100 / N2 - 0.5772157) < 0.02);

    // fixed seed reproducibility
    Rng a(11, 3), b(11, 3);
    for (int i = 0; i < 10; ++i) CHECK(sog_sample(0.7, 10, 2, a) == sog_sample(0.7, 10, 2, b));

    // batch form: shape, determinism, config validation
    Rng c(12, 3), d(12, 3);
    auto t1 = sog_noise<float>(1.0, 10, 2, {3, 4}, c);
    auto t2 = sog_noise<float>(1.0, 10, 2, {3, 4}, d);
    CHECK(t1.shape == std::vector<int>{3, 4});
    for (int64_t i = 0; i < t1.size(); ++i) CHECK(t1[i] == t2[i]);
    CHECK_THROWS(sog_noise<float>(-1.0, 10, 2, {2}, c));
    CHECK_THROWS(sog_noise<float>(1.0, 0, 2, {2}, c));
}

TEST_CASE("gamma sampler moments (Marsaglia-Tsang, both branches)") {
    Rng rng(5, 5);
    for (double shape : {0.5, 2.3}) {
        const double scale = 1.7;
        const int N = 200000;
        double acc = 0, acc2 = 0;
        for (int i = 0; i < N; ++i) {
            double g = rng.gamma(shape, scale);
            acc += g;
            acc2 += g * g;
        }
        double mean = acc / N, var = acc2 / N - mean * mean;
        double want_mean = shape * scale, want_var = shape * scale * scale;
        CHECK(std::abs(mean - want_mean) < 5 * std::sqrt(want_var / N));
        CHECK(std::abs(var - want_var) / want_var < 0.05);
    }
}

TEST_CASE("topk_khot") {
    auto z = topk_khot<float>({3, 1, 2}, 2);
    CHECK(z[0] == 1.0f);
    CHECK(z[1] == 0.0f);
    CHECK(z[2] == 1.0f);

    auto all = topk_khot<float>({1, 1, 1}, 3);
    for (int i = 0; i < 3; ++i) CHECK(all[i] == 1.0f);

    // tie at the boundary resolves to the lowest index
    auto tie = topk_khot<float>({5, 2, 2, 1}, 2);
    CHECK(tie[1] == 1.0f);
    CHECK(tie[2] == 0.0f);

    CHECK_THROWS(topk_khot<float>({1, 2}, 3));
}

TEST_CASE("subset_prob_oracle") {
    // uniform weights, m=4, k=2: each of the 6 subsets has probability 1/6
    std::vector<double> w4(4, 1.0);
    CHECK(subset_prob_oracle({1, 1, 0, 0}, w4) == doctest::Approx(1.0 / 6).epsilon(1e-12));
    CHECK(subset_prob_oracle({0, 1, 0, 1}, w4) == doctest::Approx(1.0 / 6).epsilon(1e-12));

    // k=1 reduces to w_i / Z
    std::vector<double> w3 = {1, 2, 3};
    CHECK(subset_prob_oracle({0, 0, 1}, w3) == doctest::Approx(0.5));

    // hand enumeration: m=3, w=[1,2,3], S={2,3}: (2/6)(3/4) + (3/6)(2/3)
    CHECK(subset_prob_oracle({0, 1, 1}, w3) == doctest::Approx(0.25 + 1.0 / 3).epsilon(1e-12));
}

TEST_CASE("gumbel top-k matches the exact subset law") {
    const int m = 5, k = 2;
    std::vector<double> theta = {0.5, -0.3, 0.1, 0.9, -0.7};
    std::vector<double> w(m);
    for (int i = 0; i < m; ++i) w[i] = std::exp(theta[i]);

    SubsetPosteriorT<float> post{Tensor::from({1, m}, {0.5f, -0.3f, 0.1f, 0.9f, -0.7f}), k};
    LatentConfig cfg;
    cfg.kind = LatentKind::Subset;
    cfg.m = m;
    cfg.k = k;
    cfg.noise = SubsetNoise::Gumbel;

    const int N = 100000;
    Rng rng(21, 4);
    std::map<int, int> counts;
    for (int i = 0; i < N; ++i) {
        auto z = sample_subset(post, cfg, rng);
        int key = 0;
        for (int j = 0; j < m; ++j)
            if (z.at(0, j) > 0.5f) key |= 1 << j;
        counts[key]++;
    }
    double tv = 0;
    for (int a = 0; a < m; ++a)
        for (int b = a + 1; b < m; ++b) {
            std::vector<int> khot(m, 0);
            khot[a] = khot[b] = 1;
            double p = subset_prob_oracle(khot, w);
            double phat = double(counts[(1 << a) | (1 << b)]) / N;
            tv += 0.5 * std::abs(p - phat);
        }
    CHECK(tv < 0.015);
}

TEST_CASE("straight-through gradient is the identity on the logits") {
    const int m = 4, k = 2;
    Tape tape;
    auto theta = tape.leaf(Tensor::from({1, m}, {0.2f, -0.1f, 0.7f, 0.0f}));
    SubsetPosteriorT<float> post{theta, k};
    LatentConfig cfg;
    cfg.kind = LatentKind::Subset;
    cfg.m = m;
    cfg.k = k;
    Rng rng(31, 0);
    auto z = sample_subset(post, cfg, rng);

    // L(z) = sum(c * z): dL/dz = c, so dL/dtheta must equal c exactly
    auto c = Tensor::from({1, m}, {1.5f, -2.0f, 0.5f, 3.0f});
    auto L = sum(mul(c, z));
    tape.backward(L);
    auto g = tape.grad(theta);
    for (int j = 0; j < m; ++j) CHECK(g.at(0, j) == c.at(0, j));
}

TEST_CASE("sog sampler: raising a logit never lowers its selection rate") {
    const int m = 5, k = 2;
    LatentConfig cfg;
    cfg.kind = LatentKind::Subset;
    cfg.m = m;
    cfg.k = k;
    cfg.noise = SubsetNoise::SumOfGamma;
    const int N = 100000;
    double prev = -1.0;
    for (double bump : {0.0, 0.5, 1.0}) {
        SubsetPosteriorT<float> post{Tensor::from({1, m}, {float(bump), 0.0f, 0.1f, -0.2f, 0.3f}), k};
        Rng rng(41, 0);  // common random numbers across settings
        int hits = 0;
        for (int i = 0; i < N; ++i) {
            auto z = sample_subset(post, cfg, rng);
            if (z.at(0, 0) > 0.5f) ++hits;
        }
        double rate = double(hits) / N;
        CHECK(rate >= prev - 0.005);
        prev = rate;
    }
}

TEST_CASE("zero-temperature limit is deterministic top-k") {
    const int m = 4, k = 2;
    LatentConfig cfg;
    cfg.kind = LatentKind::Subset;
    cfg.m = m;
    cfg.k = k;
    cfg.sog_tau = 1e-9;
    SubsetPosteriorT<float> post{Tensor::from({1, m}, {0.3f, 0.9f, -0.5f, 0.6f}), k};
    Rng rng(51, 0);
    for (auto noise : {SubsetNoise::Gumbel, SubsetNoise::SumOfGamma}) {
        cfg.noise = noise;
        auto z = sample_subset(post, cfg, rng);
        CHECK(z.at(0, 0) == 0.0f);
        CHECK(z.at(0, 1) == 1.0f);
        CHECK(z.at(0, 2) == 0.0f);
        CHECK(z.at(0, 3) == 1.0f);
    }
}

TEST_CASE("kl_subset_uniform") {
    // theta = 0 -> 0
    auto kl0 = kl_subset_uniform(Tensor::zeros({1, 6}));
    CHECK(kl0[0] == doctest::Approx(0.0).epsilon(1e-6));

    // near point mass on m=2 -> log 2
    auto klp = kl_subset_uniform(Tensor::from({1, 2}, {30.0f, -30.0f}));
    CHECK(klp[0] == doctest::Approx(std::log(2.0)).epsilon(1e-4));

    // random logits: nonnegative, equals the naive sum p log(m p)
    Rng rng(61, 2);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 5;
        std::vector<float> th(m);
        for (auto& v : th) v = float(rng.normal() * 2);
        auto kl = kl_subset_uniform(Tensor::from({1, m}, std::vector<float>(th)));
        double Z = 0;
        for (float v : th) Z += std::exp(double(v));
        double want = 0;
        for (float v : th) {
            double p = std::exp(double(v)) / Z;
            want += p * std::log(m * p);
        }
        CHECK(kl[0] == doctest::Approx(want).epsilon(1e-4));
        CHECK(kl[0] >= -1e-6f);
    }
}
