#pragma once

// gamma(z, t) parameterizations. Every family pins gamma(z,0)=gamma_min and
// gamma(z,1)=gamma_max exactly (shared normalization trick) and reports the
// elementwise time-derivative alongside the value. The derivative stays on
// the tape, so schedule parameters receive gradients through it.

#include <fstream>
#include <stdexcept>
#include <variant>
#include <vector>

#include "mulan/nn.hpp"
#include "mulan/tensor.hpp"

namespace mulan {

enum class ScheduleFamily { Linear, Polynomial, Monotonic };

struct ScheduleConfig {
    ScheduleFamily family = ScheduleFamily::Linear;
    double gamma_min = -13.30;
    double gamma_max = 5.0;
    int d = 1;       // data dimensionality (gamma output width)
    int m = 0;       // latent dimensionality (0 = unconditioned)
    int hidden = 64; // coefficient / monotonic net width
    bool scalar = false;  // one shared gamma path broadcast across dims
};

// Normalizers f(t)/f(1) reject coefficient collapse below this.
inline constexpr double kDegenerateEps = 1e-8;

template <class R>
struct GammaOutputT {
    TensorT<R> gamma;      // [B, d], in [gamma_min, gamma_max]
    TensorT<R> dgamma_dt;  // [B, d], nonnegative
};

using GammaOutput = GammaOutputT<float>;

namespace detail {

template <class R>
TensorT<R> ones_row(int n) {
    return TensorT<R>::full({1, n}, R(1));
}

// [B,1] column -> [B,n] via an outer product with a ones row.
template <class R>
TensorT<R> expand_cols(const TensorT<R>& col, int n) {
    return matmul(col, ones_row<R>(n));
}

template <class R>
void check_time_range(const TensorT<R>& t) {
    for (int64_t i = 0; i < t.size(); ++i) {
        double v = static_cast<double>((*t.data)[static_cast<size_t>(i)]);
        if (v < 0.0 || v > 1.0) throw std::invalid_argument("schedule: t outside [0,1]");
    }
}

// gamma_min + (gamma_max - gamma_min) * r, written as an affine blend so the
// endpoints r=0 and r=1 land on gamma_min / gamma_max bitwise.
template <class R>
TensorT<R> blend_gamma(const ScheduleConfig& cfg, const TensorT<R>& r) {
    TensorT<R> one_minus = sub(TensorT<R>::scalar(R(1)), r);
    return add(mul(TensorT<R>::scalar(static_cast<R>(cfg.gamma_min)), one_minus),
               mul(TensorT<R>::scalar(static_cast<R>(cfg.gamma_max)), r));
}

}  // namespace detail

template <class R>
struct LinearScheduleT {
    ScheduleConfig cfg;

    LinearScheduleT() = default;
    explicit LinearScheduleT(const ScheduleConfig& c) : cfg(c) {}

    GammaOutputT<R> eval(const TensorT<R>& /*z*/, const TensorT<R>& t) const {
        detail::check_time_range(t);
        const int B = t.shape[0];
        const R delta = static_cast<R>(cfg.gamma_max - cfg.gamma_min);
        TensorT<R> tb = detail::expand_cols(t, cfg.d);
        GammaOutputT<R> out;
        out.gamma = detail::blend_gamma(cfg, tb);
        out.dgamma_dt = TensorT<R>::full({B, cfg.d}, delta);
        return out;
    }

    void collect(const std::string&, std::vector<NamedParam<R>>&) {}
};

template <class R>
struct PolyCoeffsT {
    TensorT<R> a, b, d;  // one row per example (or plain vectors when fixed)
};

namespace detail {

// f(t) = a^2/5 t^5 + ab/2 t^4 + (b^2 + 2ad)/3 t^3 + bd t^2 + d^2 t,
// so f'(t) = (a t^2 + b t + d)^2. Elementwise over whatever shapes the
// coefficient and t tensors broadcast to.
template <class R>
TensorT<R> poly_f(const PolyCoeffsT<R>& c, const TensorT<R>& t1, const TensorT<R>& t2, const TensorT<R>& t3,
                  const TensorT<R>& t4, const TensorT<R>& t5) {
    TensorT<R> a2 = square(c.a);
    TensorT<R> b2 = square(c.b);
    TensorT<R> term5 = mul(TensorT<R>::scalar(R(1) / R(5)), mul(a2, t5));
    TensorT<R> term4 = mul(TensorT<R>::scalar(R(1) / R(2)), mul(mul(c.a, c.b), t4));
    TensorT<R> term3 = mul(TensorT<R>::scalar(R(1) / R(3)),
                           mul(add(b2, mul(TensorT<R>::scalar(R(2)), mul(c.a, c.d))), t3));
    TensorT<R> term2 = mul(mul(c.b, c.d), t2);
    TensorT<R> term1 = mul(square(c.d), t1);
    return add(add(add(term5, term4), add(term3, term2)), term1);
}

template <class R>
void check_normalizer(const TensorT<R>& f1, const char* family) {
    for (int64_t i = 0; i < f1.size(); ++i)
        if (static_cast<double>((*f1.data)[static_cast<size_t>(i)]) < kDegenerateEps)
            throw std::runtime_error(std::string(family) + ": degenerate schedule (normalizer below 1e-8)");
}

template <class R>
GammaOutputT<R> poly_gamma(const ScheduleConfig& cfg, const PolyCoeffsT<R>& c, const TensorT<R>& t, int d_out) {
    check_time_range(t);
    TensorT<R> tb = expand_cols(t, d_out);
    TensorT<R> t2 = square(tb);
    TensorT<R> t3 = mul(t2, tb);
    TensorT<R> t4 = square(t2);
    TensorT<R> t5 = mul(t4, tb);
    TensorT<R> f = poly_f(c, tb, t2, t3, t4, t5);
    TensorT<R> one = TensorT<R>::full(tb.shape, R(1));
    TensorT<R> f1 = poly_f(c, one, one, one, one, one);
    check_normalizer(f1, "polynomial schedule");

    const R delta = static_cast<R>(cfg.gamma_max - cfg.gamma_min);
    GammaOutputT<R> out;
    out.gamma = blend_gamma(cfg, div(f, f1));
    TensorT<R> q = add(add(mul(c.a, t2), mul(c.b, tb)), c.d);
    out.dgamma_dt = mul(TensorT<R>::scalar(delta), div(square(q), f1));
    return out;
}

}  // namespace detail

// Coefficients predicted from the auxiliary latent by a 2-hidden-layer MLP.
// Head bias starts at (a,b,d)=(0,0,1): the schedule begins near-linear.
template <class R>
struct PolynomialScheduleT {
    ScheduleConfig cfg;
    MlpT<R> net;

    PolynomialScheduleT() = default;

    PolynomialScheduleT(const ScheduleConfig& c, Rng& rng) : cfg(c) {
        const int width = c.scalar ? 1 : c.d;
        const int in = c.m > 0 ? c.m : 1;
        net = MlpT<R>(in, {c.hidden, c.hidden}, 3 * width, rng);
        auto& head = net.layers.back();
        for (int64_t i = 0; i < head.w.size(); ++i)
            (*head.w.data)[static_cast<size_t>(i)] = static_cast<R>(rng.normal() * 0.01);
        for (int j = 0; j < width; ++j) (*head.b.data)[static_cast<size_t>(2 * width + j)] = R(1);
    }

    PolyCoeffsT<R> coeffs(const TensorT<R>& z, int B) const {
        const int width = cfg.scalar ? 1 : cfg.d;
        TensorT<R> in = (cfg.m > 0) ? z : TensorT<R>::zeros({B, 1});
        TensorT<R> h = net(in);
        PolyCoeffsT<R> c;
        c.a = slice_cols(h, 0, width);
        c.b = slice_cols(h, width, width);
        c.d = slice_cols(h, 2 * width, width);
        if (cfg.scalar && cfg.d > 1) {
            c.a = detail::expand_cols(c.a, cfg.d);
            c.b = detail::expand_cols(c.b, cfg.d);
            c.d = detail::expand_cols(c.d, cfg.d);
        }
        return c;
    }

    GammaOutputT<R> eval(const TensorT<R>& z, const TensorT<R>& t) const {
        return detail::poly_gamma(cfg, coeffs(z, t.shape[0]), t, cfg.d);
    }

    void collect(const std::string& prefix, std::vector<NamedParam<R>>& out) { net.collect(prefix + ".coeff", out); }
};

// Polynomial schedule with pinned coefficients (no network, z-independent).
// Coefficient vectors of length d, or length 1 for a scalar path.
template <class R>
struct FixedPolynomialScheduleT {
    ScheduleConfig cfg;
    PolyCoeffsT<R> c;

    FixedPolynomialScheduleT() = default;

    FixedPolynomialScheduleT(const ScheduleConfig& cfg_, std::vector<R> a, std::vector<R> b, std::vector<R> d)
        : cfg(cfg_) {
        const int w = static_cast<int>(a.size());
        if (b.size() != a.size() || d.size() != a.size() || (w != 1 && w != cfg.d))
            throw std::invalid_argument("fixed polynomial schedule: coefficient lengths must be 1 or d");
        c.a = TensorT<R>::from({w}, std::move(a));
        c.b = TensorT<R>::from({w}, std::move(b));
        c.d = TensorT<R>::from({w}, std::move(d));
    }

    GammaOutputT<R> eval(const TensorT<R>&, const TensorT<R>& t) const {
        return detail::poly_gamma(cfg, c, t, cfg.d);
    }

    void collect(const std::string&, std::vector<NamedParam<R>>&) {}
};

// Monotonic network: three layers in t with softplus-constrained nonnegative
// weights, each hidden layer gated multiplicatively by softplus(linear(z)).
// The time-derivative is the hand-chained product of layer derivatives, so it
// is exact and differentiable with respect to the parameters.
template <class R>
struct MonotonicScheduleT {
    ScheduleConfig cfg;
    TensorT<R> w1, b1;  // [1,H], [H]
    TensorT<R> w2, b2;  // [H,H], [H]
    TensorT<R> w3, b3;  // [H,d], [d]
    LinearT<R> gate1, gate2;  // z -> H, present when m > 0

    MonotonicScheduleT() = default;

    MonotonicScheduleT(const ScheduleConfig& c, Rng& rng) : cfg(c) {
        const int H = c.hidden;
        auto init = [&](std::vector<int> s, double scale) {
            TensorT<R> t = TensorT<R>::zeros(std::move(s));
            for (int64_t i = 0; i < t.size(); ++i) (*t.data)[static_cast<size_t>(i)] = static_cast<R>(rng.normal() * scale);
            return t;
        };
        w1 = init({1, H}, 1.0);
        b1 = init({H}, 1.0);
        w2 = init({H, H}, 1.0 / std::sqrt(static_cast<double>(H)));
        b2 = init({H}, 0.5);
        w3 = init({H, cfg.d}, 1.0 / std::sqrt(static_cast<double>(H)));
        b3 = init({cfg.d}, 0.1);
        if (cfg.m > 0) {
            gate1 = LinearT<R>(cfg.m, H, rng, 0.1);
            gate2 = LinearT<R>(cfg.m, H, rng, 0.1);
            const R gb = static_cast<R>(std::log(std::exp(1.0) - 1.0));  // softplus(gb) = 1
            for (int64_t i = 0; i < gate1.b.size(); ++i) (*gate1.b.data)[static_cast<size_t>(i)] = gb;
            for (int64_t i = 0; i < gate2.b.size(); ++i) (*gate2.b.data)[static_cast<size_t>(i)] = gb;
        }
    }

    // raw value and d(raw)/dt, both [B,d]
    std::pair<TensorT<R>, TensorT<R>> raw(const TensorT<R>& z, const TensorT<R>& t) const {
        const int B = t.shape[0];
        TensorT<R> one = TensorT<R>::scalar(R(1));
        TensorT<R> sp1 = softplus(w1);
        TensorT<R> sp2 = softplus(w2);
        TensorT<R> sp3 = softplus(w3);

        TensorT<R> v1 = add(matmul(t, sp1), b1);
        TensorT<R> s1 = sigmoid(v1);
        TensorT<R> dv1 = matmul(TensorT<R>::full({B, 1}, R(1)), sp1);
        TensorT<R> h1 = s1, dh1 = mul(mul(s1, sub(one, s1)), dv1);
        if (cfg.m > 0) {
            TensorT<R> g1 = softplus(gate1(z));
            h1 = mul(h1, g1);
            dh1 = mul(dh1, g1);
        }

        TensorT<R> v2 = add(matmul(h1, sp2), b2);
        TensorT<R> s2 = sigmoid(v2);
        TensorT<R> dv2 = matmul(dh1, sp2);
        TensorT<R> h2 = s2, dh2 = mul(mul(s2, sub(one, s2)), dv2);
        if (cfg.m > 0) {
            TensorT<R> g2 = softplus(gate2(z));
            h2 = mul(h2, g2);
            dh2 = mul(dh2, g2);
        }

        return {add(matmul(h2, sp3), b3), matmul(dh2, sp3)};
    }

    GammaOutputT<R> eval(const TensorT<R>& z, const TensorT<R>& t) const {
        detail::check_time_range(t);
        const int B = t.shape[0];
        auto [graw, dgraw] = raw(z, t);
        TensorT<R> g0 = raw(z, TensorT<R>::zeros({B, 1})).first;
        TensorT<R> g1 = raw(z, TensorT<R>::full({B, 1}, R(1))).first;
        TensorT<R> denom = sub(g1, g0);
        detail::check_normalizer(denom, "monotonic schedule");
        const R delta = static_cast<R>(cfg.gamma_max - cfg.gamma_min);
        GammaOutputT<R> out;
        out.gamma = detail::blend_gamma(cfg, div(sub(graw, g0), denom));
        out.dgamma_dt = mul(TensorT<R>::scalar(delta), div(dgraw, denom));
        return out;
    }

    void collect(const std::string& prefix, std::vector<NamedParam<R>>& out) {
        out.push_back({prefix + ".w1", &w1});
        out.push_back({prefix + ".b1", &b1});
        out.push_back({prefix + ".w2", &w2});
        out.push_back({prefix + ".b2", &b2});
        out.push_back({prefix + ".w3", &w3});
        out.push_back({prefix + ".b3", &b3});
        if (cfg.m > 0) {
            gate1.collect(prefix + ".gate1", out);
            gate2.collect(prefix + ".gate2", out);
        }
    }
};

template <class R>
using ScheduleVariantT =
    std::variant<LinearScheduleT<R>, PolynomialScheduleT<R>, FixedPolynomialScheduleT<R>, MonotonicScheduleT<R>>;

template <class R>
GammaOutputT<R> eval_gamma(const ScheduleVariantT<R>& s, const TensorT<R>& z, const TensorT<R>& t) {
    return std::visit([&](const auto& fam) { return fam.eval(z, t); }, s);
}

template <class R>
void collect_schedule_params(ScheduleVariantT<R>& s, const std::string& prefix, std::vector<NamedParam<R>>& out) {
    std::visit([&](auto& fam) { fam.collect(prefix, out); }, s);
}

// alpha = sqrt(sigmoid(-gamma)), sigma = sqrt(sigmoid(gamma)); alpha^2 + sigma^2 = 1
template <class R>
std::pair<TensorT<R>, TensorT<R>> alpha_sigma_from_gamma(const TensorT<R>& gamma) {
    return {sqrt(sigmoid(neg(gamma))), sqrt(sigmoid(gamma))};
}

// nu = exp(-gamma) = alpha^2 / sigma^2
template <class R>
TensorT<R> snr_from_gamma(const TensorT<R>& gamma) {
    return exp(neg(gamma));
}

// Plot export: one row per (t, dim), nu averaged across the provided z draws.
inline void write_schedule_csv(const std::string& path, const std::vector<double>& ts,
                               const std::vector<std::vector<double>>& nu_mean) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_schedule_csv: cannot open " + path);
    f << "t,dim,nu\n";
    for (size_t ti = 0; ti < ts.size(); ++ti)
        for (size_t j = 0; j < nu_mean[ti].size(); ++j)
            f << ts[ti] << "," << j << "," << nu_mean[ti][j] << "\n";
}

}  // namespace mulan
