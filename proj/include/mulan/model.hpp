#pragma once

// Parameter bundle joining encoder, schedule and denoiser. Anything that
// walks like this (gamma / denoise_raw / predict_x0 / score and the few cfg
// accessors) can stand in for it in the losses and the ODE — the test
// fixtures with closed-form scores do exactly that.

#include <string>
#include <vector>

#include "mulan/aux_latent.hpp"
#include "mulan/reverse_model.hpp"
#include "mulan/schedules.hpp"

namespace mulan {

struct ModelConfig {
    int d = 64;
    LatentConfig latent;
    ScheduleConfig schedule;
    int denoiser_hidden = 128;
    int temb_dim = 16;
    ParamKind param_kind = ParamKind::Eps;
};

template <class R>
struct DiffusionModelT {
    ModelConfig cfg;
    EncoderT<R> encoder;
    ScheduleVariantT<R> schedule;
    DenoiserT<R> denoiser;

    static DiffusionModelT create(ModelConfig cfg, uint64_t seed) {
        cfg.schedule.d = cfg.d;
        cfg.schedule.m = cfg.latent.m;
        DiffusionModelT m;
        m.cfg = cfg;
        Rng rng = Rng::keyed(seed, 0xabcd);
        if (cfg.latent.kind != LatentKind::None) m.encoder = EncoderT<R>(cfg.d, cfg.latent, rng);
        switch (cfg.schedule.family) {
            case ScheduleFamily::Linear: m.schedule = LinearScheduleT<R>(cfg.schedule); break;
            case ScheduleFamily::Polynomial: m.schedule = PolynomialScheduleT<R>(cfg.schedule, rng); break;
            case ScheduleFamily::Monotonic: m.schedule = MonotonicScheduleT<R>(cfg.schedule, rng); break;
        }
        m.denoiser = DenoiserT<R>(cfg.d, cfg.latent.m, cfg.denoiser_hidden, cfg.temb_dim, cfg.param_kind,
                                  cfg.schedule.gamma_min, cfg.schedule.gamma_max, rng);
        return m;
    }

    int data_dim() const { return cfg.d; }
    int latent_dim() const { return cfg.latent.m; }
    ParamKind param_kind() const { return cfg.param_kind; }

    std::vector<NamedParam<R>> named_params() {
        std::vector<NamedParam<R>> out;
        if (cfg.latent.kind != LatentKind::None) encoder.collect("encoder", out);
        collect_schedule_params(schedule, "schedule", out);
        denoiser.collect("denoiser", out);
        return out;
    }

    GammaOutputT<R> gamma(const TensorT<R>& z, const TensorT<R>& t) const { return eval_gamma(schedule, z, t); }

    TensorT<R> denoise_raw(const TensorT<R>& x_t, const TensorT<R>& z, const GammaOutputT<R>& g) const {
        return denoiser(x_t, z, g);
    }

    TensorT<R> predict_x0(const TensorT<R>& x_t, const TensorT<R>& z, const GammaOutputT<R>& g) const {
        return output_to_x0(x_t, denoise_raw(x_t, z, g), cfg.param_kind, g);
    }

    TensorT<R> score(const TensorT<R>& x_t, const TensorT<R>& z, const GammaOutputT<R>& g) const {
        return score_from_output(x_t, denoise_raw(x_t, z, g), cfg.param_kind, g);
    }

    // deep copy (buffers included)
    DiffusionModelT clone() const {
        DiffusionModelT out = *this;
        for (auto& p : out.named_params()) *p.tensor = p.tensor->clone();
        return out;
    }

    void attach(TapeT<R>& tape) { attach_params(tape, named_params()); }
    void detach() { detach_params(named_params()); }

    // z ~ p(z) for generation; empty tensor when there is no latent
    TensorT<R> sample_prior_z(Rng& rng) const {
        switch (cfg.latent.kind) {
            case LatentKind::None: return TensorT<R>{};
            case LatentKind::Gaussian: {
                auto z = TensorT<R>::zeros({1, cfg.latent.m});
                for (int64_t i = 0; i < z.size(); ++i) (*z.data)[static_cast<size_t>(i)] = static_cast<R>(rng.normal());
                return z;
            }
            case LatentKind::Subset: {
                auto z = sample_subset_prior<R>(cfg.latent.m, cfg.latent.k, rng);
                auto out = TensorT<R>::zeros({1, cfg.latent.m});
                for (int j = 0; j < cfg.latent.m; ++j) out.at(0, j) = z[j];
                return out;
            }
        }
        return TensorT<R>{};
    }
};

using DiffusionModel = DiffusionModelT<float>;

}  // namespace mulan
