#pragma once

// Flat key=value run configuration: one file drives dataset, model and
// trainer. Unknown or duplicate keys are rejected; serialize/parse round-trip
// exactly (doubles printed with max precision).

#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mulan/aux_latent.hpp"
#include "mulan/data.hpp"
#include "mulan/losses.hpp"
#include "mulan/model.hpp"

namespace mulan {

struct RunConfig {
    // dataset
    std::string data_kind = "blobs";  // blobs | frequency | intensity | mask
    int height = 8, width = 8, channels = 1;
    int n_train = 4096, n_eval = 256;
    uint64_t data_seed = 1;
    // schedule
    std::string schedule = "polynomial";  // linear | polynomial | monotonic
    int schedule_scalar = 0;
    int schedule_hidden = 64;
    double gamma_min = -13.30, gamma_max = 5.0;
    // auxiliary latent
    std::string latent = "subset";  // none | gaussian | subset
    int latent_m = 50, latent_k = 15;
    double sog_tau = 1.0;
    int sog_s = 10;
    std::string subset_noise = "gumbel";  // gumbel | sog
    // denoiser
    int denoiser_hidden = 128, temb_dim = 16;
    std::string param_kind = "eps";  // eps | v | x0
    // trainer
    double lr = 2e-4, beta1 = 0.9, beta2 = 0.99, weight_decay = 0.01, ema_rate = 0.9999;
    int batch_size = 64;
    long steps = 5000;
    std::string loss_mode = "continuous";  // continuous | discrete
    int loss_T = 128;
    std::string time_sampling = "uniform";  // uniform | stratified
    double grad_clip = 0.0;                 // 0 disables clipping
    uint64_t seed = 0;
    int eval_interval = 500;
    int eval_n = 128;

    DatasetSpec dataset_spec() const {
        DatasetSpec s;
        if (data_kind == "blobs") s.kind = DatasetKind::Blobs;
        else if (data_kind == "frequency") s.kind = DatasetKind::Frequency;
        else if (data_kind == "intensity") s.kind = DatasetKind::Intensity;
        else if (data_kind == "mask") s.kind = DatasetKind::Mask;
        else throw std::invalid_argument("config: unknown data_kind '" + data_kind + "'");
        s.h = height;
        s.w = width;
        s.c = channels;
        s.n_train = n_train;
        s.n_eval = n_eval;
        s.seed = data_seed;
        return s;
    }

    ModelConfig model_config() const {
        ModelConfig m;
        m.d = height * width * channels;
        if (latent == "none") m.latent.kind = LatentKind::None;
        else if (latent == "gaussian") m.latent.kind = LatentKind::Gaussian;
        else if (latent == "subset") m.latent.kind = LatentKind::Subset;
        else throw std::invalid_argument("config: unknown latent '" + latent + "'");
        if (m.latent.kind != LatentKind::None) {
            m.latent.m = latent_m;
            m.latent.k = latent_k;
            m.latent.sog_tau = sog_tau;
            m.latent.sog_s = sog_s;
            if (subset_noise == "gumbel") m.latent.noise = SubsetNoise::Gumbel;
            else if (subset_noise == "sog") m.latent.noise = SubsetNoise::SumOfGamma;
            else throw std::invalid_argument("config: unknown subset_noise '" + subset_noise + "'");
        }
        if (schedule == "linear") m.schedule.family = ScheduleFamily::Linear;
        else if (schedule == "polynomial") m.schedule.family = ScheduleFamily::Polynomial;
        else if (schedule == "monotonic") m.schedule.family = ScheduleFamily::Monotonic;
        else throw std::invalid_argument("config: unknown schedule '" + schedule + "'");
        m.schedule.scalar = schedule_scalar != 0;
        m.schedule.hidden = schedule_hidden;
        m.schedule.gamma_min = gamma_min;
        m.schedule.gamma_max = gamma_max;
        m.denoiser_hidden = denoiser_hidden;
        m.temb_dim = temb_dim;
        if (param_kind == "eps") m.param_kind = ParamKind::Eps;
        else if (param_kind == "v") m.param_kind = ParamKind::V;
        else if (param_kind == "x0") m.param_kind = ParamKind::X0;
        else throw std::invalid_argument("config: unknown param_kind '" + param_kind + "'");
        return m;
    }

    LossMode loss_mode_enum() const {
        if (loss_mode == "continuous") return LossMode::Continuous;
        if (loss_mode == "discrete") return LossMode::Discrete;
        throw std::invalid_argument("config: unknown loss_mode '" + loss_mode + "'");
    }
};

namespace detail {

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace detail

inline std::string serialize(const RunConfig& c) {
    std::ostringstream os;
    auto s = [&](const char* k, const std::string& v) { os << k << "=" << v << "\n"; };
    auto i = [&](const char* k, long v) { os << k << "=" << v << "\n"; };
    auto u = [&](const char* k, uint64_t v) { os << k << "=" << v << "\n"; };
    auto f = [&](const char* k, double v) { os << k << "=" << detail::fmt_double(v) << "\n"; };
    s("data_kind", c.data_kind);
    i("height", c.height);
    i("width", c.width);
    i("channels", c.channels);
    i("n_train", c.n_train);
    i("n_eval", c.n_eval);
    u("data_seed", c.data_seed);
    s("schedule", c.schedule);
    i("schedule_scalar", c.schedule_scalar);
    i("schedule_hidden", c.schedule_hidden);
    f("gamma_min", c.gamma_min);
    f("gamma_max", c.gamma_max);
    s("latent", c.latent);
    i("latent_m", c.latent_m);
    i("latent_k", c.latent_k);
    f("sog_tau", c.sog_tau);
    i("sog_s", c.sog_s);
    s("subset_noise", c.subset_noise);
    i("denoiser_hidden", c.denoiser_hidden);
    i("temb_dim", c.temb_dim);
    s("param_kind", c.param_kind);
    f("lr", c.lr);
    f("beta1", c.beta1);
    f("beta2", c.beta2);
    f("weight_decay", c.weight_decay);
    f("ema_rate", c.ema_rate);
    i("batch_size", c.batch_size);
    i("steps", c.steps);
    s("loss_mode", c.loss_mode);
    i("loss_T", c.loss_T);
    s("time_sampling", c.time_sampling);
    f("grad_clip", c.grad_clip);
    u("seed", c.seed);
    i("eval_interval", c.eval_interval);
    i("eval_n", c.eval_n);
    return os.str();
}

inline RunConfig parse_config(const std::string& text) {
    RunConfig c;
    std::map<std::string, bool> seen;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        // trim
        auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not key=value");
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& s2) {
            auto b2 = s2.find_first_not_of(" \t");
            auto e2 = s2.find_last_not_of(" \t");
            s2 = (b2 == std::string::npos) ? "" : s2.substr(b2, e2 - b2 + 1);
        };
        trim(key);
        trim(val);
        if (seen.count(key)) throw std::invalid_argument("config: duplicate key '" + key + "'");
        seen[key] = true;

        auto as_long = [&] { return std::stol(val); };
        auto as_u64 = [&] { return std::stoull(val); };
        auto as_double = [&] { return std::stod(val); };
        if (key == "data_kind") c.data_kind = val;
        else if (key == "height") c.height = static_cast<int>(as_long());
        else if (key == "width") c.width = static_cast<int>(as_long());
        else if (key == "channels") c.channels = static_cast<int>(as_long());
        else if (key == "n_train") c.n_train = static_cast<int>(as_long());
        else if (key == "n_eval") c.n_eval = static_cast<int>(as_long());
        else if (key == "data_seed") c.data_seed = as_u64();
        else if (key == "schedule") c.schedule = val;
        else if (key == "schedule_scalar") c.schedule_scalar = static_cast<int>(as_long());
        else if (key == "schedule_hidden") c.schedule_hidden = static_cast<int>(as_long());
        else if (key == "gamma_min") c.gamma_min = as_double();
        else if (key == "gamma_max") c.gamma_max = as_double();
        else if (key == "latent") c.latent = val;
        else if (key == "latent_m") c.latent_m = static_cast<int>(as_long());
        else if (key == "latent_k") c.latent_k = static_cast<int>(as_long());
        else if (key == "sog_tau") c.sog_tau = as_double();
        else if (key == "sog_s") c.sog_s = static_cast<int>(as_long());
        else if (key == "subset_noise") c.subset_noise = val;
        else if (key == "denoiser_hidden") c.denoiser_hidden = static_cast<int>(as_long());
        else if (key == "temb_dim") c.temb_dim = static_cast<int>(as_long());
        else if (key == "param_kind") c.param_kind = val;
        else if (key == "lr") c.lr = as_double();
        else if (key == "beta1") c.beta1 = as_double();
        else if (key == "beta2") c.beta2 = as_double();
        else if (key == "weight_decay") c.weight_decay = as_double();
        else if (key == "ema_rate") c.ema_rate = as_double();
        else if (key == "batch_size") c.batch_size = static_cast<int>(as_long());
        else if (key == "steps") c.steps = as_long();
        else if (key == "loss_mode") c.loss_mode = val;
        else if (key == "loss_T") c.loss_T = static_cast<int>(as_long());
        else if (key == "time_sampling") c.time_sampling = val;
        else if (key == "grad_clip") c.grad_clip = as_double();
        else if (key == "seed") c.seed = as_u64();
        else if (key == "eval_interval") c.eval_interval = static_cast<int>(as_long());
        else if (key == "eval_n") c.eval_n = static_cast<int>(as_long());
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    return c;
}

}  // namespace mulan
