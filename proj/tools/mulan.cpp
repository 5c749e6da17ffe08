// Command-line surface: train, evaluate (VLB / ODE / dequantization),
// sample, plot schedules, and re-evaluate a frozen denoiser under a
// substituted noise schedule.
//
// Exit codes: 0 success, 2 usage error, 3 runtime failure.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mulan/config.hpp"
#include "mulan/ode.hpp"
#include "mulan/parallel.hpp"
#include "mulan/trainer.hpp"

using namespace mulan;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

struct LoadedModel {
    RunConfig cfg;
    DiffusionModel model;  // EMA weights installed
    long step = 0;
};

LoadedModel load_model(const std::string& ckpt_dir) {
    auto [step, config_text] = read_checkpoint_meta(ckpt_dir);
    LoadedModel out;
    out.cfg = parse_config(config_text);
    out.step = step;
    out.model = DiffusionModel::create(out.cfg.model_config(), out.cfg.seed);
    TrainerState st;
    init_trainer_state(out.model, st);
    load_checkpoint_tensors(ckpt_dir, out.model, st);
    // evaluation and sampling run on the EMA shadows
    auto params = out.model.named_params();
    for (size_t i = 0; i < params.size(); ++i) *params[i].tensor->data = *st.ema[i].data;
    return out;
}

TrainConfig train_config_of(const RunConfig& c) {
    TrainConfig t;
    t.lr = c.lr;
    t.beta1 = c.beta1;
    t.beta2 = c.beta2;
    t.weight_decay = c.weight_decay;
    t.ema_rate = c.ema_rate;
    t.batch_size = c.batch_size;
    t.steps = c.steps;
    t.loss_mode = c.loss_mode_enum();
    t.loss_T = c.loss_T;
    t.stratified_t = c.time_sampling == "stratified";
    t.grad_clip = c.grad_clip;
    t.seed = c.seed;
    t.eval_interval = c.eval_interval;
    t.eval_n = c.eval_n;
    return t;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, long seed_override) {
    RunConfig cfg = parse_config(read_file(config_path));
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    auto spec = cfg.dataset_spec();
    auto train_data = generate_train(spec);
    auto eval_data = generate_eval(spec);
    auto model = DiffusionModel::create(cfg.model_config(), cfg.seed);
    TrainerState st;
    init_trainer_state(model, st);
    auto result = train(model, st, train_data, eval_data, train_config_of(cfg), out_dir, serialize(cfg));
    std::cout << "trained " << cfg.steps << " steps; eval bpd " << result.init_eval_bpd << " -> "
              << result.final_eval_bpd << "\n";
    std::cout << "checkpoint: " << out_dir << "/checkpoint\n";
    return 0;
}

Tensor eval_row(const Tensor& data, int j) {
    auto x = Tensor::zeros({1, data.shape[1]});
    for (int c = 0; c < data.shape[1]; ++c) x.at(0, c) = data.at(j, c);
    return x;
}

Tensor quantize_row(const Tensor& x) {
    auto q = x.clone();
    for (int64_t i = 0; i < q.size(); ++i) {
        double k = std::round(((*q.data)[i] + 1.0) * 127.5);
        k = std::min(255.0, std::max(0.0, k));
        (*q.data)[i] = static_cast<float>(k / 127.5 - 1.0);
    }
    return q;
}

int cmd_eval(const std::string& ckpt, const std::string& mode, int T, const std::string& dequant_kind, int K, int n,
             const std::string& out_csv, long seed) {
    auto loaded = load_model(ckpt);
    auto data = generate_eval(loaded.cfg.dataset_spec());
    n = n > 0 ? std::min(n, data.shape[0]) : data.shape[0];
    const int d = data.shape[1];

    struct Row {
        double bpd;
        int nfe;
    };
    std::vector<Row> rows(static_cast<size_t>(n));
    std::string mode_name = mode;
    if (mode == "vlb") {
        parallel_for(n, env_thread_cap(), [&](int j) {
            Rng rng = Rng::keyed(static_cast<uint64_t>(seed), 0xe7a1, static_cast<uint64_t>(j));
            NelboOptions opt;
            opt.mode = LossMode::Discrete;
            opt.T = T;
            auto res = nelbo(loaded.model, eval_row(data, j), opt, rng);
            rows[static_cast<size_t>(j)] = {res.breakdown.total_bpd, 0};
        });
    } else if (mode == "ode") {
        if (dequant_kind != "none") mode_name = mode + "+" + dequant_kind;
        OdeLikelihoodOptions opt;
        opt.mode = d <= 64 ? DivergenceMode::Exact : DivergenceMode::Hutchinson;
        parallel_for(n, env_thread_cap(), [&](int j) {
            Rng rng = Rng::keyed(static_cast<uint64_t>(seed), 0x0de, static_cast<uint64_t>(j));
            auto x0 = eval_row(data, j);
            if (dequant_kind == "none") {
                auto res = log_likelihood_ode(loaded.model, x0, rng, opt);
                rows[static_cast<size_t>(j)] = {res.bpd, res.nfe};
            } else if (dequant_kind == "tn") {
                auto res = dequant_bound_tn(loaded.model, quantize_row(x0), rng, opt);
                rows[static_cast<size_t>(j)] = {res.bpd, res.nfe};
            } else if (dequant_kind == "iw") {
                auto res = dequant_bound_iw(loaded.model, quantize_row(x0), K, rng, opt);
                rows[static_cast<size_t>(j)] = {res.bpd, res.nfe};
            } else {
                throw std::runtime_error("unknown dequantization kind '" + dequant_kind + "'");
            }
        });
    } else {
        throw std::runtime_error("unknown eval mode '" + mode + "'");
    }

    double acc = 0, acc2 = 0;
    for (auto& r : rows) {
        acc += r.bpd;
        acc2 += r.bpd * r.bpd;
    }
    double mean = acc / n;
    double sem = std::sqrt(std::max(acc2 / n - mean * mean, 0.0) / n);
    std::cout << "bpd " << mean << " +- " << sem << " (" << mode_name << ", n=" << n << ")\n";

    if (!out_csv.empty()) {
        std::ofstream f(out_csv);
        if (!f) throw std::runtime_error("cannot open " + out_csv);
        f << "example_id,bpd,nfe,mode\n";
        for (int j = 0; j < n; ++j)
            f << j << "," << rows[static_cast<size_t>(j)].bpd << "," << rows[static_cast<size_t>(j)].nfe << ","
              << mode_name << "\n";
    }
    return 0;
}

int cmd_sample(const std::string& ckpt, int n, int T, bool use_ode, const std::string& out_path, long seed) {
    auto loaded = load_model(ckpt);
    const int d = loaded.cfg.model_config().d;
    auto out = Tensor::zeros({n, d});
    parallel_for(n, env_thread_cap(), [&](int i) {
        Rng rng = Rng::keyed(static_cast<uint64_t>(seed), 0x5a3b, static_cast<uint64_t>(i));
        auto z = loaded.model.sample_prior_z(rng);
        Tensor x = use_ode ? ode_sample(loaded.model, z, d, rng)
                           : ancestral_sample<float>(loaded.model, z, d, T, rng);
        for (int j = 0; j < d; ++j) out.at(i, j) = x.at(0, j);
    });
    write_container(out_path, out);
    std::cout << "wrote " << n << " samples to " << out_path << "\n";
    return 0;
}

int cmd_plot_schedule(const std::string& ckpt, int n_z, const std::string& out_prefix, long seed) {
    auto loaded = load_model(ckpt);
    const int d = loaded.cfg.model_config().d;
    const int m = loaded.cfg.model_config().latent.m;

    Tensor zbatch{};
    if (m > 0) {
        zbatch = Tensor::zeros({n_z, m});
        for (int i = 0; i < n_z; ++i) {
            Rng rng = Rng::keyed(static_cast<uint64_t>(seed), 0x9a3, static_cast<uint64_t>(i));
            auto z = loaded.model.sample_prior_z(rng);
            for (int j = 0; j < m; ++j) zbatch.at(i, j) = z.at(0, j);
        }
    }

    const int steps = 129;
    std::vector<double> ts(steps);
    std::vector<std::vector<double>> nu_mean(steps, std::vector<double>(d, 0.0));
    std::vector<std::vector<double>> nu_var(steps, std::vector<double>(d, 0.0));
    const int B = m > 0 ? n_z : 1;
    for (int i = 0; i < steps; ++i) {
        ts[static_cast<size_t>(i)] = double(i) / (steps - 1);
        auto t = Tensor::full({B, 1}, static_cast<float>(ts[static_cast<size_t>(i)]));
        auto g = loaded.model.gamma(zbatch, t);
        auto nu = snr_from_gamma(g.gamma);
        for (int j = 0; j < d; ++j) {
            double acc = 0, acc2 = 0;
            for (int b = 0; b < B; ++b) {
                double v = nu.at(b, j);
                acc += v;
                acc2 += v * v;
            }
            double meanv = acc / B;
            nu_mean[static_cast<size_t>(i)][static_cast<size_t>(j)] = meanv;
            nu_var[static_cast<size_t>(i)][static_cast<size_t>(j)] = std::max(acc2 / B - meanv * meanv, 0.0);
        }
    }

    write_schedule_csv(out_prefix + ".csv", ts, nu_mean);
    write_schedule_csv(out_prefix + "_var.csv", ts, nu_var);

    // log10 SNR polylines, one per dimension, plus the mean across-z variance
    std::ofstream svg(out_prefix + ".svg");
    if (!svg) throw std::runtime_error("cannot open " + out_prefix + ".svg");
    const int Wpx = 640, Hpx = 420, pad = 40;
    auto xpix = [&](double t) { return pad + t * (Wpx - 2 * pad); };
    double lo = 1e30, hi = -1e30;
    for (auto& row : nu_mean)
        for (double v : row) {
            double lv = std::log10(std::max(v, 1e-12));
            lo = std::min(lo, lv);
            hi = std::max(hi, lv);
        }
    if (hi <= lo) hi = lo + 1;
    auto ypix = [&](double v) {
        double lv = std::log10(std::max(v, 1e-12));
        return Hpx - pad - (lv - lo) / (hi - lo) * (Hpx - 2 * pad);
    };
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << Wpx << "' height='" << Hpx << "'>\n";
    svg << "<rect width='100%' height='100%' fill='white'/>\n";
    svg << "<text x='" << pad << "' y='20' font-size='13'>log10 SNR vs t (" << d
        << " dims, mean over z) and across-z variance (red)</text>\n";
    for (int j = 0; j < d; ++j) {
        svg << "<polyline fill='none' stroke='steelblue' stroke-width='1' points='";
        for (int i = 0; i < steps; ++i)
            svg << xpix(ts[static_cast<size_t>(i)]) << ","
                << ypix(nu_mean[static_cast<size_t>(i)][static_cast<size_t>(j)]) << " ";
        svg << "'/>\n";
    }
    svg << "<polyline fill='none' stroke='crimson' stroke-width='1.5' points='";
    for (int i = 0; i < steps; ++i) {
        double avg = 0;
        for (int j = 0; j < d; ++j) avg += nu_var[static_cast<size_t>(i)][static_cast<size_t>(j)];
        svg << xpix(ts[static_cast<size_t>(i)]) << "," << ypix(avg / d) << " ";
    }
    svg << "'/>\n</svg>\n";

    std::cout << "wrote " << out_prefix << ".csv, " << out_prefix << "_var.csv, " << out_prefix << ".svg\n";
    return 0;
}

int cmd_schedule_swap(const std::string& ckpt, const std::string& which, int T, int n, long seed) {
    auto loaded = load_model(ckpt);
    auto data = generate_eval(loaded.cfg.dataset_spec());
    n = n > 0 ? std::min(n, data.shape[0]) : data.shape[0];

    DiffusionModel swapped = loaded.model;  // shares encoder/denoiser buffers
    ScheduleConfig scfg = loaded.model.cfg.schedule;
    if (which == "original") {
        // no-op substitution
    } else if (which == "linear") {
        scfg.family = ScheduleFamily::Linear;
        swapped.schedule = LinearScheduleT<float>(scfg);
        swapped.cfg.schedule = scfg;
    } else if (which == "scalar") {
        // a fixed scalar polynomial path sharing the endpoints
        swapped.schedule = FixedPolynomialScheduleT<float>(scfg, {1.0f}, {-0.5f}, {0.8f});
    } else {
        throw std::runtime_error("unknown substitute schedule '" + which + "'");
    }

    // full-sum per-example bound with shared draws: the paired difference
    // isolates the schedule substitution from estimator noise
    auto orig = eval_vlb_full(loaded.model, data, n, T, static_cast<uint64_t>(seed));
    auto swap = eval_vlb_full(swapped, data, n, T, static_cast<uint64_t>(seed));
    double acc = 0, acc2 = 0;
    for (int j = 0; j < n; ++j) {
        double diff = swap.per_example[static_cast<size_t>(j)] - orig.per_example[static_cast<size_t>(j)];
        acc += diff;
        acc2 += diff * diff;
    }
    double mean_diff = acc / n;
    double sem_diff = std::sqrt(std::max(acc2 / n - mean_diff * mean_diff, 0.0) / n);
    std::cout << "original bpd " << orig.mean_bpd << " +- " << orig.sem_bpd << "\n";
    std::cout << "swapped(" << which << ") bpd " << swap.mean_bpd << " +- " << swap.sem_bpd << "\n";
    std::cout << "paired diff " << mean_diff << " +- " << sem_diff << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale learned-noise diffusion engine"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "run";
    long seed_override = -1;
    auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
    train_cmd->add_option("--config", config_path, "key=value config file")->required();
    train_cmd->add_option("--out", out_dir, "output directory");
    train_cmd->add_option("--seed", seed_override, "override the config seed");

    std::string ckpt, mode = "vlb", dequant_kind = "none", out_csv;
    int T = 128, K = 1, n = 0;
    long eval_seed = 424242;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate bits/dim on the eval split");
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    eval_cmd->add_option("--mode", mode, "vlb | ode");
    eval_cmd->add_option("--T", T, "VLB grid size");
    eval_cmd->add_option("--dequant", dequant_kind, "none | tn | iw (ode mode)");
    eval_cmd->add_option("--K", K, "importance samples for --dequant iw");
    eval_cmd->add_option("--n", n, "cap on evaluated examples");
    eval_cmd->add_option("--out", out_csv, "per-example CSV path");
    eval_cmd->add_option("--seed", eval_seed, "evaluation seed");

    std::string sample_ckpt, sample_out = "samples.mltn";
    int sample_n = 16, sample_T = 128;
    bool sample_ode = false;
    long sample_seed = 7;
    auto* sample_cmd = app.add_subcommand("sample", "draw samples from a checkpoint");
    sample_cmd->add_option("--ckpt", sample_ckpt, "checkpoint directory")->required();
    sample_cmd->add_option("--n", sample_n, "number of samples");
    sample_cmd->add_option("--T", sample_T, "ancestral steps");
    sample_cmd->add_flag("--ode", sample_ode, "use the probability-flow sampler");
    sample_cmd->add_option("--out", sample_out, "output tensor container");
    sample_cmd->add_option("--seed", sample_seed, "sampling seed");

    std::string plot_ckpt, plot_out = "schedule";
    int n_z = 128;
    long plot_seed = 11;
    auto* plot_cmd = app.add_subcommand("plot-schedule", "export SNR curves as CSV and SVG");
    plot_cmd->add_option("--ckpt", plot_ckpt, "checkpoint directory")->required();
    plot_cmd->add_option("--n-z", n_z, "prior draws of the auxiliary latent");
    plot_cmd->add_option("--out", plot_out, "output path prefix");
    plot_cmd->add_option("--seed", plot_seed, "latent sampling seed");

    std::string swap_ckpt, swap_sched = "linear";
    int swap_T = 128, swap_n = 0;
    long swap_seed = 515151;
    auto* swap_cmd = app.add_subcommand("schedule-swap", "re-evaluate a frozen denoiser under another schedule");
    swap_cmd->add_option("--ckpt", swap_ckpt, "checkpoint directory")->required();
    swap_cmd->add_option("--schedule", swap_sched, "linear | scalar | original");
    swap_cmd->add_option("--T", swap_T, "VLB grid size");
    swap_cmd->add_option("--n", swap_n, "cap on evaluated examples");
    swap_cmd->add_option("--seed", swap_seed, "evaluation seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*train_cmd) return cmd_train(config_path, out_dir, seed_override);
        if (*eval_cmd) return cmd_eval(ckpt, mode, T, dequant_kind, K, n, out_csv, eval_seed);
        if (*sample_cmd) return cmd_sample(sample_ckpt, sample_n, sample_T, sample_ode, sample_out, sample_seed);
        if (*plot_cmd) return cmd_plot_schedule(plot_ckpt, n_z, plot_out, plot_seed);
        if (*swap_cmd) return cmd_schedule_swap(swap_ckpt, swap_sched, swap_T, swap_n, swap_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
