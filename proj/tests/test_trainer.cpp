#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "mulan/ode.hpp"
#include "mulan/trainer.hpp"

using namespace mulan;
using namespace mulan::testutil;

namespace {

ModelConfig toy_config(int d, int m) {
    ModelConfig cfg;
    cfg.d = d;
    cfg.denoiser_hidden = 32;
    cfg.temb_dim = 8;
    cfg.param_kind = ParamKind::Eps;
    cfg.schedule.family = ScheduleFamily::Polynomial;
    cfg.schedule.hidden = 8;
    if (m > 0) {
        cfg.latent.kind = LatentKind::Gaussian;
        cfg.latent.m = m;
    }
    return cfg;
}

std::vector<std::string> strip_wallclock(const std::string& path) {
    std::ifstream f(path);
    std::vector<std::string> rows;
    std::string line;
    while (std::getline(f, line)) {
        auto last = line.rfind(',');
        rows.push_back(line.substr(0, last));
    }
    return rows;
}

}  // namespace

TEST_CASE("adamw basics") {
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;

    // zero gradient leaves parameters alone
    auto p = Tensor::from({3}, {1.0f, -2.0f, 0.5f});
    AdamState st{Tensor::zeros({3}), Tensor::zeros({3})};
    adamw_step(p, Tensor::zeros({3}), st, cfg, 1, "p");
    CHECK(p[0] == 1.0f);
    CHECK(p[1] == -2.0f);

    // single scalar, g=1 at step 1: bias-corrected update is ~ -lr
    auto q = Tensor::scalar(0.0f);
    AdamState st2{Tensor::zeros({1}), Tensor::zeros({1})};
    adamw_step(q, Tensor::scalar(1.0f), st2, cfg, 1, "q");
    CHECK(q.value() == doctest::Approx(-0.1).epsilon(1e-4));

    // quadratic bowl converges (Adam's oscillation floor scales with lr)
    TrainConfig bowl;
    bowl.lr = 0.01;
    bowl.weight_decay = 0.0;
    auto w = Tensor::scalar(3.0f);
    AdamState st3{Tensor::zeros({1}), Tensor::zeros({1})};
    for (long s = 1; s <= 2000; ++s) adamw_step(w, Tensor::scalar(2.0f * w.value()), st3, bowl, s, "w");
    CHECK(std::abs(w.value()) < 1e-3f);

    // non-finite gradient names the parameter
    auto r = Tensor::scalar(0.0f);
    AdamState st4{Tensor::zeros({1}), Tensor::zeros({1})};
    CHECK_THROWS_WITH_AS(adamw_step(r, Tensor::scalar(0.0f / 0.0f), st4, cfg, 1, "layer.w"),
                         doctest::Contains("layer.w"), std::runtime_error);
}

TEST_CASE("ema update") {
    auto shadow = Tensor::from({2}, {1.0f, 1.0f});
    auto p = Tensor::from({2}, {3.0f, -1.0f});

    // rate 0 copies the parameters
    ema_update(shadow, p, 0.0);
    CHECK(shadow[0] == 3.0f);
    CHECK(shadow[1] == -1.0f);

    // constant parameters: geometric convergence
    auto s2 = Tensor::from({1}, {0.0f});
    auto tgt = Tensor::from({1}, {1.0f});
    for (int i = 0; i < 100; ++i) ema_update(s2, tgt, 0.9);
    CHECK(std::abs(s2[0] - 1.0f) < std::pow(0.9, 99));

    TrainConfig cfg;
    CHECK(cfg.ema_rate == 0.9999);

    CHECK_THROWS(ema_update(shadow, Tensor::zeros({3}), 0.5));
}

TEST_CASE("single-point overfit: eval bpd strictly decreases") {
    const int d = 16;
    auto model = DiffusionModel::create(toy_config(d, 0), 3);
    Rng rng(1, 1);
    auto point = randn<float>({1, d}, rng, 0.5);
    // 64 copies so the paired single-draw eval averages over 64 (i, eps) draws
    auto train_data = Tensor::zeros({64, d});
    for (int i = 0; i < 64; ++i)
        for (int j = 0; j < d; ++j) train_data.at(i, j) = point.at(0, j);

    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.steps = 500;
    cfg.eval_interval = 100;
    cfg.eval_n = 64;
    cfg.lr = 1e-3;       // single-point overfit: go fast
    cfg.ema_rate = 0.9;  // fast-moving shadow so the eval tracks training
    cfg.seed = 11;

    TrainerState st;
    init_trainer_state(model, st);
    std::vector<double> evals;
    train_loop(model, st, train_data, train_data, cfg, [&](long, double, double ev) { evals.push_back(ev); });
    REQUIRE(evals.size() == 6);  // step 0 plus five evals
    for (size_t i = 1; i < evals.size(); ++i) CHECK(evals[i] < evals[i - 1]);
}

TEST_CASE("checkpoint round trip resumes bit-identically") {
    const int d = 8;
    DatasetSpec spec;
    spec.h = spec.w = 2;
    spec.c = 2;
    spec.n_train = 32;
    spec.n_eval = 8;
    spec.seed = 5;
    auto train_data = generate_train(spec);
    auto eval_data = generate_eval(spec);

    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.steps = 8;
    cfg.eval_interval = 4;
    cfg.eval_n = 4;
    cfg.seed = 17;

    auto dir = (std::filesystem::temp_directory_path() / "mulan_ckpt_test").string();
    std::filesystem::remove_all(dir);

    // run A: 8 steps straight
    auto mA = DiffusionModel::create(toy_config(d, 2), 7);
    TrainerState stA;
    init_trainer_state(mA, stA);
    train_loop(mA, stA, train_data, eval_data, cfg, [](long, double, double) {});

    // run B: 4 steps, checkpoint, reload, 4 more
    auto mB = DiffusionModel::create(toy_config(d, 2), 7);
    TrainerState stB;
    init_trainer_state(mB, stB);
    TrainConfig half = cfg;
    half.steps = 4;
    train_loop(mB, stB, train_data, eval_data, half, [](long, double, double) {});
    save_checkpoint(dir, mB, stB, "dummy=1\n");

    auto mC = DiffusionModel::create(toy_config(d, 2), 999);  // different init, overwritten by load
    TrainerState stC;
    init_trainer_state(mC, stC);
    auto [step, meta] = read_checkpoint_meta(dir);
    CHECK(step == 4);
    CHECK(meta == "dummy=1\n");
    load_checkpoint_tensors(dir, mC, stC);
    stC.step = step;
    train_loop(mC, stC, train_data, eval_data, cfg, [](long, double, double) {});

    auto pa = mA.named_params();
    auto pc = mC.named_params();
    REQUIRE(pa.size() == pc.size());
    for (size_t i = 0; i < pa.size(); ++i)
        for (int64_t j = 0; j < pa[i].tensor->size(); ++j)
            CHECK((*pa[i].tensor->data)[j] == (*pc[i].tensor->data)[j]);
    std::filesystem::remove_all(dir);
}

TEST_CASE("schedule parameters receive nonzero, finite-difference-confirmed gradients") {
    const int d = 6;
    ModelConfig mc;
    mc.d = d;
    mc.denoiser_hidden = 16;
    mc.temb_dim = 4;
    mc.param_kind = ParamKind::Eps;
    mc.schedule.family = ScheduleFamily::Polynomial;
    mc.schedule.hidden = 8;
    mc.latent.kind = LatentKind::Gaussian;
    mc.latent.m = 3;
    auto model = DiffusionModelT<double>::create(mc, 13);
    Rng rng(2, 2);
    auto x0 = randn<double>({4, d}, rng, 0.5);

    auto loss_at = [&]() {
        Rng lr(3, 3);
        NelboOptions opt;
        return nelbo(model, x0, opt, lr).total.value();
    };

    TapeD tape;
    model.attach(tape);
    Rng lr(3, 3);
    NelboOptions opt;
    auto res = nelbo(model, x0, opt, lr);
    tape.backward(res.total);

    double max_abs = 0;
    int checked = 0;
    for (auto& p : model.named_params()) {
        if (p.name.rfind("schedule", 0) != 0) continue;
        auto g = tape.grad(*p.tensor);
        for (int64_t i = 0; i < p.tensor->size() && checked < 24; i += std::max<int64_t>(1, p.tensor->size() / 4)) {
            double ad = g[i];
            max_abs = std::max(max_abs, std::abs(ad));
            const double h = 1e-6;
            double orig = (*p.tensor->data)[i];
            (*p.tensor->data)[i] = orig + h;
            double up = loss_at();
            (*p.tensor->data)[i] = orig - h;
            double dn = loss_at();
            (*p.tensor->data)[i] = orig;
            double fd = (up - dn) / (2 * h);
            CHECK(std::abs(fd - ad) / std::max({1.0, std::abs(fd), std::abs(ad)}) < 1e-5);
            ++checked;
        }
    }
    model.detach();
    CHECK(checked > 8);
    CHECK(max_abs > 1e-8);  // the joint learning signal exists
}

TEST_CASE("non-finite loss aborts with a diagnostic dump") {
    const int d = 4;
    auto model = DiffusionModel::create(toy_config(d, 0), 23);
    // poison one denoiser weight
    (*model.denoiser.net.layers[0].w.data)[0] = std::numeric_limits<float>::quiet_NaN();

    DatasetSpec spec;
    spec.h = spec.w = 2;
    spec.n_train = 8;
    spec.n_eval = 4;
    auto data = generate_train(spec);

    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.steps = 2;
    cfg.eval_interval = 1;
    cfg.eval_n = 1;
    auto dir = (std::filesystem::temp_directory_path() / "mulan_abort_test").string();
    std::filesystem::remove_all(dir);
    TrainerState st;
    init_trainer_state(model, st);
    CHECK_THROWS(train(model, st, data, data, cfg, dir, "x=1\n"));
    CHECK(std::filesystem::exists(dir + "/diagnostic_batch.mltn"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("same seed, same config: metrics match, excluding wallclock") {
    const int d = 4;
    DatasetSpec spec;
    spec.h = spec.w = 2;
    spec.n_train = 16;
    spec.n_eval = 8;
    spec.seed = 9;
    auto tr = generate_train(spec);
    auto ev = generate_eval(spec);

    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.steps = 6;
    cfg.eval_interval = 2;
    cfg.eval_n = 4;
    cfg.seed = 31;

    auto dirA = (std::filesystem::temp_directory_path() / "mulan_det_a").string();
    auto dirB = (std::filesystem::temp_directory_path() / "mulan_det_b").string();
    std::filesystem::remove_all(dirA);
    std::filesystem::remove_all(dirB);
    for (auto [dir, seed] : {std::pair{dirA, 7ULL}, std::pair{dirB, 7ULL}}) {
        auto model = DiffusionModel::create(toy_config(d, 2), seed);
        TrainerState st;
        init_trainer_state(model, st);
        train(model, st, tr, ev, cfg, dir, "x=1\n");
    }
    auto a = strip_wallclock(dirA + "/metrics.csv");
    auto b = strip_wallclock(dirB + "/metrics.csv");
    REQUIRE(a.size() == b.size());
    REQUIRE(a.size() >= 4);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    std::filesystem::remove_all(dirA);
    std::filesystem::remove_all(dirB);
}

TEST_CASE("ODE bound is no worse than the VLB on a trained toy model") {
    const int d = 8;
    DatasetSpec spec;
    spec.h = spec.w = 2;
    spec.c = 2;
    spec.n_train = 64;
    spec.n_eval = 16;
    spec.seed = 21;
    auto tr = generate_train(spec);
    auto ev = generate_eval(spec);

    auto model = DiffusionModel::create(toy_config(d, 0), 29);
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.steps = 300;
    cfg.eval_interval = 300;
    cfg.eval_n = 8;
    cfg.ema_rate = 0.95;
    cfg.seed = 13;
    TrainerState st;
    init_trainer_state(model, st);
    train_loop(model, st, tr, ev, cfg, [](long, double, double) {});

    EmaScope scope(model, st.ema);
    const int n = 8;
    auto vlb = eval_vlb(model, ev, n, 128, 777);
    double ode_acc = 0, ode_acc2 = 0;
    for (int j = 0; j < n; ++j) {
        auto x0 = Tensor::zeros({1, d});
        for (int c = 0; c < d; ++c) x0.at(0, c) = ev.at(j, c);
        Rng rng = Rng::keyed(777, 0x0de, j);
        auto res = log_likelihood_ode(model, x0, rng);
        ode_acc += res.bpd;
        ode_acc2 += res.bpd * res.bpd;
    }
    double ode_mean = ode_acc / n;
    double ode_sem = std::sqrt(std::max(ode_acc2 / n - ode_mean * ode_mean, 0.0) / n);
    double sem = std::sqrt(vlb.sem_bpd * vlb.sem_bpd + ode_sem * ode_sem);
    CHECK(ode_mean <= vlb.mean_bpd + 2 * sem);
}
