#include <cmath>
#include <cstdlib>

#include "doctest.h"
#include "kst/data.hpp"
#include "kst/trainer.hpp"

using namespace kst;

namespace {

SynthSpec tiny_data_spec(uint64_t seed, int n) {
    SynthSpec s;
    s.n_samples = n;
    s.audio_dim = 6;
    s.text_dim = 5;
    s.signal_token_count = 2;
    s.signal_strength = 5.0;
    s.seed = seed;
    s.audio_len_min = 4;
    s.audio_len_max = 7;
    s.text_len_min = 3;
    s.text_len_max = 5;
    return s;
}

ModelConfig tiny_model_cfg() {
    ModelConfig cfg = tiny_preset();
    cfg.dropout_p = 0.1;
    return cfg;
}

} // namespace

TEST_CASE("cross entropy of uniform logits over four classes is ln 4") {
    Tensor logits = Tensor::full({4}, 1.25);
    for (int label = 0; label < 4; ++label) {
        Tensor loss = cross_entropy(logits, label);
        CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
}

TEST_CASE("cross entropy vanishes when the true class dominates") {
    Tensor logits = Tensor::from_data({4}, {0, 0, 50, 0});
    CHECK(cross_entropy(logits, 2).item() < 1e-15);
}

TEST_CASE("cross entropy matches an extended-precision oracle") {
    Rng rng(81);
    for (int rep = 0; rep < 25; ++rep) {
        Tensor logits = Tensor::zeros({4});
        for (double& v : logits.values_mut()) v = rng.uniform(-5.0, 5.0);
        const int label = static_cast<int>(rng.next_below(4));
        Tensor loss = cross_entropy(logits, label);

        long double denom = 0.0L;
        for (double v : logits.values()) denom += expl(static_cast<long double>(v));
        const long double expect =
            logl(denom) - static_cast<long double>(logits.values()[static_cast<size_t>(label)]);
        CHECK(std::fabs(loss.item() - static_cast<double>(expect)) < 1e-10);
    }
}

TEST_CASE("cross entropy gradient is softmax minus one-hot") {
    Rng rng(82);
    std::vector<Parameter> params;
    params.emplace_back("logits", Tensor::zeros({4}, true));
    for (double& v : params[0].tensor.values_mut()) v = rng.uniform(-2.0, 2.0);
    auto f = [&]() { return cross_entropy(params[0].tensor, 2); };
    FiniteDiffReport report = finite_diff_check(f, params, 1e-4, 1e-3);
    CHECK(report.pass);
}

TEST_CASE("learning-rate schedule") {
    TrainConfig cfg;
    CHECK(lr_at(0, cfg) == 5e-4);
    CHECK(lr_at(29, cfg) == 5e-4);
    CHECK(lr_at(30, cfg) == 2.5e-4);
    CHECK(lr_at(60, cfg) == 1.25e-4);
    CHECK(lr_at(90, cfg) == 6.25e-5);
    for (int e = 1; e < 200; ++e) CHECK(lr_at(e, cfg) <= lr_at(e - 1, cfg));
    for (int k = 1; k < 6; ++k) CHECK(lr_at(k * 30, cfg) == 0.5 * lr_at(k * 30 - 1, cfg));
}

TEST_CASE("sgd step arithmetic and the null step") {
    std::vector<Parameter> params;
    params.emplace_back("p", Tensor::from_data({1}, {1.0}, true));
    params[0].tensor.impl()->grad = {2.0};
    sgd_step(params, 0.1);
    CHECK(params[0].tensor.values()[0] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(params[0].tensor.grad()[0] == 0.0);

    params[0].tensor.impl()->grad = {5.0};
    std::vector<double> before = params[0].tensor.values();
    sgd_step(params, 0.0);
    CHECK(params[0].tensor.values() == before);
}

TEST_CASE("sgd step requires gradient buffers") {
    std::vector<Parameter> params;
    params.emplace_back("p", Tensor::from_data({2}, {1.0, 2.0}, true));
    params[0].tensor.impl()->grad.clear();
    CHECK_THROWS_AS(sgd_step(params, 0.1), ContractError);
}

TEST_CASE("gradient descent on a quadratic bowl converges monotonically") {
    std::vector<Parameter> params;
    params.emplace_back("p", Tensor::from_data({1}, {3.0}, true));
    double prev = 9.0;
    for (int it = 0; it < 40; ++it) {
        params[0].tensor.zero_grad();
        Tensor loss = sum_all(mul(params[0].tensor, params[0].tensor));
        backward(loss);
        sgd_step(params, 0.2); // stable for f(p)=p^2 below 1.0
        const double now = params[0].tensor.values()[0] * params[0].tensor.values()[0];
        CHECK(now < prev);
        prev = now;
    }
    CHECK(prev < 1e-8);
}

TEST_CASE("metrics: perfect predictions and the hand-counted all-angry example") {
    MetricReport perfect = metrics_from_confusion({{5, 0}, {0, 7}});
    CHECK(perfect.wa == 1.0);
    CHECK(perfect.ua == 1.0);

    // 70 angry / 10 each of the others, everything predicted angry
    MetricReport report = metrics_from_confusion({{70, 0, 0, 0},
                                                  {10, 0, 0, 0},
                                                  {10, 0, 0, 0},
                                                  {10, 0, 0, 0}});
    CHECK(report.wa == doctest::Approx(0.70).epsilon(1e-15));
    CHECK(report.ua == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("WA equals UA exactly on balanced supports") {
    Rng rng(83);
    for (int rep = 0; rep < 30; ++rep) {
        const int K = 2 + static_cast<int>(rng.next_below(4));
        const int support = 8;
        std::vector<std::vector<int64_t>> conf(static_cast<size_t>(K),
                                               std::vector<int64_t>(static_cast<size_t>(K), 0));
        for (int c = 0; c < K; ++c) {
            int left = support;
            for (int k = 0; k < K - 1; ++k) {
                const int v = static_cast<int>(rng.next_below(static_cast<uint64_t>(left + 1)));
                conf[static_cast<size_t>(c)][static_cast<size_t>(k)] = v;
                left -= v;
            }
            conf[static_cast<size_t>(c)][static_cast<size_t>(K - 1)] = left;
        }
        MetricReport r = metrics_from_confusion(conf);
        CHECK(r.wa == doctest::Approx(r.ua).epsilon(1e-12));
    }
}

TEST_CASE("WA and UA diverge exactly when supports and recalls differ") {
    MetricReport r = metrics_from_confusion({{70, 0}, {5, 5}});
    CHECK(r.wa == doctest::Approx(75.0 / 80.0));
    CHECK(r.ua == doctest::Approx(0.5 * (1.0 + 0.5)));
    CHECK(r.wa != r.ua);
}

TEST_CASE("evaluate runs the model and counts the confusion matrix") {
    ModelConfig cfg = tiny_model_cfg();
    Model model(cfg, 84);
    // force constant all-angry logits through the classifier
    for (auto& p : model.parameters()) {
        if (p.name == "classifier.w") {
            for (double& v : p.tensor.values_mut()) v = 0.0;
        }
        if (p.name == "classifier.b") {
            p.tensor.values_mut() = {5.0, 0.0, 0.0, 0.0};
        }
    }

    SynthSpec spec = tiny_data_spec(85, 100);
    spec.audio_dim = cfg.audio_in_dim;
    spec.text_dim = cfg.text_in_dim;
    SynthResult data = generate_synthetic(spec); // 25 per class
    MetricReport r = evaluate(model, data.dataset.samples, 1);
    CHECK(r.total == 100);
    CHECK(r.wa == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(r.ua == doctest::Approx(0.25).epsilon(1e-15));
    for (int c = 0; c < 4; ++c) CHECK(r.confusion[static_cast<size_t>(c)][0] == 25);

    // order invariance
    std::vector<Sample> reversed(data.dataset.samples.rbegin(), data.dataset.samples.rend());
    MetricReport r2 = evaluate(model, reversed, 1);
    CHECK(r2.confusion == r.confusion);

    // threaded evaluation merges to the same counts
    MetricReport r4 = evaluate(model, data.dataset.samples, 4);
    CHECK(r4.confusion == r.confusion);

    CHECK_THROWS_AS(evaluate(model, {}, 1), ContractError);
}

TEST_CASE("zero epochs returns the initial parameters and empty history") {
    ModelConfig cfg = tiny_model_cfg();
    Model model(cfg, 86);
    std::vector<std::vector<double>> initial;
    for (const auto& p : model.parameters()) initial.push_back(p.tensor.values());

    SynthSpec spec = tiny_data_spec(87, 16);
    spec.audio_dim = cfg.audio_in_dim;
    spec.text_dim = cfg.text_in_dim;
    SynthResult data = generate_synthetic(spec);
    std::vector<Sample> train_set(data.dataset.samples.begin(), data.dataset.samples.begin() + 12);
    std::vector<Sample> dev_set(data.dataset.samples.begin() + 12, data.dataset.samples.end());

    TrainConfig tcfg;
    tcfg.epochs = 0;
    TrainResult res = train(model, train_set, dev_set, tcfg);
    CHECK(res.history.empty());
    CHECK(res.best_epoch == -1);
    for (size_t i = 0; i < initial.size(); ++i)
        CHECK(model.parameters()[i].tensor.values() == initial[i]);
}

TEST_CASE("training history is bit-identical for a fixed seed") {
    ModelConfig cfg = tiny_model_cfg();
    SynthSpec spec = tiny_data_spec(88, 24);
    spec.audio_dim = cfg.audio_in_dim;
    spec.text_dim = cfg.text_in_dim;
    SynthResult data = generate_synthetic(spec);
    std::vector<Sample> train_set(data.dataset.samples.begin(), data.dataset.samples.begin() + 16);
    std::vector<Sample> dev_set(data.dataset.samples.begin() + 16, data.dataset.samples.end());

    TrainConfig tcfg;
    tcfg.epochs = 3;
    tcfg.batch_size = 8;
    tcfg.lr0 = 0.02;
    tcfg.seed = 99;

    Model m1(cfg, 100);
    TrainResult r1 = train(m1, train_set, dev_set, tcfg);
    Model m2(cfg, 100);
    TrainResult r2 = train(m2, train_set, dev_set, tcfg);
    REQUIRE(r1.history.size() == r2.history.size());
    for (size_t e = 0; e < r1.history.size(); ++e) {
        CHECK(r1.history[e].train_loss == r2.history[e].train_loss);
        CHECK(r1.history[e].dev_ua == r2.history[e].dev_ua);
        CHECK(r1.history[e].lr == r2.history[e].lr);
    }
    for (size_t i = 0; i < m1.parameters().size(); ++i)
        CHECK(m1.parameters()[i].tensor.values() == m2.parameters()[i].tensor.values());
}

TEST_CASE("one sgd step on a single-sample batch decreases that sample's loss") {
    ModelConfig cfg = tiny_model_cfg();
    cfg.dropout_p = 0.0; // isolate the descent property
    SynthSpec spec = tiny_data_spec(89, 8);
    spec.audio_dim = cfg.audio_in_dim;
    spec.text_dim = cfg.text_in_dim;
    SynthResult data = generate_synthetic(spec);

    int checked = 0;
    for (const Sample& s : data.dataset.samples) {
        Model model(cfg, 90 + static_cast<uint64_t>(checked));
        auto loss_of = [&]() {
            ForwardCtx ctx;
            return cross_entropy(model.forward(s.audio, s.text, ctx), s.label).item();
        };
        const double before = loss_of();

        auto step_at = [&](double lr) {
            for (auto& p : model.parameters()) p.tensor.zero_grad();
            ForwardCtx ctx;
            backward(cross_entropy(model.forward(s.audio, s.text, ctx), s.label));
            sgd_step(model.parameters(), lr);
        };
        std::vector<std::vector<double>> saved;
        for (const auto& p : model.parameters()) saved.push_back(p.tensor.values());

        step_at(0.05);
        double after = loss_of();
        if (after >= before) {
            // probe a 10x smaller step before judging
            for (size_t i = 0; i < saved.size(); ++i)
                model.parameters()[i].tensor.values_mut() = saved[i];
            step_at(0.005);
            after = loss_of();
        }
        CHECK(after < before);
        ++checked;
    }
    CHECK(checked == 8);
}

TEST_CASE("divergence aborts and restores usable parameters") {
    ModelConfig cfg = tiny_model_cfg();
    SynthSpec spec = tiny_data_spec(91, 12);
    spec.audio_dim = cfg.audio_in_dim;
    spec.text_dim = cfg.text_in_dim;
    SynthResult data = generate_synthetic(spec);
    std::vector<Sample> train_set(data.dataset.samples.begin(), data.dataset.samples.begin() + 8);
    std::vector<Sample> dev_set(data.dataset.samples.begin() + 8, data.dataset.samples.end());

    Model model(cfg, 92);
    TrainConfig tcfg;
    tcfg.epochs = 30;
    tcfg.lr0 = 1e8; // blow past every stable step size
    tcfg.batch_size = 4;
    TrainResult res = train(model, train_set, dev_set, tcfg);
    CHECK(res.diverged);
    CHECK_FALSE(res.divergence_note.empty());
    for (const auto& p : model.parameters()) CHECK(p.tensor.all_finite());
}

TEST_CASE("single-value sweep equals a plain train call") {
    ModelConfig cfg = tiny_model_cfg();
    SynthSpec spec = tiny_data_spec(93, 20);
    spec.audio_dim = cfg.audio_in_dim;
    spec.text_dim = cfg.text_in_dim;
    SynthResult data = generate_synthetic(spec);
    std::vector<Sample> train_set(data.dataset.samples.begin(), data.dataset.samples.begin() + 14);
    std::vector<Sample> dev_set(data.dataset.samples.begin() + 14, data.dataset.samples.end());

    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 7;
    tcfg.lr0 = 0.02;
    tcfg.seed = 7;

    SweepTable table = sweep(SweepKind::Sparsity, {0.5}, cfg, tcfg, train_set, dev_set);
    REQUIRE(table.rows.size() == 1);
    REQUIRE(table.rows[0].ok);

    ModelConfig direct_cfg = cfg;
    direct_cfg.sparse_ratio = 0.5;
    Model model(direct_cfg, tcfg.seed);
    TrainResult direct = train(model, train_set, dev_set, tcfg);
    CHECK(table.rows[0].ua == direct.best_dev_ua);
    CHECK(table.rows[0].wa == direct.best_dev_wa);
}

TEST_CASE("sweep records per-cell failures and continues") {
    ModelConfig cfg = tiny_model_cfg();
    SynthSpec spec = tiny_data_spec(94, 12);
    spec.audio_dim = cfg.audio_in_dim;
    spec.text_dim = cfg.text_in_dim;
    SynthResult data = generate_synthetic(spec);
    std::vector<Sample> train_set(data.dataset.samples.begin(), data.dataset.samples.begin() + 8);
    std::vector<Sample> dev_set(data.dataset.samples.begin() + 8, data.dataset.samples.end());

    TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.batch_size = 4;
    SweepTable table = sweep(SweepKind::Ccab, {0.0, 2.5, 1.0}, cfg, tcfg, train_set, dev_set);
    REQUIRE(table.rows.size() == 3);
    CHECK(table.rows[0].ok);
    CHECK_FALSE(table.rows[1].ok); // 2.5 is not an integer amount
    CHECK(table.rows[2].ok);

    const std::string csv = table.to_csv();
    CHECK(csv.rfind("amount,WA,UA\n", 0) == 0);
}

TEST_CASE("repeated training aggregates mean and std over derived seeds") {
    ModelConfig cfg = tiny_model_cfg();
    SynthSpec spec = tiny_data_spec(95, 20);
    spec.audio_dim = cfg.audio_in_dim;
    spec.text_dim = cfg.text_in_dim;
    SynthResult data = generate_synthetic(spec);
    std::vector<Sample> train_set(data.dataset.samples.begin(), data.dataset.samples.begin() + 14);
    std::vector<Sample> dev_set(data.dataset.samples.begin() + 14, data.dataset.samples.end());

    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 7;
    tcfg.repeats = 3;
    RepeatedTrainResult agg = train_repeated(cfg, tcfg, train_set, dev_set);
    REQUIRE(agg.runs.size() == 3);
    CHECK(agg.run_seeds[0] != agg.run_seeds[1]);
    CHECK(agg.best_run >= 0);
    CHECK(agg.best_model.has_value());
    double mx = 0.0;
    for (const auto& r : agg.runs) mx = std::max(mx, r.best_dev_ua);
    CHECK(agg.runs[static_cast<size_t>(agg.best_run)].best_dev_ua == mx);
    CHECK(agg.mean_ua <= mx + 1e-12);
    CHECK(agg.std_ua >= 0.0);
}

TEST_CASE("KS_THREADS caps evaluation workers") {
    unsetenv("KS_THREADS");
    CHECK(worker_threads_from_env() == 1);
    setenv("KS_THREADS", "3", 1);
    CHECK(worker_threads_from_env() == 3);
    setenv("KS_THREADS", "junk", 1);
    CHECK(worker_threads_from_env() == 1);
    setenv("KS_THREADS", "4096", 1);
    CHECK(worker_threads_from_env() == 64);
    setenv("KS_THREADS", "2", 1);

    // threaded evaluation under the env cap matches single-thread counts
    ModelConfig cfg = tiny_model_cfg();
    Model model(cfg, 96);
    SynthSpec spec = tiny_data_spec(97, 30);
    spec.audio_dim = cfg.audio_in_dim;
    spec.text_dim = cfg.text_in_dim;
    SynthResult data = generate_synthetic(spec);
    MetricReport st = evaluate(model, data.dataset.samples, 1);
    MetricReport mt = evaluate(model, data.dataset.samples, 0); // honors KS_THREADS
    CHECK(st.confusion == mt.confusion);
    unsetenv("KS_THREADS");
}

TEST_CASE("history csv has the documented columns") {
    std::vector<EpochStats> h{{0, 5e-4, 1.5, 0.4, 0.45}, {1, 5e-4, 1.2, 0.5, 0.55}};
    const std::string csv = history_to_csv(h);
    CHECK(csv.rfind("epoch,lr,train_loss,dev_wa,dev_ua\n", 0) == 0);
    CHECK(csv.find("\n0,") != std::string::npos);
    CHECK(csv.find("\n1,") != std::string::npos);
}
