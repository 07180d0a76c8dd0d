#include "kst/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>
#include <thread>

#include "kst/rng.hpp"

namespace kst {

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor must be in (0, 1]");
    if (decay_every < 1) throw ConfigError("decay_every must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(eval_split > 0.0 && eval_split < 1.0)) throw ConfigError("eval_split must be in (0, 1)");
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
    if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json j;
    j["lr0"] = lr0;
    j["decay_factor"] = decay_factor;
    j["decay_every"] = decay_every;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["seed"] = seed;
    j["eval_split"] = eval_split;
    j["repeats"] = repeats;
    j["clip_norm"] = clip_norm;
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr0 = j.value("lr0", c.lr0);
    c.decay_factor = j.value("decay_factor", c.decay_factor);
    c.decay_every = j.value("decay_every", c.decay_every);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.eval_split = j.value("eval_split", c.eval_split);
    c.repeats = j.value("repeats", c.repeats);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.validate();
    return c;
}

Tensor cross_entropy(const Tensor& logits, int label) {
    if (logits.ndim() != 1) {
        throw ShapeError("cross_entropy expects 1-D logits, got " + shape_str(logits.shape()));
    }
    const int64_t n = logits.dim(0);
    if (label < 0 || label >= n) {
        throw ContractError("label " + std::to_string(label) + " out of range for " +
                            std::to_string(n) + " classes");
    }
    for (double v : logits.values()) {
        if (!std::isfinite(v)) throw NumericError("cross_entropy logits are not finite");
    }

    const auto& lv = logits.values();
    double mx = lv[0];
    for (double v : lv) mx = std::max(mx, v);
    double denom = 0.0;
    std::vector<double> probs(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        probs[static_cast<size_t>(i)] = std::exp(lv[static_cast<size_t>(i)] - mx);
        denom += probs[static_cast<size_t>(i)];
    }
    for (double& p : probs) p /= denom;
    const double loss = std::log(denom) + mx - lv[static_cast<size_t>(label)];

    Tensor out = Tensor::from_data({1}, {loss});
    if (logits.requires_grad()) {
        auto pl = logits.impl();
        out.impl()->requires_grad = true;
        out.impl()->parents = {pl};
        out.impl()->backward_fn = [pl, probs = std::move(probs),
                                   label](const std::vector<double>& g, GradMap& gm) {
            auto& gx = gm.at(pl);
            for (size_t i = 0; i < gx.size(); ++i) {
                const double onehot = static_cast<int>(i) == label ? 1.0 : 0.0;
                gx[i] += g[0] * (probs[i] - onehot);
            }
        };
    }
    return out;
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw ContractError("epoch must be >= 0");
    const int steps = epoch / cfg.decay_every;
    double lr = cfg.lr0;
    for (int i = 0; i < steps; ++i) lr *= cfg.decay_factor;
    return lr;
}

void sgd_step(std::vector<Parameter>& params, double lr) {
    for (auto& p : params) {
        if (!p.tensor.has_grad()) {
            throw ContractError("sgd_step: parameter " + p.name + " has no gradient buffer");
        }
    }
    for (auto& p : params) {
        auto& v = p.tensor.values_mut();
        const auto& g = p.tensor.grad();
        for (size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
        p.tensor.zero_grad();
    }
}

MetricReport metrics_from_confusion(std::vector<std::vector<int64_t>> confusion) {
    MetricReport r;
    r.confusion = std::move(confusion);
    const size_t n = r.confusion.size();
    int64_t total = 0, correct = 0;
    double recall_sum = 0.0;
    int64_t classes_with_support = 0;
    r.per_class_recall.assign(n, std::numeric_limits<double>::quiet_NaN());
    for (size_t c = 0; c < n; ++c) {
        int64_t row = 0;
        for (size_t k = 0; k < n; ++k) row += r.confusion[c][k];
        total += row;
        correct += r.confusion[c][c];
        if (row > 0) {
            const double recall = static_cast<double>(r.confusion[c][c]) / static_cast<double>(row);
            r.per_class_recall[c] = recall;
            recall_sum += recall;
            ++classes_with_support;
        }
    }
    r.total = total;
    r.wa = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    r.ua = classes_with_support > 0 ? recall_sum / static_cast<double>(classes_with_support) : 0.0;
    return r;
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json j;
    j["wa"] = wa;
    j["ua"] = ua;
    j["total"] = total;
    j["confusion"] = confusion;
    nlohmann::json recalls = nlohmann::json::array();
    for (double v : per_class_recall) {
        if (std::isnan(v)) {
            recalls.push_back(nullptr);
        } else {
            recalls.push_back(v);
        }
    }
    j["per_class_recall"] = std::move(recalls);
    return j;
}

int worker_threads_from_env() {
    const char* env = std::getenv("KS_THREADS");
    if (!env) return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || v < 1) return 1;
    return static_cast<int>(std::min<long>(v, 64));
}

MetricReport evaluate(const Model& model, const std::vector<Sample>& dataset, int threads) {
    if (dataset.empty()) throw ContractError("evaluate requires a non-empty dataset");
    const int n_classes = model.config().n_classes;
    for (const auto& s : dataset) {
        if (s.label < 0 || s.label >= n_classes) {
            throw ContractError("sample " + s.id + " label " + std::to_string(s.label) +
                                " out of range for " + std::to_string(n_classes) + " classes");
        }
    }
    if (threads <= 0) threads = worker_threads_from_env();
    threads = std::max(1, std::min<int>(threads, static_cast<int>(dataset.size())));

    std::vector<std::vector<std::vector<int64_t>>> partial(
        static_cast<size_t>(threads),
        std::vector<std::vector<int64_t>>(static_cast<size_t>(n_classes),
                                          std::vector<int64_t>(static_cast<size_t>(n_classes), 0)));

    auto work = [&](int tid) {
        for (size_t i = static_cast<size_t>(tid); i < dataset.size(); i += static_cast<size_t>(threads)) {
            const Sample& s = dataset[i];
            ForwardCtx ctx; // inference: no dropout, no rng
            Tensor logits = model.forward(s.audio, s.text, ctx);
            const int pred = predict(logits).id;
            ++partial[static_cast<size_t>(tid)][static_cast<size_t>(s.label)][static_cast<size_t>(pred)];
        }
    };

    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(threads));
        for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
        for (auto& th : pool) th.join();
    }

    std::vector<std::vector<int64_t>> confusion(static_cast<size_t>(n_classes),
                                                std::vector<int64_t>(static_cast<size_t>(n_classes), 0));
    for (const auto& part : partial)
        for (size_t a = 0; a < part.size(); ++a)
            for (size_t b = 0; b < part[a].size(); ++b) confusion[a][b] += part[a][b];
    return metrics_from_confusion(std::move(confusion));
}

nlohmann::json history_to_json(const std::vector<EpochStats>& history) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : history) {
        nlohmann::json j;
        j["epoch"] = e.epoch;
        j["lr"] = e.lr;
        j["train_loss"] = e.train_loss;
        j["dev_wa"] = e.dev_wa;
        j["dev_ua"] = e.dev_ua;
        arr.push_back(std::move(j));
    }
    return arr;
}

std::string history_to_csv(const std::vector<EpochStats>& history) {
    std::ostringstream os;
    os << "epoch,lr,train_loss,dev_wa,dev_ua\n";
    char buf[160];
    for (const auto& e : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.6f,%.6f\n", e.epoch, e.lr, e.train_loss,
                      e.dev_wa, e.dev_ua);
        os << buf;
    }
    return os.str();
}

namespace {

std::vector<std::vector<double>> snapshot_params(const std::vector<Parameter>& params) {
    std::vector<std::vector<double>> snap;
    snap.reserve(params.size());
    for (const auto& p : params) snap.push_back(p.tensor.values());
    return snap;
}

void restore_params(std::vector<Parameter>& params, const std::vector<std::vector<double>>& snap) {
    for (size_t i = 0; i < params.size(); ++i) params[i].tensor.values_mut() = snap[i];
}

void clip_gradients(std::vector<Parameter>& params, double max_norm) {
    double norm2 = 0.0;
    for (const auto& p : params)
        for (double g : p.tensor.grad()) norm2 += g * g;
    const double norm = std::sqrt(norm2);
    if (norm <= max_norm || norm == 0.0) return;
    const double scale = max_norm / norm;
    for (auto& p : params) {
        auto& impl = *p.tensor.impl();
        for (double& g : impl.grad) g *= scale;
    }
}

} // namespace

TrainResult train(Model& model, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& dev_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty()) throw ContractError("train set is empty");
    if (dev_set.empty()) throw ContractError("dev set is empty");

    TrainResult result;
    Rng rng(cfg.seed);
    auto& params = model.parameters();
    for (auto& p : params) p.tensor.zero_grad();

    auto best_snapshot = snapshot_params(params);
    result.best_dev_ua = -1.0;

    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        rng.shuffle(order);

        double loss_sum = 0.0;
        size_t loss_count = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(stop - start);
            bool bad = false;
            for (size_t k = start; k < stop; ++k) {
                const Sample& s = train_set[order[k]];
                ForwardCtx ctx;
                ctx.training = true;
                ctx.rng = &rng;
                double lv = std::numeric_limits<double>::quiet_NaN();
                try {
                    Tensor logits = model.forward(s.audio, s.text, ctx);
                    Tensor loss = cross_entropy(logits, s.label);
                    lv = loss.item();
                    if (std::isfinite(lv)) backward(scale(loss, inv_batch));
                } catch (const NumericError&) {
                    // non-finite activations inside the forward pass
                }
                if (!std::isfinite(lv)) {
                    bad = true;
                    result.divergence_note = "non-finite loss at epoch " + std::to_string(epoch) +
                                             ", sample " + s.id;
                    break;
                }
                loss_sum += lv;
                ++loss_count;
            }
            if (bad) {
                result.diverged = true;
                restore_params(params, best_snapshot);
                for (auto& p : params) p.tensor.zero_grad();
                return result;
            }
            if (cfg.clip_norm > 0.0) clip_gradients(params, cfg.clip_norm);
            sgd_step(params, lr);
        }

        MetricReport dev = evaluate(model, dev_set, 1);
        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
        stats.dev_wa = dev.wa;
        stats.dev_ua = dev.ua;
        result.history.push_back(stats);

        if (dev.ua > result.best_dev_ua) {
            result.best_dev_ua = dev.ua;
            result.best_dev_wa = dev.wa;
            result.best_epoch = epoch;
            best_snapshot = snapshot_params(params);
        }
    }

    restore_params(params, best_snapshot);
    if (result.best_epoch < 0) result.best_dev_ua = 0.0; // epochs = 0: nothing measured
    return result;
}

RepeatedTrainResult train_repeated(const ModelConfig& mcfg, const TrainConfig& cfg,
                                   const std::vector<Sample>& train_set,
                                   const std::vector<Sample>& dev_set) {
    cfg.validate();
    RepeatedTrainResult agg;
    double sum_ua = 0.0, sum_wa = 0.0, sum_ua2 = 0.0, sum_wa2 = 0.0;
    for (int r = 0; r < cfg.repeats; ++r) {
        const uint64_t run_seed = cfg.repeats == 1 ? cfg.seed : Rng::derive(cfg.seed, static_cast<uint64_t>(r));
        TrainConfig run_cfg = cfg;
        run_cfg.seed = run_seed;
        run_cfg.repeats = 1;
        Model model(mcfg, run_seed);
        TrainResult res = train(model, train_set, dev_set, run_cfg);
        sum_ua += res.best_dev_ua;
        sum_wa += res.best_dev_wa;
        sum_ua2 += res.best_dev_ua * res.best_dev_ua;
        sum_wa2 += res.best_dev_wa * res.best_dev_wa;
        if (agg.best_run < 0 || res.best_dev_ua > agg.runs[static_cast<size_t>(agg.best_run)].best_dev_ua) {
            agg.best_run = r;
            agg.best_model.emplace(model);
        }
        agg.runs.push_back(std::move(res));
        agg.run_seeds.push_back(run_seed);
    }
    const double n = static_cast<double>(cfg.repeats);
    agg.mean_ua = sum_ua / n;
    agg.mean_wa = sum_wa / n;
    agg.std_ua = std::sqrt(std::max(0.0, sum_ua2 / n - agg.mean_ua * agg.mean_ua));
    agg.std_wa = std::sqrt(std::max(0.0, sum_wa2 / n - agg.mean_wa * agg.mean_wa));
    return agg;
}

nlohmann::json SweepTable::to_json() const {
    nlohmann::json j;
    j["kind"] = kind == SweepKind::Sparsity ? "sparsity" : "ccab";
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row;
        row[kind == SweepKind::Sparsity ? "ratio" : "amount"] = r.value;
        row["ok"] = r.ok;
        if (r.ok) {
            row["wa"] = r.wa;
            row["ua"] = r.ua;
        } else {
            row["error"] = r.error;
        }
        arr.push_back(std::move(row));
    }
    j["rows"] = std::move(arr);
    return j;
}

std::string SweepTable::to_csv() const {
    std::ostringstream os;
    os << (kind == SweepKind::Sparsity ? "ratio,WA,UA\n" : "amount,WA,UA\n");
    char buf[128];
    for (const auto& r : rows) {
        if (kind == SweepKind::Ccab) {
            std::snprintf(buf, sizeof(buf), "%d", static_cast<int>(r.value));
        } else {
            std::snprintf(buf, sizeof(buf), "%.4g", r.value);
        }
        os << buf;
        if (r.ok) {
            std::snprintf(buf, sizeof(buf), ",%.6f,%.6f\n", r.wa, r.ua);
            os << buf;
        } else {
            os << ",error,error\n";
        }
    }
    return os.str();
}

FiniteDiffReport model_gradient_check(Model& model, const Sample& sample, double h, double tol) {
    MaskStore store(MaskStore::Mode::Record);
    auto f = [&]() {
        ForwardCtx ctx;
        ctx.masks = &store;
        Tensor logits = model.forward(sample.audio, sample.text, ctx);
        return cross_entropy(logits, sample.label);
    };
    f(); // record the masks once
    store.set_mode(MaskStore::Mode::Replay);
    return finite_diff_check(f, model.parameters(), h, tol);
}

SweepTable sweep(SweepKind kind, const std::vector<double>& values, const ModelConfig& mcfg,
                 const TrainConfig& tcfg, const std::vector<Sample>& train_set,
                 const std::vector<Sample>& dev_set) {
    if (values.empty()) throw ContractError("sweep requires at least one value");
    SweepTable table;
    table.kind = kind;
    for (double v : values) {
        SweepRow row;
        row.value = v;
        try {
            ModelConfig cell_cfg = mcfg;
            if (kind == SweepKind::Sparsity) {
                cell_cfg.sparse_ratio = v;
            } else {
                if (v < 0.0 || v != std::floor(v)) {
                    throw ConfigError("ccab sweep values must be non-negative integers");
                }
                cell_cfg.n_ccab = static_cast<int>(v);
            }
            cell_cfg.validate();
            Model model(cell_cfg, tcfg.seed);
            TrainConfig cell_tcfg = tcfg;
            cell_tcfg.repeats = 1;
            TrainResult res = train(model, train_set, dev_set, cell_tcfg);
            if (res.diverged) throw NumericError(res.divergence_note);
            row.ok = true;
            row.wa = res.best_dev_wa;
            row.ua = res.best_dev_ua;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

} // namespace kst
