#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kst/data.hpp"
#include "kst/gradcheck.hpp"
#include "kst/model.hpp"

namespace kst {

// Plain SGD with a step-decay schedule: learning rate 5e-4 by default
// (1e-4 suits large imbalanced corpora), halved every 30 epochs, batch 32.
struct TrainConfig {
    double lr0 = 5e-4;
    double decay_factor = 0.5;
    int decay_every = 30;
    int batch_size = 32;
    int epochs = 60;
    uint64_t seed = 1;
    double eval_split = 0.2;
    int repeats = 1;
    double clip_norm = 0.0; // 0 disables gradient clipping

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct MetricReport {
    double wa = 0.0;
    double ua = 0.0;
    std::vector<std::vector<int64_t>> confusion; // [true][predicted]
    std::vector<double> per_class_recall;        // NaN for classes without true samples
    int64_t total = 0;

    nlohmann::json to_json() const;
};

// -log softmax(logits)[label]; logits are 1-D.
Tensor cross_entropy(const Tensor& logits, int label);

// lr0 * decay_factor^floor(epoch / decay_every)
double lr_at(int epoch, const TrainConfig& cfg);

// p <- p - lr * grad for every parameter, then grads are zeroed.
void sgd_step(std::vector<Parameter>& params, double lr);

// WA/UA/confusion from an existing confusion matrix.
MetricReport metrics_from_confusion(std::vector<std::vector<int64_t>> confusion);

// Deterministic evaluation (dropout off). threads = 0 honors KS_THREADS.
MetricReport evaluate(const Model& model, const std::vector<Sample>& dataset, int threads = 1);

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double dev_wa = 0.0;
    double dev_ua = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = -1; // -1 when no epoch ran
    double best_dev_ua = 0.0;
    double best_dev_wa = 0.0;
    bool diverged = false;
    std::string divergence_note;
};

nlohmann::json history_to_json(const std::vector<EpochStats>& history);
std::string history_to_csv(const std::vector<EpochStats>& history);

// Epoch loop: portable-PRNG shuffles, per-batch gradient accumulation, one
// SGD step per batch, dev evaluation after every epoch. The model is left
// holding the parameters of the best dev-UA epoch (the initial parameters
// when epochs = 0). Non-finite loss aborts with the last best parameters
// restored and `diverged` set.
TrainResult train(Model& model, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& dev_set, const TrainConfig& cfg);

struct RepeatedTrainResult {
    std::vector<TrainResult> runs;
    std::vector<uint64_t> run_seeds;
    double mean_ua = 0.0, std_ua = 0.0;
    double mean_wa = 0.0, std_wa = 0.0;
    int best_run = -1;
    std::optional<Model> best_model;
};

// Rebuilds and retrains the model cfg.repeats times with derived seeds and
// aggregates mean/std of the best dev metrics.
RepeatedTrainResult train_repeated(const ModelConfig& mcfg, const TrainConfig& cfg,
                                   const std::vector<Sample>& train_set,
                                   const std::vector<Sample>& dev_set);

enum class SweepKind { Sparsity, Ccab };

struct SweepRow {
    double value = 0.0;
    bool ok = false;
    double wa = 0.0;
    double ua = 0.0;
    std::string error;
};

struct SweepTable {
    SweepKind kind = SweepKind::Sparsity;
    std::vector<SweepRow> rows;

    nlohmann::json to_json() const;
    std::string to_csv() const; // columns ratio,WA,UA or amount,WA,UA
};

// Trains one model per value with a shared seed and shared data; per-cell
// failures are recorded and the sweep continues.
SweepTable sweep(SweepKind kind, const std::vector<double>& values, const ModelConfig& mcfg,
                 const TrainConfig& tcfg, const std::vector<Sample>& train_set,
                 const std::vector<Sample>& dev_set);

// KS_THREADS, clamped to [1, 64]; 1 when unset or unparsable.
int worker_threads_from_env();

// End-to-end finite-difference check of d(cross_entropy)/d(theta) for every
// model parameter on one sample, with dropout off and the sparse masks
// recorded once and then frozen for all evaluations.
FiniteDiffReport model_gradient_check(Model& model, const Sample& sample, double h, double tol);

} // namespace kst
