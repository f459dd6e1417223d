#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "sprobe/dataset.hpp"
#include "sprobe/network.hpp"

namespace sprobe {

struct TrainConfig {
    double learning_rate = 0.005;
    double momentum = 0.9;
    std::size_t batch_size = 64;
    double weight_decay = 0.001;
    std::size_t epochs = 100;
    std::uint64_t model_seed = 0;

    static TrainConfig for_study(Study study);
    void validate() const;
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_auroc = 0.0;
};

struct ModelCheckpoint {
    ParamSet params;
    std::size_t epoch = 0;  // 1-based epoch that produced params
    double val_auroc = 0.0;
    Setting setting = Setting::baseline;
    std::uint64_t split_seed = 0;
    std::uint64_t model_seed = 0;
    std::vector<EpochLog> history;
};

// v <- momentum * v + (g + weight_decay * w); w <- w - lr * v.
// Running batchnorm statistics are not touched.
void sgd_step(ParamSet& params, const ParamSet& gradients, ParamSet& velocity, const TrainConfig& cfg);

// Packs samples[indices] into an (N, C, H, W) batch.
Tensor make_batch(const std::vector<ImageSample>& samples, std::span<const std::size_t> indices);

// Mean cross-entropy loss and its gradient for one batch; no update.
struct BatchStep {
    double loss = 0.0;
    BackwardResult grads;
    ForwardTrace trace;
};
BatchStep batch_gradients(const NetworkSpec& spec, const ParamSet& params, const Tensor& batch,
                          std::span<const int> labels, Rng& dropout_rng);

using EpochCallback = std::function<void(const EpochLog&)>;

ModelCheckpoint train(const NetworkSpec& spec, const DatasetSplit& data, const TrainConfig& cfg,
                      const EpochCallback& on_epoch = {});

// Mann-Whitney AUROC with half credit for ties; label 1 is the positive class.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Softmax probability of class 1 for every sample (eval mode).
std::vector<double> class1_scores(const NetworkSpec& spec, const ParamSet& params,
                                  const std::vector<ImageSample>& samples, std::size_t batch_size = 64);
double evaluate_auroc(const NetworkSpec& spec, const ParamSet& params, const std::vector<ImageSample>& samples);

struct AurocRecord {
    Setting train_setting = Setting::baseline;
    Setting test_setting = Setting::baseline;
    std::uint64_t split_seed = 0;
    std::uint64_t model_seed = 0;
    double auroc = 0.0;
};

struct TransferCell {
    std::size_t n = 0;
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation; 0 for a single value
};

struct TransferMatrix {
    std::map<std::pair<Setting, Setting>, TransferCell> cells;  // (train, test)
    std::vector<AurocRecord> records;

    std::optional<TransferCell> cell(Setting train, Setting test) const;
};

struct CheckpointRef {
    Setting setting = Setting::baseline;
    std::uint64_t split_seed = 0;
    std::uint64_t model_seed = 0;
    const ParamSet* params = nullptr;
};

using TestSets = std::map<std::pair<Setting, std::uint64_t>, const std::vector<ImageSample>*>;

// Evaluates every checkpoint on every test setting of its own split. Pairs
// without a test set are skipped and show up as absent cells.
TransferMatrix transfer_evaluate(const NetworkSpec& spec, const std::vector<CheckpointRef>& checkpoints,
                                 const TestSets& test_sets, std::span<const Setting> test_settings);
TransferMatrix aggregate_transfer(std::vector<AurocRecord> records);

}  // namespace sprobe
