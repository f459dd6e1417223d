#include "sprobe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sprobe/errors.hpp"

namespace sprobe {

TrainConfig TrainConfig::for_study(Study study) {
    TrainConfig cfg;
    cfg.weight_decay = study == Study::watermark ? 0.001 : 5e-5;
    return cfg;
}

void TrainConfig::validate() const {
    if (epochs == 0) throw ConfigError("training needs at least one epoch");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative");
}

namespace {

void sgd_tensor(Tensor& w, const Tensor& g, Tensor& v, const TrainConfig& cfg) {
    if (w.empty()) return;
    if (g.shape() != w.shape() || v.shape() != w.shape()) throw ConfigError("sgd_step: misaligned tensor shapes");
    for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = cfg.momentum * v[i] + (g[i] + cfg.weight_decay * w[i]);
        w[i] -= cfg.learning_rate * v[i];
    }
}

}  // namespace

void sgd_step(ParamSet& params, const ParamSet& gradients, ParamSet& velocity, const TrainConfig& cfg) {
    if (gradients.layers.size() != params.layers.size() || velocity.layers.size() != params.layers.size()) {
        throw ConfigError("sgd_step: parameter, gradient and velocity sets differ in layer count");
    }
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        sgd_tensor(params.layers[i].weight, gradients.layers[i].weight, velocity.layers[i].weight, cfg);
        sgd_tensor(params.layers[i].bias, gradients.layers[i].bias, velocity.layers[i].bias, cfg);
    }
}

Tensor make_batch(const std::vector<ImageSample>& samples, std::span<const std::size_t> indices) {
    if (indices.empty()) throw UsageError("empty batch");
    const Shape& s = samples[indices[0]].pixels.shape();
    const std::size_t per = shape_product(s);
    Tensor batch({indices.size(), s[0], s[1], s[2]});
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto& px = samples[indices[b]].pixels;
        if (px.shape() != s) throw ConfigError("batch samples differ in shape");
        std::copy(px.data(), px.data() + per, batch.data() + b * per);
    }
    return batch;
}

BatchStep batch_gradients(const NetworkSpec& spec, const ParamSet& params, const Tensor& batch,
                          std::span<const int> labels, Rng& dropout_rng) {
    BatchStep step;
    auto fwd = forward(spec, params, batch, Mode::train, &dropout_rng);
    const std::size_t n = labels.size();
    Tensor grad(fwd.logits.shape());
    double total = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
        const auto loss = cross_entropy_loss(fwd.logits.row(b), static_cast<std::size_t>(labels[b]));
        total += loss.loss;
        auto g = grad.row(b);
        for (std::size_t k = 0; k < g.size(); ++k) g[k] = loss.logit_gradient[k] / static_cast<double>(n);
    }
    step.loss = total / static_cast<double>(n);
    step.grads = backward(fwd.trace, grad, BackwardRule::exact, true);
    step.trace = std::move(fwd.trace);
    return step;
}

ModelCheckpoint train(const NetworkSpec& spec, const DatasetSplit& data, const TrainConfig& cfg,
                      const EpochCallback& on_epoch) {
    cfg.validate();
    if (data.train.empty() || data.val.empty()) throw ConfigError("training needs nonempty train and val parts");
    spec.validate();

    ModelCheckpoint best;
    best.setting = data.setting.setting;
    best.split_seed = data.split_seed;
    best.model_seed = cfg.model_seed;

    ParamSet params = ParamSet::initialize(spec, derive_seed({cfg.model_seed, 0x1417}));
    ParamSet velocity = ParamSet::zeros_like(spec);
    bool have_best = false;

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng = make_rng({cfg.model_seed, data.split_seed, epoch, 0x5f});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        Rng dropout_rng = make_rng({cfg.model_seed, data.split_seed, epoch, 0xd7});
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            std::vector<int> labels;
            labels.reserve(idx.size());
            for (auto i : idx) labels.push_back(data.train[i].label);
            BatchStep step;
            try {
                step = batch_gradients(spec, params, make_batch(data.train, idx), labels, dropout_rng);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches) + ": " + e.what());
            }
            if (!std::isfinite(step.loss)) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches) + ": non-finite loss");
            }
            sgd_step(params, step.grads.param_gradients, velocity, cfg);
            update_running_stats(step.trace, params);
            loss_sum += step.loss;
            ++batches;
        }
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / static_cast<double>(batches);
        log.val_auroc = evaluate_auroc(spec, params, data.val);
        best.history.push_back(log);
        if (!have_best || log.val_auroc > best.val_auroc) {
            best.params = params;
            best.epoch = epoch;
            best.val_auroc = log.val_auroc;
            have_best = true;
        }
        if (on_epoch) on_epoch(log);
    }
    return best;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ConfigError("auroc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw ConfigError("auroc: labels must be 0 or 1");
        n_pos += l == 1;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw NumericError("auroc undefined: only one class present");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    // Twice the rank sum of positives (1-based average ranks), kept integral.
    std::size_t twice_rank_sum = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const std::size_t twice_avg_rank = i + 1 + j;  // 2 * (i + 1 + j) / 2
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]] == 1) twice_rank_sum += twice_avg_rank;
        }
        i = j;
    }
    const double u = static_cast<double>(twice_rank_sum - n_pos * (n_pos + 1)) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<double> class1_scores(const NetworkSpec& spec, const ParamSet& params,
                                  const std::vector<ImageSample>& samples, std::size_t batch_size) {
    std::vector<double> scores;
    scores.reserve(samples.size());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t end = std::min(samples.size(), start + batch_size);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Tensor logits = predict(spec, params, make_batch(samples, idx));
        for (std::size_t b = 0; b < idx.size(); ++b) scores.push_back(softmax(logits.row(b))[1]);
    }
    return scores;
}

double evaluate_auroc(const NetworkSpec& spec, const ParamSet& params, const std::vector<ImageSample>& samples) {
    const auto scores = class1_scores(spec, params, samples);
    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) labels.push_back(s.label);
    return auroc(scores, labels);
}

std::optional<TransferCell> TransferMatrix::cell(Setting train, Setting test) const {
    auto it = cells.find({train, test});
    if (it == cells.end()) return std::nullopt;
    return it->second;
}

TransferMatrix aggregate_transfer(std::vector<AurocRecord> records) {
    TransferMatrix m;
    std::map<std::pair<Setting, Setting>, std::vector<double>> groups;
    for (const auto& r : records) groups[{r.train_setting, r.test_setting}].push_back(r.auroc);
    for (const auto& [key, values] : groups) {
        TransferCell c;
        c.n = values.size();
        c.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(c.n);
        if (c.n > 1) {
            double ss = 0.0;
            for (double v : values) ss += (v - c.mean) * (v - c.mean);
            c.std = std::sqrt(ss / static_cast<double>(c.n - 1));
        }
        m.cells[key] = c;
    }
    m.records = std::move(records);
    return m;
}

TransferMatrix transfer_evaluate(const NetworkSpec& spec, const std::vector<CheckpointRef>& checkpoints,
                                 const TestSets& test_sets, std::span<const Setting> test_settings) {
    std::vector<AurocRecord> records;
    for (const auto& ck : checkpoints) {
        if (!ck.params) continue;
        for (Setting test : test_settings) {
            auto it = test_sets.find({test, ck.split_seed});
            if (it == test_sets.end() || !it->second) continue;
            AurocRecord r;
            r.train_setting = ck.setting;
            r.test_setting = test;
            r.split_seed = ck.split_seed;
            r.model_seed = ck.model_seed;
            r.auroc = evaluate_auroc(spec, *ck.params, *it->second);
            records.push_back(r);
        }
    }
    return aggregate_transfer(std::move(records));
}

}  // namespace sprobe
