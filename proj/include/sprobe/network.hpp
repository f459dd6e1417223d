#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sprobe/rng.hpp"
#include "sprobe/tensor.hpp"

namespace sprobe {

enum class LayerKind { conv2d, batchnorm, relu, maxpool, dropout, flatten, dense };

std::string to_string(LayerKind kind);

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    // conv2d: channels; dense: features; batchnorm: out_channels only.
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::size_t pool = 0;
    double dropout_rate = 0.0;

    static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel);
    static LayerSpec batchnorm(std::size_t channels);
    static LayerSpec relu();
    static LayerSpec maxpool(std::size_t size);
    static LayerSpec dropout(double rate);
    static LayerSpec flatten();
    static LayerSpec dense(std::size_t in, std::size_t out);

    bool has_params() const noexcept {
        return kind == LayerKind::conv2d || kind == LayerKind::dense || kind == LayerKind::batchnorm;
    }
};

struct NetworkSpec {
    Shape input_shape;  // (C, H, W)
    std::vector<LayerSpec> layers;
    std::size_t class_count = 2;

    // Per-sample output shape of every layer. Throws ConfigError on any
    // inconsistency, including a final layer that does not emit class_count
    // logits.
    std::vector<Shape> layer_output_shapes() const;
    void validate() const { (void)layer_output_shapes(); }
};

// Declarative description of the "conv rounds, then dense head" family.
struct CnnArchitecture {
    Shape input_shape{3, 64, 64};
    std::vector<std::size_t> conv_channels{16, 32, 64};
    std::vector<std::size_t> kernel_sizes{3, 3, 3};
    std::vector<std::size_t> pool_sizes{2, 2, 2};
    bool batchnorm = true;
    std::vector<std::size_t> dense_widths{128, 64};
    std::size_t dropout_layers = 2;
    double dropout_rate = 0.5;
    std::size_t class_count = 2;
};

NetworkSpec make_cnn(const CnnArchitecture& arch);

// Trainable and running-state tensors of one layer. Conv weights are
// (out, in, k, k); dense weights are (out, in). For batchnorm, weight and
// bias hold the scale and shift.
struct LayerParams {
    Tensor weight;
    Tensor bias;
    Tensor running_mean;
    Tensor running_var;

    bool operator==(const LayerParams&) const = default;
};

struct ParamSet {
    std::vector<LayerParams> layers;

    static ParamSet zeros_like(const NetworkSpec& spec);
    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for conv/dense weights and
    // biases; batchnorm scale 1, shift 0, running stats (0, 1).
    static ParamSet initialize(const NetworkSpec& spec, std::uint64_t seed);

    void check_matches(const NetworkSpec& spec) const;
    bool operator==(const ParamSet&) const = default;
};

inline constexpr double kBatchnormEps = 1e-5;
inline constexpr double kBatchnormMomentum = 0.1;

enum class Mode { train, eval };

struct LayerRecord {
    Tensor input;                       // batched input to the layer
    std::vector<std::uint32_t> argmax;  // maxpool: flat source index per output
    Tensor mask;                        // dropout: scaled keep mask
    Tensor normalized;                  // batchnorm (train): x-hat
    std::vector<double> inv_std;        // batchnorm: 1/sqrt(var + eps) per channel
    std::vector<double> batch_mean;     // batchnorm (train)
    std::vector<double> batch_var;      // batchnorm (train), biased
};

// Everything the backward passes need. Refers to the NetworkSpec and ParamSet it was
// recorded with; those must outlive the trace.
struct ForwardTrace {
    const NetworkSpec* spec = nullptr;
    const ParamSet* params = nullptr;
    Mode mode = Mode::eval;
    std::size_t batch = 0;
    bool batched_input = false;
    std::vector<LayerRecord> layers;
    Tensor logits;
};

struct ForwardResult {
    Tensor logits;  // (classes) for a single sample, (N, classes) for a batch
    ForwardTrace trace;
};

// input is (C,H,W) for one sample or (N,C,H,W) for a batch. rng is only
// consulted in train mode when dropout is present.
ForwardResult forward(const NetworkSpec& spec, const ParamSet& params, const Tensor& input, Mode mode,
                      Rng* rng = nullptr);

// Logits only; skips trace bookkeeping (eval mode).
Tensor predict(const NetworkSpec& spec, const ParamSet& params, const Tensor& input);

enum class BackwardRule { exact, deconv_relu };

struct BackwardResult {
    Tensor input_gradient;
    ParamSet param_gradients;  // empty layers when not requested
};

BackwardResult backward(const ForwardTrace& trace, const Tensor& output_gradient,
                        BackwardRule rule = BackwardRule::exact, bool param_gradients = true);

// Central difference of logit `target` with respect to input element
// `component_index`, evaluated in eval mode.
double finite_diff_gradient(const NetworkSpec& spec, const ParamSet& params, const Tensor& input,
                            std::size_t component_index, double h, std::size_t target = 0);

struct LossResult {
    double loss = 0.0;
    std::vector<double> logit_gradient;
};

LossResult cross_entropy_loss(std::span<const double> logits, std::size_t label);
std::vector<double> softmax(std::span<const double> logits);

// Applies the running-statistics update recorded by a train-mode trace.
void update_running_stats(const ForwardTrace& trace, ParamSet& params, double momentum = kBatchnormMomentum);

}  // namespace sprobe
