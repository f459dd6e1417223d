#include "sprobe/network.hpp"

#include <algorithm>
#include <cmath>

#include "sprobe/errors.hpp"
#include "sprobe/layer_ops.hpp"

namespace sprobe {

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::dropout: return "dropout";
        case LayerKind::flatten: return "flatten";
        case LayerKind::dense: return "dense";
    }
    return "unknown";
}

LayerSpec LayerSpec::conv2d(std::size_t in, std::size_t out, std::size_t kernel) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel = kernel;
    return s;
}

LayerSpec LayerSpec::batchnorm(std::size_t channels) {
    LayerSpec s;
    s.kind = LayerKind::batchnorm;
    s.in_channels = channels;
    s.out_channels = channels;
    return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::maxpool(std::size_t size) {
    LayerSpec s;
    s.kind = LayerKind::maxpool;
    s.pool = size;
    return s;
}

LayerSpec LayerSpec::dropout(double rate) {
    LayerSpec s;
    s.kind = LayerKind::dropout;
    s.dropout_rate = rate;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::flatten;
    return s;
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.in_channels = in;
    s.out_channels = out;
    return s;
}

std::vector<Shape> NetworkSpec::layer_output_shapes() const {
    if (input_shape.size() != 3 || shape_product(input_shape) == 0) {
        throw ConfigError("network input shape must be (C,H,W), got " + shape_string(input_shape));
    }
    if (layers.empty()) throw ConfigError("network has no layers");
    std::vector<Shape> shapes;
    Shape cur = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        auto where = [&] { return "layer " + std::to_string(i) + " (" + to_string(l.kind) + "): "; };
        switch (l.kind) {
            case LayerKind::conv2d:
                if (cur.size() != 3 || cur[0] != l.in_channels) {
                    throw ConfigError(where() + "expects " + std::to_string(l.in_channels) + " channels, got " +
                                      shape_string(cur));
                }
                if (l.kernel == 0 || l.kernel % 2 == 0) throw ConfigError(where() + "kernel must be odd");
                if (l.out_channels == 0) throw ConfigError(where() + "zero output channels");
                cur = {l.out_channels, cur[1], cur[2]};
                break;
            case LayerKind::batchnorm:
                if (cur.size() != 3 || cur[0] != l.in_channels) {
                    throw ConfigError(where() + "channel mismatch with input " + shape_string(cur));
                }
                break;
            case LayerKind::relu:
                break;
            case LayerKind::dropout:
                if (!(l.dropout_rate >= 0.0 && l.dropout_rate < 1.0)) throw ConfigError(where() + "rate must be in [0,1)");
                break;
            case LayerKind::maxpool:
                if (cur.size() != 3 || l.pool == 0 || cur[1] < l.pool || cur[2] < l.pool) {
                    throw ConfigError(where() + "pool " + std::to_string(l.pool) + " does not fit " + shape_string(cur));
                }
                cur = {cur[0], cur[1] / l.pool, cur[2] / l.pool};
                break;
            case LayerKind::flatten:
                cur = {shape_product(cur)};
                break;
            case LayerKind::dense:
                if (cur.size() != 1 || cur[0] != l.in_channels) {
                    throw ConfigError(where() + "expects " + std::to_string(l.in_channels) + " features, got " +
                                      shape_string(cur));
                }
                if (l.out_channels == 0) throw ConfigError(where() + "zero output features");
                cur = {l.out_channels};
                break;
        }
        shapes.push_back(cur);
    }
    if (cur.size() != 1 || cur[0] != class_count) {
        throw ConfigError("network emits " + shape_string(cur) + " but class count is " + std::to_string(class_count));
    }
    return shapes;
}

NetworkSpec make_cnn(const CnnArchitecture& arch) {
    const std::size_t rounds = arch.conv_channels.size();
    if (rounds == 0 || arch.kernel_sizes.size() != rounds || arch.pool_sizes.size() != rounds) {
        throw ConfigError("conv_channels, kernel_sizes and pool_sizes must have equal nonzero length");
    }
    if (arch.input_shape.size() != 3) throw ConfigError("input shape must be (C,H,W)");
    NetworkSpec spec;
    spec.input_shape = arch.input_shape;
    spec.class_count = arch.class_count;
    std::size_t channels = arch.input_shape[0];
    std::size_t h = arch.input_shape[1];
    std::size_t w = arch.input_shape[2];
    for (std::size_t r = 0; r < rounds; ++r) {
        spec.layers.push_back(LayerSpec::conv2d(channels, arch.conv_channels[r], arch.kernel_sizes[r]));
        if (arch.batchnorm) spec.layers.push_back(LayerSpec::batchnorm(arch.conv_channels[r]));
        spec.layers.push_back(LayerSpec::relu());
        spec.layers.push_back(LayerSpec::maxpool(arch.pool_sizes[r]));
        channels = arch.conv_channels[r];
        h /= arch.pool_sizes[r];
        w /= arch.pool_sizes[r];
    }
    spec.layers.push_back(LayerSpec::flatten());
    std::size_t features = channels * h * w;
    std::size_t dropouts_left = arch.dropout_layers;
    for (std::size_t width : arch.dense_widths) {
        if (dropouts_left > 0) {
            spec.layers.push_back(LayerSpec::dropout(arch.dropout_rate));
            --dropouts_left;
        }
        spec.layers.push_back(LayerSpec::dense(features, width));
        spec.layers.push_back(LayerSpec::relu());
        features = width;
    }
    spec.layers.push_back(LayerSpec::dense(features, arch.class_count));
    spec.validate();
    return spec;
}

ParamSet ParamSet::zeros_like(const NetworkSpec& spec) {
    ParamSet p;
    p.layers.resize(spec.layers.size());
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        auto& lp = p.layers[i];
        switch (l.kind) {
            case LayerKind::conv2d:
                lp.weight = Tensor({l.out_channels, l.in_channels, l.kernel, l.kernel});
                lp.bias = Tensor({l.out_channels});
                break;
            case LayerKind::dense:
                lp.weight = Tensor({l.out_channels, l.in_channels});
                lp.bias = Tensor({l.out_channels});
                break;
            case LayerKind::batchnorm:
                lp.weight = Tensor({l.in_channels});
                lp.bias = Tensor({l.in_channels});
                lp.running_mean = Tensor({l.in_channels});
                lp.running_var = Tensor({l.in_channels});
                break;
            default:
                break;
        }
    }
    return p;
}

ParamSet ParamSet::initialize(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    ParamSet p = zeros_like(spec);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        auto& lp = p.layers[i];
        if (l.kind == LayerKind::batchnorm) {
            lp.weight.fill(1.0);
            lp.running_var.fill(1.0);
            continue;
        }
        if (l.kind != LayerKind::conv2d && l.kind != LayerKind::dense) continue;
        const std::size_t fan_in = lp.weight.size() / lp.weight.dim(0);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Rng rng = make_rng({seed, i});
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : lp.weight.values()) v = dist(rng);
        for (auto& v : lp.bias.values()) v = dist(rng);
    }
    return p;
}

void ParamSet::check_matches(const NetworkSpec& spec) const {
    if (layers.size() != spec.layers.size()) {
        throw ConfigError("parameter set has " + std::to_string(layers.size()) + " layers, network has " +
                          std::to_string(spec.layers.size()));
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = spec.layers[i];
        const auto& lp = layers[i];
        Shape w, b, stats;
        switch (l.kind) {
            case LayerKind::conv2d:
                w = {l.out_channels, l.in_channels, l.kernel, l.kernel};
                b = {l.out_channels};
                break;
            case LayerKind::dense:
                w = {l.out_channels, l.in_channels};
                b = {l.out_channels};
                break;
            case LayerKind::batchnorm:
                w = b = stats = {l.in_channels};
                break;
            default:
                break;
        }
        auto same = [](const Tensor& t, const Shape& s) { return s.empty() ? t.empty() : t.shape() == s; };
        if (!same(lp.weight, w) || !same(lp.bias, b) || !same(lp.running_mean, stats) ||
            !same(lp.running_var, stats)) {
            throw ConfigError("parameter shapes of layer " + std::to_string(i) + " do not match the network");
        }
    }
}

namespace {

Shape batched(const Shape& per_sample, std::size_t n) {
    Shape s{n};
    s.insert(s.end(), per_sample.begin(), per_sample.end());
    return s;
}

void check_finite(const Tensor& t, std::size_t layer, LayerKind kind) {
    if (!t.all_finite()) {
        throw NumericError("non-finite activation after layer " + std::to_string(layer) + " (" + to_string(kind) + ")");
    }
}

Tensor batchnorm_forward(const Tensor& x, const LayerParams& p, Mode mode, LayerRecord* rec) {
    const std::size_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor y(x.shape());
    std::vector<double> mean(C), inv_std(C), var(C);
    if (mode == Mode::train) {
        const double m = static_cast<double>(N * plane);
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const double* src = x.data() + (n * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) s += src[i];
            }
            mean[c] = s / m;
            double ss = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const double* src = x.data() + (n * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = src[i] - mean[c];
                    ss += d * d;
                }
            }
            var[c] = ss / m;
            inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchnormEps);
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = p.running_mean[c];
            var[c] = p.running_var[c];
            inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchnormEps);
        }
    }
    Tensor normalized;
    if (rec && mode == Mode::train) normalized = Tensor(x.shape());
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * plane;
            const double g = p.weight[c], b = p.bias[c];
            for (std::size_t i = 0; i < plane; ++i) {
                const double xh = (x[off + i] - mean[c]) * inv_std[c];
                if (!normalized.empty()) normalized[off + i] = xh;
                y[off + i] = g * xh + b;
            }
        }
    }
    if (rec) {
        rec->inv_std = inv_std;
        if (mode == Mode::train) {
            rec->normalized = std::move(normalized);
            rec->batch_mean = mean;
            rec->batch_var = var;
        }
    }
    return y;
}

Tensor run_forward(const NetworkSpec& spec, const ParamSet& params, const Tensor& input, Mode mode, Rng* rng,
                   ForwardTrace* trace) {
    const auto shapes = spec.layer_output_shapes();
    params.check_matches(spec);
    Tensor x;
    std::size_t batch = 1;
    if (input.shape() == spec.input_shape) {
        x = input.reshaped(batched(spec.input_shape, 1));
    } else if (input.rank() == 4 && Shape(input.shape().begin() + 1, input.shape().end()) == spec.input_shape &&
               input.dim(0) > 0) {
        x = input;
        batch = input.dim(0);
    } else {
        throw ConfigError("input shape " + shape_string(input.shape()) + " does not match network input " +
                          shape_string(spec.input_shape));
    }
    if (trace) {
        trace->spec = &spec;
        trace->params = &params;
        trace->mode = mode;
        trace->batch = batch;
        trace->batched_input = input.rank() == 4;
        trace->layers.assign(spec.layers.size(), LayerRecord{});
    }
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        const auto& p = params.layers[i];
        LayerRecord* rec = trace ? &trace->layers[i] : nullptr;
        Tensor y;
        switch (l.kind) {
            case LayerKind::conv2d:
                y = ops::conv2d_forward(x, p.weight, p.bias);
                break;
            case LayerKind::batchnorm:
                y = batchnorm_forward(x, p, mode, rec);
                break;
            case LayerKind::relu:
                y = x;
                for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
                break;
            case LayerKind::maxpool:
                y = ops::maxpool_forward(x, l.pool, rec ? &rec->argmax : nullptr);
                break;
            case LayerKind::dropout:
                if (mode == Mode::train && l.dropout_rate > 0.0) {
                    if (!rng) throw UsageError("train-mode forward with dropout requires an rng");
                    Tensor mask(x.shape());
                    std::bernoulli_distribution keep(1.0 - l.dropout_rate);
                    const double scale = 1.0 / (1.0 - l.dropout_rate);
                    for (auto& m : mask.values()) m = keep(*rng) ? scale : 0.0;
                    y = x;
                    for (std::size_t k = 0; k < y.size(); ++k) y[k] *= mask[k];
                    if (rec) rec->mask = std::move(mask);
                } else {
                    y = x;
                }
                break;
            case LayerKind::flatten:
                y = x.reshaped({batch, shape_product(shapes[i])});
                break;
            case LayerKind::dense:
                y = ops::dense_forward(x, p.weight, p.bias);
                break;
        }
        check_finite(y, i, l.kind);
        if (rec) rec->input = std::move(x);
        x = std::move(y);
    }
    if (input.rank() != 4) x.reshape({spec.class_count});
    if (trace) trace->logits = x;
    return x;
}

}  // namespace

ForwardResult forward(const NetworkSpec& spec, const ParamSet& params, const Tensor& input, Mode mode, Rng* rng) {
    ForwardResult result;
    result.logits = run_forward(spec, params, input, mode, rng, &result.trace);
    return result;
}

Tensor predict(const NetworkSpec& spec, const ParamSet& params, const Tensor& input) {
    return run_forward(spec, params, input, Mode::eval, nullptr, nullptr);
}

BackwardResult backward(const ForwardTrace& trace, const Tensor& output_gradient, BackwardRule rule,
                        bool param_gradients) {
    if (!trace.spec || !trace.params || trace.layers.size() != trace.spec->layers.size()) {
        throw UsageError("backward called with an incomplete forward trace");
    }
    if (output_gradient.shape() != trace.logits.shape()) {
        throw UsageError("output gradient shape " + shape_string(output_gradient.shape()) + " does not match logits " +
                         shape_string(trace.logits.shape()));
    }
    const auto& spec = *trace.spec;
    const auto& params = *trace.params;
    BackwardResult result;
    if (param_gradients) result.param_gradients = ParamSet::zeros_like(spec);
    Tensor g = output_gradient.reshaped({trace.batch, spec.class_count});
    for (std::size_t idx = spec.layers.size(); idx-- > 0;) {
        const auto& l = spec.layers[idx];
        const auto& p = params.layers[idx];
        const auto& rec = trace.layers[idx];
        const Tensor& x = rec.input;
        switch (l.kind) {
            case LayerKind::conv2d:
                if (param_gradients) {
                    auto& gp = result.param_gradients.layers[idx];
                    ops::conv2d_backward_params(x, g, gp.weight, gp.bias);
                }
                g = ops::conv2d_backward_input(g, p.weight, x.shape());
                break;
            case LayerKind::dense:
                if (param_gradients) {
                    auto& gp = result.param_gradients.layers[idx];
                    ops::dense_backward_params(x, g, gp.weight, gp.bias);
                }
                g = ops::dense_backward_input(g, p.weight);
                break;
            case LayerKind::batchnorm: {
                const std::size_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
                if (rec.inv_std.size() != C) throw UsageError("batchnorm record missing from trace");
                Tensor gx(x.shape());
                const bool train = trace.mode == Mode::train;
                if (train && rec.normalized.empty()) throw UsageError("train-mode batchnorm record missing");
                for (std::size_t c = 0; c < C; ++c) {
                    const double gamma = p.weight[c];
                    const double inv_std = rec.inv_std[c];
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (std::size_t n = 0; n < N; ++n) {
                        const std::size_t off = (n * C + c) * plane;
                        for (std::size_t i = 0; i < plane; ++i) {
                            const double xh = train ? rec.normalized[off + i]
                                                    : (x[off + i] - p.running_mean[c]) * inv_std;
                            sum_g += g[off + i];
                            sum_gx += g[off + i] * xh;
                        }
                    }
                    if (param_gradients) {
                        auto& gp = result.param_gradients.layers[idx];
                        gp.weight[c] += sum_gx;
                        gp.bias[c] += sum_g;
                    }
                    const double m = static_cast<double>(N * plane);
                    for (std::size_t n = 0; n < N; ++n) {
                        const std::size_t off = (n * C + c) * plane;
                        for (std::size_t i = 0; i < plane; ++i) {
                            if (train) {
                                gx[off + i] = gamma * inv_std / m *
                                              (m * g[off + i] - sum_g - rec.normalized[off + i] * sum_gx);
                            } else {
                                gx[off + i] = gamma * inv_std * g[off + i];
                            }
                        }
                    }
                }
                g = std::move(gx);
                break;
            }
            case LayerKind::relu:
                for (std::size_t k = 0; k < g.size(); ++k) {
                    if (rule == BackwardRule::deconv_relu) {
                        g[k] = g[k] > 0.0 ? g[k] : 0.0;
                    } else if (!(x[k] > 0.0)) {
                        g[k] = 0.0;
                    }
                }
                break;
            case LayerKind::maxpool:
                g = ops::maxpool_backward(g, rec.argmax, x.shape());
                break;
            case LayerKind::dropout:
                if (!rec.mask.empty()) {
                    for (std::size_t k = 0; k < g.size(); ++k) g[k] *= rec.mask[k];
                } else if (trace.mode == Mode::train && l.dropout_rate > 0.0) {
                    throw UsageError("dropout mask missing from train-mode trace");
                }
                break;
            case LayerKind::flatten:
                g.reshape(x.shape());
                break;
        }
    }
    if (!trace.batched_input) g.reshape(spec.input_shape);
    result.input_gradient = std::move(g);
    return result;
}

double finite_diff_gradient(const NetworkSpec& spec, const ParamSet& params, const Tensor& input,
                            std::size_t component_index, double h, std::size_t target) {
    if (!(h > 0.0)) throw ConfigError("finite difference step must be positive");
    if (component_index >= input.size()) throw ConfigError("component index out of range");
    if (target >= spec.class_count) throw ConfigError("target logit out of range");
    Tensor plus = input;
    Tensor minus = input;
    plus[component_index] += h;
    minus[component_index] -= h;
    const Tensor fp = predict(spec, params, plus);
    const Tensor fm = predict(spec, params, minus);
    return (fp[target] - fm[target]) / (2.0 * h);
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out(logits.begin(), logits.end());
    const double m = *std::max_element(out.begin(), out.end());
    double s = 0.0;
    for (auto& v : out) {
        v = std::exp(v - m);
        s += v;
    }
    for (auto& v : out) v /= s;
    return out;
}

LossResult cross_entropy_loss(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size()) throw ConfigError("label " + std::to_string(label) + " out of range");
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double v : logits) s += std::exp(v - m);
    const double log_z = m + std::log(s);
    LossResult r;
    r.loss = log_z - logits[label];
    r.logit_gradient.resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) r.logit_gradient[k] = std::exp(logits[k] - log_z);
    r.logit_gradient[label] -= 1.0;
    return r;
}

void update_running_stats(const ForwardTrace& trace, ParamSet& params, double momentum) {
    if (trace.mode != Mode::train) throw UsageError("running statistics come from train-mode traces only");
    for (std::size_t i = 0; i < trace.spec->layers.size(); ++i) {
        if (trace.spec->layers[i].kind != LayerKind::batchnorm) continue;
        const auto& rec = trace.layers[i];
        auto& p = params.layers[i];
        const double m = static_cast<double>(rec.input.size() / rec.input.dim(1));
        const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
        for (std::size_t c = 0; c < rec.batch_mean.size(); ++c) {
            p.running_mean[c] = (1.0 - momentum) * p.running_mean[c] + momentum * rec.batch_mean[c];
            p.running_var[c] = (1.0 - momentum) * p.running_var[c] + momentum * rec.batch_var[c] * unbias;
        }
    }
}

}  // namespace sprobe
