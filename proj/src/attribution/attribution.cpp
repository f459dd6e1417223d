#include "sprobe/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sprobe/errors.hpp"
#include "sprobe/layer_ops.hpp"

namespace sprobe {

namespace {

struct MethodName {
    Method method;
    const char* name;
};

constexpr MethodName kMethodNames[] = {
    {Method::deconvolution, "deconv"}, {Method::integrated_gradients, "ig"}, {Method::gradient_shap, "gradshap"},
    {Method::lrp_epsilon, "lrp-eps"},  {Method::lrp_alphabeta, "lrp-ab"},    {Method::laplace, "laplace"},
    {Method::raw, "raw"},
};

void check_sample(const NetworkSpec& spec, const Tensor& sample) {
    if (sample.shape() != spec.input_shape) {
        throw ConfigError("sample shape " + shape_string(sample.shape()) + " does not match network input " +
                          shape_string(spec.input_shape));
    }
}

void check_target(const NetworkSpec& spec, std::size_t target) {
    if (target >= spec.class_count) {
        throw ConfigError("target class " + std::to_string(target) + " out of range for " +
                          std::to_string(spec.class_count) + " classes");
    }
}

Shape batched(std::size_t n, const Shape& shape) {
    Shape out{n};
    out.insert(out.end(), shape.begin(), shape.end());
    return out;
}

}  // namespace

std::string to_string(Method m) {
    for (const auto& e : kMethodNames) {
        if (e.method == m) return e.name;
    }
    return "unknown";
}

Method parse_method(const std::string& name) {
    for (const auto& e : kMethodNames) {
        if (name == e.name) return e.method;
    }
    throw ConfigError("unknown attribution method '" + name + "'");
}

bool is_model_independent(Method m) { return m == Method::laplace || m == Method::raw; }

std::vector<Method> all_methods() {
    std::vector<Method> out;
    for (const auto& e : kMethodNames) out.push_back(e.method);
    return out;
}

CanonizedNetwork canonize(const NetworkSpec& spec, const ParamSet& params) {
    params.check_matches(spec);
    CanonizedNetwork out;
    out.spec.input_shape = spec.input_shape;
    out.spec.class_count = spec.class_count;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        if (layer.kind != LayerKind::batchnorm) {
            out.spec.layers.push_back(layer);
            out.params.layers.push_back(params.layers[i]);
            continue;
        }
        if (out.spec.layers.empty() || out.spec.layers.back().kind != LayerKind::conv2d) {
            throw ConfigError("batchnorm at layer " + std::to_string(i) + " does not follow a convolution");
        }
        const LayerParams& bn = params.layers[i];
        LayerParams& conv = out.params.layers.back();
        const std::size_t out_c = conv.weight.dim(0);
        const std::size_t per_filter = conv.weight.size() / out_c;
        if (conv.bias.empty()) conv.bias = Tensor({out_c});
        for (std::size_t c = 0; c < out_c; ++c) {
            const double scale = bn.weight[c] / std::sqrt(bn.running_var[c] + kBatchnormEps);
            for (std::size_t k = 0; k < per_filter; ++k) conv.weight[c * per_filter + k] *= scale;
            conv.bias[c] = (conv.bias[c] - bn.running_mean[c]) * scale + bn.bias[c];
        }
    }
    out.spec.validate();
    return out;
}

std::size_t predicted_class(const NetworkSpec& spec, const ParamSet& params, const Tensor& sample) {
    check_sample(spec, sample);
    const Tensor logits = predict(spec, params, sample);
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.size(); ++k) {
        if (logits[k] > logits[best]) best = k;
    }
    return best;
}

Tensor logit_gradients(const NetworkSpec& spec, const ParamSet& params, const Tensor& batch, std::size_t target,
                       BackwardRule rule) {
    check_target(spec, target);
    if (batch.rank() != spec.input_shape.size() + 1) {
        throw ConfigError("expected a batch of shape (N," + shape_string(spec.input_shape) + ")");
    }
    ForwardResult fwd = forward(spec, params, batch, Mode::eval);
    Tensor seed(fwd.logits.shape());
    const std::size_t n = batch.dim(0);
    for (std::size_t i = 0; i < n; ++i) seed[i * spec.class_count + target] = 1.0;
    return backward(fwd.trace, seed, rule, false).input_gradient;
}

Tensor deconvolution(const NetworkSpec& spec, const ParamSet& params, const Tensor& sample, std::size_t target) {
    check_sample(spec, sample);
    Tensor g = logit_gradients(spec, params, sample.reshaped(batched(1, sample.shape())), target,
                               BackwardRule::deconv_relu);
    g.reshape(sample.shape());
    return g;
}

Tensor integrated_gradients(const BatchGradient& gradient, const Tensor& sample, const Tensor& baseline,
                            std::size_t steps, std::size_t chunk) {
    if (baseline.shape() != sample.shape()) throw ConfigError("baseline shape differs from sample shape");
    if (steps == 0) throw ConfigError("integrated gradients needs at least one step");
    chunk = std::max<std::size_t>(chunk, 1);

    const std::size_t d = sample.size();
    std::vector<double> delta(d);
    for (std::size_t i = 0; i < d; ++i) delta[i] = sample[i] - baseline[i];

    std::vector<double> total(d, 0.0);
    for (std::size_t k0 = 0; k0 < steps; k0 += chunk) {
        const std::size_t m = std::min(chunk, steps - k0);
        Tensor points(batched(m, sample.shape()));
        for (std::size_t j = 0; j < m; ++j) {
            const double alpha = (static_cast<double>(k0 + j) + 0.5) / static_cast<double>(steps);
            double* dst = points.data() + j * d;
            for (std::size_t i = 0; i < d; ++i) dst[i] = baseline[i] + alpha * delta[i];
        }
        const Tensor g = gradient(points);
        if (g.size() != points.size()) throw UsageError("gradient callback returned the wrong size");
        for (std::size_t j = 0; j < m; ++j) {
            const double* src = g.data() + j * d;
            for (std::size_t i = 0; i < d; ++i) total[i] += src[i];
        }
    }
    Tensor out(sample.shape());
    for (std::size_t i = 0; i < d; ++i) out[i] = delta[i] * total[i] / static_cast<double>(steps);
    return out;
}

Tensor integrated_gradients(const NetworkSpec& spec, const ParamSet& params, const Tensor& sample,
                            const Tensor& baseline, std::size_t target, std::size_t steps, std::size_t chunk) {
    check_sample(spec, sample);
    check_target(spec, target);
    return integrated_gradients([&](const Tensor& batch) { return logit_gradients(spec, params, batch, target); },
                                sample, baseline, steps, chunk);
}

Tensor gradient_shap(const BatchGradient& gradient, const Tensor& sample, std::span<const Tensor> baselines,
                     std::size_t n_samples, double noise_std, Rng& rng) {
    if (baselines.empty()) throw ConfigError("gradient SHAP needs at least one baseline");
    for (const auto& b : baselines) {
        if (b.shape() != sample.shape()) throw ConfigError("baseline shape differs from sample shape");
    }
    if (n_samples == 0) throw ConfigError("gradient SHAP needs n_samples >= 1");
    if (!(noise_std >= 0.0)) throw ConfigError("gradient SHAP noise_std must be >= 0");

    constexpr std::size_t kChunk = 32;
    const std::size_t d = sample.size();
    std::uniform_int_distribution<std::size_t> pick(0, baselines.size() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, noise_std > 0.0 ? noise_std : 1.0);

    std::vector<double> total(d, 0.0);
    for (std::size_t s0 = 0; s0 < n_samples; s0 += kChunk) {
        const std::size_t m = std::min(kChunk, n_samples - s0);
        Tensor points(batched(m, sample.shape()));
        std::vector<std::size_t> chosen(m);
        for (std::size_t j = 0; j < m; ++j) {
            chosen[j] = pick(rng);
            const double u = unit(rng);
            const Tensor& b = baselines[chosen[j]];
            double* dst = points.data() + j * d;
            for (std::size_t i = 0; i < d; ++i) dst[i] = b[i] + u * (sample[i] - b[i]);
            if (noise_std > 0.0) {
                for (std::size_t i = 0; i < d; ++i) dst[i] += noise(rng);
            }
        }
        const Tensor g = gradient(points);
        if (g.size() != points.size()) throw UsageError("gradient callback returned the wrong size");
        for (std::size_t j = 0; j < m; ++j) {
            const Tensor& b = baselines[chosen[j]];
            const double* src = g.data() + j * d;
            for (std::size_t i = 0; i < d; ++i) total[i] += (sample[i] - b[i]) * src[i];
        }
    }
    Tensor out(sample.shape());
    for (std::size_t i = 0; i < d; ++i) out[i] = total[i] / static_cast<double>(n_samples);
    return out;
}

Tensor gradient_shap(const NetworkSpec& spec, const ParamSet& params, const Tensor& sample,
                     std::span<const Tensor> baselines, std::size_t target, std::size_t n_samples, double noise_std,
                     Rng& rng) {
    check_sample(spec, sample);
    check_target(spec, target);
    return gradient_shap([&](const Tensor& batch) { return logit_gradients(spec, params, batch, target); }, sample,
                         baselines, n_samples, noise_std, rng);
}

void LrpRule::validate() const {
    if (kind == Kind::epsilon) {
        if (!(epsilon >= 0.0)) throw ConfigError("LRP epsilon must be >= 0");
        return;
    }
    if (!(alpha >= 1.0) || !(beta >= 0.0)) throw ConfigError("LRP alpha must be >= 1 and beta >= 0");
    if (std::abs(alpha - beta - 1.0) > 1e-12) {
        throw ConfigError("LRP alpha-beta rule requires alpha - |beta| = 1, got alpha=" + std::to_string(alpha) +
                          " beta=" + std::to_string(beta));
    }
}

namespace {

bool is_linear(LayerKind k) { return k == LayerKind::conv2d || k == LayerKind::dense; }

Tensor linear_forward(LayerKind kind, const Tensor& a, const Tensor& w, const Tensor& b) {
    return kind == LayerKind::conv2d ? ops::conv2d_forward(a, w, b) : ops::dense_forward(a, w, b);
}

Tensor linear_backward(LayerKind kind, const Tensor& s, const Tensor& w, const Shape& in_shape) {
    return kind == LayerKind::conv2d ? ops::conv2d_backward_input(s, w, in_shape) : ops::dense_backward_input(s, w);
}

bool any_nonzero(const Tensor& t) {
    return std::any_of(t.values().begin(), t.values().end(), [](double v) { return v != 0.0; });
}

Tensor epsilon_step(LayerKind kind, const Tensor& a, const LayerParams& p, const Tensor& relevance, double eps,
                    std::size_t layer_index) {
    const Tensor z = linear_forward(kind, a, p.weight, p.bias);
    Tensor s(z.shape());
    for (std::size_t k = 0; k < z.size(); ++k) {
        const double den = z[k] + (z[k] >= 0.0 ? eps : -eps);
        if (den == 0.0) {
            if (relevance[k] != 0.0) {
                throw NumericError("LRP zero denominator at layer " + std::to_string(layer_index) + " with epsilon 0");
            }
            continue;
        }
        s[k] = relevance[k] / den;
    }
    Tensor c = linear_backward(kind, s, p.weight, a.shape());
    for (std::size_t j = 0; j < c.size(); ++j) c[j] *= a[j];
    return c;
}

void safe_divide(Tensor& s, const Tensor& relevance, const Tensor& z) {
    for (std::size_t k = 0; k < z.size(); ++k) s[k] = z[k] != 0.0 ? relevance[k] / z[k] : 0.0;
}

Tensor alphabeta_step(LayerKind kind, const Tensor& a, const LayerParams& p, const Tensor& relevance, double alpha,
                      double beta) {
    const Tensor ap = ops::positive_part(a);
    const Tensor an = ops::negative_part(a);
    const bool has_negative_input = any_nonzero(an);
    const Tensor wp = ops::positive_part(p.weight);
    const Tensor wn = ops::negative_part(p.weight);
    const Tensor bp = p.bias.empty() ? Tensor{} : ops::positive_part(p.bias);
    const Tensor bn = p.bias.empty() ? Tensor{} : ops::negative_part(p.bias);
    const Tensor none;

    // Positive contributions: a+ w+ and a- w-; negative: a+ w- and a- w+.
    Tensor zp = linear_forward(kind, ap, wp, bp);
    Tensor zn = linear_forward(kind, ap, wn, bn);
    if (has_negative_input) {
        const Tensor zp2 = linear_forward(kind, an, wn, none);
        const Tensor zn2 = linear_forward(kind, an, wp, none);
        for (std::size_t k = 0; k < zp.size(); ++k) {
            zp[k] += zp2[k];
            zn[k] += zn2[k];
        }
    }
    Tensor sp(zp.shape()), sn(zn.shape());
    safe_divide(sp, relevance, zp);
    safe_divide(sn, relevance, zn);

    Tensor rp = linear_backward(kind, sp, wp, a.shape());
    Tensor rn = linear_backward(kind, sn, wn, a.shape());
    Tensor out(a.shape());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = ap[j] * (alpha * rp[j] - beta * rn[j]);
    if (has_negative_input) {
        const Tensor rp2 = linear_backward(kind, sp, wn, a.shape());
        const Tensor rn2 = linear_backward(kind, sn, wp, a.shape());
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += an[j] * (alpha * rp2[j] - beta * rn2[j]);
    }
    return out;
}

}  // namespace

LrpResult lrp_detailed(const CanonizedNetwork& net, const Tensor& sample, std::size_t target, const LrpRule& rule) {
    rule.validate();
    const NetworkSpec& spec = net.spec;
    check_sample(spec, sample);
    check_target(spec, target);
    net.params.check_matches(spec);
    const std::size_t L = spec.layers.size();
    for (std::size_t i = 0; i < L; ++i) {
        if (spec.layers[i].kind == LayerKind::batchnorm) {
            throw ConfigError("LRP needs a canonized network; batchnorm remains at layer " + std::to_string(i));
        }
    }

    std::vector<Tensor> inputs;
    inputs.reserve(L);
    std::vector<std::vector<std::uint32_t>> argmax(L);
    Tensor a = sample.reshaped(batched(1, sample.shape()));
    for (std::size_t i = 0; i < L; ++i) {
        const LayerSpec& layer = spec.layers[i];
        const LayerParams& p = net.params.layers[i];
        inputs.push_back(a);
        switch (layer.kind) {
            case LayerKind::conv2d:
            case LayerKind::dense:
                a = linear_forward(layer.kind, a, p.weight, p.bias);
                break;
            case LayerKind::relu:
                for (auto& v : a.values()) v = std::max(v, 0.0);
                break;
            case LayerKind::maxpool:
                a = ops::maxpool_forward(a, layer.pool, &argmax[i]);
                break;
            case LayerKind::flatten:
                a.reshape({1, a.size()});
                break;
            case LayerKind::dropout:
            case LayerKind::batchnorm:
                break;
        }
    }
    if (!a.all_finite()) throw NumericError("non-finite logits in LRP forward pass");

    LrpResult result;
    result.target_logit = a[target];
    result.layer_sums.assign(L + 1, 0.0);
    Tensor relevance(a.shape());
    relevance[target] = result.target_logit;
    result.layer_sums[L] = result.target_logit;

    for (std::size_t i = L; i-- > 0;) {
        const LayerSpec& layer = spec.layers[i];
        const Tensor& in = inputs[i];
        if (is_linear(layer.kind)) {
            relevance = rule.kind == LrpRule::Kind::epsilon
                            ? epsilon_step(layer.kind, in, net.params.layers[i], relevance, rule.epsilon, i)
                            : alphabeta_step(layer.kind, in, net.params.layers[i], relevance, rule.alpha, rule.beta);
        } else if (layer.kind == LayerKind::maxpool) {
            relevance = ops::maxpool_backward(relevance, argmax[i], in.shape());
        } else if (layer.kind == LayerKind::flatten) {
            relevance.reshape(in.shape());
        }
        if (!relevance.all_finite()) throw NumericError("non-finite relevance at layer " + std::to_string(i));
        result.layer_sums[i] = sum(relevance.values());
    }
    relevance.reshape(sample.shape());
    result.relevance = std::move(relevance);
    return result;
}

Tensor lrp(const CanonizedNetwork& net, const Tensor& sample, std::size_t target, const LrpRule& rule) {
    return lrp_detailed(net, sample, target, rule).relevance;
}

Tensor laplace_baseline(const Tensor& sample) {
    if (sample.rank() != 3) throw ConfigError("laplace baseline expects a (C,H,W) image");
    const std::size_t C = sample.dim(0), H = sample.dim(1), W = sample.dim(2);
    Tensor out(sample.shape());
    for (std::size_t c = 0; c < C; ++c) {
        const double* src = sample.data() + c * H * W;
        double* dst = out.data() + c * H * W;
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                double v = -4.0 * src[y * W + x];
                if (y > 0) v += src[(y - 1) * W + x];
                if (y + 1 < H) v += src[(y + 1) * W + x];
                if (x > 0) v += src[y * W + x - 1];
                if (x + 1 < W) v += src[y * W + x + 1];
                dst[y * W + x] = v;
            }
        }
    }
    return out;
}

Tensor raw_baseline(const Tensor& sample) { return sample; }

Tensor channel_mean_abs(const Tensor& map) {
    if (map.rank() != 3) throw ConfigError("channel mean expects a (C,H,W) map");
    const std::size_t C = map.dim(0), HW = map.dim(1) * map.dim(2);
    Tensor out({map.dim(1), map.dim(2)});
    for (std::size_t c = 0; c < C; ++c) {
        const double* src = map.data() + c * HW;
        for (std::size_t i = 0; i < HW; ++i) out[i] += std::abs(src[i]);
    }
    for (auto& v : out.values()) v /= static_cast<double>(C);
    return out;
}

void AttributionOptions::validate() const {
    if (ig_steps == 0) throw ConfigError("ig_steps must be >= 1");
    if (shap_samples == 0) throw ConfigError("shap_samples must be >= 1");
    if (!(shap_noise >= 0.0)) throw ConfigError("shap_noise must be >= 0");
    LrpRule::make_epsilon(lrp_epsilon).validate();
    LrpRule::make_alphabeta(lrp_alpha, lrp_beta).validate();
}

Explainer::Explainer(const NetworkSpec& spec, const ParamSet& params, std::string model_id)
    : spec_(&spec), params_(&params), canonized_(canonize(spec, params)), model_id_(std::move(model_id)) {}

AttributionMap Explainer::explain(Method method, const Tensor& sample, const std::string& sample_id, int label,
                                  const AttributionOptions& options, Rng& rng) const {
    check_sample(*spec_, sample);
    AttributionMap out;
    out.method = method;
    out.model_id = model_id_;
    out.sample_id = sample_id;
    if (options.target_label) {
        if (label < 0) throw ConfigError("label-targeted attribution needs a label");
        out.target = static_cast<std::size_t>(label);
        check_target(*spec_, out.target);
    } else {
        out.target = predicted_class(*spec_, *params_, sample);
    }

    switch (method) {
        case Method::deconvolution:
            out.values = deconvolution(*spec_, *params_, sample, out.target);
            break;
        case Method::integrated_gradients:
            out.values = integrated_gradients(*spec_, *params_, sample, Tensor(sample.shape()), out.target,
                                              options.ig_steps);
            break;
        case Method::gradient_shap: {
            const Tensor zero(sample.shape());
            out.values = gradient_shap(*spec_, *params_, sample, std::span<const Tensor>(&zero, 1), out.target,
                                       options.shap_samples, options.shap_noise, rng);
            break;
        }
        case Method::lrp_epsilon:
            out.values = lrp(canonized_, sample, out.target, LrpRule::make_epsilon(options.lrp_epsilon));
            break;
        case Method::lrp_alphabeta:
            out.values =
                lrp(canonized_, sample, out.target, LrpRule::make_alphabeta(options.lrp_alpha, options.lrp_beta));
            break;
        case Method::laplace:
            out.values = laplace_baseline(sample);
            break;
        case Method::raw:
            out.values = raw_baseline(sample);
            break;
    }
    if (!out.values.all_finite()) {
        throw NumericError(to_string(method) + " produced non-finite attributions for sample " + sample_id);
    }
    return out;
}

}  // namespace sprobe
