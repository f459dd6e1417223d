#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sprobe/network.hpp"
#include "sprobe/rng.hpp"
#include "sprobe/tensor.hpp"

namespace sprobe {

enum class Method { deconvolution, integrated_gradients, gradient_shap, lrp_epsilon, lrp_alphabeta, laplace, raw };

// Short names used in configs and CSVs: deconv, ig, gradshap, lrp-eps,
// lrp-ab, laplace, raw.
std::string to_string(Method m);
Method parse_method(const std::string& name);
bool is_model_independent(Method m);
std::vector<Method> all_methods();

struct AttributionMap {
    Tensor values;  // (C, H, W), signed
    Method method = Method::raw;
    std::size_t target = 0;
    std::string model_id;
    std::string sample_id;
};

// Network with every eval-mode batchnorm folded into the convolution before it.
struct CanonizedNetwork {
    NetworkSpec spec;
    ParamSet params;
};

CanonizedNetwork canonize(const NetworkSpec& spec, const ParamSet& params);

// Argmax of the eval-mode logits; ties go to the lower class index.
std::size_t predicted_class(const NetworkSpec& spec, const ParamSet& params, const Tensor& sample);

// Gradient of logit `target` for every sample of an (N,C,H,W) batch.
Tensor logit_gradients(const NetworkSpec& spec, const ParamSet& params, const Tensor& batch, std::size_t target,
                       BackwardRule rule = BackwardRule::exact);

Tensor deconvolution(const NetworkSpec& spec, const ParamSet& params, const Tensor& sample, std::size_t target);

// Gradient of the explained scalar output for every row of a batch shaped
// (N, sample dims...).
using BatchGradient = std::function<Tensor(const Tensor& batch)>;

// Midpoint rule over alpha = (k + 0.5) / steps; `chunk` interpolation points
// share one batched pass.
Tensor integrated_gradients(const BatchGradient& gradient, const Tensor& sample, const Tensor& baseline,
                            std::size_t steps, std::size_t chunk = 32);
Tensor integrated_gradients(const NetworkSpec& spec, const ParamSet& params, const Tensor& sample,
                            const Tensor& baseline, std::size_t target, std::size_t steps, std::size_t chunk = 32);

// Mean over n_samples draws of (x - b) * grad(b + u (x - b) + noise), with b
// picked uniformly from the pool, u ~ U(0,1), noise ~ N(0, noise_std^2).
Tensor gradient_shap(const BatchGradient& gradient, const Tensor& sample, std::span<const Tensor> baselines,
                     std::size_t n_samples, double noise_std, Rng& rng);
Tensor gradient_shap(const NetworkSpec& spec, const ParamSet& params, const Tensor& sample,
                     std::span<const Tensor> baselines, std::size_t target, std::size_t n_samples, double noise_std,
                     Rng& rng);

struct LrpRule {
    enum class Kind { epsilon, alphabeta };
    Kind kind = Kind::epsilon;
    double epsilon = 1e-6;
    double alpha = 2.0;
    double beta = 1.0;  // magnitude; alpha - beta must equal 1

    static LrpRule make_epsilon(double eps) { return {Kind::epsilon, eps, 2.0, 1.0}; }
    static LrpRule make_alphabeta(double alpha, double beta) { return {Kind::alphabeta, 0.0, alpha, beta}; }
    void validate() const;
};

struct LrpResult {
    Tensor relevance;  // (C, H, W)
    // layer_sums[i] is the total relevance at the input of layer i;
    // layer_sums.back() is the starting relevance (the target logit).
    std::vector<double> layer_sums;
    double target_logit = 0.0;
};

LrpResult lrp_detailed(const CanonizedNetwork& net, const Tensor& sample, std::size_t target, const LrpRule& rule);
Tensor lrp(const CanonizedNetwork& net, const Tensor& sample, std::size_t target, const LrpRule& rule);

// 3x3 Laplace stencil per channel, zero padding, signed.
Tensor laplace_baseline(const Tensor& sample);
Tensor raw_baseline(const Tensor& sample);

// (C,H,W) -> (H,W) mean of channel absolute values.
Tensor channel_mean_abs(const Tensor& map);

struct AttributionOptions {
    std::size_t ig_steps = 50;
    std::size_t shap_samples = 8;
    double shap_noise = 0.1;
    double lrp_epsilon = 1e-6;
    double lrp_alpha = 2.0;
    double lrp_beta = 1.0;
    bool target_label = false;  // explain the label's logit instead of the prediction
    void validate() const;
};

// One trained model prepared for every method (canonized copy built once).
class Explainer {
public:
    Explainer(const NetworkSpec& spec, const ParamSet& params, std::string model_id);

    // rng is consumed by gradient_shap only. label is used when
    // options.target_label is set.
    AttributionMap explain(Method method, const Tensor& sample, const std::string& sample_id, int label,
                           const AttributionOptions& options, Rng& rng) const;

    const std::string& model_id() const noexcept { return model_id_; }

private:
    const NetworkSpec* spec_;
    const ParamSet* params_;
    CanonizedNetwork canonized_;
    std::string model_id_;
};

}  // namespace sprobe
