#include <algorithm>
#include <cmath>
#include <numbers>

#include "sprobe/dataset.hpp"
#include "sprobe/errors.hpp"

namespace sprobe {

std::string to_string(ColourSpace v) { return v == ColourSpace::rgb ? "rgb" : "hls"; }
std::string to_string(Encoding v) { return v == Encoding::standard ? "standard" : "inverted"; }
std::string to_string(LightnessRegime v) {
    switch (v) {
        case LightnessRegime::dark: return "dark";
        case LightnessRegime::bright: return "bright";
        case LightnessRegime::base: break;
    }
    return "base";
}
std::string to_string(Study v) { return v == Study::watermark ? "watermark" : "lightness"; }
std::string to_string(Setting v) {
    switch (v) {
        case Setting::confounded: return "confounded";
        case Setting::balanced: return "balanced";
        case Setting::baseline: break;
    }
    return "baseline";
}
std::string to_string(PlacementMode v) { return v == PlacementMode::fixed ? "fixed" : "variable"; }

Study parse_study(const std::string& s) {
    if (s == "watermark") return Study::watermark;
    if (s == "lightness") return Study::lightness;
    throw ConfigError("unknown study '" + s + "'");
}

Setting parse_setting(const std::string& s) {
    if (s == "confounded") return Setting::confounded;
    if (s == "balanced") return Setting::balanced;
    if (s == "baseline" || s == "no-wm" || s == "no-watermark") return Setting::baseline;
    throw ConfigError("unknown setting '" + s + "'");
}

PlacementMode parse_placement(const std::string& s) {
    if (s == "fixed") return PlacementMode::fixed;
    if (s == "variable") return PlacementMode::variable;
    throw ConfigError("unknown watermark placement '" + s + "'");
}

Encoding parse_encoding(const std::string& s) {
    if (s == "standard") return Encoding::standard;
    if (s == "inverted") return Encoding::inverted;
    throw ConfigError("unknown encoding '" + s + "'");
}

SettingSpec SettingSpec::make(Study study, Setting setting) {
    SettingSpec s;
    s.study = study;
    s.setting = setting;
    if (study == Study::watermark) {
        if (setting == Setting::confounded) s.prevalence = {0.2, 0.8};
        if (setting == Setting::balanced) s.prevalence = {0.5, 0.5};
    } else if (setting != Setting::baseline) {
        s.prevalence = {0.5, 0.5};
    }
    return s;
}

namespace {

struct Shape2d {
    double cy, cx, a, b, theta, exponent;
};

// Coverage in [0,1] of a rotated superellipse, ~1px antialiased edge.
double coverage(const Shape2d& s, double y, double x) {
    const double dy = y - s.cy, dx = x - s.cx;
    const double c = std::cos(s.theta), sn = std::sin(s.theta);
    const double u = (dx * c + dy * sn) / s.a;
    const double v = (-dx * sn + dy * c) / s.b;
    const double f = std::pow(std::pow(std::abs(u), s.exponent) + std::pow(std::abs(v), s.exponent), 1.0 / s.exponent);
    return std::clamp((1.0 - f) * std::min(s.a, s.b) + 0.5, 0.0, 1.0);
}

void paint(Tensor& img, const Shape2d& s, const std::array<double, 3>& colour, double opacity, double stripe_amp,
           double stripe_period, double stripe_angle) {
    const std::size_t H = img.dim(1), W = img.dim(2);
    const double reach = std::max(s.a, s.b) * 1.5 + 2.0;
    const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(s.cy - reach)));
    const auto y1 = static_cast<std::size_t>(std::min(static_cast<double>(H), std::ceil(s.cy + reach)));
    const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(s.cx - reach)));
    const auto x1 = static_cast<std::size_t>(std::min(static_cast<double>(W), std::ceil(s.cx + reach)));
    const double ca = std::cos(stripe_angle), sa = std::sin(stripe_angle);
    for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) {
            const double yy = static_cast<double>(y) + 0.5, xx = static_cast<double>(x) + 0.5;
            const double cov = coverage(s, yy, xx) * opacity;
            if (cov <= 0.0) continue;
            const double stripe =
                stripe_amp * std::sin(2.0 * std::numbers::pi * (xx * ca + yy * sa) / stripe_period);
            for (std::size_t c = 0; c < 3; ++c) {
                double& px = img[(c * H + y) * W + x];
                px = (1.0 - cov) * px + cov * (colour[c] + stripe);
            }
        }
    }
}

ImageSample synth_one(int label, std::uint64_t id, std::size_t H, std::size_t W, const SynthParams& p,
                      std::uint64_t seed) {
    Rng rng = make_rng({seed, id, 0x5e7});
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
    const double h = static_cast<double>(H), w = static_cast<double>(W);

    Tensor img({3, H, W});
    std::array<double, 3> bg{uni(0.1, 0.6), uni(0.1, 0.6), uni(0.1, 0.6)};
    const double grad_angle = uni(0.0, 2.0 * std::numbers::pi);
    const double grad_amp = uni(0.1, 0.3);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                const double t = ((static_cast<double>(x) - w / 2) * std::cos(grad_angle) +
                                  (static_cast<double>(y) - h / 2) * std::sin(grad_angle)) / w;
                img[(c * H + y) * W + x] = bg[c] + grad_amp * t;
            }
        }
    }

    for (std::size_t k = 0; k < p.clutter; ++k) {
        Shape2d s{uni(0.0, h), uni(0.0, w), uni(0.04, 0.11) * h, 0.0, uni(0.0, std::numbers::pi),
                  std::exp(uni(std::log(1.5), std::log(7.0)))};
        s.b = s.a * uni(0.5, 1.0);
        paint(img, s, {uni(0.0, 1.0), uni(0.0, 1.0), uni(0.0, 1.0)}, uni(0.5, 1.0), 0.0, 1.0, 0.0);
    }

    const double lo = label == 0 ? p.round_min : p.square_min;
    const double hi = label == 0 ? p.round_max : p.square_max;
    Shape2d obj{h / 2 + uni(-0.12, 0.12) * h, w / 2 + uni(-0.12, 0.12) * w, uni(0.2, 0.32) * std::min(h, w), 0.0,
                uni(0.0, std::numbers::pi), std::exp(uni(std::log(lo), std::log(hi)))};
    obj.b = obj.a * uni(0.7, 1.0);
    const double period = label == 0 ? uni(p.period0_min, p.period0_max) : uni(p.period1_min, p.period1_max);
    paint(img, obj, {uni(0.2, 1.0), uni(0.2, 1.0), uni(0.2, 1.0)}, 1.0, uni(0.05, 0.2), period,
          uni(0.0, std::numbers::pi));

    std::normal_distribution<double> noise(0.0, p.noise_std);
    if (p.noise_std > 0.0) {
        for (auto& v : img.values()) v += noise(rng);
    }
    minmax_scale_channels(img);

    ImageSample s;
    s.pixels = std::move(img);
    s.label = label;
    s.base_id = id;
    return s;
}

}  // namespace

std::vector<ImageSample> synth_corpus(std::size_t n_per_class, std::size_t height, std::size_t width,
                                      const SynthParams& params, std::uint64_t seed) {
    if (height < 32 || width < 32) throw ConfigError("synthetic images must be at least 32x32");
    if (!(params.round_min > 0 && params.round_min <= params.round_max && params.square_min > 0 &&
          params.square_min <= params.square_max && params.noise_std >= 0 && params.period0_min >= 2.0 &&
          params.period0_min <= params.period0_max && params.period1_min >= 2.0 &&
          params.period1_min <= params.period1_max)) {
        throw ConfigError("invalid synthetic corpus parameters");
    }
    std::vector<ImageSample> out;
    out.reserve(2 * n_per_class);
    for (std::size_t i = 0; i < n_per_class; ++i) {
        for (int label = 0; label < 2; ++label) {
            const std::uint64_t id = 2 * i + static_cast<std::uint64_t>(label);
            out.push_back(synth_one(label, id, height, width, params, seed));
        }
    }
    return out;
}

std::vector<Treatment> assign_manipulations(std::span<const int> labels, const SettingSpec& spec, Rng& rng) {
    std::vector<Treatment> out(labels.size(),
                               spec.study == Study::watermark ? Treatment::none : Treatment::base);
    for (int cls = 0; cls < 2; ++cls) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != 0 && labels[i] != 1) throw ConfigError("labels must be 0 or 1");
            if (labels[i] == cls) members.push_back(i);
        }
        std::shuffle(members.begin(), members.end(), rng);
        const double n = static_cast<double>(members.size());
        auto count = [&](double frac) { return static_cast<std::size_t>(std::llround(frac * n)); };
        if (spec.study == Study::watermark) {
            const std::size_t k = count(spec.prevalence[static_cast<std::size_t>(cls)]);
            for (std::size_t j = 0; j < k; ++j) out[members[j]] = Treatment::watermark;
        } else if (spec.setting == Setting::confounded) {
            const std::size_t k = count(spec.prevalence[static_cast<std::size_t>(cls)]);
            for (std::size_t j = 0; j < k; ++j) out[members[j]] = cls == 0 ? Treatment::dark : Treatment::bright;
        } else if (spec.setting == Setting::balanced) {
            const double half = spec.prevalence[static_cast<std::size_t>(cls)] / 2.0;
            const std::size_t dark = count(half);
            const std::size_t bright = std::min(members.size() - dark, count(half));
            for (std::size_t j = 0; j < dark; ++j) out[members[j]] = Treatment::dark;
            for (std::size_t j = dark; j < dark + bright; ++j) out[members[j]] = Treatment::bright;
        }
    }
    return out;
}

SplitIndices make_split_indices(std::span<const int> labels, std::uint64_t split_seed) {
    SplitIndices out;
    for (int cls = 0; cls < 2; ++cls) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == cls) members.push_back(i);
        }
        if (members.size() < 10) {
            throw ConfigError("class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                              " samples; at least 10 are required to split");
        }
        Rng rng = make_rng({split_seed, static_cast<std::uint64_t>(cls), 0x5b11});
        std::shuffle(members.begin(), members.end(), rng);
        const double n = static_cast<double>(members.size());
        const auto n_train = static_cast<std::size_t>(std::llround(0.70 * n));
        const auto n_val = static_cast<std::size_t>(std::llround(0.15 * n));
        out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
        out.val.insert(out.val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train),
                       members.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
        out.test.insert(out.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), members.end());
    }
    for (auto* part : {&out.train, &out.val, &out.test}) std::sort(part->begin(), part->end());
    return out;
}

ImageSample manipulate(const ImageSample& base, Treatment treatment, const StudyDesign& design,
                       std::uint64_t split_seed) {
    if (design.study == Study::watermark) {
        if (treatment != Treatment::none && treatment != Treatment::watermark) {
            throw UsageError("lightness treatment requested in the watermark study");
        }
        Rng rng = make_rng({split_seed, base.base_id, 0x0419});
        const PixelPos origin =
            place_mask(design.placement, base.height(), base.width(), design.mask.height, design.mask.width, rng);
        ImageSample out = treatment == Treatment::watermark ? apply_watermark(base, design.mask, origin) : base;
        out.manipulation.mask_origin = origin;
        if (design.encoding == Encoding::inverted) out = invert_encoding(out);
        return out;
    }
    LightnessRegime regime = LightnessRegime::base;
    if (treatment == Treatment::dark) regime = LightnessRegime::dark;
    if (treatment == Treatment::bright) regime = LightnessRegime::bright;
    if (treatment == Treatment::watermark) throw UsageError("watermark treatment requested in the lightness study");
    ImageSample out = rgb_to_hls(base);
    const std::size_t plane = out.height() * out.width();
    auto lightness = out.pixels.values().subspan(plane, plane);
    const auto target = lightness_target(regime);
    const auto matched = histogram_match_to_beta(lightness, target.alpha, target.beta);
    std::copy(matched.begin(), matched.end(), lightness.begin());
    out.manipulation.lightness_regime = regime;
    return out;
}

std::vector<std::string> test_variant_names(Study study) {
    if (study == Study::watermark) return {"no-wm", "wm"};
    return {"base", "dark", "bright"};
}

DatasetSplit make_splits(const std::vector<ImageSample>& base, std::uint64_t split_seed, const SettingSpec& setting,
                         const StudyDesign& design) {
    if (setting.study != design.study) throw ConfigError("setting and study design disagree on the study");
    std::vector<int> labels;
    labels.reserve(base.size());
    for (const auto& s : base) labels.push_back(s.label);
    const SplitIndices idx = make_split_indices(labels, split_seed);

    DatasetSplit split;
    split.setting = setting;
    split.split_seed = split_seed;
    auto build = [&](const std::vector<std::size_t>& part, std::uint64_t part_no) {
        std::vector<int> part_labels;
        for (auto i : part) part_labels.push_back(base[i].label);
        Rng rng = make_rng({split_seed, static_cast<std::uint64_t>(setting.setting), part_no, 0xa55});
        const auto treatments = assign_manipulations(part_labels, setting, rng);
        std::vector<ImageSample> out;
        out.reserve(part.size());
        for (std::size_t j = 0; j < part.size(); ++j) {
            out.push_back(manipulate(base[part[j]], treatments[j], design, split_seed));
        }
        return out;
    };
    split.train = build(idx.train, 0);
    split.val = build(idx.val, 1);
    split.test = build(idx.test, 2);

    const std::vector<std::pair<std::string, Treatment>> variants =
        design.study == Study::watermark
            ? std::vector<std::pair<std::string, Treatment>>{{"no-wm", Treatment::none}, {"wm", Treatment::watermark}}
            : std::vector<std::pair<std::string, Treatment>>{
                  {"base", Treatment::base}, {"dark", Treatment::dark}, {"bright", Treatment::bright}};
    for (const auto& [name, treatment] : variants) {
        auto& v = split.test_variants[name];
        v.reserve(idx.test.size());
        for (auto i : idx.test) v.push_back(manipulate(base[i], treatment, design, split_seed));
    }
    return split;
}

}  // namespace sprobe
