#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sprobe/rng.hpp"
#include "sprobe/tensor.hpp"

namespace sprobe {

enum class ColourSpace { rgb, hls };
enum class Encoding { standard, inverted };
enum class LightnessRegime { dark, base, bright };
enum class Study { watermark, lightness };
enum class Setting { confounded, balanced, baseline };
enum class PlacementMode { fixed, variable };

std::string to_string(ColourSpace v);
std::string to_string(Encoding v);
std::string to_string(LightnessRegime v);
std::string to_string(Study v);
std::string to_string(Setting v);
std::string to_string(PlacementMode v);
Study parse_study(const std::string& s);
Setting parse_setting(const std::string& s);
PlacementMode parse_placement(const std::string& s);
Encoding parse_encoding(const std::string& s);

struct PixelPos {
    std::size_t row = 0;
    std::size_t col = 0;
    bool operator==(const PixelPos&) const = default;
};

struct Manipulation {
    bool watermark_applied = false;
    // Watermark study: where the mask sits (or would sit) for this image.
    std::optional<PixelPos> mask_origin;
    std::optional<LightnessRegime> lightness_regime;
};

struct ImageSample {
    Tensor pixels;  // (C, H, W), values in [0, 1]
    int label = 0;
    ColourSpace colour_space = ColourSpace::rgb;
    Encoding encoding = Encoding::standard;
    Manipulation manipulation;
    std::uint64_t base_id = 0;  // identity of the underlying base image

    std::size_t channels() const { return pixels.dim(0); }
    std::size_t height() const { return pixels.dim(1); }
    std::size_t width() const { return pixels.dim(2); }
};

struct WatermarkMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;             // row-major, background exactly 1
    std::vector<std::uint32_t> foreground;  // row-major indices into values, ascending

    std::size_t foreground_count() const { return foreground.size(); }
    double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
};

// Per-class manipulation prevalence, indexed by label.
struct SettingSpec {
    Study study = Study::watermark;
    Setting setting = Setting::baseline;
    std::array<double, 2> prevalence{0.0, 0.0};

    static SettingSpec make(Study study, Setting setting);
};

enum class Treatment { none, watermark, dark, base, bright };

// --- pixel-level operations ---------------------------------------------------

// (x - min) / (max - min); a constant channel maps to all zeros.
std::vector<double> minmax_scale(std::span<const double> channel);
void minmax_scale_channels(Tensor& image);

ImageSample apply_watermark(const ImageSample& image, const WatermarkMask& mask, PixelPos origin);
PixelPos place_mask(PlacementMode mode, std::size_t image_h, std::size_t image_w, std::size_t mask_h,
                    std::size_t mask_w, Rng& rng);
ImageSample invert_encoding(const ImageSample& image);

// Procedural logo-plus-text mask whose foreground count is
// round(fraction * height * width).
WatermarkMask make_mask(std::size_t height, std::size_t width, double foreground_fraction, Rng& rng);

// Mask dimensions scaled to an image so that the foreground covers the same
// share of the image as a 1983-pixel mark on a 128x128 image.
struct MaskGeometry {
    std::size_t height = 0;
    std::size_t width = 0;
    double foreground_fraction = 0.0;
};
inline constexpr double kWatermarkImageShare = 1983.0 / (128.0 * 128.0);
MaskGeometry scaled_mask_geometry(std::size_t image_h, std::size_t image_w);

// --- colour and histogram -----------------------------------------------------

std::array<double, 3> rgb_to_hls(double r, double g, double b);
std::array<double, 3> hls_to_rgb(double h, double l, double s);
ImageSample rgb_to_hls(const ImageSample& image);
ImageSample hls_to_rgb(const ImageSample& image);

double beta_cdf(double x, double alpha, double beta);
double beta_quantile(double p, double alpha, double beta);
std::vector<double> histogram_match_to_beta(std::span<const double> channel, double alpha, double beta);

struct BetaParams {
    double alpha;
    double beta;
};
BetaParams lightness_target(LightnessRegime regime);

// --- corpora ------------------------------------------------------------------

struct SynthParams {
    // Superellipse exponent ranges per class; overlapping ranges make the
    // task imperfectly separable.
    double round_min = 1.5;
    double round_max = 2.6;
    double square_min = 2.0;
    double square_max = 7.0;
    // Stripe period (pixels) of the object texture, per class.
    double period0_min = 3.0;
    double period0_max = 6.0;
    double period1_min = 4.5;
    double period1_max = 9.0;
    double noise_std = 0.08;
    std::size_t clutter = 6;
};

// n_per_class images of each label, RGB, Min-Max scaled per channel.
std::vector<ImageSample> synth_corpus(std::size_t n_per_class, std::size_t height, std::size_t width,
                                      const SynthParams& params, std::uint64_t seed);

std::vector<Treatment> assign_manipulations(std::span<const int> labels, const SettingSpec& spec, Rng& rng);

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

// Class-stratified 70/15/15 partition of sample indices.
SplitIndices make_split_indices(std::span<const int> labels, std::uint64_t split_seed);

struct StudyDesign {
    Study study = Study::watermark;
    WatermarkMask mask;  // watermark study only
    PlacementMode placement = PlacementMode::fixed;
    Encoding encoding = Encoding::standard;
};

struct DatasetSplit {
    SettingSpec setting;
    std::uint64_t split_seed = 0;
    std::vector<ImageSample> train;
    std::vector<ImageSample> val;
    std::vector<ImageSample> test;
    // Watermark study: "no-wm" and "wm"; lightness study: "base", "dark",
    // "bright". Every variant holds the test base images in test order.
    std::map<std::string, std::vector<ImageSample>> test_variants;
};

DatasetSplit make_splits(const std::vector<ImageSample>& base, std::uint64_t split_seed, const SettingSpec& setting,
                         const StudyDesign& design);

// Deterministic manipulation of one base image.
ImageSample manipulate(const ImageSample& base, Treatment treatment, const StudyDesign& design,
                       std::uint64_t split_seed);

std::vector<std::string> test_variant_names(Study study);

}  // namespace sprobe
