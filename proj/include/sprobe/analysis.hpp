#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sprobe/attribution.hpp"
#include "sprobe/dataset.hpp"
#include "sprobe/tensor.hpp"

namespace sprobe {

// One metric value per (model, sample, variant, method). The value is RIW in
// the watermark study and RIL in the lightness study.
struct RiwRecord {
    Study study = Study::watermark;
    Setting setting = Setting::baseline;
    std::uint64_t split_seed = 0;
    std::uint64_t model_seed = 0;
    Method method = Method::raw;
    std::uint64_t sample_id = 0;
    int cls = 0;
    std::string variant;  // wm / no-wm, or dark / base / bright
    double value = 0.0;

    bool operator==(const RiwRecord&) const = default;
};

// Flat indices into an (H,W) image covered by the mask foreground at origin.
std::vector<std::size_t> watermark_pixel_indices(const WatermarkMask& mask, PixelPos origin, std::size_t image_h,
                                                 std::size_t image_w);

// Mean over the mask pixels divided by the mean over the whole (H,W) map.
double riw(const Tensor& channel_mean, std::span<const std::size_t> mask_indices);

// Lightness share of a (3,H,W) HLS attribution map: sum|a_L| over the
// channel-mean mass. Range [0, 3].
double ril(const Tensor& hls_map);

struct ComponentImage {
    Tensor direction;  // leading left singular vector, unit norm, map shape
    Tensor image;      // (H,W) channel mean of |direction|
    double eigenvalue = 0.0;  // of the centered A * A^T
    std::size_t iterations = 0;
};

struct PowerIterationOptions {
    double tolerance = 1e-9;
    std::size_t max_iterations = 10000;
    std::uint64_t seed = 0x5bd1e995;
};

ComponentImage svd_first_component(std::span<const Tensor> maps, const PowerIterationOptions& options = {});

struct FactorResult {
    std::string factor;
    double r2 = 0.0;
    int direction = 0;  // sign(mean of level 0 - mean of level 1); 0 unless two levels
    double p_value = 1.0;
    std::size_t n = 0;
};

// One-way fixed-effects R^2 of values on level codes 0..K-1 with a seeded
// permutation p-value (fraction of permutations reaching the observed R^2,
// add-one corrected). Constant values give R^2 = 0, p = 1.
FactorResult factor_r2(std::span<const double> values, std::span<const int> levels, std::size_t permutations,
                       std::uint64_t seed, std::string factor = {});

// A per-sample unit: the metric averaged over model seeds.
struct SampleUnit {
    Study study = Study::watermark;
    Setting setting = Setting::baseline;
    std::uint64_t split_seed = 0;
    Method method = Method::raw;
    std::uint64_t sample_id = 0;
    int cls = 0;
    std::string variant;
    double value = 0.0;
    std::size_t models = 0;
};

std::vector<SampleUnit> average_over_models(std::span<const RiwRecord> records);

struct SummaryRow {
    Study study = Study::watermark;
    Setting setting = Setting::baseline;
    std::string variant;  // or "<a>-<b>" for paired differences
    int cls = -1;         // -1 pools both classes
    Method method = Method::raw;
    std::size_t n = 0;
    double mean = 0.0;
    double se = 0.0;  // sample std / sqrt(n); 0 when n == 1
};

// Mean and standard error by (setting, variant, class, method), plus paired
// difference rows: wm - no-wm, or dark - base and bright - base.
std::vector<SummaryRow> summary_table(std::span<const SampleUnit> units);

struct HistogramRow {
    Study study = Study::watermark;
    Setting setting = Setting::baseline;
    Method method = Method::raw;
    std::string variant;
    double bin_lo = 0.0;
    double bin_hi = 0.0;
    std::size_t count = 0;
};

// Bins [k*w, (k+1)*w) from origin 0; every bin between a group's lowest and
// highest occupied bin is emitted.
std::vector<HistogramRow> histogram(std::span<const SampleUnit> units, double bin_width);

struct R2Row {
    Study study = Study::watermark;
    Method method = Method::raw;
    std::string setting_subset;
    FactorResult result;
};

// Manipulation-presence R^2 per training setting and pooled over
// {confounded, balanced}, and training-setting R^2 on {confounded, balanced}.
std::vector<R2Row> r2_table(std::span<const SampleUnit> units, std::size_t permutations, std::uint64_t seed);

// CSV round trips. Doubles are written with 17 significant digits.
void write_metrics_csv(const std::filesystem::path& path, std::span<const RiwRecord> records);
std::vector<RiwRecord> read_metrics_csv(const std::filesystem::path& path);
void write_summary_csv(const std::filesystem::path& path, std::span<const SummaryRow> rows);
void write_histogram_csv(const std::filesystem::path& path, std::span<const HistogramRow> rows);
void write_r2_csv(const std::filesystem::path& path, std::span<const R2Row> rows);

std::string format_double(double v);

}  // namespace sprobe
