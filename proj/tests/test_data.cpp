#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "sprobe/dataset.hpp"
#include "sprobe/errors.hpp"
#include "sprobe/image_io.hpp"
#include "test_util.hpp"

using namespace sprobe;

namespace {

ImageSample rgb_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    ImageSample s;
    s.pixels = sprobe::testing::random_tensor({3, h, w}, seed, 0.0, 1.0);
    return s;
}

WatermarkMask tiny_mask() {
    WatermarkMask m;
    m.height = 2;
    m.width = 2;
    m.values = {1.0, 0.2, 0.4, 1.0};
    m.foreground = {1, 2};
    return m;
}

// Composite Simpson integral of f on [a, b].
template <class F>
double simpson(F f, double a, double b, int n = 20000) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

double beta24_density(double x) { return 20.0 * x * std::pow(1.0 - x, 3); }
double beta33_density(double x) { return 30.0 * x * x * (1.0 - x) * (1.0 - x); }

void write_p6(const std::filesystem::path& path, std::size_t h, std::size_t w, const std::vector<unsigned char>& rgb) {
    std::ofstream out(path, std::ios::binary);
    out << "P6\n" << w << ' ' << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

std::vector<ImageSample> small_corpus() {
    static const auto corpus = synth_corpus(20, 32, 32, SynthParams{}, 5);
    return corpus;
}

StudyDesign watermark_design(std::size_t h, std::size_t w, PlacementMode placement = PlacementMode::fixed,
                             Encoding encoding = Encoding::standard) {
    const auto g = scaled_mask_geometry(h, w);
    Rng rng(99);
    StudyDesign d;
    d.study = Study::watermark;
    d.mask = make_mask(g.height, g.width, g.foreground_fraction, rng);
    d.placement = placement;
    d.encoding = encoding;
    return d;
}

}  // namespace

TEST(MinMax, Examples) {
    const std::vector<double> a{0.2, 0.5, 0.8};
    const auto s = minmax_scale(a);
    EXPECT_NEAR(s[0], 0.0, 1e-15);
    EXPECT_NEAR(s[1], 0.5, 1e-15);
    EXPECT_NEAR(s[2], 1.0, 1e-15);

    const std::vector<double> flat(5, 0.37);
    for (double v : minmax_scale(flat)) EXPECT_EQ(v, 0.0);

    const std::vector<double> span01{0.0, 0.3, 1.0};
    const auto t = minmax_scale(span01);
    EXPECT_EQ(t[0], 0.0);
    EXPECT_EQ(t[2], 1.0);
    EXPECT_THROW(minmax_scale(std::vector<double>{}), ConfigError);
}

TEST(Watermark, BlendExamples) {
    ImageSample img;
    img.pixels = Tensor({1, 2, 2}, std::vector<double>{0.6, 0.0, 0.5, 0.9});
    const auto out = apply_watermark(img, tiny_mask(), {0, 0});
    EXPECT_EQ(out.pixels[0], 0.6);  // m = 1
    EXPECT_NEAR(out.pixels[1], 0.8, 1e-15);  // x = 0, m = 0.2
    EXPECT_NEAR(out.pixels[2], 0.8, 1e-15);  // x = 0.5, m = 0.4
    EXPECT_EQ(out.pixels[3], 0.9);
    EXPECT_TRUE(out.manipulation.watermark_applied);
    ASSERT_TRUE(out.manipulation.mask_origin.has_value());
    EXPECT_EQ(*out.manipulation.mask_origin, (PixelPos{0, 0}));
}

TEST(Watermark, OutOfBoundsAndWrongEncoding) {
    const auto img = rgb_image(4, 4, 1);
    EXPECT_THROW(apply_watermark(img, tiny_mask(), {3, 0}), ConfigError);
    EXPECT_THROW(apply_watermark(img, tiny_mask(), {0, 3}), ConfigError);
    EXPECT_THROW(apply_watermark(invert_encoding(img), tiny_mask(), {0, 0}), UsageError);
}

TEST(Watermark, NeverDarkensAndLeavesBackground) {
    const auto img = rgb_image(64, 64, 2);
    const auto d = watermark_design(64, 64);
    Rng rng(4);
    const PixelPos origin = place_mask(PlacementMode::variable, 64, 64, d.mask.height, d.mask.width, rng);
    const auto out = apply_watermark(img, d.mask, origin);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t r = 0; r < 64; ++r)
            for (std::size_t k = 0; k < 64; ++k) {
                const std::size_t i = (c * 64 + r) * 64 + k;
                EXPECT_GE(out.pixels[i], img.pixels[i]);
                const bool inside = r >= origin.row && r < origin.row + d.mask.height && k >= origin.col &&
                                    k < origin.col + d.mask.width;
                if (!inside || d.mask.at(r - origin.row, k - origin.col) == 1.0) {
                    EXPECT_EQ(out.pixels[i], img.pixels[i]);
                }
            }
}

TEST(Watermark, InvertAfterBlendClosedForm) {
    const auto img = rgb_image(8, 8, 3);
    const auto mask = tiny_mask();
    const auto inv = invert_encoding(apply_watermark(img, mask, {2, 3}));
    EXPECT_EQ(inv.encoding, Encoding::inverted);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t r = 0; r < 8; ++r)
            for (std::size_t k = 0; k < 8; ++k) {
                const std::size_t i = (c * 8 + r) * 8 + k;
                double m = 1.0;
                if (r >= 2 && r < 4 && k >= 3 && k < 5) m = mask.at(r - 2, k - 3);
                EXPECT_NEAR(inv.pixels[i], 1.0 - (1.0 - m * (1.0 - img.pixels[i])), 1e-15);
            }
}

TEST(Placement, FixedIsCenteredNearTop) {
    Rng rng(1);
    const auto p = place_mask(PlacementMode::fixed, 128, 128, 32, 64, rng);
    EXPECT_EQ(p.col, 32u);
    EXPECT_EQ(p.row, 6u);  // floor(0.05 * 128)
}

TEST(Placement, FullSizeMaskHasOneOrigin) {
    Rng rng(2);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(place_mask(PlacementMode::variable, 5, 7, 5, 7, rng), (PixelPos{0, 0}));
    EXPECT_THROW(place_mask(PlacementMode::variable, 5, 7, 6, 7, rng), ConfigError);
}

TEST(Placement, VariableIsUniform) {
    // 9 x 7 = 63 feasible origins, 10^4 draws
    Rng rng(3);
    std::vector<double> counts(63, 0.0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const auto p = place_mask(PlacementMode::variable, 12, 10, 4, 4, rng);
        ASSERT_LE(p.row, 8u);
        ASSERT_LE(p.col, 6u);
        counts[p.row * 7 + p.col] += 1.0;
    }
    const double expected = draws / 63.0;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // chi-square, 62 dof, upper 0.1% point
    EXPECT_LT(chi2, 100.9);
}

TEST(Encoding, InvertExamples) {
    ImageSample img;
    img.pixels = Tensor({1, 1, 3}, std::vector<double>{0.0, 0.3, 1.0});
    const auto inv = invert_encoding(img);
    EXPECT_EQ(inv.pixels[0], 1.0);
    EXPECT_NEAR(inv.pixels[1], 0.7, 1e-15);
    EXPECT_EQ(inv.pixels[2], 0.0);
    const auto back = invert_encoding(inv);
    EXPECT_EQ(back.encoding, Encoding::standard);
    const auto r = rgb_image(4, 4, 9);
    const auto rr = invert_encoding(invert_encoding(r));
    for (std::size_t i = 0; i < r.pixels.size(); ++i) EXPECT_NEAR(rr.pixels[i], r.pixels[i], 1e-15);
}

TEST(Assignment, WatermarkConfounded) {
    std::vector<int> labels;
    for (int i = 0; i < 10; ++i) labels.push_back(1);
    for (int i = 0; i < 10; ++i) labels.push_back(0);
    Rng rng(5);
    const auto t = assign_manipulations(labels, SettingSpec::make(Study::watermark, Setting::confounded), rng);
    int dogs = 0, cats = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (t[i] == Treatment::watermark) (labels[i] == 1 ? dogs : cats)++;
    }
    EXPECT_EQ(dogs, 8);
    EXPECT_EQ(cats, 2);
}

TEST(Assignment, BaselineHasNoMarks) {
    std::vector<int> labels(30);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
    Rng rng(6);
    for (auto t : assign_manipulations(labels, SettingSpec::make(Study::watermark, Setting::baseline), rng))
        EXPECT_EQ(t, Treatment::none);
    for (auto t : assign_manipulations(labels, SettingSpec::make(Study::lightness, Setting::baseline), rng))
        EXPECT_EQ(t, Treatment::base);
}

TEST(Assignment, LightnessBalancedAndConfounded) {
    std::vector<int> labels(200);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
    Rng rng(7);
    auto count = [&](const std::vector<Treatment>& t, int cls, Treatment which) {
        int n = 0;
        for (std::size_t i = 0; i < t.size(); ++i) n += labels[i] == cls && t[i] == which;
        return n;
    };
    const auto b = assign_manipulations(labels, SettingSpec::make(Study::lightness, Setting::balanced), rng);
    for (int cls = 0; cls < 2; ++cls) {
        EXPECT_EQ(count(b, cls, Treatment::dark), 25);
        EXPECT_EQ(count(b, cls, Treatment::bright), 25);
        EXPECT_EQ(count(b, cls, Treatment::base), 50);
    }
    const auto c = assign_manipulations(labels, SettingSpec::make(Study::lightness, Setting::confounded), rng);
    EXPECT_EQ(count(c, 0, Treatment::dark), 50);
    EXPECT_EQ(count(c, 0, Treatment::bright), 0);
    EXPECT_EQ(count(c, 1, Treatment::bright), 50);
    EXPECT_EQ(count(c, 1, Treatment::dark), 0);
}

TEST(SettingSpec, Prevalences) {
    EXPECT_EQ(SettingSpec::make(Study::watermark, Setting::confounded).prevalence, (std::array<double, 2>{0.2, 0.8}));
    EXPECT_EQ(SettingSpec::make(Study::watermark, Setting::balanced).prevalence, (std::array<double, 2>{0.5, 0.5}));
    EXPECT_EQ(SettingSpec::make(Study::watermark, Setting::baseline).prevalence, (std::array<double, 2>{0.0, 0.0}));
}

TEST(Splits, ProportionsAndDeterminism) {
    std::vector<int> labels(200);
    for (std::size_t i = 0; i < 200; ++i) labels[i] = static_cast<int>(i % 2);
    const auto a = make_split_indices(labels, 3);
    EXPECT_EQ(a.train.size(), 140u);
    EXPECT_EQ(a.val.size(), 30u);
    EXPECT_EQ(a.test.size(), 30u);
    for (const auto* part : {&a.train, &a.val, &a.test}) {
        std::size_t ones = 0;
        for (auto i : *part) ones += labels[i];
        EXPECT_EQ(2 * ones, part->size());
    }
    std::set<std::size_t> all(a.train.begin(), a.train.end());
    all.insert(a.val.begin(), a.val.end());
    all.insert(a.test.begin(), a.test.end());
    EXPECT_EQ(all.size(), 200u);

    const auto b = make_split_indices(labels, 3);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.val, b.val);
    EXPECT_EQ(a.test, b.test);

    std::set<std::vector<std::size_t>> tests;
    for (std::uint64_t seed = 0; seed < 5; ++seed) tests.insert(make_split_indices(labels, seed).test);
    EXPECT_EQ(tests.size(), 5u);
}

TEST(Splits, TooFewSamplesPerClass) {
    std::vector<int> labels(9, 0);
    labels.resize(40, 1);
    EXPECT_THROW(make_split_indices(labels, 0), ConfigError);
}

TEST(Splits, DatasetSplitInvariants) {
    const auto base = small_corpus();
    const auto design = watermark_design(32, 32, PlacementMode::variable);
    for (Setting setting : {Setting::confounded, Setting::balanced, Setting::baseline}) {
        const auto spec = SettingSpec::make(Study::watermark, setting);
        const auto split = make_splits(base, 4, spec, design);
        EXPECT_EQ(split.train.size(), 28u);
        EXPECT_EQ(split.val.size(), 6u);
        EXPECT_EQ(split.test.size(), 6u);

        std::set<std::uint64_t> seen;
        for (const auto* part : {&split.train, &split.val, &split.test}) {
            std::array<std::size_t, 2> size{0, 0}, marked{0, 0};
            for (const auto& s : *part) {
                EXPECT_TRUE(seen.insert(s.base_id).second) << "base image reused across parts";
                size[s.label]++;
                marked[s.label] += s.manipulation.watermark_applied;
                EXPECT_TRUE(s.manipulation.mask_origin.has_value());
                for (double v : s.pixels.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
            }
            for (int c = 0; c < 2; ++c) {
                EXPECT_EQ(marked[c], static_cast<std::size_t>(std::llround(spec.prevalence[c] * size[c])));
            }
        }

        const auto& wm = split.test_variants.at("wm");
        const auto& clean = split.test_variants.at("no-wm");
        ASSERT_EQ(wm.size(), split.test.size());
        ASSERT_EQ(clean.size(), split.test.size());
        for (std::size_t i = 0; i < wm.size(); ++i) {
            EXPECT_EQ(wm[i].base_id, split.test[i].base_id);
            EXPECT_EQ(clean[i].base_id, split.test[i].base_id);
            EXPECT_TRUE(wm[i].manipulation.watermark_applied);
            EXPECT_FALSE(clean[i].manipulation.watermark_applied);
            // the mark sits where it would sit in the split itself
            EXPECT_EQ(wm[i].manipulation.mask_origin, split.test[i].manipulation.mask_origin);
        }
    }
}

TEST(Splits, LightnessVariantsKeepOrder) {
    const auto base = small_corpus();
    StudyDesign design;
    design.study = Study::lightness;
    const auto split = make_splits(base, 1, SettingSpec::make(Study::lightness, Setting::balanced), design);
    for (const auto& name : {"base", "dark", "bright"}) {
        const auto& v = split.test_variants.at(name);
        ASSERT_EQ(v.size(), split.test.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            EXPECT_EQ(v[i].base_id, split.test[i].base_id);
            EXPECT_EQ(v[i].colour_space, ColourSpace::hls);
            EXPECT_EQ(to_string(*v[i].manipulation.lightness_regime), name);
        }
    }
}

TEST(Splits, InvertedEncodingVariant) {
    const auto base = small_corpus();
    const auto design = watermark_design(32, 32, PlacementMode::fixed, Encoding::inverted);
    const auto split = make_splits(base, 0, SettingSpec::make(Study::watermark, Setting::balanced), design);
    for (const auto& s : split.train) EXPECT_EQ(s.encoding, Encoding::inverted);
    const auto& clean = split.test_variants.at("no-wm");
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const auto& src = base[clean[i].base_id];
        EXPECT_NEAR(clean[i].pixels[0], 1.0 - src.pixels[0], 1e-15);
    }
}

TEST(Colour, HlsExamples) {
    const auto red = rgb_to_hls(1.0, 0.0, 0.0);
    EXPECT_NEAR(red[0], 0.0, 1e-15);
    EXPECT_NEAR(red[1], 0.5, 1e-15);
    EXPECT_NEAR(red[2], 1.0, 1e-15);
    const auto grey = rgb_to_hls(0.3, 0.3, 0.3);
    EXPECT_EQ(grey[0], 0.0);
    EXPECT_NEAR(grey[1], 0.3, 1e-15);
    EXPECT_EQ(grey[2], 0.0);
    const auto blue = rgb_to_hls(0.0, 0.0, 1.0);
    EXPECT_NEAR(blue[0], 2.0 / 3.0, 1e-15);
}

TEST(Colour, RoundTrip) {
    Rng rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double r = u(rng), g = u(rng), b = u(rng);
        if (std::max({r, g, b}) - std::min({r, g, b}) < 1e-3) continue;
        const auto hls = rgb_to_hls(r, g, b);
        for (double v : hls) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
        const auto back = hls_to_rgb(hls[0], hls[1], hls[2]);
        worst = std::max({worst, std::abs(back[0] - r), std::abs(back[1] - g), std::abs(back[2] - b)});
    }
    EXPECT_LE(worst, 1e-9);

    const auto img = rgb_image(6, 5, 12);
    const auto hls = rgb_to_hls(img);
    EXPECT_EQ(hls.colour_space, ColourSpace::hls);
    const auto back = hls_to_rgb(hls);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 1e-9);
}

TEST(Beta, QuantileExamples) {
    for (double p : {0.0, 0.1, 0.37, 0.5, 0.9, 1.0}) EXPECT_NEAR(beta_quantile(p, 1.0, 1.0), p, 1e-10);
    EXPECT_NEAR(beta_quantile(0.5, 3.0, 3.0), 0.5, 1e-10);

    // median of Beta(2,4) by bisection on a Simpson-integrated density
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 60; ++i) {
        const double mid = 0.5 * (lo + hi);
        (simpson(beta24_density, 0.0, mid) < 0.5 ? lo : hi) = mid;
    }
    EXPECT_NEAR(beta_quantile(0.5, 2.0, 4.0), 0.5 * (lo + hi), 1e-9);
    EXPECT_THROW(beta_quantile(1.5, 2.0, 4.0), ConfigError);
    EXPECT_THROW(beta_quantile(0.5, 0.0, 4.0), ConfigError);
}

TEST(Beta, CdfInvertsQuantile) {
    for (double a : {0.5, 2.0, 4.0})
        for (double b : {0.7, 2.0, 4.0})
            for (double p : {0.01, 0.25, 0.5, 0.8, 0.99}) EXPECT_NEAR(beta_cdf(beta_quantile(p, a, b), a, b), p, 1e-9);
}

TEST(HistogramMatch, KsAgainstBeta33) {
    const std::size_t n = 4096;
    std::vector<double> grid(n);
    for (std::size_t i = 0; i < n; ++i) grid[i] = static_cast<double>(i) / (n - 1);
    auto out = histogram_match_to_beta(grid, 3.0, 3.0);
    std::sort(out.begin(), out.end());
    double ks = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double f = simpson(beta33_density, 0.0, out[i], 2000);
        ks = std::max({ks, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
    }
    EXPECT_LE(ks, 0.01);
}

TEST(HistogramMatch, Beta24Mean) {
    const auto img = rgb_image(64, 64, 13);
    const auto out = histogram_match_to_beta(img.pixels.values().subspan(0, 4096), 2.0, 4.0);
    double mean = 0.0;
    for (double v : out) mean += v;
    mean /= out.size();
    EXPECT_NEAR(mean, 1.0 / 3.0, 0.02);
}

TEST(HistogramMatch, PreservesRankAndIsIdempotent) {
    const auto img = rgb_image(16, 16, 14);
    const auto ch = img.pixels.values().subspan(0, 256);
    const auto once = histogram_match_to_beta(ch, 2.0, 4.0);
    for (std::size_t i = 0; i < ch.size(); ++i)
        for (std::size_t j = 0; j < ch.size(); ++j)
            if (ch[i] < ch[j]) {
                ASSERT_LT(once[i], once[j]);
            }
    const auto twice = histogram_match_to_beta(once, 2.0, 4.0);
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(twice[i], once[i], 1e-12);
    for (double v : once) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(HistogramMatch, TiesShareAverageRank) {
    const std::vector<double> tied{0.5, 0.5};
    const auto out = histogram_match_to_beta(tied, 3.0, 3.0);
    EXPECT_NEAR(out[0], 0.5, 1e-10);
    EXPECT_EQ(out[0], out[1]);
}

TEST(Lightness, TargetsPerRegime) {
    EXPECT_EQ(lightness_target(LightnessRegime::dark).alpha, 2.0);
    EXPECT_EQ(lightness_target(LightnessRegime::dark).beta, 4.0);
    EXPECT_EQ(lightness_target(LightnessRegime::base).alpha, 3.0);
    EXPECT_EQ(lightness_target(LightnessRegime::bright).alpha, 4.0);
}

TEST(Mask, FullScaleCountsAndValues) {
    for (std::uint64_t seed : {1, 2, 3}) {
        Rng rng(seed);
        const auto m = make_mask(128, 128, kWatermarkImageShare, rng);
        EXPECT_GE(m.foreground_count(), 1884u);
        EXPECT_LE(m.foreground_count(), 2082u);
        std::size_t below_one = 0;
        for (std::size_t i = 0; i < m.values.size(); ++i) {
            const double v = m.values[i];
            if (v != 1.0) {
                ++below_one;
                EXPECT_GE(v, 0.2);
                EXPECT_LE(v, 0.4);
            }
        }
        EXPECT_EQ(below_one, m.foreground_count());
        EXPECT_TRUE(std::is_sorted(m.foreground.begin(), m.foreground.end()));
        for (auto idx : m.foreground) EXPECT_NE(m.values[idx], 1.0);
    }
}

TEST(Mask, ScaledGeometryKeepsShare) {
    const auto g128 = scaled_mask_geometry(128, 128);
    EXPECT_EQ(g128.height, 48u);
    EXPECT_EQ(g128.width, 112u);
    Rng rng(1);
    EXPECT_EQ(make_mask(g128.height, g128.width, g128.foreground_fraction, rng).foreground_count(), 1983u);
    const auto g64 = scaled_mask_geometry(64, 64);
    EXPECT_EQ(make_mask(g64.height, g64.width, g64.foreground_fraction, rng).foreground_count(), 496u);
    EXPECT_THROW(make_mask(10, 10, 0.6, rng), ConfigError);
}

TEST(Synth, DeterministicAndInRange) {
    const auto a = synth_corpus(6, 32, 32, SynthParams{}, 3);
    const auto b = synth_corpus(6, 32, 32, SynthParams{}, 3);
    const auto c = synth_corpus(6, 32, 32, SynthParams{}, 4);
    ASSERT_EQ(a.size(), 12u);
    int ones = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].pixels, b[i].pixels);
        EXPECT_NE(a[i].pixels, c[i].pixels);
        ones += a[i].label;
        for (double v : a[i].pixels.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
        EXPECT_FALSE(a[i].manipulation.watermark_applied);
    }
    EXPECT_EQ(ones, 6);
    EXPECT_THROW(synth_corpus(2, 16, 32, SynthParams{}, 1), ConfigError);
    SynthParams bad;
    bad.period0_min = 1.0;
    EXPECT_THROW(synth_corpus(2, 32, 32, bad, 1), ConfigError);
}

TEST(ImageIo, PpmMaxvalMapsToOne) {
    sprobe::testing::TempDir dir("ppm");
    write_p6(dir.path() / "a.ppm", 1, 2, {255, 0, 51, 0, 255, 255});
    const Tensor t = read_ppm(dir.path() / "a.ppm");
    EXPECT_EQ(t.shape(), (Shape{3, 1, 2}));
    EXPECT_EQ(t[0], 1.0);
    EXPECT_EQ(t[1], 0.0);
    EXPECT_NEAR(t[4], 0.2, 1e-15);  // blue, pixel 0
}

TEST(ImageIo, BilinearConstantAndHandWeights) {
    Tensor flat({3, 2, 2}, 0.42);
    const Tensor flat_up = resize_bilinear(flat, 4, 4);
    for (double v : flat_up.values()) EXPECT_NEAR(v, 0.42, 1e-15);

    // 2 -> 4 along one axis: half-pixel centres give weights 0, 1/4, 3/4, 1
    Tensor ramp({1, 1, 2}, std::vector<double>{0.0, 1.0});
    const Tensor up = resize_bilinear(ramp, 1, 4);
    EXPECT_NEAR(up[0], 0.0, 1e-15);
    EXPECT_NEAR(up[1], 0.25, 1e-15);
    EXPECT_NEAR(up[2], 0.75, 1e-15);
    EXPECT_NEAR(up[3], 1.0, 1e-15);

    // 4x4 gradient PPM, v = 16 * (4r + c), halved: each output is a 2x2 block mean
    sprobe::testing::TempDir dir("grad");
    std::vector<unsigned char> rgb;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            for (int ch = 0; ch < 3; ++ch) rgb.push_back(static_cast<unsigned char>(16 * (4 * r + c)));
    write_p6(dir.path() / "g.ppm", 4, 4, rgb);
    const Tensor down = resize_bilinear(read_ppm(dir.path() / "g.ppm"), 2, 2);
    const double expect[4] = {16 * 2.5 / 255, 16 * 4.5 / 255, 16 * 10.5 / 255, 16 * 12.5 / 255};
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(down[i], expect[i], 1e-14);
}

TEST(ImageIo, LoadDirectory) {
    sprobe::testing::TempDir dir("load");
    std::filesystem::create_directories(dir.path() / "cat");
    std::filesystem::create_directories(dir.path() / "dog");
    std::vector<unsigned char> rgb;
    for (int i = 0; i < 16; ++i)
        for (int ch = 0; ch < 3; ++ch) rgb.push_back(static_cast<unsigned char>(10 * i + 20 * ch));
    write_p6(dir.path() / "cat" / "b.ppm", 4, 4, rgb);
    write_p6(dir.path() / "cat" / "a.ppm", 4, 4, rgb);
    write_p6(dir.path() / "dog" / "x.ppm", 4, 4, rgb);
    const auto samples = load_directory(dir.path(), {"cat", "dog"}, 8, 8);
    ASSERT_EQ(samples.size(), 3u);
    EXPECT_EQ(samples[0].label, 0);
    EXPECT_EQ(samples[2].label, 1);
    for (const auto& s : samples) {
        EXPECT_EQ(s.pixels.shape(), (Shape{3, 8, 8}));
        for (std::size_t c = 0; c < 3; ++c) {
            const auto ch = s.pixels.values().subspan(c * 64, 64);
            EXPECT_EQ(*std::min_element(ch.begin(), ch.end()), 0.0);
            EXPECT_EQ(*std::max_element(ch.begin(), ch.end()), 1.0);
        }
    }

    std::filesystem::create_directories(dir.path() / "empty");
    EXPECT_THROW(load_directory(dir.path(), {"cat", "empty"}, 8, 8), ConfigError);
    {
        std::ofstream junk(dir.path() / "dog" / "y.ppm");
        junk << "not an image";
    }
    try {
        load_directory(dir.path(), {"cat", "dog"}, 8, 8);
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("y.ppm"), std::string::npos);
    }
}

TEST(ImageIo, CorpusManifest) {
    sprobe::testing::TempDir dir("manifest");
    const auto base = small_corpus();
    const auto design = watermark_design(32, 32);
    const auto split = make_splits(base, 0, SettingSpec::make(Study::watermark, Setting::balanced), design);
    write_corpus(dir.path(), split.test, true);
    std::ifstream in(dir.path() / "corpus.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "sample_id,class,watermark_applied,mask_row,mask_col,lightness_regime,encoding");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        const std::string id = line.substr(0, line.find(','));
        EXPECT_TRUE(std::filesystem::exists(dir.path() / (id + ".ppm")));
    }
    EXPECT_EQ(rows, split.test.size());
    const Tensor back = read_ppm(dir.path() / (sample_name(split.test[0]) + ".ppm"));
    for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back[i], split.test[0].pixels[i], 0.5 / 255 + 1e-12);
}
