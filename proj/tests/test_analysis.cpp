#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "sprobe/analysis.hpp"
#include "sprobe/errors.hpp"
#include "test_util.hpp"

using namespace sprobe;
using sprobe::testing::random_tensor;
using sprobe::testing::TempDir;

namespace {

// R^2 from residuals about the group means, independent of the
// between-group formula.
double residual_r2(const std::vector<double>& v, const std::vector<int>& l) {
    const int k = *std::max_element(l.begin(), l.end()) + 1;
    std::vector<double> s(k, 0.0), n(k, 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
        s[l[i]] += v[i];
        n[l[i]] += 1.0;
    }
    const double grand = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double res = 0.0, tot = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double m = s[l[i]] / n[l[i]];
        res += (v[i] - m) * (v[i] - m);
        tot += (v[i] - grand) * (v[i] - grand);
    }
    return 1.0 - res / tot;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
}

SampleUnit unit(Setting setting, Method method, std::uint64_t sample, int cls, const std::string& variant,
                double value, Study study = Study::watermark) {
    SampleUnit u;
    u.study = study;
    u.setting = setting;
    u.method = method;
    u.sample_id = sample;
    u.cls = cls;
    u.variant = variant;
    u.value = value;
    u.models = 1;
    return u;
}

const SummaryRow* find_row(const std::vector<SummaryRow>& rows, const std::string& variant, int cls) {
    for (const auto& r : rows)
        if (r.variant == variant && r.cls == cls) return &r;
    return nullptr;
}

}  // namespace

// --- riw / ril ---

TEST(Riw, UniformMapIsOne) {
    const Tensor m({6, 7}, 0.3);
    const std::vector<std::size_t> idx{0, 5, 17, 41};
    EXPECT_EQ(riw(m, idx), 1.0);
}

TEST(Riw, AllImportanceInsideMask) {
    Tensor m({5, 8});
    const std::vector<std::size_t> idx{3, 4, 11, 12, 20};
    for (auto i : idx) m[i] = 2.5;
    EXPECT_NEAR(riw(m, idx), 40.0 / 5.0, 1e-12);
}

TEST(Riw, HandExample) {
    Tensor m({4, 4}, 1.0);
    const std::vector<std::size_t> idx{0, 1, 4, 5};
    for (auto i : idx) m[i] = 2.0;
    EXPECT_NEAR(riw(m, idx), 1.6, 1e-15);
}

TEST(Riw, ScaleInvariant) {
    const Tensor m = random_tensor({9, 9}, 4, 0.0, 2.0);
    const std::vector<std::size_t> idx{10, 11, 12, 19, 20, 21};
    const double base = riw(m, idx);
    for (double c : {1e-6, 0.5, 3.0, 1e8}) {
        Tensor s = m;
        for (auto& v : s.values()) v *= c;
        EXPECT_NEAR(riw(s, idx), base, 1e-12 * base);
    }
}

TEST(Riw, RawBaselineOnFlatImageIsExactlyOne) {
    const Tensor img({3, 10, 12}, 0.37);
    const Tensor cm = channel_mean_abs(raw_baseline(img));
    const std::vector<std::size_t> idx{0, 13, 50, 119};
    EXPECT_EQ(riw(cm, idx), 1.0);
}

TEST(Riw, Errors) {
    EXPECT_THROW(riw(Tensor({3, 3}), std::vector<std::size_t>{1}), UndefinedMetricError);
    EXPECT_THROW(riw(Tensor({3, 3}, 1.0), std::vector<std::size_t>{}), ConfigError);
    EXPECT_THROW(riw(Tensor({3, 3}, 1.0), std::vector<std::size_t>{9}), ConfigError);
    EXPECT_THROW(riw(Tensor({1, 3, 3}, 1.0), std::vector<std::size_t>{0}), ConfigError);
    // an undefined metric is still a numeric error
    EXPECT_THROW(riw(Tensor({3, 3}), std::vector<std::size_t>{1}), NumericError);
}

TEST(WatermarkPixels, OffsetsForegroundIntoImage) {
    WatermarkMask mask;
    mask.height = 2;
    mask.width = 3;
    mask.values = {1, 0.3, 1, 0.2, 1, 0.25};
    mask.foreground = {1, 3, 5};
    const auto idx = watermark_pixel_indices(mask, {4, 2}, 8, 10);
    EXPECT_EQ(idx, (std::vector<std::size_t>{4 * 10 + 3, 5 * 10 + 2, 5 * 10 + 4}));
    EXPECT_THROW(watermark_pixel_indices(mask, {7, 0}, 8, 10), ConfigError);
    EXPECT_THROW(watermark_pixel_indices(mask, {0, 8}, 8, 10), ConfigError);
}

TEST(Ril, Examples) {
    Tensor eq({3, 2, 2});
    for (std::size_t i = 0; i < 12; ++i) eq[i] = (i % 2 ? -0.5 : 0.5);
    EXPECT_NEAR(ril(eq), 1.0, 1e-15);

    Tensor only_l({3, 2, 2});
    for (std::size_t i = 4; i < 8; ++i) only_l[i] = -1.0 - static_cast<double>(i);
    EXPECT_NEAR(ril(only_l), 3.0, 1e-15);

    Tensor hand({3, 1, 2});
    hand[0] = 0.25, hand[1] = -0.75;  // H mass 1
    hand[2] = 2.0;                    // L mass 2
    hand[4] = -1.0, hand[5] = 2.0;    // S mass 3
    EXPECT_NEAR(ril(hand), 1.0, 1e-15);
}

TEST(Ril, RangeAndScaleInvariance) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const Tensor m = random_tensor({3, 4, 5}, seed, -2.0, 2.0);
        const double r = ril(m);
        EXPECT_GE(r, 0.0);
        EXPECT_LE(r, 3.0);
        Tensor s = m;
        for (auto& v : s.values()) v *= 7.5;
        EXPECT_NEAR(ril(s), r, 1e-12);
    }
    EXPECT_THROW(ril(Tensor({3, 2, 2})), UndefinedMetricError);
    EXPECT_THROW(ril(Tensor({2, 2, 2}, 1.0)), ConfigError);
}

// --- svd ---

TEST(Svd, RecoversRankOneDirection) {
    const Tensor u = random_tensor({3, 4, 4}, 1);
    const std::vector<double> coef{-1.5, 0.2, 0.9, 2.0, -0.7, 0.4};
    const Tensor offset = random_tensor({3, 4, 4}, 2);
    std::vector<Tensor> maps;
    for (double c : coef) {
        Tensor m = offset;
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += c * u[i];
        maps.push_back(std::move(m));
    }
    const ComponentImage ci = svd_first_component(maps);
    EXPECT_GE(std::abs(cosine(ci.direction.values(), u.values())), 1.0 - 1e-9);
    double n2 = 0.0;
    for (double v : ci.direction.values()) n2 += v * v;
    EXPECT_NEAR(n2, 1.0, 1e-12);
    ASSERT_EQ(ci.image.shape(), (Shape{4, 4}));
    const Tensor expect = channel_mean_abs(ci.direction);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(ci.image[i], expect[i]);
}

TEST(Svd, PlantedComponentUnderNoise) {
    Tensor planted({3, 8, 8});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 2; ++y)
            for (std::size_t x = 3; x < 6; ++x) planted[(c * 8 + y) * 8 + x] = 1.0;
    Rng rng(3);
    std::normal_distribution<double> amp(0.0, 1.0), noise(0.0, 0.02);
    std::vector<Tensor> maps;
    for (int n = 0; n < 40; ++n) {
        const double a = amp(rng);
        Tensor m(planted.shape());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = a * planted[i] + noise(rng);
        maps.push_back(std::move(m));
    }
    const ComponentImage ci = svd_first_component(maps);
    EXPECT_GE(std::abs(cosine(ci.direction.values(), planted.values())), 0.99);
}

TEST(Svd, MatchesDenseSvd) {
    std::vector<Tensor> maps;
    for (std::uint64_t s = 0; s < 7; ++s) maps.push_back(random_tensor({2, 3, 5}, 50 + s));
    // dominant direction so the spectral gap is comfortable
    const Tensor d = random_tensor({2, 3, 5}, 99);
    for (std::size_t n = 0; n < maps.size(); ++n)
        for (std::size_t i = 0; i < d.size(); ++i) maps[n][i] += 3.0 * (static_cast<double>(n) - 3.0) * d[i];

    const Eigen::Index D = 30, N = 7;
    Eigen::MatrixXd A(D, N);
    for (Eigen::Index n = 0; n < N; ++n)
        for (Eigen::Index i = 0; i < D; ++i) A(i, n) = maps[n][i];
    const Eigen::VectorXd mu = A.rowwise().mean();
    A.colwise() -= mu;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU);
    const Eigen::VectorXd u1 = svd.matrixU().col(0);

    const ComponentImage ci = svd_first_component(maps);
    const std::span<const double> ref(u1.data(), static_cast<std::size_t>(D));
    EXPECT_GE(std::abs(cosine(ci.direction.values(), ref)), 1.0 - 1e-9);
    const double s1 = svd.singularValues()[0];
    EXPECT_NEAR(ci.eigenvalue, s1 * s1, 1e-8 * s1 * s1);
}

TEST(Svd, InvariantToOrderAndSign) {
    std::vector<Tensor> maps;
    const Tensor d = random_tensor({3, 4, 4}, 7);
    for (std::uint64_t s = 0; s < 9; ++s) {
        Tensor m = random_tensor({3, 4, 4}, 200 + s, 0.0, 0.3);
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += static_cast<double>(s) * d[i];
        maps.push_back(std::move(m));
    }
    const ComponentImage a = svd_first_component(maps);
    std::vector<Tensor> shuffled = maps;
    std::reverse(shuffled.begin(), shuffled.end());
    std::rotate(shuffled.begin(), shuffled.begin() + 4, shuffled.end());
    const ComponentImage b = svd_first_component(shuffled);
    std::vector<Tensor> negated = maps;
    for (auto& m : negated)
        for (auto& v : m.values()) v = -v;
    const ComponentImage c = svd_first_component(negated);
    for (std::size_t i = 0; i < a.image.size(); ++i) {
        EXPECT_NEAR(a.image[i], b.image[i], 1e-9);
        EXPECT_NEAR(a.image[i], c.image[i], 1e-9);
    }
}

TEST(Svd, Errors) {
    const std::vector<Tensor> one{Tensor({3, 2, 2}, 1.0)};
    EXPECT_THROW(svd_first_component(one), ConfigError);
    const std::vector<Tensor> mixed{Tensor({3, 2, 2}), Tensor({3, 2, 3})};
    EXPECT_THROW(svd_first_component(mixed), ConfigError);
    const std::vector<Tensor> same{Tensor({3, 2, 2}, 0.5), Tensor({3, 2, 2}, 0.5)};
    EXPECT_THROW(svd_first_component(same), NumericError);

    // equal top singular values never settle within one iteration
    std::vector<Tensor> tied;
    for (std::uint64_t s = 0; s < 5; ++s) tied.push_back(random_tensor({1, 3, 3}, s));
    PowerIterationOptions opt;
    opt.max_iterations = 1;
    try {
        svd_first_component(tied, opt);
        FAIL() << "expected non-convergence";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("1 iterations"), std::string::npos);
    }
}

// --- factor_r2 ---

TEST(FactorR2, HandExample) {
    const std::vector<double> v{1, 2, 3, 4};
    const std::vector<int> l{0, 0, 1, 1};
    const FactorResult r = factor_r2(v, l, 1000, 1, "wm");
    EXPECT_NEAR(r.r2, 0.8, 1e-15);
    EXPECT_EQ(r.direction, -1);
    EXPECT_EQ(r.factor, "wm");
    EXPECT_EQ(r.n, 4u);
}

TEST(FactorR2, PerfectPartition) {
    const std::vector<double> v{2, 2, 2, 5, 5, 9, 9, 9};
    const std::vector<int> l{0, 0, 0, 1, 1, 2, 2, 2};
    const FactorResult r = factor_r2(v, l, 2000, 3);
    EXPECT_NEAR(r.r2, 1.0, 1e-15);
    EXPECT_EQ(r.direction, 0);
    // only relabellings preserving the partition reach R^2 = 1
    EXPECT_LT(r.p_value, 0.01);
}

TEST(FactorR2, MatchesResidualOracle) {
    Rng rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> v;
        std::vector<int> l;
        for (int i = 0; i < 60; ++i) {
            const int lvl = i % 3;
            l.push_back(lvl);
            v.push_back(n(rng) + 0.4 * lvl);
        }
        EXPECT_NEAR(factor_r2(v, l, 10, 1).r2, residual_r2(v, l), 1e-12);
    }
}

TEST(FactorR2, AffineInvariant) {
    const auto t = random_tensor({50}, 5);
    std::vector<double> v(t.values().begin(), t.values().end());
    std::vector<int> l;
    for (std::size_t i = 0; i < v.size(); ++i) {
        l.push_back(static_cast<int>(i % 2));
        if (i % 2) v[i] += 0.6;
    }
    const FactorResult base = factor_r2(v, l, 500, 9);
    for (auto [a, b] : {std::pair{2.0, 1.0}, {-3.0, 0.5}, {1e-3, -7.0}}) {
        std::vector<double> w = v;
        for (auto& x : w) x = a * x + b;
        const FactorResult r = factor_r2(w, l, 500, 9);
        EXPECT_NEAR(r.r2, base.r2, 1e-12);
        EXPECT_EQ(r.p_value, base.p_value);
        EXPECT_EQ(r.direction, a > 0 ? base.direction : -base.direction);
    }
}

TEST(FactorR2, StrongEffectSmallPValue) {
    std::vector<double> v;
    std::vector<int> l;
    for (int i = 0; i < 100; ++i) {
        l.push_back(i % 2);
        v.push_back((i % 2 ? 2.0 : 1.0) + 0.01 * std::sin(i));
    }
    const FactorResult r = factor_r2(v, l, 10000, 2);
    EXPECT_GT(r.r2, 0.99);
    EXPECT_DOUBLE_EQ(r.p_value, 1.0 / 10001.0);
    EXPECT_EQ(r.direction, -1);
}

TEST(FactorR2, NullPValuesRoughlyUniform) {
    // independent labels: R^2 small, and p below 0.1 about 10% of the time
    Rng rng(21);
    std::normal_distribution<double> n(0.0, 1.0);
    int low = 0;
    const int trials = 200;
    double r2_sum = 0.0;
    for (int t = 0; t < trials; ++t) {
        std::vector<double> v;
        std::vector<int> l;
        for (int i = 0; i < 40; ++i) {
            v.push_back(n(rng));
            l.push_back(i % 2);
        }
        const FactorResult r = factor_r2(v, l, 999, static_cast<std::uint64_t>(t));
        r2_sum += r.r2;
        if (r.p_value <= 0.1) ++low;
        EXPECT_GT(r.p_value, 0.0);
        EXPECT_LE(r.p_value, 1.0);
    }
    EXPECT_LT(r2_sum / trials, 0.06);
    // Binomial(200, 0.1): mean 20, sd ~4.2
    EXPECT_GE(low, 7);
    EXPECT_LE(low, 36);
}

TEST(FactorR2, SeededAndDegenerateCases) {
    const std::vector<double> v{0.3, 0.1, 0.9, 0.4, 0.7, 0.2};
    const std::vector<int> l{0, 1, 0, 1, 0, 1};
    EXPECT_EQ(factor_r2(v, l, 300, 4).p_value, factor_r2(v, l, 300, 4).p_value);

    const std::vector<int> single{0, 0, 0, 0, 0, 0};
    EXPECT_THROW(factor_r2(v, single, 10, 1), ConfigError);
    const std::vector<int> gap{0, 2, 0, 2, 0, 2};
    EXPECT_THROW(factor_r2(v, gap, 10, 1), ConfigError);
    EXPECT_THROW(factor_r2(v, std::vector<int>{0, 1}, 10, 1), ConfigError);

    const std::vector<double> flat(6, 1.25);
    const FactorResult r = factor_r2(flat, l, 10, 1);
    EXPECT_EQ(r.r2, 0.0);
    EXPECT_EQ(r.p_value, 1.0);
}

// --- aggregation ---

TEST(AverageOverModels, MeansPerSample) {
    std::vector<RiwRecord> recs;
    for (std::uint64_t m = 0; m < 3; ++m) {
        RiwRecord r;
        r.setting = Setting::confounded;
        r.model_seed = m;
        r.method = Method::integrated_gradients;
        r.sample_id = 4;
        r.cls = 1;
        r.variant = "wm";
        r.value = 1.0 + static_cast<double>(m);
        recs.push_back(r);
        r.variant = "no-wm";
        r.value = 10.0;
        recs.push_back(r);
    }
    const auto units = average_over_models(recs);
    ASSERT_EQ(units.size(), 2u);
    for (const auto& u : units) {
        EXPECT_EQ(u.models, 3u);
        EXPECT_EQ(u.cls, 1);
        EXPECT_DOUBLE_EQ(u.value, u.variant == "wm" ? 2.0 : 10.0);
    }
}

TEST(Summary, MeanAndStandardError) {
    const std::vector<SampleUnit> units{unit(Setting::confounded, Method::raw, 0, 0, "wm", 1.0),
                                        unit(Setting::confounded, Method::raw, 1, 0, "wm", 2.0)};
    const auto rows = summary_table(units);
    const SummaryRow* r = find_row(rows, "wm", 0);
    ASSERT_NE(r, nullptr);
    EXPECT_EQ(r->n, 2u);
    EXPECT_DOUBLE_EQ(r->mean, 1.5);
    EXPECT_DOUBLE_EQ(r->se, 0.5);
    const SummaryRow* pooled = find_row(rows, "wm", -1);
    ASSERT_NE(pooled, nullptr);
    EXPECT_EQ(pooled->n, 2u);
}

TEST(Summary, SingleRecordHasZeroSe) {
    const std::vector<SampleUnit> units{unit(Setting::balanced, Method::laplace, 0, 1, "no-wm", 3.0)};
    const auto rows = summary_table(units);
    const SummaryRow* r = find_row(rows, "no-wm", 1);
    ASSERT_NE(r, nullptr);
    EXPECT_EQ(r->n, 1u);
    EXPECT_EQ(r->se, 0.0);
}

TEST(Summary, PairedDifferences) {
    std::vector<SampleUnit> units;
    for (std::uint64_t s = 0; s < 4; ++s) {
        units.push_back(unit(Setting::confounded, Method::raw, s, 0, "wm", 1.0 + s));
        units.push_back(unit(Setting::confounded, Method::raw, s, 0, "no-wm", 1.0 + s));
    }
    const SummaryRow* d = find_row(summary_table(units), "wm-no-wm", 0);
    ASSERT_NE(d, nullptr);
    EXPECT_EQ(d->n, 4u);
    EXPECT_EQ(d->mean, 0.0);
    EXPECT_EQ(d->se, 0.0);

    units.clear();
    const double lv[3] = {0.5, 1.0, 2.0};
    for (std::uint64_t s = 0; s < 3; ++s) {
        units.push_back(unit(Setting::balanced, Method::raw, s, 1, "dark", lv[0] * (s + 1), Study::lightness));
        units.push_back(unit(Setting::balanced, Method::raw, s, 1, "base", lv[1] * (s + 1), Study::lightness));
        units.push_back(unit(Setting::balanced, Method::raw, s, 1, "bright", lv[2] * (s + 1), Study::lightness));
    }
    const auto rows = summary_table(units);
    const SummaryRow* dark = find_row(rows, "dark-base", 1);
    const SummaryRow* bright = find_row(rows, "bright-base", 1);
    ASSERT_NE(dark, nullptr);
    ASSERT_NE(bright, nullptr);
    EXPECT_DOUBLE_EQ(dark->mean, -0.5 * 2.0);
    EXPECT_DOUBLE_EQ(bright->mean, 1.0 * 2.0);
}

TEST(Histogram, Examples) {
    const std::vector<SampleUnit> units{unit(Setting::baseline, Method::raw, 0, 0, "wm", 0.1),
                                        unit(Setting::baseline, Method::raw, 1, 0, "wm", 1.1),
                                        unit(Setting::baseline, Method::raw, 2, 0, "wm", 1.2)};
    const auto rows = histogram(units, 1.0);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].bin_lo, 0.0);
    EXPECT_EQ(rows[0].count, 1u);
    EXPECT_EQ(rows[1].bin_lo, 1.0);
    EXPECT_EQ(rows[1].bin_hi, 2.0);
    EXPECT_EQ(rows[1].count, 2u);

    const std::vector<SampleUnit> edge{unit(Setting::baseline, Method::raw, 0, 0, "wm", 0.5)};
    const auto e = histogram(edge, 0.25);
    ASSERT_EQ(e.size(), 1u);
    EXPECT_EQ(e[0].bin_lo, 0.5);

    const std::vector<SampleUnit> same{unit(Setting::baseline, Method::raw, 0, 0, "wm", 2.31),
                                       unit(Setting::baseline, Method::raw, 1, 0, "wm", 2.39)};
    const auto s = histogram(same, 0.1);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0].count, 2u);

    EXPECT_THROW(histogram(units, 0.0), ConfigError);
    EXPECT_THROW(histogram(units, -1.0), ConfigError);
}

TEST(Histogram, CountsSumPerGroup) {
    Rng rng(8);
    std::gamma_distribution<double> g(2.0, 1.0);
    std::vector<SampleUnit> units;
    std::size_t per_group[2] = {0, 0};
    for (std::uint64_t i = 0; i < 300; ++i) {
        const int which = static_cast<int>(i % 3 == 0);
        units.push_back(unit(Setting::confounded, which ? Method::raw : Method::laplace, i, 0, "wm", g(rng)));
        ++per_group[which];
    }
    std::size_t got[2] = {0, 0};
    for (const auto& r : histogram(units, 0.2)) got[r.method == Method::raw] += r.count;
    EXPECT_EQ(got[0], per_group[0]);
    EXPECT_EQ(got[1], per_group[1]);
}

TEST(R2Table, FactorsAndSubsets) {
    std::vector<SampleUnit> units;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const double noise = 0.05 * std::sin(static_cast<double>(s));
        units.push_back(unit(Setting::confounded, Method::raw, s, 0, "wm", 2.0 + noise));
        units.push_back(unit(Setting::confounded, Method::raw, s, 0, "no-wm", 1.0 + noise));
        units.push_back(unit(Setting::balanced, Method::raw, s, 0, "wm", 1.6 + noise));
        units.push_back(unit(Setting::balanced, Method::raw, s, 0, "no-wm", 1.0 + noise));
        units.push_back(unit(Setting::baseline, Method::raw, s, 0, "no-wm", 1.0 + noise));
    }
    const auto rows = r2_table(units, 200, 5);
    std::map<std::pair<std::string, std::string>, FactorResult> by;
    for (const auto& r : rows) by[{r.setting_subset, r.result.factor}] = r.result;
    auto get = [&](const std::string& subset, const std::string& factor) { return by[{subset, factor}]; };
    // baseline has a single variant and is skipped
    EXPECT_EQ(rows.size(), 4u);
    ASSERT_TRUE(by.count(std::pair<std::string, std::string>("confounded", "wm")));
    ASSERT_TRUE(by.count(std::pair<std::string, std::string>("balanced", "wm")));
    ASSERT_TRUE(by.count(std::pair<std::string, std::string>("confounded+balanced", "wm")));
    ASSERT_TRUE(by.count(std::pair<std::string, std::string>("confounded+balanced", "setting")));
    EXPECT_GT(get("confounded", "wm").r2, 0.95);
    EXPECT_EQ(get("confounded", "wm").direction, 1);
    EXPECT_EQ(get("confounded", "wm").n, 40u);
    EXPECT_EQ(get("confounded+balanced", "setting").n, 80u);
    EXPECT_EQ(get("confounded+balanced", "setting").direction, 1);

    const auto again = r2_table(units, 200, 5);
    ASSERT_EQ(again.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(again[i].result.p_value, rows[i].result.p_value);
}

// --- CSV ---

TEST(MetricsCsv, RoundTrip) {
    TempDir dir("metrics");
    std::vector<RiwRecord> recs;
    for (std::uint64_t i = 0; i < 5; ++i) {
        RiwRecord r;
        r.study = i % 2 ? Study::lightness : Study::watermark;
        r.setting = static_cast<Setting>(i % 3);
        r.split_seed = i;
        r.model_seed = 10 + i;
        r.method = all_methods()[i];
        r.sample_id = 1000 + i;
        r.cls = static_cast<int>(i % 2);
        r.variant = i % 2 ? "bright" : "no-wm";
        r.value = 1.0 / 3.0 + static_cast<double>(i) * 1e-17 + std::ldexp(1.0, -40);
        recs.push_back(r);
    }
    const auto path = dir.path() / "sub" / "metrics.csv";
    write_metrics_csv(path, recs);
    EXPECT_EQ(read_metrics_csv(path), recs);
}

TEST(MetricsCsv, MissingAndMalformed) {
    TempDir dir("metrics-bad");
    EXPECT_THROW(read_metrics_csv(dir.path() / "metrics.csv"), MissingArtifactError);
    const auto path = dir.path() / "metrics.csv";
    {
        std::ofstream f(path);
        f << "study,setting,split_seed,model_seed,method,sample_id,class,variant,value\n";
        f << "watermark,confounded,0,0,ig,1,0,wm\n";
    }
    EXPECT_THROW(read_metrics_csv(path), MissingArtifactError);
    {
        std::ofstream f(path);
        f << "study,setting,split_seed,model_seed,method,sample_id,class,variant,value\n";
        f << "watermark,confounded,0,0,nope,1,0,wm,1.0\n";
    }
    EXPECT_THROW(read_metrics_csv(path), MissingArtifactError);
    {
        std::ofstream f(path);
        f << "a,b\n";
    }
    EXPECT_THROW(read_metrics_csv(path), MissingArtifactError);
}

TEST(FormatDouble, ExactRoundTrip) {
    for (double v : {0.1, 1.0 / 3.0, 2.5e-300, -123456.789, 1e300}) EXPECT_EQ(std::stod(format_double(v)), v);
}
