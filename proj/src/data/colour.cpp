#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <tuple>

#include "sprobe/dataset.hpp"
#include "sprobe/errors.hpp"

namespace sprobe {

std::array<double, 3> rgb_to_hls(double r, double g, double b) {
    const double maxc = std::max({r, g, b});
    const double minc = std::min({r, g, b});
    const double l = (minc + maxc) / 2.0;
    if (maxc == minc) return {0.0, l, 0.0};
    const double span = maxc - minc;
    const double s = l <= 0.5 ? span / (maxc + minc) : span / (2.0 - maxc - minc);
    const double rc = (maxc - r) / span, gc = (maxc - g) / span, bc = (maxc - b) / span;
    double h;
    if (r == maxc) {
        h = bc - gc;
    } else if (g == maxc) {
        h = 2.0 + rc - bc;
    } else {
        h = 4.0 + gc - rc;
    }
    h = h / 6.0;
    h -= std::floor(h);
    return {h, l, s};
}

namespace {

double hue_channel(double m1, double m2, double hue) {
    hue -= std::floor(hue);
    if (hue < 1.0 / 6.0) return m1 + (m2 - m1) * hue * 6.0;
    if (hue < 0.5) return m2;
    if (hue < 2.0 / 3.0) return m1 + (m2 - m1) * (2.0 / 3.0 - hue) * 6.0;
    return m1;
}

}  // namespace

std::array<double, 3> hls_to_rgb(double h, double l, double s) {
    if (s == 0.0) return {l, l, l};
    const double m2 = l <= 0.5 ? l * (1.0 + s) : l + s - l * s;
    const double m1 = 2.0 * l - m2;
    return {hue_channel(m1, m2, h + 1.0 / 3.0), hue_channel(m1, m2, h), hue_channel(m1, m2, h - 1.0 / 3.0)};
}

namespace {

ImageSample convert(const ImageSample& image, ColourSpace from, ColourSpace to,
                    std::array<double, 3> (*fn)(double, double, double)) {
    if (image.colour_space != from || image.channels() != 3) {
        throw UsageError("colour conversion expects a three-channel " + to_string(from) + " image");
    }
    ImageSample out = image;
    const std::size_t plane = image.height() * image.width();
    for (std::size_t i = 0; i < plane; ++i) {
        const auto v = fn(image.pixels[i], image.pixels[plane + i], image.pixels[2 * plane + i]);
        for (std::size_t c = 0; c < 3; ++c) out.pixels[c * plane + i] = std::clamp(v[c], 0.0, 1.0);
    }
    out.colour_space = to;
    return out;
}

// Continued fraction for the incomplete beta function (modified Lentz).
double beta_continued_fraction(double x, double a, double b) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 10000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) return h;
    }
    throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace

ImageSample rgb_to_hls(const ImageSample& image) {
    return convert(image, ColourSpace::rgb, ColourSpace::hls, static_cast<std::array<double, 3> (*)(double, double, double)>(&rgb_to_hls));
}

ImageSample hls_to_rgb(const ImageSample& image) {
    return convert(image, ColourSpace::hls, ColourSpace::rgb, static_cast<std::array<double, 3> (*)(double, double, double)>(&hls_to_rgb));
}

double beta_cdf(double x, double alpha, double beta) {
    if (!(alpha > 0.0 && beta > 0.0)) throw ConfigError("Beta parameters must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front = std::lgamma(alpha + beta) - std::lgamma(alpha) - std::lgamma(beta) +
                             alpha * std::log(x) + beta * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (alpha + 1.0) / (alpha + beta + 2.0)) return front * beta_continued_fraction(x, alpha, beta) / alpha;
    return 1.0 - front * beta_continued_fraction(1.0 - x, beta, alpha) / beta;
}

double beta_quantile(double p, double alpha, double beta) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("quantile probability must lie in [0,1]");
    if (!(alpha > 0.0 && beta > 0.0)) throw ConfigError("Beta parameters must be positive");
    if (p == 0.0) return 0.0;
    if (p == 1.0) return 1.0;
    double lo = 0.0, hi = 1.0;
    while (hi - lo > 1e-13) {
        const double mid = 0.5 * (lo + hi);
        if (beta_cdf(mid, alpha, beta) < p) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

namespace {

// Quantiles at p = k / (2n), k = 0..2n; average ranks are multiples of 1/2.
const std::vector<double>& quantile_table(std::size_t n, double alpha, double beta) {
    static std::mutex mutex;
    static std::map<std::tuple<std::size_t, double, double>, std::vector<double>> cache;
    std::lock_guard lock(mutex);
    auto key = std::make_tuple(n, alpha, beta);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::vector<double> table(2 * n + 1);
    for (std::size_t k = 0; k <= 2 * n; ++k) {
        table[k] = beta_quantile(static_cast<double>(k) / static_cast<double>(2 * n), alpha, beta);
    }
    return cache.emplace(key, std::move(table)).first->second;
}

}  // namespace

std::vector<double> histogram_match_to_beta(std::span<const double> channel, double alpha, double beta) {
    const std::size_t n = channel.size();
    if (n == 0) return {};
    const auto& table = quantile_table(n, alpha, beta);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return channel[a] < channel[b]; });
    std::vector<double> out(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && channel[order[j]] == channel[order[i]]) ++j;
        // Tied block [i, j) shares average rank (i + j - 1) / 2; p = (rank + 0.5) / n.
        const std::size_t k = i + j;  // 2 * (rank + 0.5)
        for (std::size_t t = i; t < j; ++t) out[order[t]] = table[k];
        i = j;
    }
    return out;
}

BetaParams lightness_target(LightnessRegime regime) {
    switch (regime) {
        case LightnessRegime::dark: return {2.0, 4.0};
        case LightnessRegime::bright: return {4.0, 2.0};
        case LightnessRegime::base: break;
    }
    return {3.0, 3.0};
}

}  // namespace sprobe
