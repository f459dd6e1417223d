#include <algorithm>
#include <cmath>
#include <numeric>

#include "sprobe/dataset.hpp"
#include "sprobe/errors.hpp"

namespace sprobe {

std::vector<double> minmax_scale(std::span<const double> channel) {
    if (channel.empty()) throw ConfigError("minmax_scale on an empty channel");
    const auto [lo, hi] = std::minmax_element(channel.begin(), channel.end());
    const double min = *lo, range = *hi - *lo;
    std::vector<double> out(channel.size(), 0.0);
    if (range > 0.0) {
        for (std::size_t i = 0; i < channel.size(); ++i) {
            out[i] = std::clamp((channel[i] - min) / range, 0.0, 1.0);
        }
    }
    return out;
}

void minmax_scale_channels(Tensor& image) {
    const std::size_t plane = image.size() / image.dim(0);
    for (std::size_t c = 0; c < image.dim(0); ++c) {
        auto ch = image.values().subspan(c * plane, plane);
        const auto scaled = minmax_scale(ch);
        std::copy(scaled.begin(), scaled.end(), ch.begin());
    }
}

ImageSample apply_watermark(const ImageSample& image, const WatermarkMask& mask, PixelPos origin) {
    if (image.colour_space != ColourSpace::rgb || image.encoding != Encoding::standard) {
        throw UsageError("watermarks are blended into standard-encoded RGB images");
    }
    const std::size_t H = image.height(), W = image.width();
    if (origin.row + mask.height > H || origin.col + mask.width > W) {
        throw ConfigError("watermark at (" + std::to_string(origin.row) + "," + std::to_string(origin.col) +
                          ") does not fit the image");
    }
    ImageSample out = image;
    for (std::size_t c = 0; c < image.channels(); ++c) {
        for (std::size_t r = 0; r < mask.height; ++r) {
            for (std::size_t k = 0; k < mask.width; ++k) {
                const double m = mask.at(r, k);
                if (m == 1.0) continue;  // 1 - (1 - x) is not always x in floating point
                double& px = out.pixels[(c * H + origin.row + r) * W + origin.col + k];
                px = 1.0 - m * (1.0 - px);
            }
        }
    }
    out.manipulation.watermark_applied = true;
    out.manipulation.mask_origin = origin;
    return out;
}

PixelPos place_mask(PlacementMode mode, std::size_t image_h, std::size_t image_w, std::size_t mask_h,
                    std::size_t mask_w, Rng& rng) {
    if (mask_h > image_h || mask_w > image_w || mask_h == 0 || mask_w == 0) {
        throw ConfigError("watermark mask " + std::to_string(mask_h) + "x" + std::to_string(mask_w) +
                          " does not fit a " + std::to_string(image_h) + "x" + std::to_string(image_w) + " image");
    }
    if (mode == PlacementMode::fixed) {
        const auto top = static_cast<std::size_t>(std::floor(0.05 * static_cast<double>(image_h)));
        return {std::min(top, image_h - mask_h), (image_w - mask_w) / 2};
    }
    std::uniform_int_distribution<std::size_t> rows(0, image_h - mask_h);
    std::uniform_int_distribution<std::size_t> cols(0, image_w - mask_w);
    const std::size_t r = rows(rng);
    return {r, cols(rng)};
}

ImageSample invert_encoding(const ImageSample& image) {
    ImageSample out = image;
    for (auto& v : out.pixels.values()) v = 1.0 - v;
    out.encoding = image.encoding == Encoding::standard ? Encoding::inverted : Encoding::standard;
    return out;
}

namespace {

struct Segment {
    double y0, x0, y1, x1;
};

double segment_distance(double y, double x, const Segment& s) {
    const double dy = s.y1 - s.y0, dx = s.x1 - s.x0;
    const double len2 = dy * dy + dx * dx;
    double t = len2 > 0.0 ? ((y - s.y0) * dy + (x - s.x0) * dx) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double py = s.y0 + t * dy - y, px = s.x0 + t * dx - x;
    return std::sqrt(py * py + px * px);
}

}  // namespace

WatermarkMask make_mask(std::size_t height, std::size_t width, double foreground_fraction, Rng& rng) {
    if (!(foreground_fraction > 0.0 && foreground_fraction < 0.5)) {
        throw ConfigError("watermark foreground fraction must lie in (0, 0.5)");
    }
    if (height < 4 || width < 4) throw ConfigError("watermark mask too small");
    const double h = static_cast<double>(height), w = static_cast<double>(width);

    // Skeleton: a ring with a tail on the left ("Q" logo), strokes of
    // pseudo-letters in two text lines to its right.
    const double side = std::min(h, w);
    const double radius = 0.3 * side;
    const double cy = h / 2.0, cx = side / 2.0;
    std::vector<Segment> strokes;
    strokes.push_back({cy + 0.55 * radius, cx + 0.55 * radius, cy + 1.2 * radius, cx + 1.2 * radius});

    const double text_x0 = std::min(w - 2.0, cx + 1.5 * radius);
    const double cell_w = std::max(2.0, 0.16 * h);
    const double line_h = 0.3 * h;
    std::uniform_int_distribution<int> anchor(0, 2);
    std::uniform_int_distribution<int> stroke_count(2, 3);
    for (double line_y : {0.2 * h, 0.58 * h}) {
        for (double x = text_x0; x + cell_w <= w - 1.0; x += 1.35 * cell_w) {
            const int n = stroke_count(rng);
            for (int s = 0; s < n; ++s) {
                auto pt = [&](int a) { return 0.5 * a; };
                const int a0 = anchor(rng), a1 = anchor(rng), b0 = anchor(rng), b1 = anchor(rng);
                strokes.push_back({line_y + pt(a0) * line_h, x + pt(b0) * cell_w, line_y + pt(a1) * line_h,
                                   x + pt(b1) * cell_w});
            }
        }
    }

    const std::size_t n = height * width;
    std::vector<double> dist(n);
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            const double y = static_cast<double>(r) + 0.5, x = static_cast<double>(c) + 0.5;
            double d = std::abs(std::hypot(y - cy, x - cx) - radius);
            for (const auto& s : strokes) d = std::min(d, segment_distance(y, x, s));
            dist[r * width + c] = d;
        }
    }
    const auto count = static_cast<std::size_t>(std::llround(foreground_fraction * static_cast<double>(n)));
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dist[a] < dist[b]; });

    WatermarkMask mask;
    mask.height = height;
    mask.width = width;
    mask.values.assign(n, 1.0);
    mask.foreground.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(mask.foreground.begin(), mask.foreground.end());
    std::uniform_real_distribution<double> grey(0.2, 0.4);
    for (auto idx : mask.foreground) mask.values[idx] = grey(rng);
    return mask;
}

MaskGeometry scaled_mask_geometry(std::size_t image_h, std::size_t image_w) {
    MaskGeometry g;
    g.height = static_cast<std::size_t>(std::llround(0.375 * static_cast<double>(image_h)));
    g.width = static_cast<std::size_t>(std::llround(0.875 * static_cast<double>(image_w)));
    g.foreground_fraction = kWatermarkImageShare * static_cast<double>(image_h * image_w) /
                            static_cast<double>(g.height * g.width);
    if (g.height < 4 || g.width < 4 || g.foreground_fraction >= 0.5) {
        throw ConfigError("image too small for a scaled watermark mask");
    }
    return g;
}

}  // namespace sprobe
