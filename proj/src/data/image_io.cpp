#include "sprobe/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sprobe/errors.hpp"

namespace sprobe {
namespace fs = std::filesystem;

namespace {

std::string lower_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

Tensor from_interleaved(const unsigned char* rgb, std::size_t h, std::size_t w, double maxval) {
    Tensor t({3, h, w});
    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) t[c * plane + i] = rgb[3 * i + c] / maxval;
    }
    return t;
}

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

Tensor read_ppm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    if (header_token(in) != "P6") throw IoError("ingestion failed for " + path.string() + ": not a binary PPM (P6)");
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(header_token(in));
        h = std::stoul(header_token(in));
        maxval = std::stoul(header_token(in));
    } catch (const std::exception&) {
        throw IoError("ingestion failed for " + path.string() + ": malformed PPM header");
    }
    if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
        throw IoError("ingestion failed for " + path.string() + ": unsupported PPM geometry or maxval");
    }
    std::vector<unsigned char> buf(3 * w * h);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw IoError("ingestion failed for " + path.string() + ": truncated pixel data");
    }
    return from_interleaved(buf.data(), h, w, static_cast<double>(maxval));
}

Tensor read_png(const fs::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw IoError("ingestion failed for " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw IoError("ingestion failed for " + path.string() + ": " + msg);
    }
    return from_interleaved(buf.data(), image.height, image.width, 255.0);
}

Tensor read_image(const fs::path& path) {
    const std::string ext = lower_extension(path);
    if (ext == ".png") return read_png(path);
    if (ext == ".ppm") return read_ppm(path);
    throw IoError("ingestion failed for " + path.string() + ": unsupported file type");
}

void write_ppm(const fs::path& path, const Tensor& pixels) {
    if (pixels.rank() != 3 || pixels.dim(0) != 3) throw UsageError("write_ppm expects a (3,H,W) tensor");
    const std::size_t h = pixels.dim(1), w = pixels.dim(2), plane = h * w;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P6\n" << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> buf(3 * plane);
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) buf[3 * i + c] = to_byte(pixels[c * plane + i]);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

void write_pgm(const fs::path& path, const Tensor& map) {
    if (map.rank() != 2) throw UsageError("write_pgm expects an (H,W) tensor");
    const std::size_t h = map.dim(0), w = map.dim(1);
    const double peak = max_abs(map.values());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> buf(h * w);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = peak > 0.0 ? to_byte(std::abs(map[i]) / peak) : 0;
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
    const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
    Tensor out({C, height, width});
    auto axis = [](std::size_t dst, std::size_t out_n, std::size_t in_n) {
        double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in_n) / static_cast<double>(out_n) - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(s));
        const std::size_t i1 = std::min(i0 + 1, in_n - 1);
        return std::tuple{i0, i1, s - static_cast<double>(i0)};
    };
    for (std::size_t y = 0; y < height; ++y) {
        const auto [y0, y1, wy] = axis(y, height, H);
        for (std::size_t x = 0; x < width; ++x) {
            const auto [x0, x1, wx] = axis(x, width, W);
            for (std::size_t c = 0; c < C; ++c) {
                const double* p = image.data() + c * H * W;
                const double top = (1 - wx) * p[y0 * W + x0] + wx * p[y0 * W + x1];
                const double bot = (1 - wx) * p[y1 * W + x0] + wx * p[y1 * W + x1];
                out[(c * height + y) * width + x] = (1 - wy) * top + wy * bot;
            }
        }
    }
    return out;
}

std::vector<ImageSample> load_directory(const fs::path& root, const std::array<std::string, 2>& class_dirs,
                                        std::size_t height, std::size_t width) {
    std::vector<ImageSample> out;
    for (int label = 0; label < 2; ++label) {
        const fs::path dir = root / class_dirs[static_cast<std::size_t>(label)];
        if (!fs::is_directory(dir)) throw ConfigError("class directory not found: " + dir.string());
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir)) {
            const std::string ext = lower_extension(e.path());
            if (e.is_regular_file() && (ext == ".png" || ext == ".ppm")) files.push_back(e.path());
        }
        if (files.empty()) throw ConfigError("class directory " + dir.string() + " contains no PNG/PPM images");
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            ImageSample s;
            s.pixels = resize_bilinear(read_image(f), height, width);
            minmax_scale_channels(s.pixels);
            s.label = label;
            s.base_id = out.size();
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::string sample_name(const ImageSample& s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "img%06llu", static_cast<unsigned long long>(s.base_id));
    return buf;
}

void write_corpus(const fs::path& dir, const std::vector<ImageSample>& samples, bool with_images) {
    fs::create_directories(dir);
    std::ofstream csv(dir / "corpus.csv", std::ios::trunc | std::ios::binary);
    if (!csv) throw IoError("cannot write " + (dir / "corpus.csv").string());
    csv << "sample_id,class,watermark_applied,mask_row,mask_col,lightness_regime,encoding\n";
    for (const auto& s : samples) {
        const std::string id = sample_name(s);
        if (with_images) write_ppm(dir / (id + ".ppm"), s.pixels);
        const auto& m = s.manipulation;
        csv << id << ',' << s.label << ',' << (m.watermark_applied ? 1 : 0) << ',';
        if (m.mask_origin) {
            csv << m.mask_origin->row << ',' << m.mask_origin->col;
        } else {
            csv << ',';
        }
        csv << ',' << (m.lightness_regime ? to_string(*m.lightness_regime) : "") << ',' << to_string(s.encoding)
            << '\n';
    }
    if (!csv) throw IoError("failed writing corpus manifest in " + dir.string());
}

}  // namespace sprobe
