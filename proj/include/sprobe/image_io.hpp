#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "sprobe/dataset.hpp"

namespace sprobe {

// Decoded 8-bit RGB image scaled to [0,1], (3, H, W).
Tensor read_ppm(const std::filesystem::path& path);
Tensor read_png(const std::filesystem::path& path);
Tensor read_image(const std::filesystem::path& path);

void write_ppm(const std::filesystem::path& path, const Tensor& pixels);
// 8-bit greyscale; values are divided by the map maximum (all zeros stay 0).
void write_pgm(const std::filesystem::path& path, const Tensor& map);

// Bilinear resampling with half-pixel centres and edge clamping.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

// Reads <root>/<class_dirs[label]>/*.{png,ppm}, resizes to (height, width)
// and Min-Max scales each channel. Files are taken in name order.
std::vector<ImageSample> load_directory(const std::filesystem::path& root, const std::array<std::string, 2>& class_dirs,
                                        std::size_t height, std::size_t width);

std::string sample_name(const ImageSample& s);

// corpus.csv manifest, plus one P6 file per sample when with_images is set.
void write_corpus(const std::filesystem::path& dir, const std::vector<ImageSample>& samples, bool with_images = true);

}  // namespace sprobe
