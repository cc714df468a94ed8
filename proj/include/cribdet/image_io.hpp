// image_io.hpp : flat RGB PNG input/output plus sidecar metadata JSON.
#pragma once

#include <filesystem>
#include <string>

#include "cribdet/core.hpp"

namespace cribdet {

// Raw decoded PNG: interleaved RGB, values in [0,1], i_max is 255 or 65535
// depending on source bit depth.
struct DecodedImage {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;
    double i_max = 255.0;
};

DecodedImage read_png_rgb(const std::filesystem::path& path);

// Writes 8-bit RGB; values are clamped to [0,1] and quantized.
void write_png_rgb8(const std::filesystem::path& path, int height, int width, const float* pixels);

// Loads image + sidecar "<stem>.json" holding {id, um_per_pixel, i_max}.
// The PNG's own bit depth must agree with the declared i_max.
BiopsyImage load_biopsy_image(const std::filesystem::path& png_path);
void save_biopsy_image(const std::filesystem::path& png_path, const BiopsyImage& image);

AnnotationSet load_annotations(const std::filesystem::path& json_path);
void save_annotations(const std::filesystem::path& json_path, const AnnotationSet& annotations);

std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace cribdet
