#include "cribdet/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <nlohmann/json.hpp>

namespace cribdet {

using nlohmann::json;

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::IoError, "cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(Errc::IoError, "malformed JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

void store_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) fail(Errc::IoError, "cannot write " + path.string());
    out << j.dump(2) << "\n";
}

}  // namespace

DecodedImage read_png_rgb(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) fail(Errc::IoError, "cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, Errc::IoError, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail(Errc::IoError, "png_create_info_struct failed");
    }
    std::vector<png_bytep> row_ptrs;
    std::vector<png_byte> raw;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(Errc::IoError, "libpng error while reading " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    if (bit_depth == 16) png_set_swap(png);  // stored big-endian; host is little-endian
    png_read_update_info(png, info);

    bit_depth = png_get_bit_depth(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    raw.resize(row_bytes * h);
    row_ptrs.resize(h);
    for (png_uint_32 r = 0; r < h; ++r) row_ptrs[r] = raw.data() + r * row_bytes;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    DecodedImage out;
    out.height = static_cast<int>(h);
    out.width = static_cast<int>(w);
    out.i_max = (bit_depth == 16) ? 65535.0 : 255.0;
    out.pixels.resize(static_cast<std::size_t>(h) * w * 3);
    const float inv = 1.0f / static_cast<float>(out.i_max);
    if (bit_depth == 16) {
        const auto* src = reinterpret_cast<const std::uint16_t*>(raw.data());
        for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = src[i] * inv;
    } else {
        for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = raw[i] * inv;
    }
    return out;
}

void write_png_rgb8(const std::filesystem::path& path, int height, int width, const float* pixels) {
    require(height >= 1 && width >= 1, Errc::InvalidArgument, "empty image");
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) fail(Errc::IoError, "cannot write " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, Errc::IoError, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        fail(Errc::IoError, "png_create_info_struct failed");
    }
    std::vector<png_byte> raw(static_cast<std::size_t>(height) * width * 3);
    std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(Errc::IoError, "libpng error while writing " + path.string());
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
        float v = pixels[i];
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        raw[i] = static_cast<png_byte>(v * 255.0f + 0.5f);
    }
    for (int r = 0; r < height; ++r)
        row_ptrs[static_cast<std::size_t>(r)] = raw.data() + static_cast<std::size_t>(r) * width * 3;

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

BiopsyImage load_biopsy_image(const std::filesystem::path& png_path) {
    DecodedImage decoded = read_png_rgb(png_path);
    std::filesystem::path meta_path = png_path;
    meta_path.replace_extension(".json");
    json meta = load_json(meta_path);

    BiopsyImage img;
    img.id = meta.at("id").get<std::string>();
    img.resolution_um = meta.at("um_per_pixel").get<double>();
    img.i_max = meta.at("i_max").get<double>();
    require(img.i_max == decoded.i_max, Errc::InvalidArgument,
            "declared i_max disagrees with PNG bit depth for " + png_path.string());
    img.height = decoded.height;
    img.width = decoded.width;
    img.pixels = std::move(decoded.pixels);
    img.validate();
    return img;
}

void save_biopsy_image(const std::filesystem::path& png_path, const BiopsyImage& image) {
    image.validate();
    write_png_rgb8(png_path, image.height, image.width, image.pixels.data());
    std::filesystem::path meta_path = png_path;
    meta_path.replace_extension(".json");
    store_json(meta_path, json{{"id", image.id}, {"um_per_pixel", image.resolution_um}, {"i_max", 255.0}});
}

AnnotationSet load_annotations(const std::filesystem::path& json_path) {
    json j = load_json(json_path);
    AnnotationSet ann;
    ann.biopsy_id = j.at("biopsy_id").get<std::string>();
    ann.declared_resolution_um = j.at("um_per_pixel").get<double>();
    for (const auto& region : j.at("regions")) {
        AnnotatedRegion r;
        r.label = label_from_name(region.at("label").get<std::string>());
        for (const auto& v : region.at("polygon")) {
            require(v.is_array() && v.size() == 2, Errc::IoError, "polygon vertex must be [x,y]");
            r.polygon.push_back({v[0].get<double>(), v[1].get<double>()});
        }
        ann.regions.push_back(std::move(r));
    }
    ann.validate();
    return ann;
}

void save_annotations(const std::filesystem::path& json_path, const AnnotationSet& annotations) {
    annotations.validate();
    json regions = json::array();
    for (const auto& r : annotations.regions) {
        json poly = json::array();
        for (const auto& v : r.polygon) poly.push_back({v.x, v.y});
        regions.push_back({{"label", label_name(r.label)}, {"polygon", poly}});
    }
    store_json(json_path, json{{"biopsy_id", annotations.biopsy_id},
                               {"um_per_pixel", annotations.declared_resolution_um},
                               {"regions", regions}});
}

std::uint64_t hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::IoError, "cannot open " + path.string());
    char buf[1 << 16];
    std::uint64_t h = 0xcbf29ce484222325ULL;
    while (in) {
        in.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    }
    return h;
}

}  // namespace cribdet
