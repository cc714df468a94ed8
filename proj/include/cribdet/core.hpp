// core.hpp : label vocabulary, biopsy/annotation types, physical-scale arithmetic.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cribdet/common.hpp"

namespace cribdet {

// The 7 tissue classes. Integer codes are stable and index loss weights,
// reference masks and probability maps everywhere.
enum class Label : int {
    NonLabelled = 0,
    G3 = 1,
    G4Fused = 2,
    G4IllDefined = 3,
    G4ComplexFused = 4,
    G4Glomeruloid = 5,
    G4Cribriform = 6,
};

inline constexpr int kNumLabels = 7;

const char* label_name(Label l);
Label label_from_name(const std::string& name);
Label label_from_code(int code);
inline int label_code(Label l) { return static_cast<int>(l); }

// Overlap priority for rasterization: highest wins a contested pixel.
// G4Cribriform > G4ComplexFused > G4Glomeruloid > G4Fused > G4IllDefined > G3 > NonLabelled.
int label_priority(Label l);

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

using Polygon = std::vector<Vec2>;

// RGB tissue image, channel-last float in [0,1], square pixels.
struct BiopsyImage {
    std::string id;
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // height*width*3, interleaved RGB
    double resolution_um = 0.0; // µm per pixel
    double i_max = 255.0;       // max representable raw intensity pre-normalization

    float& at(int r, int c, int ch) { return pixels[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
    float at(int r, int c, int ch) const { return pixels[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }

    void validate() const;
};

struct AnnotatedRegion {
    Polygon polygon;  // pixel coordinates (x, y) at the declared resolution
    Label label = Label::NonLabelled;
};

struct AnnotationSet {
    std::string biopsy_id;
    double declared_resolution_um = 0.0;
    std::vector<AnnotatedRegion> regions;

    // Rejects polygons with < 3 vertices; labels are range-checked on load.
    void validate() const;
};

// Physical scale of the network output lattice.
struct PixelScale {
    double input_um_per_px = 0.92;
    int downsample_factor = 32;

    double output_um_per_px() const { return input_um_per_px * downsample_factor; }
    double output_px_area_mm2() const {
        const double mm = output_um_per_px() / 1000.0;
        return mm * mm;
    }
    void validate() const {
        require(input_um_per_px > 0.0, Errc::InvalidArgument, "input_um_per_px must be > 0");
        require(downsample_factor >= 1, Errc::InvalidArgument, "downsample_factor must be >= 1");
    }
};

struct Cell {
    int row = 0;
    int col = 0;
    bool operator==(const Cell&) const = default;
};

// Connected component of above-cutoff cells in output-map space.
struct Region {
    std::vector<Cell> cells;
    double peak_probability = 0.0;
};

// |cells| * output pixel area. Throws EmptyRegion for an empty component.
double area_of_region(const Region& region, const PixelScale& scale);

}  // namespace cribdet
