#include "cribdet/core.hpp"

#include <cmath>

namespace cribdet {

namespace {
constexpr std::array<const char*, kNumLabels> kLabelNames = {
    "non-labelled", "G3", "G4-fused", "G4-ill-defined", "G4-complex-fused", "G4-glomeruloid", "G4-cribriform",
};
}  // namespace

const char* label_name(Label l) { return kLabelNames[static_cast<std::size_t>(label_code(l))]; }

Label label_from_name(const std::string& name) {
    for (int i = 0; i < kNumLabels; ++i)
        if (name == kLabelNames[static_cast<std::size_t>(i)]) return static_cast<Label>(i);
    fail(Errc::InvalidArgument, "unknown label name '" + name + "'");
}

Label label_from_code(int code) {
    require(code >= 0 && code < kNumLabels, Errc::InvalidArgument,
            "label code " + std::to_string(code) + " out of range 0..6");
    return static_cast<Label>(code);
}

int label_priority(Label l) {
    switch (l) {
        case Label::NonLabelled: return 0;
        case Label::G3: return 1;
        case Label::G4IllDefined: return 2;
        case Label::G4Fused: return 3;
        case Label::G4Glomeruloid: return 4;
        case Label::G4ComplexFused: return 5;
        case Label::G4Cribriform: return 6;
    }
    return -1;
}

void BiopsyImage::validate() const {
    require(height >= 1 && width >= 1, Errc::InvalidArgument, "image dimensions must be >= 1");
    require(resolution_um > 0.0, Errc::InvalidArgument, "image resolution must be > 0");
    require(i_max > 0.0, Errc::InvalidArgument, "i_max must be > 0");
    require(pixels.size() == static_cast<std::size_t>(height) * width * 3, Errc::ShapeMismatch,
            "pixel buffer size does not match height*width*3");
    for (float v : pixels)
        require(v >= 0.0f && v <= 1.0f && std::isfinite(v), Errc::InvalidArgument,
                "pixel intensity outside [0,1]");
}

void AnnotationSet::validate() const {
    require(declared_resolution_um > 0.0, Errc::InvalidArgument, "annotation resolution must be > 0");
    for (const auto& region : regions) {
        require(region.polygon.size() >= 3, Errc::InvalidArgument,
                "polygon must have >= 3 vertices (biopsy " + biopsy_id + ")");
        int code = label_code(region.label);
        require(code >= 0 && code < kNumLabels, Errc::InvalidArgument, "annotation label out of range");
    }
}

double area_of_region(const Region& region, const PixelScale& scale) {
    scale.validate();
    if (region.cells.empty()) fail(Errc::EmptyRegion, "region has no pixels");
    return static_cast<double>(region.cells.size()) * scale.output_px_area_mm2();
}

}  // namespace cribdet
