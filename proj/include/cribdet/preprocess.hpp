// preprocess.hpp : background masking, resampling, tiling, rasterization,
// mask pooling and training-time augmentation.
#pragma once

#include <optional>
#include <vector>

#include "cribdet/core.hpp"
#include "cribdet/tensor.hpp"

namespace cribdet {

inline constexpr int kPatchSide = 1024;
inline constexpr int kTileStride = 512;
inline constexpr int kPoolFactor = 32;
inline constexpr int kMaskSide = kPatchSide / kPoolFactor;  // 32
inline constexpr double kWorkingResolutionUm = 0.92;
inline constexpr double kOdBackgroundThreshold = 0.12;
inline constexpr double kMaxBackgroundFraction = 0.995;
inline constexpr float kBackgroundWhite = 1.0f;

using BackgroundMask = std::vector<std::uint8_t>;  // H*W, 1 = background
using LabelMap = std::vector<std::uint8_t>;        // H*W, Label codes

// Optical density of a normalized intensity; zero intensities are clamped to
// half the smallest positive quantum so the log stays finite.
double optical_density(double normalized_intensity, double i_max);

// A pixel is background iff OD < threshold in ANY channel.
BackgroundMask od_background_mask(const BiopsyImage& image, double threshold = kOdBackgroundThreshold);

// Downsample to the working resolution. Box filter for integer ratios,
// bilinear otherwise. Requesting an upsample throws WouldUpsample.
BiopsyImage resample_to_working_resolution(const BiopsyImage& image, double target_um = kWorkingResolutionUm);

// Rescales polygon coordinates from the set's declared resolution to target.
AnnotationSet scale_annotations_to(const AnnotationSet& annotations, double target_um);

struct Patch {
    std::string biopsy_id;
    int origin_row = 0;
    int origin_col = 0;
    std::vector<float> pixels;  // kPatchSide*kPatchSide*3, [0,1]
};

struct TileMeta {
    int origin_row = 0;
    int origin_col = 0;
    double bg_frac = 0.0;
    bool kept = true;
};

enum class TileMode {
    // Stride-512 grid plus an edge-flush window per axis when the span is not
    // a stride multiple; windows with > max_bg_frac background are dropped.
    Training,
    // Image padded to a stride multiple so every window origin stays on the
    // 512 grid (output cells align); nothing is dropped.
    Coverage,
};

struct TileSet {
    std::vector<Patch> patches;
    std::vector<TileMeta> metas;  // one entry per candidate window, kept or not
};

TileSet tile_biopsy(const BiopsyImage& image, const BackgroundMask& bg_mask,
                    TileMode mode = TileMode::Training, int patch = kPatchSide, int stride = kTileStride,
                    double max_bg_frac = kMaxBackgroundFraction);

// Crops a patch-sized window out of a full-image label map; out-of-bounds
// pixels read as NonLabelled.
LabelMap crop_label_map(const LabelMap& labels, int height, int width, int origin_row, int origin_col,
                        int patch = kPatchSide);

struct RasterResult {
    LabelMap labels;  // height*width
    std::vector<std::string> warnings;
};

// Scan-line fill. Overlaps resolve by label_priority; background pixels are
// forced to NonLabelled afterwards.
RasterResult rasterize_annotations(const AnnotationSet& annotations, int height, int width,
                                   const BackgroundMask& bg_mask);

// One-hot expansion + non-overlapping kPoolFactor average pooling.
// Input must be exactly kPatchSide x kPatchSide.
TensorF downsample_mask(const LabelMap& patch_labels, int side = kPatchSide);

// Fraction of pixels carrying `label` per kPoolFactor cell over an arbitrary
// map; partial edge cells average over their in-image pixels.
// Output dims: ceil(height/factor) x ceil(width/factor).
Tensor<float> pool_label_fraction(const LabelMap& labels, int height, int width, Label label,
                                  int factor = kPoolFactor);

struct AugmentationConfig {
    bool flip_h = true;  // sampled uniformly when enabled
    bool flip_v = true;
    double translate_frac = 0.10;
    double max_rotation_deg = 5.0;
    double scale_min = 0.9;
    double scale_max = 1.1;
    double channel_shift = 0.05;
    double rescale_min_lo = 0.0;
    double rescale_min_hi = 0.1;
    double rescale_max_lo = 0.9;
    double rescale_max_hi = 1.0;
    std::uint64_t rng_seed = 0;

    // Everything disabled: augment() becomes the identity.
    static AugmentationConfig identity();
};

struct AugmentResult {
    Patch patch;
    LabelMap labels;
};

// Geometric order is flip, scale, rotate, translate; photometric shift then
// rescale follow on the image only. Image samples bilinearly (out-of-frame
// white), labels nearest-neighbor (out-of-frame NonLabelled).
AugmentResult augment(const Patch& patch, const LabelMap& labels, const AugmentationConfig& cfg);

}  // namespace cribdet
