// eval.hpp : region extraction/filtering, biopsy-wise ROC, annotation-wise
// FROC, Cohen's kappa, inter-observer comparison and overlay rendering.
#pragma once

#include <map>
#include <optional>

#include "cribdet/infer.hpp"
#include "cribdet/preprocess.hpp"

namespace cribdet {

inline constexpr double kMinRegionAreaMm2 = 0.0150;
inline const std::vector<double> kInterobserverCutoffs = {0.0125, 0.1, 0.5};

// Threshold the class channel at > cutoff and group the surviving cells into
// connected components (4- or 8-connectivity).
std::vector<Region> extract_regions(const BiopsyPrediction& prediction, Label cls, double cutoff,
                                    int connectivity = 4);

// Keeps regions with area strictly greater than min_area_mm2.
std::vector<Region> filter_regions(std::vector<Region> regions, double min_area_mm2 = kMinRegionAreaMm2,
                                   const PixelScale& scale = {});

struct RegionCriteria {
    double min_area_mm2 = 0.0;  // <= 0 disables the area filter
    int connectivity = 4;
    PixelScale scale{};
};

struct CurvePoint {
    double cutoff = 0.0;
    double sensitivity = 0.0;
    double fp_rate = 0.0;  // FPR for ROC; mean false-positive regions per biopsy for FROC
};

struct BiopsyEvalCase {
    BiopsyPrediction prediction;
    bool reference_positive = false;  // >= 1 cribriform annotation
};

struct RocResult {
    std::vector<CurvePoint> points;  // cutoff descending (FPR ascending)
    double auc = 0.0;
};

// Biopsy predicted positive iff >= 1 cell survives extraction (+ optional
// area filter). Sweeps every distinct predicted cribriform probability plus
// {0,1} unless explicit cutoffs are given. AUC by trapezoid with the (0,0)
// and (1,1) endpoints appended.
RocResult biopsy_roc(const std::vector<BiopsyEvalCase>& cases, const RegionCriteria& criteria = {},
                     const std::vector<double>& cutoffs = {});

struct FrocCase {
    BiopsyPrediction prediction;
    // One cell set per annotated cribriform region (polygon rasterized solo,
    // pooled at >= 0.5); a set may be empty if the region pools away.
    std::vector<std::vector<Cell>> annotated_regions;
};

struct FrocResult {
    std::vector<CurvePoint> points;
    int total_annotations = 0;
};

// An annotation counts as detected iff any predicted region overlaps >= 1 of
// its cells; a predicted region overlapping no annotated cell is one false
// positive. FP counts average over all biopsies unless fp_over_negatives_only.
FrocResult annotation_froc(const std::vector<FrocCase>& cases, const RegionCriteria& criteria = {},
                           const std::vector<double>& cutoffs = {}, bool fp_over_negatives_only = false);

// kappa = (p_o - p_e) / (1 - p_e). Degenerate p_e = 1 maps to 1 when p_o = 1
// and 0 otherwise; `degenerate`, when given, reports that the convention fired.
double cohen_kappa(const std::vector<bool>& labels_a, const std::vector<bool>& labels_b,
                   bool* degenerate = nullptr);

// Per-annotation cell sets for FROC (cribriform polygons only).
std::vector<std::vector<Cell>> annotated_region_cells(const AnnotationSet& annotations_at_working_res,
                                                      int height, int width);

// Joint rasterized cribriform reference pooled at >= 0.5, output-map space.
std::vector<std::uint8_t> cribriform_reference_cells(const AnnotationSet& annotations_at_working_res,
                                                     int height, int width);

// Cells of surviving predicted regions at a cutoff.
std::vector<std::uint8_t> predicted_cells_mask(const BiopsyPrediction& prediction, double cutoff,
                                               const RegionCriteria& criteria = {});

struct RaterMatrix {
    std::vector<std::string> image_ids;
    std::vector<std::vector<std::uint8_t>> votes;  // [image][rater], 1 = cribriform

    int n_raters() const { return votes.empty() ? 0 : static_cast<int>(votes.front().size()); }
    void validate() const;
};

struct ContouredPrediction {
    std::string image_id;
    BiopsyPrediction prediction;
    Polygon contour;  // pixel coordinates at working resolution
    bool has_contour = true;
};

struct CutoffTabulation {
    double cutoff = 0.0;
    std::map<int, int> predicted_hist;      // #raters voting cribriform -> image count
    std::map<int, int> not_predicted_hist;  // same binning, images not predicted
    double mean_network_rater_kappa = 0.0;
};

struct InterobserverReport {
    double mean_pairwise_rater_kappa = 0.0;
    std::vector<CutoffTabulation> per_cutoff;
    std::vector<std::string> evaluated_ids;
    std::vector<std::string> errors;  // per-image failures; evaluation proceeds
};

// Prediction cells outside the image contour are zeroed before thresholding;
// an image is network-positive iff any in-contour cell exceeds the cutoff.
InterobserverReport interobserver_compare(const RaterMatrix& raters,
                                          const std::vector<ContouredPrediction>& predictions,
                                          const std::vector<double>& cutoffs = kInterobserverCutoffs);

// Alpha-blended error overlay: light blue = TP, green = FN, dark blue = FP,
// with a legend strip appended below. Masks live in output-map space.
BiopsyImage overlay(const BiopsyImage& image, const std::vector<std::uint8_t>& reference_cells,
                    const std::vector<std::uint8_t>& predicted_cells, int mask_rows, int mask_cols);

}  // namespace cribdet
