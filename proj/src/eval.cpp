#include "cribdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

namespace cribdet {

namespace {

const int kSteps4[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
const int kSteps8[8][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}, {-1, -1}, {-1, 1}, {1, -1}, {1, 1}};

// Connected components of cells passing `keep` on the class channel.
template <typename Pred>
std::vector<Region> components_of(const BiopsyPrediction& p, Label cls, Pred keep, int connectivity) {
    require(connectivity == 4 || connectivity == 8, Errc::InvalidArgument, "connectivity must be 4 or 8");
    const int l = label_code(cls);
    const auto steps = connectivity == 4 ? &kSteps4[0] : &kSteps8[0];
    const int n_steps = connectivity;
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(p.rows) * p.cols, 0);
    std::vector<Region> regions;
    std::deque<Cell> queue;
    for (int r = 0; r < p.rows; ++r) {
        for (int c = 0; c < p.cols; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * p.cols + c;
            if (seen[idx] || !keep(p.at(r, c, l))) continue;
            Region region;
            seen[idx] = 1;
            queue.push_back({r, c});
            while (!queue.empty()) {
                const Cell cur = queue.front();
                queue.pop_front();
                region.cells.push_back(cur);
                region.peak_probability = std::max(region.peak_probability,
                                                   static_cast<double>(p.at(cur.row, cur.col, l)));
                for (int s = 0; s < n_steps; ++s) {
                    const int nr = cur.row + steps[s][0];
                    const int nc = cur.col + steps[s][1];
                    if (nr < 0 || nr >= p.rows || nc < 0 || nc >= p.cols) continue;
                    const std::size_t nidx = static_cast<std::size_t>(nr) * p.cols + nc;
                    if (seen[nidx] || !keep(p.at(nr, nc, l))) continue;
                    seen[nidx] = 1;
                    queue.push_back({nr, nc});
                }
            }
            std::sort(region.cells.begin(), region.cells.end(), [](const Cell& a, const Cell& b) {
                return a.row != b.row ? a.row < b.row : a.col < b.col;
            });
            regions.push_back(std::move(region));
        }
    }
    return regions;
}

std::vector<Region> survivors(const BiopsyPrediction& p, Label cls, double cutoff,
                              const RegionCriteria& criteria, bool inclusive) {
    auto regions = inclusive
                       ? components_of(p, cls, [&](float v) { return v >= cutoff; }, criteria.connectivity)
                       : components_of(p, cls, [&](float v) { return v > cutoff; }, criteria.connectivity);
    if (criteria.min_area_mm2 > 0.0) regions = filter_regions(std::move(regions), criteria.min_area_mm2, criteria.scale);
    return regions;
}

// Distinct cribriform probabilities of one prediction, descending.
std::vector<double> own_values_desc(const BiopsyPrediction& p) {
    const int l = label_code(Label::G4Cribriform);
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(p.rows) * p.cols);
    for (int r = 0; r < p.rows; ++r)
        for (int c = 0; c < p.cols; ++c) vals.push_back(p.at(r, c, l));
    std::sort(vals.begin(), vals.end(), std::greater<>());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    return vals;
}

template <typename CaseRange, typename GetPred>
std::vector<double> cutoff_sweep(const CaseRange& cases, GetPred get) {
    std::set<double> sweep{0.0, 1.0};
    for (const auto& c : cases) {
        const BiopsyPrediction& p = get(c);
        const int l = label_code(Label::G4Cribriform);
        for (int r = 0; r < p.rows; ++r)
            for (int cc = 0; cc < p.cols; ++cc) sweep.insert(static_cast<double>(p.at(r, cc, l)));
    }
    return {sweep.rbegin(), sweep.rend()};  // descending: FPR ascends along the curve
}

double trapezoid_auc(std::vector<std::pair<double, double>> pts) {
    pts.emplace_back(0.0, 0.0);
    pts.emplace_back(1.0, 1.0);
    std::sort(pts.begin(), pts.end());
    double auc = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i)
        auc += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) * 0.5;
    return auc;
}

}  // namespace

std::vector<Region> extract_regions(const BiopsyPrediction& prediction, Label cls, double cutoff,
                                    int connectivity) {
    require(cutoff >= 0.0 && cutoff <= 1.0, Errc::InvalidArgument, "cutoff must lie in [0,1]");
    return components_of(prediction, cls, [&](float v) { return v > cutoff; }, connectivity);
}

std::vector<Region> filter_regions(std::vector<Region> regions, double min_area_mm2,
                                   const PixelScale& scale) {
    std::erase_if(regions, [&](const Region& r) { return area_of_region(r, scale) <= min_area_mm2; });
    return regions;
}

RocResult biopsy_roc(const std::vector<BiopsyEvalCase>& cases, const RegionCriteria& criteria,
                     const std::vector<double>& cutoffs) {
    require(!cases.empty(), Errc::InvalidArgument, "no biopsies to evaluate");
    int positives = 0, negatives = 0;
    for (const auto& c : cases) (c.reference_positive ? positives : negatives)++;
    require(positives >= 1 && negatives >= 1, Errc::DegenerateInput,
            "AUC undefined: need at least one positive and one negative biopsy");

    // Highest inclusive threshold at which a surviving region exists; the
    // biopsy is predicted positive at cutoff t iff t < that threshold.
    std::vector<double> pos_threshold;
    pos_threshold.reserve(cases.size());
    for (const auto& c : cases) {
        double t_star = -1.0;
        for (double v : own_values_desc(c.prediction)) {
            if (!survivors(c.prediction, Label::G4Cribriform, v, criteria, /*inclusive=*/true).empty()) {
                t_star = v;  // larger sets only grow regions, first hit is the max
                break;
            }
        }
        pos_threshold.push_back(t_star);
    }

    const std::vector<double> sweep =
        cutoffs.empty() ? cutoff_sweep(cases, [](const BiopsyEvalCase& c) -> const BiopsyPrediction& {
            return c.prediction;
        })
                        : cutoffs;
    RocResult out;
    std::vector<std::pair<double, double>> pts;
    for (double t : sweep) {
        int tp = 0, fp = 0;
        for (std::size_t i = 0; i < cases.size(); ++i) {
            const bool predicted = t < pos_threshold[i];
            if (predicted) (cases[i].reference_positive ? tp : fp)++;
        }
        CurvePoint pt;
        pt.cutoff = t;
        pt.sensitivity = static_cast<double>(tp) / positives;
        pt.fp_rate = static_cast<double>(fp) / negatives;
        out.points.push_back(pt);
        pts.emplace_back(pt.fp_rate, pt.sensitivity);
    }
    out.auc = trapezoid_auc(std::move(pts));
    return out;
}

FrocResult annotation_froc(const std::vector<FrocCase>& cases, const RegionCriteria& criteria,
                           const std::vector<double>& cutoffs, bool fp_over_negatives_only) {
    require(!cases.empty(), Errc::InvalidArgument, "no biopsies to evaluate");
    int total_annotations = 0;
    for (const auto& c : cases) total_annotations += static_cast<int>(c.annotated_regions.size());
    require(total_annotations >= 1, Errc::DegenerateInput,
            "FROC sensitivity undefined: no annotated cribriform regions");
    int fp_denominator = static_cast<int>(cases.size());
    if (fp_over_negatives_only) {
        fp_denominator = 0;
        for (const auto& c : cases) fp_denominator += c.annotated_regions.empty() ? 1 : 0;
        require(fp_denominator >= 1, Errc::DegenerateInput, "no negative biopsies for FP averaging");
    }

    // Per biopsy: detected/FP counts at each of its own distinct values
    // (inclusive threshold); a global cutoff t maps to the smallest own value
    // strictly above t.
    struct StepFn {
        std::vector<double> values;  // descending
        std::vector<int> detected, fps;
    };
    std::vector<StepFn> steps;
    steps.reserve(cases.size());
    for (const auto& c : cases) {
        StepFn fn;
        fn.values = own_values_desc(c.prediction);
        std::vector<std::uint8_t> annotated_union(
            static_cast<std::size_t>(c.prediction.rows) * c.prediction.cols, 0);
        for (const auto& cells : c.annotated_regions)
            for (const Cell& cell : cells)
                annotated_union[static_cast<std::size_t>(cell.row) * c.prediction.cols + cell.col] = 1;
        for (double v : fn.values) {
            const auto regions = survivors(c.prediction, Label::G4Cribriform, v, criteria, true);
            std::vector<std::uint8_t> survivor_mask(annotated_union.size(), 0);
            int fp = 0;
            for (const auto& region : regions) {
                bool overlaps = false;
                for (const Cell& cell : region.cells) {
                    survivor_mask[static_cast<std::size_t>(cell.row) * c.prediction.cols + cell.col] = 1;
                    overlaps = overlaps ||
                               annotated_union[static_cast<std::size_t>(cell.row) * c.prediction.cols + cell.col];
                }
                fp += overlaps ? 0 : 1;
            }
            int detected = 0;
            for (const auto& cells : c.annotated_regions) {
                bool hit = false;
                for (const Cell& cell : cells)
                    if (survivor_mask[static_cast<std::size_t>(cell.row) * c.prediction.cols + cell.col]) {
                        hit = true;
                        break;
                    }
                detected += hit ? 1 : 0;
            }
            fn.detected.push_back(detected);
            fn.fps.push_back(fp);
        }
        steps.push_back(std::move(fn));
    }

    const std::vector<double> sweep =
        cutoffs.empty()
            ? cutoff_sweep(cases, [](const FrocCase& c) -> const BiopsyPrediction& { return c.prediction; })
            : cutoffs;
    FrocResult out;
    out.total_annotations = total_annotations;
    for (double t : sweep) {
        long detected = 0, fps = 0;
        for (const auto& fn : steps) {
            // smallest value strictly greater than t (values descending)
            std::size_t lo = 0, hi = fn.values.size();
            while (lo < hi) {
                const std::size_t mid = (lo + hi) / 2;
                if (fn.values[mid] > t) lo = mid + 1; else hi = mid;
            }
            if (lo == 0) continue;  // no value above t: nothing predicted
            detected += fn.detected[lo - 1];
            fps += fn.fps[lo - 1];
        }
        CurvePoint pt;
        pt.cutoff = t;
        pt.sensitivity = static_cast<double>(detected) / total_annotations;
        pt.fp_rate = static_cast<double>(fps) / fp_denominator;
        out.points.push_back(pt);
    }
    return out;
}

double cohen_kappa(const std::vector<bool>& labels_a, const std::vector<bool>& labels_b, bool* degenerate) {
    require(labels_a.size() == labels_b.size(), Errc::ShapeMismatch, "rater label lists differ in length");
    require(!labels_a.empty(), Errc::InvalidArgument, "empty label lists");
    if (degenerate) *degenerate = false;
    const double n = static_cast<double>(labels_a.size());
    double both = 0, only_a = 0, only_b = 0, neither = 0;
    for (std::size_t i = 0; i < labels_a.size(); ++i) {
        if (labels_a[i] && labels_b[i]) both++;
        else if (labels_a[i]) only_a++;
        else if (labels_b[i]) only_b++;
        else neither++;
    }
    const double p_o = (both + neither) / n;
    const double pa = (both + only_a) / n;
    const double pb = (both + only_b) / n;
    const double p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if (std::abs(1.0 - p_e) < 1e-15) {
        if (degenerate) *degenerate = true;
        return p_o >= 1.0 ? 1.0 : 0.0;
    }
    return (p_o - p_e) / (1.0 - p_e);
}

std::vector<std::vector<Cell>> annotated_region_cells(const AnnotationSet& annotations, int height,
                                                      int width) {
    annotations.validate();
    const BackgroundMask no_bg(static_cast<std::size_t>(height) * width, 0);
    std::vector<std::vector<Cell>> out;
    for (const auto& region : annotations.regions) {
        if (region.label != Label::G4Cribriform) continue;
        AnnotationSet solo;
        solo.biopsy_id = annotations.biopsy_id;
        solo.declared_resolution_um = annotations.declared_resolution_um;
        solo.regions.push_back(region);
        const auto raster = rasterize_annotations(solo, height, width, no_bg);
        const auto frac = pool_label_fraction(raster.labels, height, width, Label::G4Cribriform);
        std::vector<Cell> cells;
        for (int r = 0; r < frac.dim(0); ++r)
            for (int c = 0; c < frac.dim(1); ++c)
                if (frac.data[static_cast<std::size_t>(r) * frac.dim(1) + c] >= 0.5f) cells.push_back({r, c});
        out.push_back(std::move(cells));
    }
    return out;
}

std::vector<std::uint8_t> cribriform_reference_cells(const AnnotationSet& annotations, int height,
                                                     int width) {
    annotations.validate();
    const BackgroundMask no_bg(static_cast<std::size_t>(height) * width, 0);
    const auto raster = rasterize_annotations(annotations, height, width, no_bg);
    const auto frac = pool_label_fraction(raster.labels, height, width, Label::G4Cribriform);
    std::vector<std::uint8_t> cells(frac.size(), 0);
    for (std::size_t i = 0; i < frac.size(); ++i) cells[i] = frac.data[i] >= 0.5f ? 1 : 0;
    return cells;
}

std::vector<std::uint8_t> predicted_cells_mask(const BiopsyPrediction& prediction, double cutoff,
                                               const RegionCriteria& criteria) {
    auto regions = extract_regions(prediction, Label::G4Cribriform, cutoff, criteria.connectivity);
    if (criteria.min_area_mm2 > 0.0)
        regions = filter_regions(std::move(regions), criteria.min_area_mm2, criteria.scale);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(prediction.rows) * prediction.cols, 0);
    for (const auto& region : regions)
        for (const Cell& cell : region.cells)
            mask[static_cast<std::size_t>(cell.row) * prediction.cols + cell.col] = 1;
    return mask;
}

void RaterMatrix::validate() const {
    require(image_ids.size() == votes.size(), Errc::ShapeMismatch, "rater matrix ids/rows mismatch");
    require(!votes.empty(), Errc::InvalidArgument, "empty rater matrix");
    const std::size_t r = votes.front().size();
    require(r >= 2, Errc::InvalidArgument, "need at least 2 raters");
    for (const auto& row : votes)
        require(row.size() == r, Errc::ShapeMismatch, "rater matrix is not rectangular");
}

InterobserverReport interobserver_compare(const RaterMatrix& raters,
                                          const std::vector<ContouredPrediction>& predictions,
                                          const std::vector<double>& cutoffs) {
    raters.validate();
    require(!cutoffs.empty(), Errc::InvalidArgument, "need at least one cutoff");
    InterobserverReport report;

    // Evaluable images: a prediction with a contour exists for the id.
    std::vector<std::size_t> rows;
    std::vector<const ContouredPrediction*> preds;
    for (std::size_t i = 0; i < raters.image_ids.size(); ++i) {
        const auto& id = raters.image_ids[i];
        const ContouredPrediction* found = nullptr;
        for (const auto& p : predictions)
            if (p.image_id == id) found = &p;
        if (!found) {
            report.errors.push_back("image " + id + ": no prediction supplied");
            continue;
        }
        if (!found->has_contour || found->contour.size() < 3) {
            report.errors.push_back("image " + id + ": missing contour");
            continue;
        }
        rows.push_back(i);
        preds.push_back(found);
        report.evaluated_ids.push_back(id);
    }
    require(!rows.empty(), Errc::DegenerateInput, "no evaluable images");

    const int n_raters = raters.n_raters();
    // Mean pairwise rater kappa over the evaluated images.
    {
        double sum = 0.0;
        int pairs = 0;
        for (int a = 0; a < n_raters; ++a)
            for (int b = a + 1; b < n_raters; ++b) {
                std::vector<bool> va, vb;
                for (std::size_t i : rows) {
                    va.push_back(raters.votes[i][static_cast<std::size_t>(a)] != 0);
                    vb.push_back(raters.votes[i][static_cast<std::size_t>(b)] != 0);
                }
                sum += cohen_kappa(va, vb);
                pairs++;
            }
        report.mean_pairwise_rater_kappa = sum / pairs;
    }

    // In-contour cell masks (cell kept iff >= half its pixels fall inside).
    std::vector<std::vector<std::uint8_t>> inside;
    for (const auto* p : preds) {
        AnnotationSet contour_set;
        contour_set.biopsy_id = p->image_id;
        contour_set.declared_resolution_um = p->prediction.resolution_um;
        contour_set.regions.push_back({p->contour, Label::G3});
        const int h = p->prediction.rows * kPoolFactor;
        const int w = p->prediction.cols * kPoolFactor;
        const BackgroundMask no_bg(static_cast<std::size_t>(h) * w, 0);
        const auto raster = rasterize_annotations(contour_set, h, w, no_bg);
        const auto frac = pool_label_fraction(raster.labels, h, w, Label::G3);
        std::vector<std::uint8_t> mask(frac.size(), 0);
        for (std::size_t i = 0; i < frac.size(); ++i) mask[i] = frac.data[i] >= 0.5f ? 1 : 0;
        inside.push_back(std::move(mask));
    }

    const int l = label_code(Label::G4Cribriform);
    for (double cutoff : cutoffs) {
        CutoffTabulation tab;
        tab.cutoff = cutoff;
        std::vector<bool> network;
        for (std::size_t k = 0; k < preds.size(); ++k) {
            const auto& p = preds[k]->prediction;
            bool positive = false;
            for (int r = 0; r < p.rows && !positive; ++r)
                for (int c = 0; c < p.cols; ++c)
                    if (inside[k][static_cast<std::size_t>(r) * p.cols + c] && p.at(r, c, l) > cutoff) {
                        positive = true;
                        break;
                    }
            network.push_back(positive);
        }
        for (std::size_t k = 0; k < rows.size(); ++k) {
            int votes = 0;
            for (int a = 0; a < n_raters; ++a) votes += raters.votes[rows[k]][static_cast<std::size_t>(a)] ? 1 : 0;
            (network[k] ? tab.predicted_hist : tab.not_predicted_hist)[votes]++;
        }
        double sum = 0.0;
        for (int a = 0; a < n_raters; ++a) {
            std::vector<bool> va;
            for (std::size_t i : rows) va.push_back(raters.votes[i][static_cast<std::size_t>(a)] != 0);
            sum += cohen_kappa(network, va);
        }
        tab.mean_network_rater_kappa = sum / n_raters;
        report.per_cutoff.push_back(std::move(tab));
    }
    return report;
}

namespace {

// 5x7 glyphs for the legend ('T','P','F','N'), one byte per row, MSB first.
struct Glyph {
    char ch;
    std::uint8_t rows[7];
};
const Glyph kGlyphs[] = {
    {'T', {0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100}},
    {'P', {0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000}},
    {'F', {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000}},
    {'N', {0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001}},
};

void draw_char(BiopsyImage& img, int top, int left, char ch, const float rgb[3]) {
    for (const auto& g : kGlyphs) {
        if (g.ch != ch) continue;
        for (int r = 0; r < 7; ++r)
            for (int c = 0; c < 5; ++c)
                if (g.rows[r] & (1 << (4 - c))) {
                    const int rr = top + r, cc = left + c;
                    if (rr >= 0 && rr < img.height && cc >= 0 && cc < img.width)
                        for (int ch2 = 0; ch2 < 3; ++ch2) img.at(rr, cc, ch2) = rgb[ch2];
                }
        return;
    }
}

constexpr float kTpColor[3] = {110.0f / 255, 205.0f / 255, 1.0f};
constexpr float kFnColor[3] = {40.0f / 255, 180.0f / 255, 60.0f / 255};
constexpr float kFpColor[3] = {25.0f / 255, 35.0f / 255, 140.0f / 255};
constexpr float kInk[3] = {0.1f, 0.1f, 0.1f};

}  // namespace

BiopsyImage overlay(const BiopsyImage& image, const std::vector<std::uint8_t>& reference_cells,
                    const std::vector<std::uint8_t>& predicted_cells, int mask_rows, int mask_cols) {
    image.validate();
    require(mask_rows == (image.height + kPoolFactor - 1) / kPoolFactor &&
                mask_cols == (image.width + kPoolFactor - 1) / kPoolFactor,
            Errc::ShapeMismatch, "mask dims do not match the image at x32");
    require(reference_cells.size() == static_cast<std::size_t>(mask_rows) * mask_cols &&
                predicted_cells.size() == reference_cells.size(),
            Errc::ShapeMismatch, "mask buffers do not match mask dims");

    const int legend = 16;
    BiopsyImage out;
    out.id = image.id;
    out.resolution_um = image.resolution_um;
    out.i_max = 255.0;
    out.height = image.height + legend;
    out.width = image.width;
    out.pixels.assign(static_cast<std::size_t>(out.height) * out.width * 3, 1.0f);

    const float alpha = 0.55f;
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) {
            const std::size_t cell = static_cast<std::size_t>(r / kPoolFactor) * mask_cols + c / kPoolFactor;
            const bool ref = reference_cells[cell] != 0;
            const bool pred = predicted_cells[cell] != 0;
            const float* color = ref && pred ? kTpColor : (ref ? kFnColor : (pred ? kFpColor : nullptr));
            for (int ch = 0; ch < 3; ++ch) {
                const float base = image.at(r, c, ch);
                out.at(r, c, ch) = color ? (1 - alpha) * base + alpha * color[ch] : base;
            }
        }
    }

    // legend strip: swatch + caption for each category
    struct Item {
        const float* color;
        const char* text;
    };
    const Item items[] = {{kTpColor, "TP"}, {kFnColor, "FN"}, {kFpColor, "FP"}};
    int x = 4;
    const int top = image.height + 4;
    for (const auto& item : items) {
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c)
                if (top + r < out.height && x + c < out.width)
                    for (int ch = 0; ch < 3; ++ch) out.at(top + r, x + c, ch) = item.color[ch];
        draw_char(out, top, x + 10, item.text[0], kInk);
        draw_char(out, top, x + 16, item.text[1], kInk);
        x += 34;
    }
    return out;
}

}  // namespace cribdet
