#include "cribdet/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace cribdet {

double optical_density(double normalized_intensity, double i_max) {
    const double quantum_guard = 0.5 / i_max;
    const double v = std::max(normalized_intensity, quantum_guard);
    return -std::log10(v);
}

BackgroundMask od_background_mask(const BiopsyImage& image, double threshold) {
    require(threshold > 0.0, Errc::InvalidArgument, "OD threshold must be > 0");
    require(image.height >= 1 && image.width >= 1, Errc::InvalidArgument, "empty image");
    // OD_c < t  <=>  v_c > 10^-t (guarded v is always > 0, so the comparison
    // form is exact and cheaper than taking logs per pixel).
    const float cut = static_cast<float>(std::pow(10.0, -threshold));
    const std::size_t n = static_cast<std::size_t>(image.height) * image.width;
    BackgroundMask mask(n, 0);
    const float* px = image.pixels.data();
    for (std::size_t i = 0; i < n; ++i) {
        const float* p = px + i * 3;
        mask[i] = (p[0] > cut || p[1] > cut || p[2] > cut) ? 1 : 0;
    }
    return mask;
}

BiopsyImage resample_to_working_resolution(const BiopsyImage& image, double target_um) {
    image.validate();
    require(target_um > 0.0, Errc::InvalidArgument, "target resolution must be > 0");
    const double ratio = target_um / image.resolution_um;
    if (ratio < 1.0 - 1e-9)
        fail(Errc::WouldUpsample, "image at " + std::to_string(image.resolution_um) +
                                      " um/px is coarser than target " + std::to_string(target_um));
    if (std::abs(ratio - 1.0) <= 1e-9) return image;

    BiopsyImage out;
    out.id = image.id;
    out.resolution_um = target_um;
    out.i_max = image.i_max;
    out.height = static_cast<int>(std::floor(image.height / ratio + 1e-9));
    out.width = static_cast<int>(std::floor(image.width / ratio + 1e-9));
    require(out.height >= 1 && out.width >= 1, Errc::InvalidArgument, "resampled image would be empty");
    out.pixels.assign(static_cast<std::size_t>(out.height) * out.width * 3, 0.0f);

    const int k = static_cast<int>(std::lround(ratio));
    if (std::abs(ratio - k) < 1e-9) {
        // Non-overlapping k x k box average.
        const float norm = 1.0f / static_cast<float>(k * k);
        for (int r = 0; r < out.height; ++r) {
            for (int c = 0; c < out.width; ++c) {
                float acc[3] = {0, 0, 0};
                for (int dr = 0; dr < k; ++dr)
                    for (int dc = 0; dc < k; ++dc)
                        for (int ch = 0; ch < 3; ++ch) acc[ch] += image.at(r * k + dr, c * k + dc, ch);
                for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = acc[ch] * norm;
            }
        }
    } else {
        for (int r = 0; r < out.height; ++r) {
            double sy = (r + 0.5) * ratio - 0.5;
            sy = std::clamp(sy, 0.0, static_cast<double>(image.height - 1));
            const int y0 = static_cast<int>(std::floor(sy));
            const int y1 = std::min(y0 + 1, image.height - 1);
            const float fy = static_cast<float>(sy - y0);
            for (int c = 0; c < out.width; ++c) {
                double sx = (c + 0.5) * ratio - 0.5;
                sx = std::clamp(sx, 0.0, static_cast<double>(image.width - 1));
                const int x0 = static_cast<int>(std::floor(sx));
                const int x1 = std::min(x0 + 1, image.width - 1);
                const float fx = static_cast<float>(sx - x0);
                for (int ch = 0; ch < 3; ++ch) {
                    const float top = image.at(y0, x0, ch) * (1 - fx) + image.at(y0, x1, ch) * fx;
                    const float bot = image.at(y1, x0, ch) * (1 - fx) + image.at(y1, x1, ch) * fx;
                    out.at(r, c, ch) = top * (1 - fy) + bot * fy;
                }
            }
        }
    }
    for (float& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

AnnotationSet scale_annotations_to(const AnnotationSet& annotations, double target_um) {
    annotations.validate();
    require(target_um > 0.0, Errc::InvalidArgument, "target resolution must be > 0");
    AnnotationSet out = annotations;
    const double f = annotations.declared_resolution_um / target_um;
    for (auto& region : out.regions)
        for (auto& v : region.polygon) {
            v.x *= f;
            v.y *= f;
        }
    out.declared_resolution_um = target_um;
    return out;
}

namespace {

std::vector<int> window_origins(int dim, int patch, int stride) {
    std::vector<int> origins;
    if (dim <= patch) {
        origins.push_back(0);
        return origins;
    }
    for (int o = 0; o + patch <= dim; o += stride) origins.push_back(o);
    if ((dim - patch) % stride != 0) origins.push_back(dim - patch);
    return origins;
}

}  // namespace

TileSet tile_biopsy(const BiopsyImage& image, const BackgroundMask& bg_mask, TileMode mode, int patch,
                    int stride, double max_bg_frac) {
    require(patch >= 1 && stride >= 1 && stride <= patch, Errc::InvalidArgument, "bad patch/stride");
    require(bg_mask.size() == static_cast<std::size_t>(image.height) * image.width, Errc::ShapeMismatch,
            "background mask does not match image");

    std::vector<int> rows, cols;
    if (mode == TileMode::Training) {
        rows = window_origins(image.height, patch, stride);
        cols = window_origins(image.width, patch, stride);
    } else {
        const auto padded = [&](int dim) {
            const int spans = (dim + stride - 1) / stride;
            return std::max(patch, spans * stride);
        };
        const int ph = padded(image.height), pw = padded(image.width);
        for (int o = 0; o + patch <= ph; o += stride) rows.push_back(o);
        for (int o = 0; o + patch <= pw; o += stride) cols.push_back(o);
    }

    TileSet out;
    for (int r0 : rows) {
        for (int c0 : cols) {
            Patch p;
            p.biopsy_id = image.id;
            p.origin_row = r0;
            p.origin_col = c0;
            p.pixels.assign(static_cast<std::size_t>(patch) * patch * 3, kBackgroundWhite);
            std::size_t bg_count = 0;
            for (int r = 0; r < patch; ++r) {
                const int sr = r0 + r;
                if (sr >= image.height) {
                    bg_count += static_cast<std::size_t>(patch);
                    continue;
                }
                for (int c = 0; c < patch; ++c) {
                    const int sc = c0 + c;
                    if (sc >= image.width) {
                        ++bg_count;
                        continue;
                    }
                    const std::size_t src = (static_cast<std::size_t>(sr) * image.width + sc) * 3;
                    const std::size_t dst = (static_cast<std::size_t>(r) * patch + c) * 3;
                    p.pixels[dst] = image.pixels[src];
                    p.pixels[dst + 1] = image.pixels[src + 1];
                    p.pixels[dst + 2] = image.pixels[src + 2];
                    bg_count += bg_mask[static_cast<std::size_t>(sr) * image.width + sc];
                }
            }
            TileMeta meta;
            meta.origin_row = r0;
            meta.origin_col = c0;
            meta.bg_frac = static_cast<double>(bg_count) / (static_cast<double>(patch) * patch);
            meta.kept = (mode == TileMode::Coverage) || meta.bg_frac <= max_bg_frac;
            if (meta.kept) out.patches.push_back(std::move(p));
            out.metas.push_back(meta);
        }
    }
    return out;
}

LabelMap crop_label_map(const LabelMap& labels, int height, int width, int origin_row, int origin_col,
                        int patch) {
    require(labels.size() == static_cast<std::size_t>(height) * width, Errc::ShapeMismatch,
            "label map does not match dims");
    LabelMap out(static_cast<std::size_t>(patch) * patch, static_cast<std::uint8_t>(Label::NonLabelled));
    for (int r = 0; r < patch; ++r) {
        const int sr = origin_row + r;
        if (sr < 0 || sr >= height) continue;
        for (int c = 0; c < patch; ++c) {
            const int sc = origin_col + c;
            if (sc < 0 || sc >= width) continue;
            out[static_cast<std::size_t>(r) * patch + c] = labels[static_cast<std::size_t>(sr) * width + sc];
        }
    }
    return out;
}

namespace {

// Fills one polygon into the map wherever the incoming label has strictly
// higher priority than what is already painted. Even-odd scanline rule with
// pixel centers at (c+0.5, r+0.5); half-open edge spans avoid double counting.
void fill_polygon(LabelMap& map, int height, int width, const Polygon& poly, Label label) {
    const auto pri = label_priority(label);
    double min_y = poly[0].y, max_y = poly[0].y;
    for (const auto& v : poly) {
        min_y = std::min(min_y, v.y);
        max_y = std::max(max_y, v.y);
    }
    const int r_begin = std::max(0, static_cast<int>(std::floor(min_y - 0.5)));
    const int r_end = std::min(height - 1, static_cast<int>(std::ceil(max_y)));
    std::vector<double> xs;
    for (int r = r_begin; r <= r_end; ++r) {
        const double yc = r + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < poly.size(); ++i) {
            const Vec2& a = poly[i];
            const Vec2& b = poly[(i + 1) % poly.size()];
            if ((a.y <= yc && yc < b.y) || (b.y <= yc && yc < a.y)) {
                xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
            int c0 = static_cast<int>(std::ceil(xs[i] - 0.5));
            int c1 = static_cast<int>(std::ceil(xs[i + 1] - 0.5)) - 1;
            c0 = std::max(c0, 0);
            c1 = std::min(c1, width - 1);
            for (int c = c0; c <= c1; ++c) {
                auto& cell = map[static_cast<std::size_t>(r) * width + c];
                if (pri > label_priority(static_cast<Label>(cell))) cell = static_cast<std::uint8_t>(label);
            }
        }
    }
}

}  // namespace

RasterResult rasterize_annotations(const AnnotationSet& annotations, int height, int width,
                                   const BackgroundMask& bg_mask) {
    annotations.validate();
    require(bg_mask.size() == static_cast<std::size_t>(height) * width, Errc::ShapeMismatch,
            "background mask does not match dims");
    RasterResult out;
    out.labels.assign(static_cast<std::size_t>(height) * width, static_cast<std::uint8_t>(Label::NonLabelled));

    for (std::size_t idx = 0; idx < annotations.regions.size(); ++idx) {
        const auto& region = annotations.regions[idx];
        Polygon poly = region.polygon;
        bool clamped = false;
        for (auto& v : poly) {
            const double cx = std::clamp(v.x, 0.0, static_cast<double>(width));
            const double cy = std::clamp(v.y, 0.0, static_cast<double>(height));
            if (cx != v.x || cy != v.y) clamped = true;
            v.x = cx;
            v.y = cy;
        }
        if (clamped)
            out.warnings.push_back("region " + std::to_string(idx) + " (" + label_name(region.label) +
                                   ") clamped to image bounds");
        fill_polygon(out.labels, height, width, poly, region.label);
    }
    for (std::size_t i = 0; i < out.labels.size(); ++i)
        if (bg_mask[i]) out.labels[i] = static_cast<std::uint8_t>(Label::NonLabelled);
    return out;
}

TensorF downsample_mask(const LabelMap& patch_labels, int side) {
    require(side == kPatchSide, Errc::ShapeMismatch,
            "downsample_mask expects a " + std::to_string(kPatchSide) + "-sided patch");
    require(patch_labels.size() == static_cast<std::size_t>(side) * side, Errc::ShapeMismatch,
            "label map size mismatch");
    const int cells = side / kPoolFactor;
    TensorF mask({cells, cells, kNumLabels});
    // Counts per window; /factor^2 is exact in float (dyadic rationals).
    const float norm = 1.0f / static_cast<float>(kPoolFactor * kPoolFactor);
    for (int r = 0; r < side; ++r) {
        const int cr = r / kPoolFactor;
        for (int c = 0; c < side; ++c) {
            const int code = patch_labels[static_cast<std::size_t>(r) * side + c];
            mask.data[(static_cast<std::size_t>(cr) * cells + c / kPoolFactor) * kNumLabels + code] += 1.0f;
        }
    }
    for (float& v : mask.data) v *= norm;
    return mask;
}

Tensor<float> pool_label_fraction(const LabelMap& labels, int height, int width, Label label, int factor) {
    require(labels.size() == static_cast<std::size_t>(height) * width, Errc::ShapeMismatch,
            "label map size mismatch");
    const int ch = (height + factor - 1) / factor;
    const int cw = (width + factor - 1) / factor;
    Tensor<float> out({ch, cw});
    std::vector<int> counts(static_cast<std::size_t>(ch) * cw, 0);
    const auto code = static_cast<std::uint8_t>(label);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            const std::size_t cell = static_cast<std::size_t>(r / factor) * cw + c / factor;
            counts[cell] += 1;
            if (labels[static_cast<std::size_t>(r) * width + c] == code) out.data[cell] += 1.0f;
        }
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] /= static_cast<float>(counts[i]);
    return out;
}

AugmentationConfig AugmentationConfig::identity() {
    AugmentationConfig cfg;
    cfg.flip_h = false;
    cfg.flip_v = false;
    cfg.translate_frac = 0.0;
    cfg.max_rotation_deg = 0.0;
    cfg.scale_min = 1.0;
    cfg.scale_max = 1.0;
    cfg.channel_shift = 0.0;
    cfg.rescale_min_lo = 0.0;
    cfg.rescale_min_hi = 0.0;
    cfg.rescale_max_lo = 1.0;
    cfg.rescale_max_hi = 1.0;
    return cfg;
}

AugmentResult augment(const Patch& patch, const LabelMap& labels, const AugmentationConfig& cfg) {
    const int side = kPatchSide;
    require(patch.pixels.size() == static_cast<std::size_t>(side) * side * 3, Errc::ShapeMismatch,
            "patch pixel buffer must be 1024x1024x3");
    require(labels.size() == static_cast<std::size_t>(side) * side, Errc::ShapeMismatch,
            "patch label map must be 1024x1024");

    auto eng = rng::make_engine(cfg.rng_seed);
    const bool do_flip_h = cfg.flip_h && rng::coin(eng);
    const bool do_flip_v = cfg.flip_v && rng::coin(eng);
    const double scale = (cfg.scale_min == cfg.scale_max) ? cfg.scale_min
                                                          : rng::range(eng, cfg.scale_min, cfg.scale_max);
    const double rot_deg = (cfg.max_rotation_deg > 0.0)
                               ? rng::range(eng, -cfg.max_rotation_deg, cfg.max_rotation_deg)
                               : 0.0;
    const double tx = (cfg.translate_frac > 0.0)
                          ? rng::range(eng, -cfg.translate_frac, cfg.translate_frac) * side
                          : 0.0;
    const double ty = (cfg.translate_frac > 0.0)
                          ? rng::range(eng, -cfg.translate_frac, cfg.translate_frac) * side
                          : 0.0;
    double shift[3] = {0, 0, 0};
    if (cfg.channel_shift > 0.0)
        for (double& s : shift) s = rng::range(eng, -cfg.channel_shift, cfg.channel_shift);
    const double lo = (cfg.rescale_min_lo == cfg.rescale_min_hi)
                          ? cfg.rescale_min_lo
                          : rng::range(eng, cfg.rescale_min_lo, cfg.rescale_min_hi);
    const double hi = (cfg.rescale_max_lo == cfg.rescale_max_hi)
                          ? cfg.rescale_max_lo
                          : rng::range(eng, cfg.rescale_max_lo, cfg.rescale_max_hi);

    AugmentResult out;
    out.patch.biopsy_id = patch.biopsy_id;
    out.patch.origin_row = patch.origin_row;
    out.patch.origin_col = patch.origin_col;

    const bool pure_flip = rot_deg == 0.0 && scale == 1.0 && tx == 0.0 && ty == 0.0;
    if (pure_flip) {
        // Index remap keeps flips bit-exact (flip twice restores the input).
        out.patch.pixels.resize(patch.pixels.size());
        out.labels.resize(labels.size());
        for (int r = 0; r < side; ++r) {
            const int sr = do_flip_v ? side - 1 - r : r;
            for (int c = 0; c < side; ++c) {
                const int sc = do_flip_h ? side - 1 - c : c;
                const std::size_t src = static_cast<std::size_t>(sr) * side + sc;
                const std::size_t dst = static_cast<std::size_t>(r) * side + c;
                out.labels[dst] = labels[src];
                for (int ch = 0; ch < 3; ++ch) out.patch.pixels[dst * 3 + ch] = patch.pixels[src * 3 + ch];
            }
        }
    } else {
        // Inverse of translate(rotate(scale(flip(p)))) about the patch center.
        const double theta = rot_deg * std::acos(-1.0) / 180.0;
        const double cosr = std::cos(-theta), sinr = std::sin(-theta);
        const double inv_s = 1.0 / scale;
        const double cx = side / 2.0, cy = side / 2.0;
        out.patch.pixels.assign(patch.pixels.size(), kBackgroundWhite);
        out.labels.assign(labels.size(), static_cast<std::uint8_t>(Label::NonLabelled));
        for (int r = 0; r < side; ++r) {
            for (int c = 0; c < side; ++c) {
                const double qx = c + 0.5 - cx - tx;
                const double qy = r + 0.5 - cy - ty;
                double px = (cosr * qx - sinr * qy) * inv_s;
                double py = (sinr * qx + cosr * qy) * inv_s;
                if (do_flip_h) px = -px;
                if (do_flip_v) py = -py;
                const double sx = px + cx - 0.5;
                const double sy = py + cy - 0.5;
                const std::size_t dst = static_cast<std::size_t>(r) * side + c;

                const int nx = static_cast<int>(std::lround(sx));
                const int ny = static_cast<int>(std::lround(sy));
                if (nx >= 0 && nx < side && ny >= 0 && ny < side)
                    out.labels[dst] = labels[static_cast<std::size_t>(ny) * side + nx];

                const int x0 = static_cast<int>(std::floor(sx));
                const int y0 = static_cast<int>(std::floor(sy));
                if (x0 < -1 || x0 >= side || y0 < -1 || y0 >= side) continue;
                const double fx = sx - x0, fy = sy - y0;
                for (int ch = 0; ch < 3; ++ch) {
                    auto sample = [&](int yy, int xx) -> double {
                        if (xx < 0 || xx >= side || yy < 0 || yy >= side) return kBackgroundWhite;
                        return patch.pixels[(static_cast<std::size_t>(yy) * side + xx) * 3 + ch];
                    };
                    const double top = sample(y0, x0) * (1 - fx) + sample(y0, x0 + 1) * fx;
                    const double bot = sample(y0 + 1, x0) * (1 - fx) + sample(y0 + 1, x0 + 1) * fx;
                    out.patch.pixels[dst * 3 + ch] = static_cast<float>(top * (1 - fy) + bot * fy);
                }
            }
        }
    }

    const bool photometric = shift[0] != 0.0 || shift[1] != 0.0 || shift[2] != 0.0 || lo != 0.0 || hi != 1.0;
    if (photometric) {
        const float span = static_cast<float>(hi - lo);
        const float base = static_cast<float>(lo);
        float* px = out.patch.pixels.data();
        const std::size_t n = out.patch.pixels.size() / 3;
        for (std::size_t i = 0; i < n; ++i)
            for (int ch = 0; ch < 3; ++ch) {
                float v = px[i * 3 + ch] + static_cast<float>(shift[ch]);
                v = base + v * span;
                px[i * 3 + ch] = std::clamp(v, 0.0f, 1.0f);
            }
    }
    return out;
}

}  // namespace cribdet
