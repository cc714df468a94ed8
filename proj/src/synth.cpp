#include "cribdet/synth.hpp"

#include <algorithm>
#include <cmath>

#include "cribdet/preprocess.hpp"

namespace cribdet {

namespace {

const LabelTexture kTextures[kNumLabels] = {
    // non-labelled tissue (the unannotated silhouette)
    {{0.70f, 0.52f, 0.60f}, {0, 0, 0}, 0.0, 0.0, 0.0008},
    // G3
    {{0.62f, 0.36f, 0.50f}, {0, 0, 0}, 0.0, 0.0, 0.0025},
    // G4 fused
    {{0.38f, 0.34f, 0.62f}, {0, 0, 0}, 0.0, 0.0, 0.0020},
    // G4 ill-defined
    {{0.60f, 0.56f, 0.30f}, {0, 0, 0}, 0.0, 0.0, 0.0015},
    // G4 complex fused
    {{0.28f, 0.52f, 0.50f}, {0, 0, 0}, 0.0, 0.0, 0.0020},
    // G4 glomeruloid
    {{0.56f, 0.40f, 0.24f}, {0.66f, 0.60f, 0.52f}, 0.0006, 5.0, 0.0010},
    // G4 cribriform: dark sheet punched with many small bright lumina
    {{0.30f, 0.22f, 0.38f}, {0.68f, 0.66f, 0.70f}, 0.0045, 3.0, 0.0},
};

struct RegionPlan {
    Polygon polygon;
    Label label = Label::G3;
    double cx = 0, cy = 0, radius = 0;
};

struct BiopsyPlan {
    std::vector<RegionPlan> regions;
    Polygon silhouette;
};

Polygon star_polygon(rng::Engine& eng, double cx, double cy, double radius, int vertices,
                     double radial_noise) {
    Polygon poly;
    const double two_pi = 2.0 * std::acos(-1.0);
    const double phase = rng::range(eng, 0.0, two_pi);
    for (int v = 0; v < vertices; ++v) {
        const double theta = phase + two_pi * v / vertices;
        const double r = radius * (1.0 + rng::range(eng, -radial_noise, radial_noise));
        poly.push_back({cx + r * std::cos(theta), cy + r * std::sin(theta)});
    }
    return poly;
}

LabelMap polygon_mask(const Polygon& poly, int height, int width) {
    AnnotationSet set;
    set.biopsy_id = "mask";
    set.declared_resolution_um = kWorkingResolutionUm;
    set.regions.push_back({poly, Label::G3});
    const BackgroundMask no_bg(static_cast<std::size_t>(height) * width, 0);
    return rasterize_annotations(set, height, width, no_bg).labels;
}

void paint_texture(BiopsyImage& img, const LabelMap& mask, const LabelTexture& tex, rng::Engine& eng) {
    std::size_t area = 0;
    for (auto m : mask) area += m;
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            if (!mask[static_cast<std::size_t>(r) * img.width + c]) continue;
            for (int ch = 0; ch < 3; ++ch) {
                const float noise = static_cast<float>(rng::range(eng, -0.015, 0.015));
                img.at(r, c, ch) = std::clamp(tex.base[ch] + noise, 0.02f, 0.74f);
            }
        }
    auto stamp_disc = [&](double cx, double cy, double radius, const float* color) {
        const int r0 = std::max(0, static_cast<int>(cy - radius - 1));
        const int r1 = std::min(img.height - 1, static_cast<int>(cy + radius + 1));
        const int c0 = std::max(0, static_cast<int>(cx - radius - 1));
        const int c1 = std::min(img.width - 1, static_cast<int>(cx + radius + 1));
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c) {
                if (!mask[static_cast<std::size_t>(r) * img.width + c]) continue;
                const double dx = c + 0.5 - cx, dy = r + 0.5 - cy;
                if (dx * dx + dy * dy > radius * radius) continue;
                for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = std::clamp(color[ch], 0.02f, 0.74f);
            }
    };
    // bounding box sampling; draws outside the mask are skipped by the stamp
    int min_r = img.height, max_r = -1, min_c = img.width, max_c = -1;
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            if (mask[static_cast<std::size_t>(r) * img.width + c]) {
                min_r = std::min(min_r, r);
                max_r = std::max(max_r, r);
                min_c = std::min(min_c, c);
                max_c = std::max(max_c, c);
            }
    if (max_r < 0) return;
    const float nucleus[3] = {0.18f, 0.12f, 0.26f};
    const auto n_lumina = static_cast<long>(tex.lumen_density * static_cast<double>(area));
    for (long i = 0; i < n_lumina; ++i) {
        const double cx = rng::range(eng, min_c, max_c + 1.0);
        const double cy = rng::range(eng, min_r, max_r + 1.0);
        stamp_disc(cx, cy, tex.lumen_radius * rng::range(eng, 0.7, 1.3), tex.lumen_color);
    }
    const auto n_nuclei = static_cast<long>(tex.nucleus_density * static_cast<double>(area));
    for (long i = 0; i < n_nuclei; ++i) {
        const double cx = rng::range(eng, min_c, max_c + 1.0);
        const double cy = rng::range(eng, min_r, max_r + 1.0);
        stamp_disc(cx, cy, rng::range(eng, 1.0, 2.2), nucleus);
    }
}

Label draw_label(rng::Engine& eng, const std::array<double, kNumLabels>& weights) {
    double total = 0.0;
    for (int l = 1; l < kNumLabels; ++l) total += weights[static_cast<std::size_t>(l)];
    double u = rng::unit(eng) * total;
    for (int l = 1; l < kNumLabels; ++l) {
        u -= weights[static_cast<std::size_t>(l)];
        if (u < 0.0) return static_cast<Label>(l);
    }
    return Label::G4Cribriform;
}

}  // namespace

void SynthConfig::validate() const {
    require(n_biopsies >= 1, Errc::InvalidArgument, "need at least one biopsy");
    require(height >= 256 && width >= 256, Errc::InvalidArgument, "synthetic biopsies must be >= 256 px");
    require(min_regions >= 1 && max_regions >= min_regions, Errc::InvalidArgument, "bad region count range");
    double total = 0.0;
    for (int l = 1; l < kNumLabels; ++l) {
        require(label_weights[static_cast<std::size_t>(l)] >= 0.0, Errc::InvalidArgument,
                "label weights must be non-negative");
        total += label_weights[static_cast<std::size_t>(l)];
    }
    require(total > 0.0, Errc::InvalidArgument, "at least one tumor label must be enabled");
    require(label_weights[0] == 0.0, Errc::InvalidArgument, "non-labelled regions cannot be annotated");
}

const LabelTexture& SynthConfig::texture(Label l) { return kTextures[static_cast<std::size_t>(label_code(l))]; }

std::vector<SynthBiopsy> generate(const SynthConfig& cfg) {
    cfg.validate();

    // Phase A: plan geometry and labels (no pixels yet).
    std::vector<BiopsyPlan> plans(static_cast<std::size_t>(cfg.n_biopsies));
    for (int i = 0; i < cfg.n_biopsies; ++i) {
        auto eng = rng::make_engine(rng::derive_seed(cfg.seed, 0x100000ULL + static_cast<std::uint64_t>(i)));
        auto& plan = plans[static_cast<std::size_t>(i)];
        const double cx = cfg.width / 2.0, cy = cfg.height / 2.0;
        const double base = 0.40 * std::min(cfg.height, cfg.width);
        plan.silhouette = star_polygon(eng, cx, cy, base, 24, 0.15);
        const int n_regions =
            cfg.min_regions + static_cast<int>(rng::below(
                                  eng, static_cast<std::uint32_t>(cfg.max_regions - cfg.min_regions + 1)));
        for (int r = 0; r < n_regions; ++r) {
            RegionPlan region;
            const double max_offset = 0.13 * std::min(cfg.height, cfg.width);
            region.cx = cx + rng::range(eng, -max_offset, max_offset);
            region.cy = cy + rng::range(eng, -max_offset, max_offset);
            region.radius = rng::range(eng, 70.0, std::min(170.0, 0.17 * std::min(cfg.height, cfg.width)));
            region.label = draw_label(eng, cfg.label_weights);
            region.polygon = star_polygon(eng, region.cx, region.cy, region.radius, 14, 0.22);
            plan.regions.push_back(std::move(region));
        }
    }

    // Phase B: guarantee each enabled label shows up in enough biopsies.
    int min_needed = cfg.min_biopsies_per_label > 0 ? cfg.min_biopsies_per_label
                                                    : std::max(3, cfg.n_biopsies / 10);
    min_needed = std::min(min_needed, cfg.n_biopsies);
    auto biopsies_with = [&](Label l) {
        int count = 0;
        for (const auto& plan : plans) {
            for (const auto& region : plan.regions)
                if (region.label == l) {
                    count++;
                    break;
                }
        }
        return count;
    };
    std::vector<Label> enabled;
    for (int l = 1; l < kNumLabels; ++l)
        if (cfg.label_weights[static_cast<std::size_t>(l)] > 0.0) enabled.push_back(static_cast<Label>(l));
    std::sort(enabled.begin(), enabled.end(), [&](Label a, Label b) {
        return cfg.label_weights[static_cast<std::size_t>(label_code(a))] <
               cfg.label_weights[static_cast<std::size_t>(label_code(b))];
    });
    for (Label l : enabled) {
        int have = biopsies_with(l);
        for (int i = 0; i < cfg.n_biopsies && have < min_needed; ++i) {
            auto& plan = plans[static_cast<std::size_t>(i)];
            bool contains = false;
            for (const auto& region : plan.regions) contains = contains || region.label == l;
            if (contains) continue;
            // Relabel a region of the most frequent label in this biopsy,
            // never stealing a label that is itself scarce.
            int best = -1;
            for (std::size_t r = 0; r < plan.regions.size(); ++r) {
                const Label cur = plan.regions[r].label;
                if (cur == l) continue;
                if (biopsies_with(cur) <= min_needed) continue;
                if (best < 0 || cfg.label_weights[static_cast<std::size_t>(label_code(cur))] >
                                    cfg.label_weights[static_cast<std::size_t>(label_code(
                                        plan.regions[static_cast<std::size_t>(best)].label))])
                    best = static_cast<int>(r);
            }
            if (best >= 0) {
                plan.regions[static_cast<std::size_t>(best)].label = l;
                ++have;
            }
        }
    }

    // Phase C: paint deterministically from the (possibly edited) plan.
    std::vector<SynthBiopsy> out;
    out.reserve(static_cast<std::size_t>(cfg.n_biopsies));
    for (int i = 0; i < cfg.n_biopsies; ++i) {
        auto eng = rng::make_engine(rng::derive_seed(cfg.seed, 0x200000ULL + static_cast<std::uint64_t>(i)));
        const auto& plan = plans[static_cast<std::size_t>(i)];
        SynthBiopsy b;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "%s-%03d", cfg.id_prefix.c_str(), i);
        b.image.id = idbuf;
        b.image.height = cfg.height;
        b.image.width = cfg.width;
        b.image.resolution_um = kWorkingResolutionUm;
        b.image.i_max = 255.0;
        b.image.pixels.assign(static_cast<std::size_t>(cfg.height) * cfg.width * 3, 1.0f);

        paint_texture(b.image, polygon_mask(plan.silhouette, cfg.height, cfg.width),
                      SynthConfig::texture(Label::NonLabelled), eng);
        for (const auto& region : plan.regions)
            paint_texture(b.image, polygon_mask(region.polygon, cfg.height, cfg.width),
                          SynthConfig::texture(region.label), eng);

        b.annotations.biopsy_id = b.image.id;
        b.annotations.declared_resolution_um = kWorkingResolutionUm;
        for (const auto& region : plan.regions) b.annotations.regions.push_back({region.polygon, region.label});
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace cribdet
