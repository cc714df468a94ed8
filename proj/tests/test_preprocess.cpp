#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cribdet/preprocess.hpp"

using namespace cribdet;

namespace {

BiopsyImage flat_image(int h, int w, float r, float g, float b, double res = kWorkingResolutionUm) {
    BiopsyImage img;
    img.id = "t";
    img.height = h;
    img.width = w;
    img.resolution_um = res;
    img.pixels.resize(static_cast<std::size_t>(h) * w * 3);
    for (int i = 0; i < h * w; ++i) {
        img.pixels[static_cast<std::size_t>(i) * 3] = r;
        img.pixels[static_cast<std::size_t>(i) * 3 + 1] = g;
        img.pixels[static_cast<std::size_t>(i) * 3 + 2] = b;
    }
    return img;
}

Polygon rect(double x0, double y0, double x1, double y1) {
    return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

}  // namespace

TEST_CASE("optical density evaluates Eq-style anchors") {
    // I_c = I_max -> OD 0; ratio 0.5 -> 0.3010; 240/255 -> 0.0263
    CHECK(optical_density(1.0, 255.0) == doctest::Approx(0.0));
    CHECK(optical_density(0.5, 255.0) == doctest::Approx(0.30103).epsilon(1e-4));
    CHECK(optical_density(240.0 / 255.0, 255.0) == doctest::Approx(0.0263).epsilon(1e-2));
    // zero intensity guarded by half a quantum, stays finite
    CHECK(std::isfinite(optical_density(0.0, 255.0)));
    CHECK(optical_density(0.0, 255.0) == doctest::Approx(-std::log10(0.5 / 255.0)));
}

TEST_CASE("background mask uses the any-channel rule") {
    BiopsyImage img = flat_image(1, 3, 1.0f, 1.0f, 1.0f);
    // pixel 0: identity (background); pixel 1: mid grey (tissue);
    // pixel 2: red channel high only (background by ANY rule)
    img.pixels = {1.0f, 1.0f, 1.0f, 0.5f, 0.5f, 0.5f, 240.0f / 255, 120.0f / 255, 110.0f / 255};
    const auto mask = od_background_mask(img);
    CHECK(mask[0] == 1);
    CHECK(mask[1] == 0);
    CHECK(mask[2] == 1);
}

TEST_CASE("background mask is monotone in the threshold") {
    auto eng = rng::make_engine(7);
    BiopsyImage img = flat_image(16, 16, 0, 0, 0);
    for (auto& v : img.pixels) v = static_cast<float>(rng::unit(eng));
    const auto m1 = od_background_mask(img, 0.05);
    const auto m2 = od_background_mask(img, 0.12);
    const auto m3 = od_background_mask(img, 0.5);
    for (std::size_t i = 0; i < m1.size(); ++i) {
        if (m1[i]) CHECK(m2[i]);
        if (m2[i]) CHECK(m3[i]);
    }
}

TEST_CASE("resampling by an integer factor box-averages") {
    BiopsyImage img = flat_image(4096, 64, 0.25f, 0.5f, 0.75f, 0.23);
    const BiopsyImage out = resample_to_working_resolution(img);
    CHECK(out.height == 1024);
    CHECK(out.width == 16);
    CHECK(out.resolution_um == doctest::Approx(0.92));
    for (float v : out.pixels) CHECK((v == doctest::Approx(0.25) || v == doctest::Approx(0.5) || v == doctest::Approx(0.75)));
}

TEST_CASE("resampling at the working resolution is the identity") {
    BiopsyImage img = flat_image(100, 60, 0.3f, 0.4f, 0.5f);
    const BiopsyImage out = resample_to_working_resolution(img);
    CHECK(out.height == img.height);
    CHECK(out.width == img.width);
    CHECK(out.pixels == img.pixels);
}

TEST_CASE("constant image stays constant under non-integer resampling") {
    BiopsyImage img = flat_image(200, 200, 0.3f, 0.6f, 0.2f, 0.4);
    const BiopsyImage out = resample_to_working_resolution(img);
    CHECK(out.height == static_cast<int>(std::floor(200 * 0.4 / 0.92 + 1e-9)));
    for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
        CHECK(out.pixels[i] == doctest::Approx(0.3).epsilon(1e-5));
        CHECK(out.pixels[i + 1] == doctest::Approx(0.6).epsilon(1e-5));
        CHECK(out.pixels[i + 2] == doctest::Approx(0.2).epsilon(1e-5));
    }
}

TEST_CASE("upsampling requests are refused") {
    BiopsyImage img = flat_image(10, 10, 0.5f, 0.5f, 0.5f, 2.0);
    try {
        resample_to_working_resolution(img);
        FAIL("expected WouldUpsample");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::WouldUpsample);
    }
}

TEST_CASE("tiling emits the stride grid plus the flush window") {
    SUBCASE("exactly one patch for a 1024x1024 tissue image") {
        BiopsyImage img = flat_image(1024, 1024, 0.5f, 0.5f, 0.5f);
        const auto mask = od_background_mask(img);
        const TileSet tiles = tile_biopsy(img, mask);
        REQUIRE(tiles.patches.size() == 1);
        CHECK(tiles.patches[0].origin_row == 0);
        CHECK(tiles.patches[0].origin_col == 0);
    }
    SUBCASE("2048x1024 tissue yields column origins 0,512,1024") {
        BiopsyImage img = flat_image(1024, 2048, 0.5f, 0.5f, 0.5f);
        const auto mask = od_background_mask(img);
        const TileSet tiles = tile_biopsy(img, mask);
        REQUIRE(tiles.patches.size() == 3);
        CHECK(tiles.patches[0].origin_col == 0);
        CHECK(tiles.patches[1].origin_col == 512);
        CHECK(tiles.patches[2].origin_col == 1024);
    }
    SUBCASE("all-background image yields no training patches") {
        BiopsyImage img = flat_image(1024, 1024, 1.0f, 1.0f, 1.0f);
        const auto mask = od_background_mask(img);
        const TileSet tiles = tile_biopsy(img, mask);
        CHECK(tiles.patches.empty());
        REQUIRE(tiles.metas.size() == 1);
        CHECK(tiles.metas[0].bg_frac == doctest::Approx(1.0));
        CHECK_FALSE(tiles.metas[0].kept);
    }
    SUBCASE("non-multiple dimension adds an edge-flush origin") {
        BiopsyImage img = flat_image(1024, 1800, 0.5f, 0.5f, 0.5f);
        const auto mask = od_background_mask(img);
        const TileSet tiles = tile_biopsy(img, mask);
        std::vector<int> cols;
        for (const auto& p : tiles.patches) cols.push_back(p.origin_col);
        CHECK(cols == std::vector<int>{0, 512, 776});
    }
    SUBCASE("small images are padded with background white") {
        BiopsyImage img = flat_image(600, 600, 0.5f, 0.5f, 0.5f);
        const auto mask = od_background_mask(img);
        const TileSet tiles = tile_biopsy(img, mask);
        REQUIRE(tiles.patches.size() == 1);
        const Patch& p = tiles.patches[0];
        CHECK(p.pixels[(static_cast<std::size_t>(599) * kPatchSide + 599) * 3] == doctest::Approx(0.5));
        CHECK(p.pixels[(static_cast<std::size_t>(600) * kPatchSide + 600) * 3] == doctest::Approx(1.0));
        const double pad_frac = 1.0 - 600.0 * 600 / (1024.0 * 1024);
        CHECK(tiles.metas[0].bg_frac == doctest::Approx(pad_frac));
    }
}

TEST_CASE("tiling covers every tissue pixel before the background filter") {
    auto eng = rng::make_engine(3);
    for (int trial = 0; trial < 8; ++trial) {
        const int h = 1024 + static_cast<int>(rng::below(eng, 1600));
        const int w = 1024 + static_cast<int>(rng::below(eng, 1600));
        std::vector<std::uint8_t> covered(static_cast<std::size_t>(h) * w, 0);
        BiopsyImage img = flat_image(2, 2, 0.5f, 0.5f, 0.5f);  // dims only matter for origins
        img.height = h;
        img.width = w;
        img.pixels.assign(static_cast<std::size_t>(h) * w * 3, 0.5f);
        const BackgroundMask mask(static_cast<std::size_t>(h) * w, 0);
        const TileSet tiles = tile_biopsy(img, mask);
        for (const auto& meta : tiles.metas)
            for (int r = meta.origin_row; r < meta.origin_row + kPatchSide && r < h; ++r)
                for (int c = meta.origin_col; c < meta.origin_col + kPatchSide && c < w; ++c)
                    covered[static_cast<std::size_t>(r) * w + c] = 1;
        const auto total = std::accumulate(covered.begin(), covered.end(), std::size_t{0});
        CHECK(total == static_cast<std::size_t>(h) * w);
    }
}

TEST_CASE("rasterization fills, prioritizes and respects the background") {
    const int h = 64, w = 64;
    BackgroundMask bg(static_cast<std::size_t>(h) * w, 0);
    bg[5] = 1;  // one background pixel inside the polygon

    AnnotationSet ann;
    ann.biopsy_id = "b";
    ann.declared_resolution_um = kWorkingResolutionUm;

    SUBCASE("whole-image polygon paints everything except background") {
        ann.regions.push_back({rect(0, 0, w, h), Label::G3});
        const auto result = rasterize_annotations(ann, h, w, bg);
        CHECK(result.warnings.empty());
        for (std::size_t i = 0; i < result.labels.size(); ++i)
            CHECK(result.labels[i] == (bg[i] ? 0 : static_cast<std::uint8_t>(Label::G3)));
    }
    SUBCASE("empty set is all non-labelled") {
        const auto result = rasterize_annotations(ann, h, w, bg);
        for (auto v : result.labels) CHECK(v == 0);
    }
    SUBCASE("overlap resolves to the higher-priority label") {
        ann.regions.push_back({rect(0, 0, 40, 40), Label::G4Cribriform});
        ann.regions.push_back({rect(20, 20, 63, 63), Label::G3});
        const auto result = rasterize_annotations(ann, h, w, bg);
        CHECK(result.labels[static_cast<std::size_t>(30) * w + 30] ==
              static_cast<std::uint8_t>(Label::G4Cribriform));
        CHECK(result.labels[static_cast<std::size_t>(50) * w + 50] == static_cast<std::uint8_t>(Label::G3));
        CHECK(result.labels[static_cast<std::size_t>(10) * w + 10] ==
              static_cast<std::uint8_t>(Label::G4Cribriform));
    }
    SUBCASE("out-of-bounds vertices are clamped with a warning") {
        ann.regions.push_back({rect(-10, -10, 30, 30), Label::G3});
        const auto result = rasterize_annotations(ann, h, w, bg);
        CHECK(result.warnings.size() == 1);
        CHECK(result.labels[0] == static_cast<std::uint8_t>(Label::G3));
    }
}

TEST_CASE("mask pooling conserves class mass") {
    SUBCASE("uniform patch") {
        LabelMap labels(static_cast<std::size_t>(kPatchSide) * kPatchSide,
                        static_cast<std::uint8_t>(Label::G3));
        const TensorF mask = downsample_mask(labels);
        for (int r = 0; r < kMaskSide; ++r)
            for (int c = 0; c < kMaskSide; ++c)
                for (int l = 0; l < kNumLabels; ++l)
                    CHECK(mask.data[(static_cast<std::size_t>(r) * kMaskSide + c) * kNumLabels + l] ==
                          (l == label_code(Label::G3) ? 1.0f : 0.0f));
    }
    SUBCASE("half split aligned with the pooling grid") {
        LabelMap labels(static_cast<std::size_t>(kPatchSide) * kPatchSide);
        for (int r = 0; r < kPatchSide; ++r)
            for (int c = 0; c < kPatchSide; ++c)
                labels[static_cast<std::size_t>(r) * kPatchSide + c] = static_cast<std::uint8_t>(
                    c < 512 ? Label::G3 : Label::G4Cribriform);
        const TensorF mask = downsample_mask(labels);
        for (int r = 0; r < kMaskSide; ++r)
            for (int c = 0; c < kMaskSide; ++c) {
                const float g3 = mask.data[(static_cast<std::size_t>(r) * kMaskSide + c) * kNumLabels + 1];
                const float crib = mask.data[(static_cast<std::size_t>(r) * kMaskSide + c) * kNumLabels + 6];
                if (c < 16) {
                    CHECK(g3 == 1.0f);
                } else {
                    CHECK(crib == 1.0f);
                }
            }
    }
    SUBCASE("16px checkerboard pools to exact halves") {
        LabelMap labels(static_cast<std::size_t>(kPatchSide) * kPatchSide);
        for (int r = 0; r < kPatchSide; ++r)
            for (int c = 0; c < kPatchSide; ++c)
                labels[static_cast<std::size_t>(r) * kPatchSide + c] =
                    static_cast<std::uint8_t>(((r / 16 + c / 16) % 2) ? Label::G4Fused : Label::G3);
        const TensorF mask = downsample_mask(labels);
        for (int r = 0; r < kMaskSide; ++r)
            for (int c = 0; c < kMaskSide; ++c) {
                CHECK(mask.data[(static_cast<std::size_t>(r) * kMaskSide + c) * kNumLabels + 1] == 0.5f);
                CHECK(mask.data[(static_cast<std::size_t>(r) * kMaskSide + c) * kNumLabels + 2] == 0.5f);
            }
    }
    SUBCASE("random maps: per-cell sums exactly 1, global fractions preserved") {
        auto eng = rng::make_engine(11);
        for (int trial = 0; trial < 20; ++trial) {
            LabelMap labels(static_cast<std::size_t>(kPatchSide) * kPatchSide);
            std::array<double, kNumLabels> source_fraction{};
            for (auto& v : labels) {
                v = static_cast<std::uint8_t>(rng::below(eng, kNumLabels));
                source_fraction[v] += 1.0;
            }
            for (auto& f : source_fraction) f /= static_cast<double>(labels.size());
            const TensorF mask = downsample_mask(labels);
            std::array<double, kNumLabels> pooled{};
            for (int cell = 0; cell < kMaskSide * kMaskSide; ++cell) {
                float sum = 0;
                for (int l = 0; l < kNumLabels; ++l) {
                    const float v = mask.data[static_cast<std::size_t>(cell) * kNumLabels + l];
                    sum += v;
                    pooled[static_cast<std::size_t>(l)] += v;
                }
                CHECK(std::abs(sum - 1.0f) <= 1e-6f);
            }
            for (int l = 0; l < kNumLabels; ++l)
                CHECK(std::abs(pooled[static_cast<std::size_t>(l)] / (kMaskSide * kMaskSide) -
                               source_fraction[static_cast<std::size_t>(l)]) <= 1e-6);
        }
    }
    SUBCASE("wrong shape is rejected") {
        LabelMap labels(100);
        CHECK_THROWS_AS(downsample_mask(labels, 10), Error);
    }
}

namespace {

Patch make_patch(std::uint64_t seed) {
    Patch p;
    p.biopsy_id = "b";
    p.pixels.resize(static_cast<std::size_t>(kPatchSide) * kPatchSide * 3);
    auto eng = rng::make_engine(seed);
    for (auto& v : p.pixels) v = static_cast<float>(rng::unit(eng));
    return p;
}

LabelMap make_labels(std::uint64_t seed) {
    LabelMap m(static_cast<std::size_t>(kPatchSide) * kPatchSide);
    auto eng = rng::make_engine(seed);
    for (auto& v : m) v = static_cast<std::uint8_t>(rng::below(eng, kNumLabels));
    return m;
}

}  // namespace

TEST_CASE("augmentation identity and flip involution") {
    const Patch p = make_patch(21);
    const LabelMap labels = make_labels(22);

    SUBCASE("identity config returns the input bit-exactly") {
        const auto out = augment(p, labels, AugmentationConfig::identity());
        CHECK(out.patch.pixels == p.pixels);
        CHECK(out.labels == labels);
    }
    SUBCASE("horizontal flip applied twice restores the input bit-exactly") {
        AugmentationConfig cfg = AugmentationConfig::identity();
        cfg.flip_h = true;
        // find a seed whose first coin flips
        std::uint64_t seed = 0;
        for (;; ++seed) {
            auto eng = rng::make_engine(seed);
            if (rng::coin(eng)) break;
        }
        cfg.rng_seed = seed;
        const auto once = augment(p, labels, cfg);
        CHECK(once.patch.pixels != p.pixels);
        const auto twice = augment(once.patch, once.labels, cfg);
        CHECK(twice.patch.pixels == p.pixels);
        CHECK(twice.labels == labels);
    }
    SUBCASE("channel shift clips at 1") {
        Patch bright = p;
        bright.pixels.assign(bright.pixels.size(), 0.98f);
        AugmentationConfig cfg = AugmentationConfig::identity();
        cfg.channel_shift = 0.05;
        // draw until all three shifts are positive enough to clip
        for (std::uint64_t seed = 0;; ++seed) {
            auto eng = rng::make_engine(seed);
            const double s0 = rng::range(eng, -0.05, 0.05);
            const double s1 = rng::range(eng, -0.05, 0.05);
            const double s2 = rng::range(eng, -0.05, 0.05);
            if (s0 > 0.021 && s1 > 0.021 && s2 > 0.021) {
                cfg.rng_seed = seed;
                break;
            }
        }
        const auto out = augment(bright, labels, cfg);
        for (float v : out.patch.pixels) CHECK(v == 1.0f);
    }
    SUBCASE("fixed seed is deterministic") {
        AugmentationConfig cfg;  // full paper-default randomness
        cfg.rng_seed = 1234;
        const auto a = augment(p, labels, cfg);
        const auto b = augment(p, labels, cfg);
        CHECK(a.patch.pixels == b.patch.pixels);
        CHECK(a.labels == b.labels);
    }
    SUBCASE("labels remain in the 7-label set under full augmentation") {
        AugmentationConfig cfg;
        cfg.rng_seed = 99;
        const auto out = augment(p, labels, cfg);
        for (auto v : out.labels) CHECK(v < kNumLabels);
        for (float v : out.patch.pixels) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("geometric label warp commutes with one-hot expansion") {
    const Patch p = make_patch(31);
    const LabelMap labels = make_labels(32);
    AugmentationConfig cfg;
    cfg.channel_shift = 0.0;
    cfg.rescale_min_lo = cfg.rescale_min_hi = 0.0;
    cfg.rescale_max_lo = cfg.rescale_max_hi = 1.0;
    cfg.rng_seed = 77;
    const auto out = augment(p, labels, cfg);

    // Indicator planes warped with the same transform agree with the jointly
    // warped map. Tumor labels only: out-of-frame pixels fill with
    // NonLabelled in the joint warp and with 0 in the indicator, which only
    // coincide for l >= 1.
    for (int l = 1; l < kNumLabels; ++l) {
        Patch plane;
        plane.biopsy_id = "b";
        plane.pixels.assign(static_cast<std::size_t>(kPatchSide) * kPatchSide * 3, 0.0f);
        LabelMap indicator(static_cast<std::size_t>(kPatchSide) * kPatchSide);
        for (std::size_t i = 0; i < labels.size(); ++i) indicator[i] = labels[i] == l ? 1 : 0;
        const auto warped = augment(plane, indicator, cfg);
        bool all_equal = true;
        for (std::size_t i = 0; i < warped.labels.size(); ++i)
            all_equal = all_equal && (static_cast<bool>(warped.labels[i]) == (out.labels[i] == l));
        CHECK(all_equal);
    }
}
