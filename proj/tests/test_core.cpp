#include <doctest.h>

#include "cribdet/core.hpp"

using namespace cribdet;

TEST_CASE("label codes are a bijection onto 0..6") {
    REQUIRE(kNumLabels == 7);
    for (int c = 0; c < kNumLabels; ++c) {
        const Label l = label_from_code(c);
        CHECK(label_code(l) == c);
        CHECK(label_from_name(label_name(l)) == l);
    }
    CHECK_THROWS_AS(label_from_code(7), Error);
    CHECK_THROWS_AS(label_from_code(-1), Error);
    CHECK_THROWS_AS(label_from_name("G9"), Error);
}

TEST_CASE("label priority ranks cribriform highest") {
    CHECK(label_priority(Label::G4Cribriform) > label_priority(Label::G4ComplexFused));
    CHECK(label_priority(Label::G4ComplexFused) > label_priority(Label::G4Glomeruloid));
    CHECK(label_priority(Label::G4Glomeruloid) > label_priority(Label::G4Fused));
    CHECK(label_priority(Label::G4Fused) > label_priority(Label::G4IllDefined));
    CHECK(label_priority(Label::G4IllDefined) > label_priority(Label::G3));
    CHECK(label_priority(Label::G3) > label_priority(Label::NonLabelled));
}

TEST_CASE("pixel scale derives the output lattice area") {
    PixelScale scale;
    CHECK(scale.input_um_per_px == doctest::Approx(0.92));
    CHECK(scale.downsample_factor == 32);
    CHECK(scale.output_um_per_px() == doctest::Approx(29.44));
    CHECK(scale.output_px_area_mm2() == doctest::Approx(29.44e-3 * 29.44e-3));
}

TEST_CASE("region area is pixel count times output pixel area") {
    PixelScale scale;
    Region one;
    one.cells = {{0, 0}};
    // (29.44 um)^2 = 866.9536 um^2 = 8.669536e-4 mm^2
    CHECK(area_of_region(one, scale) == doctest::Approx(8.6695e-4).epsilon(1e-4));

    Region empty;
    CHECK_THROWS_AS(area_of_region(empty, scale), Error);
    try {
        area_of_region(empty, scale);
    } catch (const Error& e) {
        CHECK(e.code() == Errc::EmptyRegion);
    }

    Region cells17, cells18;
    for (int i = 0; i < 18; ++i) {
        if (i < 17) cells17.cells.push_back({0, i});
        cells18.cells.push_back({0, i});
    }
    CHECK(area_of_region(cells18, scale) == doctest::Approx(0.01560).epsilon(1e-3));
    CHECK(area_of_region(cells17, scale) == doctest::Approx(0.01474).epsilon(1e-3));
    CHECK(area_of_region(cells18, scale) > 0.0150);
    CHECK(area_of_region(cells17, scale) < 0.0150);
}

TEST_CASE("region area is exactly linear in the pixel count") {
    PixelScale scale;
    Region one;
    one.cells = {{0, 0}};
    const double unit = area_of_region(one, scale);
    Region many;
    for (int k = 1; k <= 100; ++k) {
        many.cells.push_back({k / 10, k % 10});
        CHECK(area_of_region(many, scale) == static_cast<double>(k) * unit);
    }
}

TEST_CASE("annotation validation rejects degenerate polygons") {
    AnnotationSet ann;
    ann.biopsy_id = "b";
    ann.declared_resolution_um = 0.92;
    ann.regions.push_back({{{0, 0}, {1, 0}}, Label::G3});
    CHECK_THROWS_AS(ann.validate(), Error);
    ann.regions[0].polygon.push_back({0.5, 1.0});
    CHECK_NOTHROW(ann.validate());
}

TEST_CASE("biopsy image validation checks ranges") {
    BiopsyImage img;
    img.id = "x";
    img.height = 2;
    img.width = 2;
    img.resolution_um = 0.92;
    img.pixels.assign(2 * 2 * 3, 0.5f);
    CHECK_NOTHROW(img.validate());
    img.pixels[0] = 1.5f;
    CHECK_THROWS_AS(img.validate(), Error);
    img.pixels[0] = 0.5f;
    img.resolution_um = 0.0;
    CHECK_THROWS_AS(img.validate(), Error);
}
