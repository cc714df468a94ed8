// synth.hpp : deterministic synthetic biopsy generator. Seven procedurally
// textured tissue classes with polygon annotations; textures are built to be
// mean-color separable, not to look like histology.
#pragma once

#include <optional>

#include "cribdet/core.hpp"

namespace cribdet {

struct LabelTexture {
    float base[3] = {0, 0, 0};
    float lumen_color[3] = {0, 0, 0};
    double lumen_density = 0.0;    // bright circles per pixel
    double lumen_radius = 3.0;
    double nucleus_density = 0.0;  // dark dots per pixel
};

struct SynthConfig {
    int n_biopsies = 40;
    int height = 1024;
    int width = 1024;
    std::uint64_t seed = 0;
    std::string id_prefix = "synth";
    int min_regions = 1;
    int max_regions = 4;
    // Region-label draw weights; zero disables a label. Defaults mirror the
    // production region-count imbalance (G3 most frequent, complex fused
    // rarest, G3:cribriform about 6:1).
    std::array<double, kNumLabels> label_weights = {0.0, 976.0, 197.0, 441.0, 28.0, 183.0, 161.0};
    // Every enabled label is guaranteed to appear in at least this many
    // biopsies (0 picks max(3, n/10), capped by n).
    int min_biopsies_per_label = 0;

    void validate() const;
    static const LabelTexture& texture(Label l);
};

struct SynthBiopsy {
    BiopsyImage image;
    AnnotationSet annotations;
};

// Same config (seed included) always yields a byte-identical corpus.
std::vector<SynthBiopsy> generate(const SynthConfig& cfg);

}  // namespace cribdet
