// infer.hpp : whole-biopsy inference — sliding-window forwards, center-crop
// reassembly and ensemble averaging.
#pragma once

#include <filesystem>
#include <functional>

#include "cribdet/network.hpp"

namespace cribdet {

struct BiopsyPrediction {
    std::string biopsy_id;
    int rows = 0, cols = 0;     // output-map cells (ceil(dim / 32))
    std::vector<float> probs;   // rows*cols*kNumLabels
    double resolution_um = kWorkingResolutionUm;
    std::vector<std::string> provenance;  // contributing weight container ids

    float at(int r, int c, int l) const {
        return probs[(static_cast<std::size_t>(r) * cols + c) * kNumLabels + l];
    }
    float& at(int r, int c, int l) {
        return probs[(static_cast<std::size_t>(r) * cols + c) * kNumLabels + l];
    }
};

using PatchPredictor = std::function<ProbabilityMap(const Patch&)>;

// Tiles at stride 512 without background filtering, keeps each patch's
// central 16x16 output cells, fills uncovered border cells from the owning
// edge patch's periphery. Every cell is written exactly once, so the result
// is independent of patch processing order and worker count.
BiopsyPrediction infer_biopsy(const PatchPredictor& predictor, const BiopsyImage& image, int workers = 1);
BiopsyPrediction infer_biopsy(const Network& net, const BiopsyImage& image, int workers = 1);

// Cell-wise arithmetic mean; provenance lists are concatenated.
BiopsyPrediction ensemble(const std::vector<BiopsyPrediction>& predictions);

void save_prediction(const std::filesystem::path& path, const BiopsyPrediction& prediction);
BiopsyPrediction load_prediction(const std::filesystem::path& path);

}  // namespace cribdet
