#include "cribdet/infer.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cribdet {

using nlohmann::json;

namespace {

constexpr char kPredMagic[8] = {'C', 'R', 'I', 'B', 'P', 'R', '0', '1'};
constexpr int kCenterLo = kMaskSide / 4;      // 8  : first center cell
constexpr int kCenterHi = 3 * kMaskSide / 4;  // 24 : one past last center cell
constexpr int kStrideCells = kTileStride / kPoolFactor;  // 16

// Owned global-cell range of patch k along one axis. Interior patches own
// their 16 center cells; the first/last patches also own the uncovered
// periphery so each border cell comes from its nearest patch.
std::pair<int, int> owned_range(int k, int n_patches, int total_cells) {
    const int origin = k * kStrideCells;
    const int lo = (k == 0) ? 0 : origin + kCenterLo;
    const int hi = (k == n_patches - 1) ? std::min(origin + kMaskSide, total_cells) : origin + kCenterHi;
    return {lo, hi};
}

}  // namespace

BiopsyPrediction infer_biopsy(const PatchPredictor& predictor, const BiopsyImage& image, int workers) {
    image.validate();
    require(workers >= 1, Errc::InvalidArgument, "workers must be >= 1");
    // Background filtering is disabled for inference: coverage is total.
    BackgroundMask no_bg(static_cast<std::size_t>(image.height) * image.width, 0);
    TileSet tiles = tile_biopsy(image, no_bg, TileMode::Coverage);

    BiopsyPrediction out;
    out.biopsy_id = image.id;
    out.resolution_um = image.resolution_um;
    out.rows = (image.height + kPoolFactor - 1) / kPoolFactor;
    out.cols = (image.width + kPoolFactor - 1) / kPoolFactor;
    out.probs.assign(static_cast<std::size_t>(out.rows) * out.cols * kNumLabels, 0.0f);

    int n_rows = 0, n_cols = 0;
    for (const auto& p : tiles.patches) {
        n_rows = std::max(n_rows, p.origin_row / kTileStride + 1);
        n_cols = std::max(n_cols, p.origin_col / kTileStride + 1);
    }

    const auto n = static_cast<int>(tiles.patches.size());
    std::exception_ptr first_error = nullptr;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(workers)
#endif
    for (int i = 0; i < n; ++i) {
        try {
            const Patch& patch = tiles.patches[static_cast<std::size_t>(i)];
            const ProbabilityMap map = predictor(patch);
            require(map.shape == std::vector<int>{kMaskSide, kMaskSide, kNumLabels}, Errc::ShapeMismatch,
                    "patch predictor must return a 32x32x7 map");
            const int kr = patch.origin_row / kTileStride;
            const int kc = patch.origin_col / kTileStride;
            const auto [r_lo, r_hi] = owned_range(kr, n_rows, out.rows);
            const auto [c_lo, c_hi] = owned_range(kc, n_cols, out.cols);
            for (int r = r_lo; r < r_hi; ++r) {
                const int lr = r - kr * kStrideCells;
                for (int c = c_lo; c < c_hi; ++c) {
                    const int lc = c - kc * kStrideCells;
                    for (int l = 0; l < kNumLabels; ++l)
                        out.at(r, c, l) =
                            map.data[(static_cast<std::size_t>(lr) * kMaskSide + lc) * kNumLabels +
                                     static_cast<std::size_t>(l)];
                }
            }
        } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
            if (!first_error) first_error = std::current_exception();
        }
    }
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

BiopsyPrediction infer_biopsy(const Network& net, const BiopsyImage& image, int workers) {
    require(net.config().input_side == kPatchSide && net.config().output_side() == kMaskSide,
            Errc::ShapeMismatch, "network does not map 1024x1024 patches to 32x32 cells");
    PatchPredictor predictor = [&net](const Patch& patch) -> ProbabilityMap {
        TensorF probs = net.predict(patch_to_tensor(patch));
        ProbabilityMap map({kMaskSide, kMaskSide, kNumLabels});
        std::copy(probs.data.begin(), probs.data.end(), map.data.begin());
        return map;
    };
    return infer_biopsy(predictor, image, workers);
}

BiopsyPrediction ensemble(const std::vector<BiopsyPrediction>& predictions) {
    require(!predictions.empty(), Errc::InvalidArgument, "ensemble of nothing");
    const auto& first = predictions.front();
    BiopsyPrediction out;
    out.biopsy_id = first.biopsy_id;
    out.rows = first.rows;
    out.cols = first.cols;
    out.resolution_um = first.resolution_um;
    out.probs.assign(first.probs.size(), 0.0f);
    for (const auto& p : predictions) {
        require(p.biopsy_id == first.biopsy_id, Errc::InvalidArgument,
                "ensemble inputs disagree on biopsy id");
        require(p.rows == first.rows && p.cols == first.cols && p.probs.size() == first.probs.size(),
                Errc::ShapeMismatch, "ensemble inputs disagree on shape");
        for (std::size_t i = 0; i < out.probs.size(); ++i) out.probs[i] += p.probs[i];
        out.provenance.insert(out.provenance.end(), p.provenance.begin(), p.provenance.end());
    }
    const float inv = 1.0f / static_cast<float>(predictions.size());
    for (float& v : out.probs) v *= inv;
    return out;
}

void save_prediction(const std::filesystem::path& path, const BiopsyPrediction& prediction) {
    json header;
    header["biopsy_id"] = prediction.biopsy_id;
    header["rows"] = prediction.rows;
    header["cols"] = prediction.cols;
    header["classes"] = kNumLabels;
    header["um_per_pixel"] = prediction.resolution_um;
    header["provenance"] = prediction.provenance;
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) fail(Errc::IoError, "cannot write " + path.string());
    out.write(kPredMagic, sizeof(kPredMagic));
    const std::uint64_t hlen = text.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(prediction.probs.data()),
              static_cast<std::streamsize>(prediction.probs.size() * sizeof(float)));
    require(static_cast<bool>(out), Errc::IoError, "short write to " + path.string());
}

BiopsyPrediction load_prediction(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::IoError, "cannot open " + path.string());
    char magic[8];
    std::uint64_t hlen = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&hlen), 8);
    require(static_cast<bool>(in) && std::memcmp(magic, kPredMagic, 8) == 0, Errc::CorruptContainer,
            "bad prediction container " + path.string());
    std::string text(hlen, '\0');
    in.read(text.data(), static_cast<std::streamsize>(hlen));
    require(static_cast<bool>(in), Errc::CorruptContainer, "truncated prediction header");
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        fail(Errc::CorruptContainer, std::string("unparseable prediction header: ") + e.what());
    }
    BiopsyPrediction p;
    p.biopsy_id = header.at("biopsy_id").get<std::string>();
    p.rows = header.at("rows").get<int>();
    p.cols = header.at("cols").get<int>();
    p.resolution_um = header.at("um_per_pixel").get<double>();
    p.provenance = header.at("provenance").get<std::vector<std::string>>();
    require(header.at("classes").get<int>() == kNumLabels, Errc::CorruptContainer,
            "prediction class count mismatch");
    require(p.rows >= 1 && p.cols >= 1, Errc::CorruptContainer, "bad prediction dims");
    p.probs.resize(static_cast<std::size_t>(p.rows) * p.cols * kNumLabels);
    in.read(reinterpret_cast<char*>(p.probs.data()),
            static_cast<std::streamsize>(p.probs.size() * sizeof(float)));
    require(static_cast<bool>(in), Errc::CorruptContainer, "truncated prediction payload");
    return p;
}

}  // namespace cribdet
