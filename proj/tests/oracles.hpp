// oracles.hpp : test-side reference implementations — finite-difference
// gradient probes, naive region scans and curve enumeration. Independent of
// the library code paths they check.
#pragma once

#include <functional>
#include <set>

#include "cribdet/eval.hpp"
#include "cribdet/network.hpp"
#include "cribdet/optim.hpp"

namespace oracles {

using namespace cribdet;

// Loss of a forward pass plus its analytic parameter gradients.
template <typename Real, typename LossFn>
struct FdProbeResult {
    double max_rel_err = 0.0;
    int probes = 0;
};

template <typename Real>
using LossThrough = std::function<LossResultT<Real>(const Tensor<Real>&)>;

// Central finite differences on randomly probed parameters against the
// analytic backward pass. Train-mode forward (batch statistics active) so the
// BN gradient path is exercised.
template <typename Real>
double fd_max_rel_err(NetworkT<Real>& net, const Tensor<Real>& x, const LossThrough<Real>& loss,
                      int n_probes, std::uint64_t seed, Real h) {
    TrainCache<Real> cache;
    const Tensor<Real> probs = net.forward(x, netops::Mode::Train, &cache);
    const LossResultT<Real> base = loss(probs);
    const NetworkT<Real> grads = net.backward(base.grad, cache);

    std::vector<Tensor<Real>*> params;
    std::vector<const Tensor<Real>*> grad_tensors;
    net.for_each_param([&](const std::string&, Tensor<Real>& t) { params.push_back(&t); });
    grads.for_each_param([&](const std::string&, const Tensor<Real>& t) { grad_tensors.push_back(&t); });

    auto eng = rng::make_engine(seed);
    double max_rel = 0.0;
    for (int probe = 0; probe < n_probes; ++probe) {
        const auto ti = rng::below(eng, static_cast<std::uint32_t>(params.size()));
        if (params[ti]->size() == 0) continue;
        const auto ei = rng::below(eng, static_cast<std::uint32_t>(params[ti]->size()));
        Real& w = params[ti]->data[ei];
        const Real saved = w;
        TrainCache<Real> scratch;
        w = saved + h;
        const double lp = loss(net.forward(x, netops::Mode::Train, &scratch)).value;
        w = saved - h;
        const double lm = loss(net.forward(x, netops::Mode::Train, &scratch)).value;
        w = saved;
        const double numeric = (lp - lm) / (2.0 * static_cast<double>(h));
        const double analytic = grad_tensors[ti]->data[ei];
        const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-10});
        if (std::abs(numeric) < 1e-12 && std::abs(analytic) < 1e-12) continue;
        max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
    }
    return max_rel;
}

// Per-element finite differences of a loss w.r.t. the predictions.
template <typename Real, typename Fn>
double fd_loss_max_rel_err(const Tensor<Real>& refs, Tensor<Real> preds, Fn loss_fn, int n_probes,
                           std::uint64_t seed, Real h) {
    const LossResultT<Real> base = loss_fn(refs, preds);
    auto eng = rng::make_engine(seed);
    double max_rel = 0.0;
    for (int probe = 0; probe < n_probes; ++probe) {
        const auto ei = rng::below(eng, static_cast<std::uint32_t>(preds.size()));
        const Real saved = preds.data[ei];
        preds.data[ei] = saved + h;
        const double lp = loss_fn(refs, preds).value;
        preds.data[ei] = saved - h;
        const double lm = loss_fn(refs, preds).value;
        preds.data[ei] = saved;
        const double numeric = (lp - lm) / (2.0 * static_cast<double>(h));
        const double analytic = base.grad.data[ei];
        if (std::abs(numeric) < 1e-12 && std::abs(analytic) < 1e-12) continue;
        max_rel = std::max(max_rel,
                           std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-10}));
    }
    return max_rel;
}

// Naive reference region finder: depth-first scan, deliberately written
// differently from the library's BFS extractor.
inline std::vector<std::vector<Cell>> naive_regions(const BiopsyPrediction& p, double cutoff,
                                                    int connectivity) {
    const int l = label_code(Label::G4Cribriform);
    std::vector<int> owner(static_cast<std::size_t>(p.rows) * p.cols, -1);
    std::vector<std::vector<Cell>> regions;
    std::function<void(int, int, int)> visit = [&](int r, int c, int id) {
        if (r < 0 || r >= p.rows || c < 0 || c >= p.cols) return;
        const std::size_t idx = static_cast<std::size_t>(r) * p.cols + c;
        if (owner[idx] != -1 || !(p.at(r, c, l) > cutoff)) return;
        owner[idx] = id;
        regions[static_cast<std::size_t>(id)].push_back({r, c});
        visit(r - 1, c, id);
        visit(r + 1, c, id);
        visit(r, c - 1, id);
        visit(r, c + 1, id);
        if (connectivity == 8) {
            visit(r - 1, c - 1, id);
            visit(r - 1, c + 1, id);
            visit(r + 1, c - 1, id);
            visit(r + 1, c + 1, id);
        }
    };
    for (int r = 0; r < p.rows; ++r)
        for (int c = 0; c < p.cols; ++c)
            if (owner[static_cast<std::size_t>(r) * p.cols + c] == -1 && p.at(r, c, l) > cutoff) {
                regions.emplace_back();
                visit(r, c, static_cast<int>(regions.size()) - 1);
            }
    return regions;
}

// Brute-force biopsy ROC: re-derives positivity per cutoff from scratch.
inline std::vector<CurvePoint> naive_biopsy_roc(const std::vector<BiopsyEvalCase>& cases,
                                                const RegionCriteria& criteria,
                                                const std::vector<double>& sweep) {
    int positives = 0, negatives = 0;
    for (const auto& c : cases) (c.reference_positive ? positives : negatives)++;
    std::vector<CurvePoint> points;
    for (double t : sweep) {
        int tp = 0, fp = 0;
        for (const auto& c : cases) {
            auto regions = naive_regions(c.prediction, t, criteria.connectivity);
            bool predicted = false;
            for (const auto& cells : regions) {
                const double area = static_cast<double>(cells.size()) * criteria.scale.output_px_area_mm2();
                if (criteria.min_area_mm2 <= 0.0 || area > criteria.min_area_mm2) {
                    predicted = true;
                    break;
                }
            }
            if (predicted) (c.reference_positive ? tp : fp)++;
        }
        points.push_back({t, static_cast<double>(tp) / positives, static_cast<double>(fp) / negatives});
    }
    return points;
}

// Brute-force annotation FROC with the same overlap rule.
inline std::vector<CurvePoint> naive_annotation_froc(const std::vector<FrocCase>& cases,
                                                     const RegionCriteria& criteria,
                                                     const std::vector<double>& sweep) {
    int total_annotations = 0;
    for (const auto& c : cases) total_annotations += static_cast<int>(c.annotated_regions.size());
    std::vector<CurvePoint> points;
    for (double t : sweep) {
        long detected = 0, fps = 0;
        for (const auto& c : cases) {
            auto regions = naive_regions(c.prediction, t, criteria.connectivity);
            std::vector<std::vector<Cell>> kept;
            for (auto& cells : regions) {
                const double area = static_cast<double>(cells.size()) * criteria.scale.output_px_area_mm2();
                if (criteria.min_area_mm2 <= 0.0 || area > criteria.min_area_mm2) kept.push_back(cells);
            }
            std::set<std::pair<int, int>> annotated;
            for (const auto& cells : c.annotated_regions)
                for (const Cell& cell : cells) annotated.insert({cell.row, cell.col});
            for (const auto& cells : kept) {
                bool overlap = false;
                for (const Cell& cell : cells) overlap = overlap || annotated.count({cell.row, cell.col});
                fps += overlap ? 0 : 1;
            }
            for (const auto& ann : c.annotated_regions) {
                bool hit = false;
                for (const Cell& cell : ann) {
                    for (const auto& cells : kept)
                        for (const Cell& pc : cells)
                            if (pc.row == cell.row && pc.col == cell.col) hit = true;
                    if (hit) break;
                }
                detected += hit ? 1 : 0;
            }
        }
        points.push_back({t, static_cast<double>(detected) / total_annotations,
                          static_cast<double>(fps) / static_cast<double>(cases.size())});
    }
    return points;
}

inline BiopsyPrediction random_prediction(const std::string& id, int rows, int cols, rng::Engine& eng) {
    BiopsyPrediction p;
    p.biopsy_id = id;
    p.rows = rows;
    p.cols = cols;
    p.probs.assign(static_cast<std::size_t>(rows) * cols * kNumLabels, 0.0f);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            // symmetric Dirichlet via normalized exponentials
            double draws[kNumLabels];
            double sum = 0.0;
            for (double& d : draws) {
                d = -std::log(1.0 - rng::unit(eng) + 1e-12);
                sum += d;
            }
            for (int l = 0; l < kNumLabels; ++l) p.at(r, c, l) = static_cast<float>(draws[l] / sum);
        }
    return p;
}

}  // namespace oracles
