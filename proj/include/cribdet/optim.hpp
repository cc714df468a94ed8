// optim.hpp : weighted Dice / specificity losses with analytic gradients,
// snapshot-selection metric, SGD with momentum and lr decay, all-labels batch
// composition and the training loop.
#pragma once

#include <array>
#include <map>

#include "cribdet/network.hpp"
#include "cribdet/preprocess.hpp"
#include "cribdet/weights.hpp"

namespace cribdet {

struct LossWeights {
    std::array<double, kNumLabels> w{};

    // 0.4 on cribriform, 0.1 on every other label.
    static LossWeights paper_default() {
        LossWeights lw;
        lw.w.fill(0.1);
        lw.w[static_cast<std::size_t>(Label::G4Cribriform)] = 0.4;
        return lw;
    }

    void validate() const {
        double sum = 0.0;
        for (double v : w) {
            require(v >= 0.0, Errc::InvalidArgument, "loss weights must be non-negative");
            sum += v;
        }
        require(std::abs(sum - 1.0) <= 1e-9, Errc::InvalidArgument, "loss weights must sum to 1");
    }
};

inline constexpr double kLossEpsilon = 1e-6;

template <typename Real>
struct LossResultT {
    double value = 0.0;
    Tensor<Real> grad;  // d value / d predictions
};

using LossResult = LossResultT<float>;

// L_D = -(1/P) sum_p sum_l w_l * 2*sum_i(y*yhat) / (sum_i(y+yhat) + eps).
template <typename Real>
LossResultT<Real> dice_loss(const Tensor<Real>& refs, const Tensor<Real>& preds, const LossWeights& weights,
                            double eps = kLossEpsilon);

// L_S = -(1/P) sum_p sum_l w_l * sum_i((1-y)(1-yhat)) / (sum_i(1-yhat) + eps).
template <typename Real>
LossResultT<Real> specificity_loss(const Tensor<Real>& refs, const Tensor<Real>& preds,
                                   const LossWeights& weights, double eps = kLossEpsilon);

// V = alpha * L_D + (1 - alpha) * L_S; minimized when selecting snapshots.
double validation_metric(double dice, double specificity, double alpha);

struct OptimizerConfig {
    double learning_rate = 0.01;
    double decay = 5e-4;
    double momentum = 0.99;
};

class SgdOptimizer {
  public:
    explicit SgdOptimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {}

    double effective_lr() const { return cfg_.learning_rate / (1.0 + cfg_.decay * static_cast<double>(iteration_)); }
    long iteration() const { return iteration_; }
    const OptimizerConfig& config() const { return cfg_; }

    // v <- mu*v - eta_t*g; p <- p + v. Refuses the step on non-finite
    // gradients (throws NumericalInstability, parameters untouched).
    void step(Network& params, const Network& grads);

  private:
    OptimizerConfig cfg_;
    long iteration_ = 0;
    std::vector<TensorF> velocity_;
};

// One training example: patch pixels, 1024^2 label map, and which labels the
// pooled reference contains (>= one cell at >= 0.5).
struct TrainExample {
    Patch patch;
    LabelMap labels;
    std::array<bool, kNumLabels> membership{};
};

TrainExample make_train_example(Patch patch, LabelMap labels);

struct PatchIndex {
    std::vector<TrainExample> examples;
    std::array<std::vector<int>, kNumLabels> by_label;
};

PatchIndex build_patch_index(std::vector<TrainExample> examples);

// Exactly kNumLabels slots, one per label in code order, each filled by
// uniform sampling among qualifying patches, then shuffled. Throws
// LabelUnrepresented naming the first missing label.
std::array<int, kNumLabels> compose_batch(const PatchIndex& index, rng::Engine& eng);

struct TrainRunConfig {
    long iterations = 2000;
    int batch_size = kNumLabels;  // fixed: one slot per label
    long snapshot_every = 250;
    std::vector<double> alphas = {0.2, 0.3, 0.4, 1.0};
    std::uint64_t seed = 0;
    LossWeights weights = LossWeights::paper_default();
    double loss_epsilon = kLossEpsilon;
    OptimizerConfig optimizer;
    AugmentationConfig augmentation;

    void validate() const;
};

struct ValExample {
    Patch patch;
    TensorF reference;  // pooled mask, no augmentation
};

struct SnapshotRecord {
    long iteration = 0;
    double val_dice = 0.0;
    double val_specificity = 0.0;
    std::vector<double> v_per_alpha;      // aligned with TrainRunConfig::alphas
    std::vector<std::byte> weights_blob;  // serialized container
};

struct TrainResult {
    std::vector<SnapshotRecord> snapshots;
    std::vector<std::size_t> selected_per_alpha;  // snapshot index, argmin V, ties earliest
    double initial_val_dice = 0.0;
    double initial_val_specificity = 0.0;
    std::vector<double> train_loss_log;                       // L_D per iteration
    std::vector<std::array<int, kNumLabels>> batch_log;       // composed example ids
    long completed_iterations = 0;
    bool aborted = false;
    std::string abort_reason;
};

// Runs `iterations` SGD steps on the Dice loss with on-the-fly augmentation,
// snapshotting every `snapshot_every` iterations (plus the final iteration
// when unaligned, which for iterations == 0 is the initialization snapshot).
// Validation runs augmentation-free with BN in eval mode.
TrainResult train(Network& net, const TrainRunConfig& run, const PatchIndex& train_set,
                  const std::vector<ValExample>& val_set);

// Mean per-patch losses over a validation set (BN eval mode).
std::pair<double, double> validation_losses(const Network& net, const std::vector<ValExample>& val_set,
                                            const LossWeights& weights, double eps = kLossEpsilon);

// ---- templated loss implementations ----

namespace detail {

template <typename Real>
void check_loss_shapes(const Tensor<Real>& refs, const Tensor<Real>& preds) {
    require(refs.shape.size() == 4 && preds.shape.size() == 4, Errc::ShapeMismatch,
            "losses expect [P,S,S,L] tensors");
    require(refs.same_shape(preds), Errc::ShapeMismatch, "reference/prediction shape mismatch");
    require(refs.shape.back() == kNumLabels, Errc::ShapeMismatch, "last dimension must be the label set");
}

}  // namespace detail

template <typename Real>
LossResultT<Real> dice_loss(const Tensor<Real>& refs, const Tensor<Real>& preds, const LossWeights& weights,
                            double eps) {
    detail::check_loss_shapes(refs, preds);
    weights.validate();
    require(eps > 0.0, Errc::InvalidArgument, "loss epsilon must be > 0");
    const int P = refs.dim(0);
    const std::size_t cells = refs.size() / static_cast<std::size_t>(P) / kNumLabels;

    LossResultT<Real> out;
    out.grad = Tensor<Real>(refs.shape);
    const double inv_p = 1.0 / static_cast<double>(P);
    double total = 0.0;
    for (int p = 0; p < P; ++p) {
        const Real* y = refs.ptr() + static_cast<std::size_t>(p) * cells * kNumLabels;
        const Real* yh = preds.ptr() + static_cast<std::size_t>(p) * cells * kNumLabels;
        Real* g = out.grad.ptr() + static_cast<std::size_t>(p) * cells * kNumLabels;
        std::array<double, kNumLabels> inter{}, denom{};
        for (std::size_t i = 0; i < cells; ++i)
            for (int l = 0; l < kNumLabels; ++l) {
                const std::size_t k = i * kNumLabels + static_cast<std::size_t>(l);
                inter[static_cast<std::size_t>(l)] += static_cast<double>(y[k]) * yh[k];
                denom[static_cast<std::size_t>(l)] += static_cast<double>(y[k]) + yh[k];
            }
        std::array<double, kNumLabels> db{}, dcoef{};
        for (int l = 0; l < kNumLabels; ++l) {
            const auto s = static_cast<std::size_t>(l);
            const double b = denom[s] + eps;
            total += weights.w[s] * 2.0 * inter[s] / b;
            // d/dyhat_i of 2A/B = 2*(y_i*B - A)/B^2
            db[s] = -inv_p * weights.w[s] * 2.0 / b;          // coefficient of y_i
            dcoef[s] = inv_p * weights.w[s] * 2.0 * inter[s] / (b * b);  // constant part
        }
        for (std::size_t i = 0; i < cells; ++i)
            for (int l = 0; l < kNumLabels; ++l) {
                const auto s = static_cast<std::size_t>(l);
                const std::size_t k = i * kNumLabels + s;
                g[k] = static_cast<Real>(db[s] * y[k] + dcoef[s]);
            }
    }
    out.value = -inv_p * total;
    return out;
}

template <typename Real>
LossResultT<Real> specificity_loss(const Tensor<Real>& refs, const Tensor<Real>& preds,
                                   const LossWeights& weights, double eps) {
    detail::check_loss_shapes(refs, preds);
    weights.validate();
    require(eps > 0.0, Errc::InvalidArgument, "loss epsilon must be > 0");
    const int P = refs.dim(0);
    const std::size_t cells = refs.size() / static_cast<std::size_t>(P) / kNumLabels;

    LossResultT<Real> out;
    out.grad = Tensor<Real>(refs.shape);
    const double inv_p = 1.0 / static_cast<double>(P);
    double total = 0.0;
    for (int p = 0; p < P; ++p) {
        const Real* y = refs.ptr() + static_cast<std::size_t>(p) * cells * kNumLabels;
        const Real* yh = preds.ptr() + static_cast<std::size_t>(p) * cells * kNumLabels;
        Real* g = out.grad.ptr() + static_cast<std::size_t>(p) * cells * kNumLabels;
        std::array<double, kNumLabels> num{}, den{};
        for (std::size_t i = 0; i < cells; ++i)
            for (int l = 0; l < kNumLabels; ++l) {
                const std::size_t k = i * kNumLabels + static_cast<std::size_t>(l);
                num[static_cast<std::size_t>(l)] += (1.0 - y[k]) * (1.0 - yh[k]);
                den[static_cast<std::size_t>(l)] += 1.0 - yh[k];
            }
        std::array<double, kNumLabels> gy{}, gc{};
        for (int l = 0; l < kNumLabels; ++l) {
            const auto s = static_cast<std::size_t>(l);
            const double d = den[s] + eps;
            total += weights.w[s] * num[s] / d;
            // d/dyhat_i of C/D = (-(1-y_i)*D + C)/D^2; negated by the loss sign.
            gy[s] = inv_p * weights.w[s] / d;                  // coefficient of (1-y_i)
            gc[s] = -inv_p * weights.w[s] * num[s] / (d * d);  // constant part
        }
        for (std::size_t i = 0; i < cells; ++i)
            for (int l = 0; l < kNumLabels; ++l) {
                const auto s = static_cast<std::size_t>(l);
                const std::size_t k = i * kNumLabels + s;
                g[k] = static_cast<Real>(gy[s] * (1.0 - y[k]) + gc[s]);
            }
    }
    out.value = -inv_p * total;
    return out;
}

}  // namespace cribdet
