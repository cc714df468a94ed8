#include "cribdet/optim.hpp"

#include <algorithm>
#include <cmath>

namespace cribdet {

double validation_metric(double dice, double specificity, double alpha) {
    require(alpha >= 0.0 && alpha <= 1.0, Errc::InvalidArgument, "alpha must lie in [0,1]");
    return alpha * dice + (1.0 - alpha) * specificity;
}

void SgdOptimizer::step(Network& params, const Network& grads) {
    std::vector<TensorF*> p, g;
    params.for_each_param([&](const std::string&, TensorF& t) { p.push_back(&t); });
    const_cast<Network&>(grads).for_each_param([&](const std::string&, TensorF& t) { g.push_back(&t); });
    require(p.size() == g.size(), Errc::ShapeMismatch, "parameter/gradient count mismatch");
    for (std::size_t i = 0; i < p.size(); ++i)
        require(p[i]->shape == g[i]->shape, Errc::ShapeMismatch, "parameter/gradient shape mismatch");
    for (const TensorF* t : g)
        for (float v : t->data)
            if (!std::isfinite(v))
                fail(Errc::NumericalInstability, "non-finite gradient, step refused");

    if (velocity_.empty()) {
        velocity_.reserve(p.size());
        for (const TensorF* t : p) velocity_.emplace_back(t->shape);
    }
    const float eta = static_cast<float>(effective_lr());
    const float mu = static_cast<float>(cfg_.momentum);
    for (std::size_t i = 0; i < p.size(); ++i) {
        float* pp = p[i]->ptr();
        const float* gg = g[i]->ptr();
        float* vv = velocity_[i].ptr();
        const std::size_t n = p[i]->size();
        for (std::size_t k = 0; k < n; ++k) {
            vv[k] = mu * vv[k] - eta * gg[k];
            pp[k] += vv[k];
        }
    }
    ++iteration_;
}

TrainExample make_train_example(Patch patch, LabelMap labels) {
    TrainExample ex;
    ex.patch = std::move(patch);
    ex.labels = std::move(labels);
    const TensorF ref = downsample_mask(ex.labels);
    for (std::size_t i = 0; i < ref.size(); ++i)
        if (ref.data[i] >= 0.5f) ex.membership[i % kNumLabels] = true;
    return ex;
}

PatchIndex build_patch_index(std::vector<TrainExample> examples) {
    PatchIndex index;
    index.examples = std::move(examples);
    for (std::size_t i = 0; i < index.examples.size(); ++i)
        for (int l = 0; l < kNumLabels; ++l)
            if (index.examples[i].membership[static_cast<std::size_t>(l)])
                index.by_label[static_cast<std::size_t>(l)].push_back(static_cast<int>(i));
    return index;
}

std::array<int, kNumLabels> compose_batch(const PatchIndex& index, rng::Engine& eng) {
    std::array<int, kNumLabels> batch{};
    for (int l = 0; l < kNumLabels; ++l) {
        const auto& pool = index.by_label[static_cast<std::size_t>(l)];
        if (pool.empty())
            fail(Errc::LabelUnrepresented,
                 std::string("no patch contains label ") + label_name(static_cast<Label>(l)));
        batch[static_cast<std::size_t>(l)] = pool[rng::below(eng, static_cast<std::uint32_t>(pool.size()))];
    }
    // Fisher-Yates so slot order does not leak the label order.
    for (int i = kNumLabels - 1; i > 0; --i) {
        const auto j = static_cast<int>(rng::below(eng, static_cast<std::uint32_t>(i + 1)));
        std::swap(batch[static_cast<std::size_t>(i)], batch[static_cast<std::size_t>(j)]);
    }
    return batch;
}

void TrainRunConfig::validate() const {
    require(iterations >= 0, Errc::InvalidArgument, "iterations must be >= 0");
    require(batch_size == kNumLabels, Errc::InvalidArgument, "batch size must equal the label set size");
    require(snapshot_every >= 1, Errc::InvalidArgument, "snapshot_every must be >= 1");
    require(!alphas.empty(), Errc::InvalidArgument, "at least one alpha required");
    for (double a : alphas)
        require(a >= 0.0 && a <= 1.0, Errc::InvalidArgument, "alpha must lie in [0,1]");
    weights.validate();
    require(loss_epsilon > 0.0, Errc::InvalidArgument, "loss epsilon must be > 0");
}

std::pair<double, double> validation_losses(const Network& net, const std::vector<ValExample>& val_set,
                                            const LossWeights& weights, double eps) {
    require(!val_set.empty(), Errc::InvalidArgument, "validation set is empty");
    // Per-patch loss terms average exactly to the P-patch batch formula.
    double dice_sum = 0.0, spec_sum = 0.0;
    for (const auto& ex : val_set) {
        const TensorF probs = net.predict(patch_to_tensor(ex.patch));
        TensorF ref({1, probs.dim(1), probs.dim(2), kNumLabels});
        require(ex.reference.size() == ref.size(), Errc::ShapeMismatch,
                "validation reference does not match network output");
        std::copy(ex.reference.data.begin(), ex.reference.data.end(), ref.data.begin());
        dice_sum += dice_loss(ref, probs, weights, eps).value;
        spec_sum += specificity_loss(ref, probs, weights, eps).value;
    }
    const double n = static_cast<double>(val_set.size());
    return {dice_sum / n, spec_sum / n};
}

namespace {

std::vector<long> snapshot_points(long iterations, long every) {
    std::vector<long> points;
    for (long it = every; it <= iterations; it += every) points.push_back(it);
    if (iterations == 0 || iterations % every != 0) points.push_back(iterations);
    return points;
}

}  // namespace

TrainResult train(Network& net, const TrainRunConfig& run, const PatchIndex& train_set,
                  const std::vector<ValExample>& val_set) {
    run.validate();
    for (int l = 0; l < kNumLabels; ++l)
        if (train_set.by_label[static_cast<std::size_t>(l)].empty())
            fail(Errc::LabelUnrepresented,
                 std::string("training corpus lacks label ") + label_name(static_cast<Label>(l)));

    TrainResult result;
    auto batch_eng = rng::make_engine(rng::derive_seed(run.seed, 0xBA7C5EEDULL));
    SgdOptimizer opt(run.optimizer);

    const auto points = snapshot_points(run.iterations, run.snapshot_every);
    std::size_t next_point = 0;

    auto validate_snapshot = [&](long iter) {
        SnapshotRecord rec;
        rec.iteration = iter;
        std::tie(rec.val_dice, rec.val_specificity) =
            validation_losses(net, val_set, run.weights, run.loss_epsilon);
        for (double a : run.alphas)
            rec.v_per_alpha.push_back(validation_metric(rec.val_dice, rec.val_specificity, a));
        rec.weights_blob = serialize_weights(net);
        result.snapshots.push_back(std::move(rec));
    };

    std::tie(result.initial_val_dice, result.initial_val_specificity) =
        validation_losses(net, val_set, run.weights, run.loss_epsilon);
    if (next_point < points.size() && points[next_point] == 0) {
        validate_snapshot(0);
        ++next_point;
    }

    for (long iter = 0; iter < run.iterations; ++iter) {
        const auto batch = compose_batch(train_set, batch_eng);
        result.batch_log.push_back(batch);

        TensorF x({kNumLabels, kPatchSide, kPatchSide, 3});
        TensorF y({kNumLabels, kMaskSide, kMaskSide, kNumLabels});
        const std::size_t x_plane = static_cast<std::size_t>(kPatchSide) * kPatchSide * 3;
        const std::size_t y_plane = static_cast<std::size_t>(kMaskSide) * kMaskSide * kNumLabels;
        for (int slot = 0; slot < kNumLabels; ++slot) {
            const auto& ex = train_set.examples[static_cast<std::size_t>(batch[static_cast<std::size_t>(slot)])];
            AugmentationConfig aug = run.augmentation;
            aug.rng_seed = rng::derive_seed(run.seed, 0xA06000000ULL + static_cast<std::uint64_t>(iter) * kNumLabels +
                                                          static_cast<std::uint64_t>(slot));
            AugmentResult augmented = augment(ex.patch, ex.labels, aug);
            std::copy(augmented.patch.pixels.begin(), augmented.patch.pixels.end(),
                      x.data.begin() + static_cast<std::size_t>(slot) * x_plane);
            const TensorF ref = downsample_mask(augmented.labels);
            std::copy(ref.data.begin(), ref.data.end(),
                      y.data.begin() + static_cast<std::size_t>(slot) * y_plane);
        }

        try {
            TrainCache<float> cache;
            const TensorF probs = net.forward(x, netops::Mode::Train, &cache);
            LossResult loss = dice_loss(y, probs, run.weights, run.loss_epsilon);
            result.train_loss_log.push_back(loss.value);
            const Network grads = net.backward(loss.grad, cache);
            opt.step(net, grads);
        } catch (const Error& e) {
            if (e.code() != Errc::NumericalInstability) throw;
            result.aborted = true;
            result.abort_reason = e.what();
            break;
        }
        result.completed_iterations = iter + 1;

        if (next_point < points.size() && points[next_point] == iter + 1) {
            validate_snapshot(iter + 1);
            ++next_point;
        }
    }

    if (result.snapshots.empty()) validate_snapshot(result.completed_iterations);

    for (std::size_t a = 0; a < run.alphas.size(); ++a) {
        std::size_t best = 0;
        for (std::size_t s = 1; s < result.snapshots.size(); ++s)
            if (result.snapshots[s].v_per_alpha[a] < result.snapshots[best].v_per_alpha[a]) best = s;
        result.selected_per_alpha.push_back(best);
    }
    return result;
}

}  // namespace cribdet
