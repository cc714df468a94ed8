// network.hpp : segmentation CNN — SE-residual conv blocks with strided-conv
// downsampling ending in a per-cell softmax. The stage list is configurable;
// presets cover the full 6-block architecture and thin desk-scale variants.
#pragma once

#include <functional>
#include <optional>
#include <string>

#include "cribdet/core.hpp"
#include "cribdet/netops.hpp"
#include "cribdet/preprocess.hpp"

namespace cribdet {

struct StageConfig {
    int channels = 0;
    bool downsample = false;  // stride-2 2x2 conv + BN + ReLU entering the stage
    bool block = false;       // SE-residual conv block at this stage
};

struct NetworkConfig {
    int input_side = kPatchSide;
    int in_channels = 3;
    int num_classes = kNumLabels;
    int se_reduction = 16;
    std::vector<StageConfig> stages;

    int num_downsamples() const {
        int n = 0;
        for (const auto& s : stages) n += s.downsample ? 1 : 0;
        return n;
    }
    int output_side() const { return input_side >> num_downsamples(); }

    void validate() const;
    std::string descriptor() const;  // canonical JSON, hashed for container checks
    std::uint64_t arch_hash() const { return fnv1a64(descriptor()); }

    static NetworkConfig from_descriptor(const std::string& json_text);

    // Fig.-1 architecture: 6 SE-residual blocks, widths 16..96, five
    // stride-2 stages mapping 1024x1024x3 to 32x32x7.
    static NetworkConfig paper();

    // CPU-tractable variant with the same 32x spatial contract: five strided
    // stages first, SE-residual blocks on the two coarsest stages.
    static NetworkConfig desk(int width_scale = 1);
};

template <typename Real>
struct DownLayer {
    Tensor<Real> w;  // (2*2*cin) x cout
    netops::BnParams<Real> bn;
};

template <typename Real>
struct ConvBlockLayer {
    Tensor<Real> w1;  // (3*3*cin) x c
    netops::BnParams<Real> bn1;
    Tensor<Real> w2;  // (3*3*c) x c
    netops::BnParams<Real> bn2;
    netops::SeParams<Real> se;
    bool has_proj = false;
    Tensor<Real> proj_w;  // cin x c (1x1)
    Tensor<Real> proj_b;
};

template <typename Real>
struct StageLayers {
    std::optional<DownLayer<Real>> down;
    std::optional<ConvBlockLayer<Real>> block;
    int in_ch = 0, out_ch = 0;
    int in_side = 0, out_side = 0;
};

template <typename Real>
struct ConvBnCache {
    Tensor<Real> conv_out;
    netops::BnCache<Real> bn;
    std::vector<Real> batch_mean, batch_var;  // for running-stat updates
    Tensor<Real> bn_out;
};

template <typename Real>
struct StageCache {
    Tensor<Real> x_in;
    ConvBnCache<Real> down;
    Tensor<Real> block_in;
    ConvBnCache<Real> c1;
    Tensor<Real> relu1_out;
    ConvBnCache<Real> c2;
    std::vector<netops::SeCache<Real>> se;  // one per batch plane
    Tensor<Real> se_out;
    Tensor<Real> sum_pre_relu;
};

template <typename Real>
struct TrainCache {
    std::vector<StageCache<Real>> stages;
    Tensor<Real> head_in;
    Tensor<Real> probs;
    bool valid = false;
};

template <typename Real>
class NetworkT {
  public:
    explicit NetworkT(NetworkConfig cfg);

    const NetworkConfig& config() const { return cfg_; }

    void init_weights(std::uint64_t seed);

    // x: [P, side, side, in_channels] -> [P, out, out, classes] softmax maps.
    // Train mode caches activations and folds batch statistics into the BN
    // running estimates; Eval mode normalizes with the running estimates.
    Tensor<Real> forward(const Tensor<Real>& x, netops::Mode mode, TrainCache<Real>* cache = nullptr);

    // Eval-mode forward; performs no writes, safe to share across threads.
    Tensor<Real> predict(const Tensor<Real>& x) const { return forward_impl(x, netops::Mode::Eval, nullptr); }

    // Parameter gradients for an upstream dL/dprobs. Requires the cache of a
    // train-mode forward on the same input.
    NetworkT backward(const Tensor<Real>& dprobs, const TrainCache<Real>& cache) const;

    // All trainable parameters set to zero (gradient holders start this way).
    void zero_params() {
        for_each_param([](const std::string&, Tensor<Real>& t) { t.fill(Real(0)); });
    }

    // Trainable parameters, fixed order. The visitor receives (name, tensor).
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        const_cast<const NetworkT*>(this)->for_each_param(
            [&](const std::string& name, const Tensor<Real>& t) { fn(name, const_cast<Tensor<Real>&>(t)); });
    }
    template <typename Fn>
    void for_each_param(Fn&& fn) const;

    // BN running statistics (serialized but not trained).
    template <typename Fn>
    void for_each_state(Fn&& fn) {
        const_cast<const NetworkT*>(this)->for_each_state(
            [&](const std::string& name, const Tensor<Real>& t) { fn(name, const_cast<Tensor<Real>&>(t)); });
    }
    template <typename Fn>
    void for_each_state(Fn&& fn) const;

    std::vector<StageLayers<Real>>& stages() { return stages_; }
    const std::vector<StageLayers<Real>>& stages() const { return stages_; }
    Tensor<Real>& head_w() { return head_w_; }
    Tensor<Real>& head_b() { return head_b_; }

  private:
    Tensor<Real> forward_impl(const Tensor<Real>& x, netops::Mode mode, TrainCache<Real>* cache) const;
    void apply_running_updates(const TrainCache<Real>& cache);

    NetworkConfig cfg_;
    std::vector<StageLayers<Real>> stages_;
    Tensor<Real> head_w_, head_b_;
};

using Network = NetworkT<float>;

// 32x32x7 softmax output for a single patch.
using ProbabilityMap = TensorF;

TensorF patch_to_tensor(const Patch& patch);
TensorF batch_tensor(const std::vector<const Patch*>& patches);

// ---- implementation ----

template <typename Real>
NetworkT<Real>::NetworkT(NetworkConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    int ch = cfg_.in_channels;
    int side = cfg_.input_side;
    for (const auto& sc : cfg_.stages) {
        StageLayers<Real> st;
        st.in_ch = ch;
        st.in_side = side;
        if (sc.downsample) {
            DownLayer<Real> d;
            d.w = Tensor<Real>({2 * 2 * ch, sc.channels});
            d.bn = netops::BnParams<Real>(sc.channels);
            st.down = std::move(d);
            ch = sc.channels;
            side /= 2;
        }
        if (sc.block) {
            ConvBlockLayer<Real> b;
            b.w1 = Tensor<Real>({3 * 3 * ch, sc.channels});
            b.bn1 = netops::BnParams<Real>(sc.channels);
            b.w2 = Tensor<Real>({3 * 3 * sc.channels, sc.channels});
            b.bn2 = netops::BnParams<Real>(sc.channels);
            b.se = netops::SeParams<Real>(sc.channels, cfg_.se_reduction);
            b.has_proj = (ch != sc.channels);
            if (b.has_proj) {
                b.proj_w = Tensor<Real>({ch, sc.channels});
                b.proj_b = Tensor<Real>({sc.channels});
            }
            st.block = std::move(b);
            ch = sc.channels;
        }
        st.out_ch = ch;
        st.out_side = side;
        stages_.push_back(std::move(st));
    }
    head_w_ = Tensor<Real>({3 * 3 * ch, cfg_.num_classes});
    head_b_ = Tensor<Real>({cfg_.num_classes});
}

template <typename Real>
template <typename Fn>
void NetworkT<Real>::for_each_param(Fn&& fn) const {
    for (std::size_t k = 0; k < stages_.size(); ++k) {
        const auto& st = stages_[k];
        const std::string p = "s" + std::to_string(k);
        if (st.down) {
            fn(p + ".down.w", st.down->w);
            fn(p + ".down.bn.g", st.down->bn.gamma);
            fn(p + ".down.bn.b", st.down->bn.beta);
        }
        if (st.block) {
            const auto& b = *st.block;
            fn(p + ".blk.c1.w", b.w1);
            fn(p + ".blk.bn1.g", b.bn1.gamma);
            fn(p + ".blk.bn1.b", b.bn1.beta);
            fn(p + ".blk.c2.w", b.w2);
            fn(p + ".blk.bn2.g", b.bn2.gamma);
            fn(p + ".blk.bn2.b", b.bn2.beta);
            fn(p + ".blk.se.w1", b.se.w1);
            fn(p + ".blk.se.b1", b.se.b1);
            fn(p + ".blk.se.w2", b.se.w2);
            fn(p + ".blk.se.b2", b.se.b2);
            if (b.has_proj) {
                fn(p + ".blk.proj.w", b.proj_w);
                fn(p + ".blk.proj.b", b.proj_b);
            }
        }
    }
    fn("head.w", head_w_);
    fn("head.b", head_b_);
}

template <typename Real>
template <typename Fn>
void NetworkT<Real>::for_each_state(Fn&& fn) const {
    for (std::size_t k = 0; k < stages_.size(); ++k) {
        const auto& st = stages_[k];
        const std::string p = "s" + std::to_string(k);
        if (st.down) {
            fn(p + ".down.bn.rm", st.down->bn.running_mean);
            fn(p + ".down.bn.rv", st.down->bn.running_var);
        }
        if (st.block) {
            fn(p + ".blk.bn1.rm", st.block->bn1.running_mean);
            fn(p + ".blk.bn1.rv", st.block->bn1.running_var);
            fn(p + ".blk.bn2.rm", st.block->bn2.running_mean);
            fn(p + ".blk.bn2.rv", st.block->bn2.running_var);
        }
    }
}

template <typename Real>
void NetworkT<Real>::init_weights(std::uint64_t seed) {
    auto eng = rng::make_engine(seed);
    auto glorot = [&](Tensor<Real>& w, double fan_in, double fan_out) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : w.data) v = static_cast<Real>(rng::range(eng, -limit, limit));
    };
    for (auto& st : stages_) {
        if (st.down) glorot(st.down->w, st.down->w.dim(0), 4.0 * st.down->w.dim(1));
        if (st.block) {
            auto& b = *st.block;
            glorot(b.w1, b.w1.dim(0), 9.0 * b.w1.dim(1));
            glorot(b.w2, b.w2.dim(0), 9.0 * b.w2.dim(1));
            glorot(b.se.w1, b.se.w1.dim(0), b.se.w1.dim(1));
            glorot(b.se.w2, b.se.w2.dim(0), b.se.w2.dim(1));
            if (b.has_proj) glorot(b.proj_w, b.proj_w.dim(0), b.proj_w.dim(1));
        }
    }
    glorot(head_w_, head_w_.dim(0), 9.0 * head_w_.dim(1));
}

namespace detail {

template <typename Real>
void conv_bn_relu(const Tensor<Real>& x, int p_count, netops::PlaneShape in, const Tensor<Real>& w,
                  const netops::BnParams<Real>& bn, int k, int stride, int pad, netops::Mode mode,
                  ConvBnCache<Real>* cache, Tensor<Real>& out, netops::Workspace<Real>& ws) {
    const netops::PlaneShape os{netops::conv_out_dim(in.h, k, stride, pad),
                                netops::conv_out_dim(in.w, k, stride, pad), w.dim(1)};
    Tensor<Real> conv({p_count, os.h, os.w, os.c});
    for (int p = 0; p < p_count; ++p)
        netops::conv2d_forward(x.ptr() + static_cast<std::size_t>(p) * in.count(), in, w, nullptr, k, stride,
                               pad, conv.ptr() + static_cast<std::size_t>(p) * os.count(), os, ws);
    out = Tensor<Real>(conv.shape);
    netops::BnCache<Real> bn_cache;
    const std::size_t rows = static_cast<std::size_t>(p_count) * os.pixels();
    // Batch statistics also needed by the caller for running updates.
    netops::bn_forward_stats(conv.ptr(), rows, os.c, bn, mode, &bn_cache,
                             cache ? &cache->batch_mean : nullptr, cache ? &cache->batch_var : nullptr,
                             out.ptr());
    if (cache) {
        cache->conv_out = std::move(conv);
        cache->bn = std::move(bn_cache);
        cache->bn_out = out;  // pre-ReLU copy for the backward mask
    }
    netops::relu_forward(out.ptr(), out.size(), out.ptr());
}

}  // namespace detail

template <typename Real>
Tensor<Real> NetworkT<Real>::forward(const Tensor<Real>& x, netops::Mode mode, TrainCache<Real>* cache) {
    Tensor<Real> probs = forward_impl(x, mode, cache);
    if (mode == netops::Mode::Train && cache) apply_running_updates(*cache);
    return probs;
}

template <typename Real>
Tensor<Real> NetworkT<Real>::forward_impl(const Tensor<Real>& x, netops::Mode mode,
                                          TrainCache<Real>* cache) const {
    require(x.shape.size() == 4, Errc::ShapeMismatch, "forward expects a [P,H,W,C] tensor");
    require(x.dim(1) == cfg_.input_side && x.dim(2) == cfg_.input_side && x.dim(3) == cfg_.in_channels,
            Errc::ShapeMismatch, "input tensor does not match the configured network geometry");
    require(mode == netops::Mode::Eval || cache != nullptr, Errc::MissingCache,
            "train-mode forward requires a cache");
    const int P = x.dim(0);
    netops::Workspace<Real> ws;
    if (cache) {
        cache->stages.assign(stages_.size(), {});
        cache->valid = false;
    }

    Tensor<Real> cur = x;
    for (std::size_t k = 0; k < stages_.size(); ++k) {
        const auto& st = stages_[k];
        StageCache<Real>* sc = cache ? &cache->stages[k] : nullptr;
        if (sc) sc->x_in = cur;
        if (st.down) {
            const netops::PlaneShape in{st.in_side, st.in_side, st.in_ch};
            Tensor<Real> next;
            detail::conv_bn_relu(cur, P, in, st.down->w, st.down->bn, 2, 2, 0, mode,
                                 sc ? &sc->down : nullptr, next, ws);
            cur = std::move(next);
        }
        if (st.block) {
            const auto& b = *st.block;
            const int side = st.out_side;
            const int cin = cur.dim(3);
            const netops::PlaneShape in{side, side, cin};
            const netops::PlaneShape mid{side, side, b.w1.dim(1)};
            if (sc) sc->block_in = cur;

            Tensor<Real> h1;
            detail::conv_bn_relu(cur, P, in, b.w1, b.bn1, 3, 1, 1, mode, sc ? &sc->c1 : nullptr, h1, ws);
            if (sc) sc->relu1_out = h1;

            // conv2 + BN (no ReLU before SE)
            Tensor<Real> conv2({P, side, side, mid.c});
            for (int p = 0; p < P; ++p)
                netops::conv2d_forward(h1.ptr() + static_cast<std::size_t>(p) * mid.count(), mid, b.w2,
                                       nullptr, 3, 1, 1,
                                       conv2.ptr() + static_cast<std::size_t>(p) * mid.count(), mid, ws);
            Tensor<Real> bn2_out(conv2.shape);
            netops::BnCache<Real> bn2_cache;
            netops::bn_forward_stats(conv2.ptr(), static_cast<std::size_t>(P) * mid.pixels(), mid.c, b.bn2,
                                     mode, &bn2_cache, sc ? &sc->c2.batch_mean : nullptr,
                                     sc ? &sc->c2.batch_var : nullptr, bn2_out.ptr());
            if (sc) {
                sc->c2.conv_out = std::move(conv2);
                sc->c2.bn = std::move(bn2_cache);
                sc->c2.bn_out = bn2_out;
            }

            Tensor<Real> se_out(bn2_out.shape);
            if (sc) sc->se.resize(static_cast<std::size_t>(P));
            for (int p = 0; p < P; ++p)
                netops::se_forward(bn2_out.ptr() + static_cast<std::size_t>(p) * mid.count(), mid, b.se,
                                   sc ? &sc->se[static_cast<std::size_t>(p)] : nullptr,
                                   se_out.ptr() + static_cast<std::size_t>(p) * mid.count());
            if (sc) sc->se_out = se_out;

            Tensor<Real> sum(se_out.shape);
            if (b.has_proj) {
                const netops::PlaneShape pin{side, side, cin};
                for (int p = 0; p < P; ++p)
                    netops::conv2d_forward(cur.ptr() + static_cast<std::size_t>(p) * pin.count(), pin,
                                           b.proj_w, &b.proj_b, 1, 1, 0,
                                           sum.ptr() + static_cast<std::size_t>(p) * mid.count(), mid, ws);
                for (std::size_t i = 0; i < sum.size(); ++i) sum.data[i] += se_out.data[i];
            } else {
                for (std::size_t i = 0; i < sum.size(); ++i) sum.data[i] = cur.data[i] + se_out.data[i];
            }
            if (sc) sc->sum_pre_relu = sum;
            netops::relu_forward(sum.ptr(), sum.size(), sum.ptr());
            cur = std::move(sum);
        }
    }

    if (cache) cache->head_in = cur;
    const int side = cfg_.output_side();
    const netops::PlaneShape hin{side, side, cur.dim(3)};
    const netops::PlaneShape hout{side, side, cfg_.num_classes};
    Tensor<Real> logits({P, side, side, cfg_.num_classes});
    for (int p = 0; p < P; ++p)
        netops::conv2d_forward(cur.ptr() + static_cast<std::size_t>(p) * hin.count(), hin, head_w_, &head_b_,
                               3, 1, 1, logits.ptr() + static_cast<std::size_t>(p) * hout.count(), hout, ws);
    for (Real v : logits.data)
        if (!std::isfinite(static_cast<double>(v)))
            fail(Errc::NumericalInstability, "non-finite activation in network head");

    Tensor<Real> probs(logits.shape);
    netops::softmax_forward(logits.ptr(), static_cast<std::size_t>(P) * hout.pixels(), cfg_.num_classes,
                            probs.ptr());
    if (cache) {
        cache->probs = probs;
        cache->valid = true;
    }
    return probs;
}

template <typename Real>
void NetworkT<Real>::apply_running_updates(const TrainCache<Real>& cache) {
    auto update = [](netops::BnParams<Real>& bn, const std::vector<Real>& mean,
                     const std::vector<Real>& var) {
        for (std::size_t i = 0; i < mean.size(); ++i) {
            bn.running_mean.data[i] = static_cast<Real>(netops::kBnMomentum * bn.running_mean.data[i] +
                                                        (1.0 - netops::kBnMomentum) * mean[i]);
            bn.running_var.data[i] = static_cast<Real>(netops::kBnMomentum * bn.running_var.data[i] +
                                                       (1.0 - netops::kBnMomentum) * var[i]);
        }
    };
    for (std::size_t k = 0; k < stages_.size(); ++k) {
        auto& st = stages_[k];
        const auto& sc = cache.stages[k];
        if (st.down) update(st.down->bn, sc.down.batch_mean, sc.down.batch_var);
        if (st.block) {
            update(st.block->bn1, sc.c1.batch_mean, sc.c1.batch_var);
            update(st.block->bn2, sc.c2.batch_mean, sc.c2.batch_var);
        }
    }
}

template <typename Real>
NetworkT<Real> NetworkT<Real>::backward(const Tensor<Real>& dprobs, const TrainCache<Real>& cache) const {
    require(cache.valid, Errc::MissingCache, "backward requires a cache from a train-mode forward");
    require(dprobs.same_shape(cache.probs), Errc::ShapeMismatch, "upstream gradient shape mismatch");
    NetworkT<Real> grads(cfg_);
    const int P = dprobs.dim(0);
    const int side = cfg_.output_side();
    netops::Workspace<Real> ws;

    Tensor<Real> dlogits(dprobs.shape);
    netops::softmax_backward(cache.probs.ptr(), static_cast<std::size_t>(P) * side * side,
                             cfg_.num_classes, dprobs.ptr(), dlogits.ptr());

    const netops::PlaneShape hin{side, side, cache.head_in.dim(3)};
    const netops::PlaneShape hout{side, side, cfg_.num_classes};
    Tensor<Real> dcur(cache.head_in.shape);
    for (int p = 0; p < P; ++p)
        netops::conv2d_backward(cache.head_in.ptr() + static_cast<std::size_t>(p) * hin.count(), hin,
                                head_w_, 3, 1, 1,
                                dlogits.ptr() + static_cast<std::size_t>(p) * hout.count(), hout,
                                dcur.ptr() + static_cast<std::size_t>(p) * hin.count(), grads.head_w_,
                                &grads.head_b_, ws);

    for (std::size_t k = stages_.size(); k-- > 0;) {
        const auto& st = stages_[k];
        const auto& sc = cache.stages[k];
        auto& gst = grads.stages_[k];
        if (st.block) {
            const auto& b = *st.block;
            auto& gb = *gst.block;
            const int bside = st.out_side;
            const int cin = sc.block_in.dim(3);
            const netops::PlaneShape in{bside, bside, cin};
            const netops::PlaneShape mid{bside, bside, b.w1.dim(1)};
            const std::size_t rows = static_cast<std::size_t>(P) * mid.pixels();

            Tensor<Real> dsum(sc.sum_pre_relu.shape);
            netops::relu_backward(sc.sum_pre_relu.ptr(), dsum.size(), dcur.ptr(), dsum.ptr());

            // SE branch
            Tensor<Real> dbn2(sc.c2.bn_out.shape);
            for (int p = 0; p < P; ++p) {
                netops::SeGrads<Real> g{&gb.se.w1, &gb.se.b1, &gb.se.w2, &gb.se.b2};
                netops::se_backward(sc.c2.bn_out.ptr() + static_cast<std::size_t>(p) * mid.count(), mid,
                                    b.se, sc.se[static_cast<std::size_t>(p)],
                                    dsum.ptr() + static_cast<std::size_t>(p) * mid.count(),
                                    dbn2.ptr() + static_cast<std::size_t>(p) * mid.count(), g);
            }
            Tensor<Real> dconv2(sc.c2.conv_out.shape);
            netops::bn_backward(sc.c2.conv_out.ptr(), rows, mid.c, b.bn2, sc.c2.bn, dbn2.ptr(),
                                dconv2.ptr(), gb.bn2.gamma, gb.bn2.beta);
            Tensor<Real> drelu1(sc.relu1_out.shape);
            drelu1.fill(Real(0));
            for (int p = 0; p < P; ++p)
                netops::conv2d_backward(sc.relu1_out.ptr() + static_cast<std::size_t>(p) * mid.count(), mid,
                                        b.w2, 3, 1, 1,
                                        dconv2.ptr() + static_cast<std::size_t>(p) * mid.count(), mid,
                                        drelu1.ptr() + static_cast<std::size_t>(p) * mid.count(), gb.w2,
                                        nullptr, ws);
            Tensor<Real> dbn1(sc.c1.bn_out.shape);
            netops::relu_backward(sc.c1.bn_out.ptr(), dbn1.size(), drelu1.ptr(), dbn1.ptr());
            Tensor<Real> dconv1(sc.c1.conv_out.shape);
            netops::bn_backward(sc.c1.conv_out.ptr(), rows, mid.c, b.bn1, sc.c1.bn, dbn1.ptr(),
                                dconv1.ptr(), gb.bn1.gamma, gb.bn1.beta);
            Tensor<Real> dblock_in(sc.block_in.shape);
            dblock_in.fill(Real(0));
            for (int p = 0; p < P; ++p)
                netops::conv2d_backward(sc.block_in.ptr() + static_cast<std::size_t>(p) * in.count(), in,
                                        b.w1, 3, 1, 1,
                                        dconv1.ptr() + static_cast<std::size_t>(p) * mid.count(), mid,
                                        dblock_in.ptr() + static_cast<std::size_t>(p) * in.count(), gb.w1,
                                        nullptr, ws);
            // shortcut path
            if (b.has_proj) {
                const netops::PlaneShape pin{bside, bside, cin};
                Tensor<Real> dproj_in(sc.block_in.shape);
                dproj_in.fill(Real(0));
                for (int p = 0; p < P; ++p)
                    netops::conv2d_backward(sc.block_in.ptr() + static_cast<std::size_t>(p) * pin.count(),
                                            pin, b.proj_w, 1, 1, 0,
                                            dsum.ptr() + static_cast<std::size_t>(p) * mid.count(), mid,
                                            dproj_in.ptr() + static_cast<std::size_t>(p) * pin.count(),
                                            gb.proj_w, &gb.proj_b, ws);
                for (std::size_t i = 0; i < dblock_in.size(); ++i) dblock_in.data[i] += dproj_in.data[i];
            } else {
                for (std::size_t i = 0; i < dblock_in.size(); ++i) dblock_in.data[i] += dsum.data[i];
            }
            dcur = std::move(dblock_in);
        }
        if (st.down) {
            const netops::PlaneShape in{st.in_side, st.in_side, st.in_ch};
            const netops::PlaneShape out{st.in_side / 2, st.in_side / 2, st.down->w.dim(1)};
            const std::size_t rows = static_cast<std::size_t>(P) * out.pixels();
            Tensor<Real> dbn(sc.down.bn_out.shape);
            netops::relu_backward(sc.down.bn_out.ptr(), dbn.size(), dcur.ptr(), dbn.ptr());
            Tensor<Real> dconv(sc.down.conv_out.shape);
            netops::bn_backward(sc.down.conv_out.ptr(), rows, out.c, st.down->bn, sc.down.bn, dbn.ptr(),
                                dconv.ptr(), gst.down->bn.gamma, gst.down->bn.beta);
            Tensor<Real> dx(sc.x_in.shape);
            dx.fill(Real(0));
            for (int p = 0; p < P; ++p)
                netops::conv2d_backward(sc.x_in.ptr() + static_cast<std::size_t>(p) * in.count(), in,
                                        st.down->w, 2, 2, 0,
                                        dconv.ptr() + static_cast<std::size_t>(p) * out.count(), out,
                                        dx.ptr() + static_cast<std::size_t>(p) * in.count(), gst.down->w,
                                        nullptr, ws);
            dcur = std::move(dx);
        }
    }
    return grads;
}

}  // namespace cribdet
