#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cribdet/weights.hpp"
#include "oracles.hpp"

using namespace cribdet;

namespace {

// 5 strided stages, SE-residual blocks on the two coarsest: 64x64x3 -> 2x2x7.
NetworkConfig tiny_two_block() {
    NetworkConfig cfg;
    cfg.input_side = 64;
    cfg.se_reduction = 2;
    cfg.stages = {{4, true, false}, {6, true, false}, {8, true, false}, {10, true, true}, {12, true, true}};
    return cfg;
}

template <typename Real>
Tensor<Real> random_input(const NetworkConfig& cfg, int batch, std::uint64_t seed) {
    Tensor<Real> x({batch, cfg.input_side, cfg.input_side, cfg.in_channels});
    auto eng = rng::make_engine(seed);
    for (auto& v : x.data) v = static_cast<Real>(rng::unit(eng));
    return x;
}

TensorF random_reference(int batch, int side, std::uint64_t seed) {
    TensorF y({batch, side, side, kNumLabels});
    auto eng = rng::make_engine(seed);
    for (int i = 0; i < batch * side * side; ++i) {
        float sum = 0;
        for (int l = 0; l < kNumLabels; ++l) {
            const float v = static_cast<float>(rng::unit(eng));
            y.data[static_cast<std::size_t>(i) * kNumLabels + l] = v;
            sum += v;
        }
        for (int l = 0; l < kNumLabels; ++l) y.data[static_cast<std::size_t>(i) * kNumLabels + l] /= sum;
    }
    return y;
}

}  // namespace

TEST_CASE("spatial contract: the paper graph maps 1024 to 32") {
    const NetworkConfig cfg = NetworkConfig::paper();
    CHECK(cfg.num_downsamples() == 5);
    CHECK(cfg.output_side() == 32);
    Network net(cfg);
    net.init_weights(1);
    const TensorF x = random_input<float>(cfg, 1, 2);
    const TensorF probs = net.predict(x);
    CHECK(probs.shape == std::vector<int>{1, 32, 32, 7});
}

TEST_CASE("spatial contract scales as 2^k (k = 2 desk case)") {
    NetworkConfig cfg;
    cfg.input_side = 64;
    cfg.se_reduction = 2;
    cfg.stages = {{4, true, false}, {6, true, true}};
    Network net(cfg);
    net.init_weights(3);
    const TensorF probs = net.predict(random_input<float>(cfg, 2, 4));
    CHECK(probs.shape == std::vector<int>{2, 16, 16, 7});
}

TEST_CASE("tiny two-block configuration reaches 2x2x7 from 64x64") {
    const NetworkConfig cfg = tiny_two_block();
    Network net(cfg);
    net.init_weights(5);
    const TensorF probs = net.predict(random_input<float>(cfg, 1, 6));
    CHECK(probs.shape == std::vector<int>{1, 2, 2, 7});
}

TEST_CASE("softmax cells sum to one for random weights and inputs") {
    NetworkConfig cfg;
    cfg.input_side = 16;
    cfg.se_reduction = 2;
    cfg.stages = {{4, true, false}, {6, true, true}};
    for (int trial = 0; trial < 100; ++trial) {
        Network net(cfg);
        net.init_weights(100 + static_cast<std::uint64_t>(trial));
        const TensorF probs = net.predict(random_input<float>(cfg, 1, 500 + static_cast<std::uint64_t>(trial)));
        for (int cell = 0; cell < probs.dim(1) * probs.dim(2); ++cell) {
            float sum = 0;
            for (int l = 0; l < kNumLabels; ++l) sum += probs.data[static_cast<std::size_t>(cell) * kNumLabels + l];
            CHECK(std::abs(sum - 1.0f) <= 1e-6f);
        }
    }
}

TEST_CASE("eval-mode forward is deterministic") {
    const NetworkConfig cfg = tiny_two_block();
    Network net(cfg);
    net.init_weights(7);
    const TensorF x = random_input<float>(cfg, 1, 8);
    const TensorF a = net.predict(x);
    const TensorF b = net.predict(x);
    CHECK(a.data == b.data);
}

TEST_CASE("forward rejects shape mismatches and non-finite activations") {
    const NetworkConfig cfg = tiny_two_block();
    Network net(cfg);
    net.init_weights(9);
    TensorF wrong({1, 32, 32, 3});
    CHECK_THROWS_AS(net.predict(wrong), Error);

    net.head_w().data[0] = std::numeric_limits<float>::quiet_NaN();
    try {
        net.predict(random_input<float>(cfg, 1, 10));
        FAIL("expected NumericalInstability");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::NumericalInstability);
    }
}

TEST_CASE("train-mode forward without a cache is refused") {
    const NetworkConfig cfg = tiny_two_block();
    Network net(cfg);
    net.init_weights(11);
    CHECK_THROWS_AS(net.forward(random_input<float>(cfg, 1, 12), netops::Mode::Train, nullptr), Error);
}

TEST_CASE("backward needs a valid cache and zero upstream gives zero gradients") {
    const NetworkConfig cfg = tiny_two_block();
    Network net(cfg);
    net.init_weights(13);
    const TensorF x = random_input<float>(cfg, 2, 14);
    TrainCache<float> cache;
    const TensorF probs = net.forward(x, netops::Mode::Train, &cache);

    TrainCache<float> empty;
    CHECK_THROWS_AS(net.backward(probs, empty), Error);

    TensorF zero(probs.shape);
    const Network grads = net.backward(zero, cache);
    grads.for_each_param([&](const std::string&, const TensorF& t) {
        for (float v : t.data) CHECK(v == 0.0f);
    });
}

TEST_CASE("BN consistency: frozen running stats make train and eval agree") {
    const NetworkConfig cfg = tiny_two_block();
    Network net(cfg);
    net.init_weights(15);
    const TensorF x = random_input<float>(cfg, 3, 16);
    TrainCache<float> cache;
    const TensorF train_out = net.forward(x, netops::Mode::Train, &cache);
    for (std::size_t k = 0; k < net.stages().size(); ++k) {
        auto& st = net.stages()[k];
        const auto& sc = cache.stages[k];
        if (st.down) {
            st.down->bn.running_mean.data.assign(sc.down.batch_mean.begin(), sc.down.batch_mean.end());
            st.down->bn.running_var.data.assign(sc.down.batch_var.begin(), sc.down.batch_var.end());
        }
        if (st.block) {
            st.block->bn1.running_mean.data.assign(sc.c1.batch_mean.begin(), sc.c1.batch_mean.end());
            st.block->bn1.running_var.data.assign(sc.c1.batch_var.begin(), sc.c1.batch_var.end());
            st.block->bn2.running_mean.data.assign(sc.c2.batch_mean.begin(), sc.c2.batch_mean.end());
            st.block->bn2.running_var.data.assign(sc.c2.batch_var.begin(), sc.c2.batch_var.end());
        }
    }
    const TensorF eval_out = net.predict(x);
    for (std::size_t i = 0; i < train_out.size(); ++i)
        CHECK(std::abs(train_out.data[i] - eval_out.data[i]) <= 1e-5f);
}

TEST_CASE("gradients match central finite differences for both losses") {
    NetworkT<double> net(tiny_two_block());
    net.init_weights(17);
    const TensorD x = random_input<double>(net.config(), 2, 18);
    const TensorF yf = random_reference(2, net.config().output_side(), 19);
    TensorD y = yf.cast<double>();
    const LossWeights lw = LossWeights::paper_default();

    oracles::LossThrough<double> through_dice = [&](const TensorD& probs) {
        return dice_loss(y, probs, lw, kLossEpsilon);
    };
    oracles::LossThrough<double> through_spec = [&](const TensorD& probs) {
        return specificity_loss(y, probs, lw, kLossEpsilon);
    };
    CHECK(oracles::fd_max_rel_err<double>(net, x, through_dice, 120, 20, 1e-5) < 1e-3);
    CHECK(oracles::fd_max_rel_err<double>(net, x, through_spec, 120, 21, 1e-5) < 1e-3);
}

TEST_CASE("se block: identity hook, constant squeeze, finite differences") {
    const int c = 8, r = 4, h = 5, w = 3;
    const netops::PlaneShape shape{h, w, c};
    netops::SeParams<float> se(c, r);
    auto eng = rng::make_engine(23);
    for (auto t : {&se.w1, &se.b1, &se.w2, &se.b2})
        for (auto& v : t->data) v = static_cast<float>(rng::range(eng, -0.5, 0.5));

    TensorF x({h, w, c});
    for (auto& v : x.data) v = static_cast<float>(rng::unit(eng));

    SUBCASE("forced identity excitation returns the input") {
        TensorF y({h, w, c});
        netops::se_forward(x.ptr(), shape, se, static_cast<netops::SeCache<float>*>(nullptr), y.ptr(), true);
        CHECK(y.data == x.data);
    }
    SUBCASE("constant input squeezes to that constant exactly") {
        TensorF xc({h, w, c});
        for (int i = 0; i < h * w; ++i)
            for (int ch = 0; ch < c; ++ch) xc.data[static_cast<std::size_t>(i) * c + ch] = 0.25f * (ch + 1);
        netops::SeCache<float> cache;
        TensorF y({h, w, c});
        netops::se_forward(xc.ptr(), shape, se, &cache, y.ptr());
        for (int ch = 0; ch < c; ++ch) CHECK(cache.z[static_cast<std::size_t>(ch)] == 0.25f * (ch + 1));
    }
    SUBCASE("analytic gradient vs central differences (float32)") {
        // scalar loss: fixed random linear functional of the output
        TensorF coef({h, w, c});
        for (auto& v : coef.data) v = static_cast<float>(rng::range(eng, -1.0, 1.0));
        auto loss_of = [&](const netops::SeParams<float>& p, const TensorF& input) {
            TensorF y({h, w, c});
            netops::se_forward(input.ptr(), shape, p, static_cast<netops::SeCache<float>*>(nullptr), y.ptr());
            double l = 0;
            for (std::size_t i = 0; i < y.size(); ++i) l += static_cast<double>(coef.data[i]) * y.data[i];
            return l;
        };
        netops::SeCache<float> cache;
        TensorF y({h, w, c});
        netops::se_forward(x.ptr(), shape, se, &cache, y.ptr());
        netops::SeParams<float> grads(c, r);
        TensorF dx({h, w, c});
        netops::SeGrads<float> g{&grads.w1, &grads.b1, &grads.w2, &grads.b2};
        netops::se_backward(x.ptr(), shape, se, cache, coef.ptr(), dx.ptr(), g);

        auto probe = [&](TensorF& target, const TensorF& analytic, std::uint32_t count) {
            auto peng = rng::make_engine(29);
            for (std::uint32_t i = 0; i < count; ++i) {
                const auto ei = rng::below(peng, static_cast<std::uint32_t>(target.size()));
                const float saved = target.data[ei];
                const float step = 1e-2f;
                target.data[ei] = saved + step;
                const double lp = loss_of(se, x);
                target.data[ei] = saved - step;
                const double lm = loss_of(se, x);
                target.data[ei] = saved;
                const double numeric = (lp - lm) / (2.0 * step);
                const double a = analytic.data[ei];
                if (std::abs(numeric) < 1e-7 && std::abs(a) < 1e-7) continue;
                CHECK(std::abs(numeric - a) / std::max({std::abs(numeric), std::abs(a), 1e-8}) < 1e-3);
            }
        };
        probe(se.w1, grads.w1, 20);
        probe(se.w2, grads.w2, 20);
        probe(se.b1, grads.b1, 8);
        probe(se.b2, grads.b2, 8);
        probe(x, dx, 20);
    }
    SUBCASE("channels not divisible by the reduction are a config error") {
        NetworkConfig bad = tiny_two_block();
        bad.se_reduction = 16;  // block channels 10 and 12 are not divisible
        CHECK_THROWS_AS(Network{bad}, Error);
    }
}

TEST_CASE("residual gradient is the sum of both path contributions") {
    // y = relu(conv(x) + x): with the conv path zeroed the input gradient is
    // the masked upstream alone; with the shortcut ablated it is the conv
    // backward alone; the real gradient is their sum.
    const int side = 6, c = 3;
    const netops::PlaneShape shape{side, side, c};
    auto eng = rng::make_engine(31);
    TensorF x({side, side, c}), w({9 * c, c}), dy({side, side, c});
    for (auto& v : x.data) v = static_cast<float>(rng::range(eng, -1.0, 1.0));
    for (auto& v : w.data) v = static_cast<float>(rng::range(eng, -0.4, 0.4));
    for (auto& v : dy.data) v = static_cast<float>(rng::range(eng, -1.0, 1.0));

    netops::Workspace<float> ws;
    TensorF conv_out({side, side, c});
    netops::conv2d_forward(x.ptr(), shape, w, static_cast<const TensorF*>(nullptr), 3, 1, 1, conv_out.ptr(),
                           shape, ws);
    TensorF sum(conv_out.shape);
    for (std::size_t i = 0; i < sum.size(); ++i) sum.data[i] = conv_out.data[i] + x.data[i];

    TensorF dsum(sum.shape);
    netops::relu_backward(sum.ptr(), sum.size(), dy.ptr(), dsum.ptr());

    TensorF dx_conv({side, side, c});
    TensorF dw({9 * c, c});
    netops::conv2d_backward(x.ptr(), shape, w, 3, 1, 1, dsum.ptr(), shape, dx_conv.ptr(), dw,
                            static_cast<TensorF*>(nullptr), ws);
    for (std::size_t i = 0; i < dx_conv.size(); ++i) {
        const float both = dx_conv.data[i] + dsum.data[i];
        // shortcut-only ablation: conv path contributes nothing
        const float shortcut_only = dsum.data[i];
        const float conv_only = dx_conv.data[i];
        CHECK(both == conv_only + shortcut_only);
    }
}

TEST_CASE("weight container round-trips bit-exactly and validates") {
    const NetworkConfig cfg = tiny_two_block();
    Network net(cfg);
    net.init_weights(33);
    const TensorF x = random_input<float>(cfg, 1, 34);
    const TensorF before = net.predict(x);

    const auto dir = std::filesystem::temp_directory_path() / "cribdet_wtest";
    std::filesystem::create_directories(dir);
    const auto path = dir / "net.weights";
    save_weights(net, path);

    SUBCASE("round trip preserves forward outputs bit-exactly") {
        Network loaded = load_weights(path, cfg);
        const TensorF after = loaded.predict(x);
        CHECK(before.data == after.data);
    }
    SUBCASE("truncated container is rejected") {
        const auto bytes = serialize_weights(net);
        const auto cut = dir / "truncated.weights";
        std::ofstream out(cut, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        try {
            load_weights(cut);
            FAIL("expected CorruptContainer");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::CorruptContainer);
        }
    }
    SUBCASE("architecture mismatch is refused on load") {
        NetworkConfig other = cfg;
        other.stages.pop_back();  // fewer stages, different hash
        Network small(other);
        small.init_weights(35);
        const auto other_path = dir / "other.weights";
        save_weights(small, other_path);
        try {
            load_weights(other_path, cfg);
            FAIL("expected ArchitectureMismatch");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::ArchitectureMismatch);
        }
    }
}

TEST_CASE("descriptor round-trips through JSON") {
    const NetworkConfig cfg = NetworkConfig::desk();
    const NetworkConfig back = NetworkConfig::from_descriptor(cfg.descriptor());
    CHECK(back.arch_hash() == cfg.arch_hash());
    CHECK(back.output_side() == cfg.output_side());
}
