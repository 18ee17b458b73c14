// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hfg/featdec.hpp"
#include "hfg/rng.hpp"

using namespace hfg;

namespace {

FeatureImage random_features(uint64_t seed, int w, int h, int fdim) {
    Rng rng(seed);
    FeatureImage im(w, h, fdim);
    for (double& v : im.data()) v = rng.uniform(-1, 1);
    return im;
}

Image half_alpha(int w, int h) {
    Image a(w, h, 1, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if ((x + y) % 2 == 0) a(x, y) = 0.8;
    return a;
}

} // namespace

TEST_CASE("decoder param_count and flatten round-trip") {
    DecoderWeights w = init_decoder_weights(8, 3, 1);
    size_t expect = 8 * kDecoderHidden + kDecoderHidden +
                    kDecoderHidden * kDecoderHidden + kDecoderHidden +
                    kDecoderHidden * 3 + 3;
    CHECK(w.param_count() == expect);
    std::vector<double> flat = w.flatten();
    CHECK(flat.size() == expect);
    DecoderWeights w2 = init_decoder_weights(8, 3, 99);
    w2.unflatten(flat);
    CHECK(w2.flatten() == flat);
}

TEST_CASE("zero weights decode to sigmoid(0)=0.5 exactly where alpha > 0") {
    DecoderWeights w = init_decoder_weights(4, 2, 0);
    for (auto& l : w.layers) {
        l.weight.setZero();
        l.bias.setZero();
    }
    FeatureImage f = random_features(2, 8, 6, 4);
    Image alpha = half_alpha(8, 6);
    Image out = decode_features(f, alpha, w);
    REQUIRE(out.channels() == 2);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 8; ++x)
            for (int c = 0; c < 2; ++c)
                CHECK(out(x, y, c) == (alpha(x, y) > 0 ? 0.5 : 0.0));
}

TEST_CASE("all-background alpha decodes to all zeros") {
    DecoderWeights w = init_decoder_weights(4, 3, 5);
    FeatureImage f = random_features(6, 5, 5, 4);
    Image alpha(5, 5, 1, 0.0);
    Image out = decode_features(f, alpha, w);
    for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("decode matches an independent straight-line oracle") {
    DecoderWeights w = init_decoder_weights(3, 2, 7);
    FeatureImage f = random_features(8, 4, 4, 3);
    Image alpha(4, 4, 1, 1.0);
    Image out = decode_features(f, alpha, w);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            VecX v(3);
            for (int c = 0; c < 3; ++c) v[c] = f(x, y, c);
            for (int li = 0; li < 2; ++li) {
                VecX z = w.layers[li].weight * v + w.layers[li].bias;
                v = z.cwiseMax(0.0); // ReLU
            }
            VecX z = w.layers[2].weight * v + w.layers[2].bias;
            for (int c = 0; c < 2; ++c) {
                double expect = 1.0 / (1.0 + std::exp(-z[c]));
                CHECK(out(x, y, c) == doctest::Approx(expect).epsilon(1e-12));
            }
        }
}

TEST_CASE("decoder backward matches central differences") {
    DecoderWeights w = init_decoder_weights(3, 2, 11);
    int W = 5, H = 4;
    FeatureImage f = random_features(12, W, H, 3);
    Image alpha = half_alpha(W, H);
    Rng rng(13);
    Image adj(W, H, 2);
    for (double& v : adj.data()) v = rng.uniform(-1, 1);

    auto value = [&](const FeatureImage& feat, const DecoderWeights& wt) {
        Image out = decode_features(feat, alpha, wt);
        double s = 0;
        for (size_t i = 0; i < out.data().size(); ++i)
            s += out.data()[i] * adj.data()[i];
        return s;
    };
    // count of positive pre-activations, used to skip ReLU kink crossings
    auto relu_sig = [&](const FeatureImage& feat, const DecoderWeights& wt) {
        uint64_t sig = 0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (!(alpha(x, y) > 1e-6)) continue;
                VecX v(3);
                for (int c = 0; c < 3; ++c) v[c] = feat(x, y, c);
                for (int li = 0; li < 2; ++li) {
                    VecX z = wt.layers[li].weight * v + wt.layers[li].bias;
                    for (int i = 0; i < z.size(); ++i)
                        sig = sig * 1099511628211ull + (z[i] > 0 ? 1 : 2);
                    v = z.cwiseMax(0.0);
                }
            }
        return sig;
    };

    DecoderGradients wg = DecoderGradients::zeros_like(w);
    Image dfeat = decode_features_backward(f, alpha, w, adj, &wg);
    REQUIRE(dfeat.same_shape(f));

    double eps = 1e-6;
    // feature-image gradients
    Rng pick(14);
    for (int probe = 0; probe < 40; ++probe) {
        size_t idx = pick.next() % f.data().size();
        FeatureImage fp = f;
        fp.data()[idx] += eps;
        uint64_t s1 = relu_sig(fp, w);
        double hi = value(fp, w);
        fp.data()[idx] = f.data()[idx] - eps;
        if (s1 != relu_sig(fp, w)) continue;
        double lo = value(fp, w);
        double num = (hi - lo) / (2 * eps);
        double den = std::max({std::abs(num), std::abs(dfeat.data()[idx]), 1e-6});
        CHECK(std::abs(num - dfeat.data()[idx]) / den < 1e-4);
    }
    // weight gradients
    std::vector<double> flat = w.flatten();
    std::vector<double> gflat = wg.flatten();
    REQUIRE(gflat.size() == flat.size());
    for (int probe = 0; probe < 40; ++probe) {
        size_t idx = pick.next() % flat.size();
        DecoderWeights wp = w;
        std::vector<double> f2 = flat;
        f2[idx] += eps;
        wp.unflatten(f2);
        uint64_t s1 = relu_sig(f, wp);
        double hi = value(f, wp);
        f2[idx] = flat[idx] - eps;
        wp.unflatten(f2);
        if (s1 != relu_sig(f, wp)) continue;
        double lo = value(f, wp);
        double num = (hi - lo) / (2 * eps);
        double den = std::max({std::abs(num), std::abs(gflat[idx]), 1e-6});
        CHECK(std::abs(num - gflat[idx]) / den < 1e-4);
    }
}

TEST_CASE("decode rejects channel mismatches") {
    DecoderWeights w = init_decoder_weights(4, 3, 0);
    FeatureImage f = random_features(1, 4, 4, 5); // 5 channels, decoder wants 4
    Image alpha(4, 4, 1, 1.0);
    CHECK_THROWS_AS(decode_features(f, alpha, w), std::invalid_argument);
    Image bad_alpha(3, 4, 1, 1.0);
    FeatureImage ok = random_features(1, 4, 4, 4);
    CHECK_THROWS_AS(decode_features(ok, bad_alpha, w), std::invalid_argument);
}
