// SPDX-License-Identifier: Apache-2.0
#include "hfg/featdec.hpp"

#include "hfg/rng.hpp"
#include "hfg/splat.hpp"

#include <cmath>

namespace hfg {

namespace {

Linear init_linear(int out, int in, Rng& rng) {
    Linear l;
    l.weight.resize(out, in);
    l.bias.resize(out);
    double bound = std::sqrt(1.0 / double(in));
    for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) l.weight(r, c) = rng.uniform(-bound, bound);
    for (int r = 0; r < out; ++r) l.bias(r) = rng.uniform(-bound, bound);
    return l;
}

} // namespace

size_t DecoderWeights::param_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.params();
    return n;
}

void DecoderWeights::check_shapes() const {
    if (layers.size() != 3 ||
        layers[0].in() != feature_dim || layers[0].out() != kDecoderHidden ||
        layers[1].in() != kDecoderHidden || layers[1].out() != kDecoderHidden ||
        layers[2].in() != kDecoderHidden || layers[2].out() != embed_dim)
        throw std::invalid_argument("decoder weights: broken layer chain");
}

std::vector<double> DecoderWeights::flatten() const {
    std::vector<double> flat;
    flat.reserve(param_count());
    for (const auto& l : layers) {
        for (int r = 0; r < l.out(); ++r)
            for (int c = 0; c < l.in(); ++c) flat.push_back(l.weight(r, c));
        for (int r = 0; r < l.out(); ++r) flat.push_back(l.bias(r));
    }
    return flat;
}

void DecoderWeights::unflatten(const std::vector<double>& flat) {
    size_t pos = 0;
    for (auto& l : layers) {
        for (int r = 0; r < l.out(); ++r)
            for (int c = 0; c < l.in(); ++c) l.weight(r, c) = flat[pos++];
        for (int r = 0; r < l.out(); ++r) l.bias(r) = flat[pos++];
    }
    if (pos != flat.size())
        throw std::invalid_argument("decoder weights: flat size mismatch");
}

DecoderWeights init_decoder_weights(int feature_dim, int embed_dim, uint64_t seed) {
    DecoderWeights w;
    w.feature_dim = feature_dim;
    w.embed_dim = embed_dim;
    Rng rng(seed ^ 0x646563ull);
    w.layers.push_back(init_linear(kDecoderHidden, feature_dim, rng));
    w.layers.push_back(init_linear(kDecoderHidden, kDecoderHidden, rng));
    w.layers.push_back(init_linear(embed_dim, kDecoderHidden, rng));
    return w;
}

Image decode_features(const FeatureImage& features, const Image& alpha,
                      const DecoderWeights& weights) {
    weights.check_shapes();
    if (features.channels() != weights.feature_dim)
        throw std::invalid_argument("decode_features: feature channel mismatch");
    if (alpha.width() != features.width() || alpha.height() != features.height() ||
        alpha.channels() != 1)
        throw std::invalid_argument("decode_features: alpha shape mismatch");

    Image out(features.width(), features.height(), weights.embed_dim, 0.0);
    VecX f(weights.feature_dim), h1, h2, z;
    for (int y = 0; y < features.height(); ++y)
        for (int x = 0; x < features.width(); ++x) {
            if (!(alpha(x, y) > kAlphaEps)) continue;
            const double* fp = features.at(x, y);
            for (int ch = 0; ch < weights.feature_dim; ++ch) f[ch] = fp[ch];
            h1 = (weights.layers[0].weight * f + weights.layers[0].bias).cwiseMax(0.0);
            h2 = (weights.layers[1].weight * h1 + weights.layers[1].bias).cwiseMax(0.0);
            z = weights.layers[2].weight * h2 + weights.layers[2].bias;
            double* op = out.at(x, y);
            for (int ch = 0; ch < weights.embed_dim; ++ch) op[ch] = sigmoid(z[ch]);
        }
    return out;
}

DecoderGradients DecoderGradients::zeros_like(const DecoderWeights& w) {
    DecoderGradients g;
    for (const auto& l : w.layers)
        g.layers.push_back({MatX::Zero(l.out(), l.in()), VecX::Zero(l.out())});
    return g;
}

std::vector<double> DecoderGradients::flatten() const {
    std::vector<double> flat;
    for (const auto& l : layers) {
        for (int r = 0; r < l.out(); ++r)
            for (int c = 0; c < l.in(); ++c) flat.push_back(l.weight(r, c));
        for (int r = 0; r < l.out(); ++r) flat.push_back(l.bias(r));
    }
    return flat;
}

Image decode_features_backward(const FeatureImage& features, const Image& alpha,
                               const DecoderWeights& weights,
                               const Image& d_output, DecoderGradients* wgrads) {
    weights.check_shapes();
    if (features.channels() != weights.feature_dim)
        throw std::invalid_argument("decode_features_backward: feature channel mismatch");
    if (d_output.width() != features.width() || d_output.height() != features.height() ||
        d_output.channels() != weights.embed_dim)
        throw std::invalid_argument("decode_features_backward: adjoint shape mismatch");
    if (alpha.width() != features.width() || alpha.height() != features.height() ||
        alpha.channels() != 1)
        throw std::invalid_argument("decode_features_backward: alpha shape mismatch");

    Image d_features(features.width(), features.height(), weights.feature_dim, 0.0);
    DecoderGradients local = DecoderGradients::zeros_like(weights);

    VecX f(weights.feature_dim);
    for (int y = 0; y < features.height(); ++y)
        for (int x = 0; x < features.width(); ++x) {
            if (!(alpha(x, y) > kAlphaEps)) continue;
            const double* fp = features.at(x, y);
            for (int ch = 0; ch < weights.feature_dim; ++ch) f[ch] = fp[ch];
            VecX z1 = weights.layers[0].weight * f + weights.layers[0].bias;
            VecX h1 = z1.cwiseMax(0.0);
            VecX z2 = weights.layers[1].weight * h1 + weights.layers[1].bias;
            VecX h2 = z2.cwiseMax(0.0);
            VecX z3 = weights.layers[2].weight * h2 + weights.layers[2].bias;

            VecX dz3(weights.embed_dim);
            const double* dp = d_output.at(x, y);
            for (int ch = 0; ch < weights.embed_dim; ++ch) {
                double s = sigmoid(z3[ch]);
                dz3[ch] = dp[ch] * s * (1.0 - s);
            }
            local.layers[2].weight += dz3 * h2.transpose();
            local.layers[2].bias += dz3;

            VecX dh2 = weights.layers[2].weight.transpose() * dz3;
            VecX dz2 = dh2;
            for (int r = 0; r < dz2.size(); ++r)
                if (!(z2[r] > 0.0)) dz2[r] = 0.0;
            local.layers[1].weight += dz2 * h1.transpose();
            local.layers[1].bias += dz2;

            VecX dh1 = weights.layers[1].weight.transpose() * dz2;
            VecX dz1 = dh1;
            for (int r = 0; r < dz1.size(); ++r)
                if (!(z1[r] > 0.0)) dz1[r] = 0.0;
            local.layers[0].weight += dz1 * f.transpose();
            local.layers[0].bias += dz1;

            VecX df = weights.layers[0].weight.transpose() * dz1;
            double* ofp = d_features.at(x, y);
            for (int ch = 0; ch < weights.feature_dim; ++ch) ofp[ch] = df[ch];
        }

    if (wgrads) *wgrads = std::move(local);
    return d_features;
}

} // namespace hfg
