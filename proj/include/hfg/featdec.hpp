// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hfg/core.hpp"
#include "hfg/posenet.hpp" // Linear

namespace hfg {

inline constexpr int kDecoderHidden = 32;

// Per-pixel MLP turning an F-channel splatted feature into an E-channel
// embedding: F -> 32 -> 32 (ReLU) -> E (sigmoid).
struct DecoderWeights {
    int feature_dim = 8;
    int embed_dim = 3;
    std::vector<Linear> layers; // exactly 3

    size_t param_count() const;
    void check_shapes() const;

    // per layer W row-major, then b
    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);
};

// Seeded uniform +-sqrt(1/fan_in) initialization.
DecoderWeights init_decoder_weights(int feature_dim, int embed_dim, uint64_t seed);

// Applies the decoder at every pixel with alpha > 1e-6; other pixels are 0.
// Throws on a channel-count mismatch.
Image decode_features(const FeatureImage& features, const Image& alpha,
                      const DecoderWeights& weights);

struct DecoderGradients {
    std::vector<Linear> layers;

    static DecoderGradients zeros_like(const DecoderWeights& w);
    std::vector<double> flatten() const;
};

// Backward pass of decode_features: gradients w.r.t. the input feature image
// (same shape as `features`) and the decoder weights.
Image decode_features_backward(const FeatureImage& features, const Image& alpha,
                               const DecoderWeights& weights,
                               const Image& d_output, DecoderGradients* wgrads);

} // namespace hfg
