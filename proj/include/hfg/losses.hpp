// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hfg/core.hpp"

namespace hfg {

// L_image = beta * L_mae + gamma * L_ssim
inline constexpr double kImageMaeWeight = 1.6;  // beta
inline constexpr double kImageSsimWeight = 0.4; // gamma
inline constexpr double kDepthDecay = 0.9;      // mu

struct LossReport {
    double l_image = 0, l_mae = 0, l_ssim = 0;
    double l_depth = 0, l_pose = 0, l_feature = 0;
    double total = 0;

    void finalize() { total = l_image + l_depth + l_pose + l_feature; }
};

struct MetricReport {
    double psnr = 0;        // dB, +inf when identical
    double ssim = 0;
    double mpjpe = 0;       // world units
    double pck = 0;         // [0,1]
    double feature_mse = 0;
    double fps = 0;         // measured render throughput, 0 when not benchmarked
};

// Mean local SSIM, 11x11 Gaussian window sigma=1.5, K1=0.01, K2=0.03, L=1,
// per channel then averaged (valid-window region). Throws if either image
// is smaller than the window.
double ssim(const RasterImage& a, const RasterImage& b);

// d(ssim)/d(a), same shape as a.
Image ssim_backward(const RasterImage& a, const RasterImage& b);

// 1.6 * masked-mean-|diff| + 0.4 * (1 - ssim). Throws on an empty mask.
double loss_image(const RasterImage& pred, const RasterImage& gt, const Mask& mask);
double loss_image(const RasterImage& pred, const RasterImage& gt, const Mask& mask,
                  double* l_mae, double* l_ssim);
Image loss_image_backward(const RasterImage& pred, const RasterImage& gt, const Mask& mask);

// sum_t decay^(T-t) * masked mean L1. Throws on an empty sequence.
double loss_depth(const std::vector<DepthMap>& preds, const DepthMap& gt,
                  const Mask& mask, double decay = kDepthDecay);
// adjoint of the last prediction in a length-1 sequence (the per-scene
// optimizer renders a single depth per step)
Image loss_depth_backward(const DepthMap& pred, const DepthMap& gt, const Mask& mask);

// mean squared coordinate error over all joints
double loss_pose(const KeypointSet& pred, const KeypointSet& gt);
KeypointSet loss_pose_backward(const KeypointSet& pred, const KeypointSet& gt);

// masked mean absolute error over all channels
double loss_feature(const FeatureImage& pred, const FeatureImage& gt, const Mask& mask);
Image loss_feature_backward(const FeatureImage& pred, const FeatureImage& gt, const Mask& mask);

// ---------------------------------------------------------------------------
// Metrics

// 10*log10(1/MSE), peak 1.0; +inf for identical images.
double psnr(const RasterImage& pred, const RasterImage& gt);

// mean per-joint Euclidean distance
double mpjpe(const KeypointSet& pred, const KeypointSet& gt);

// Fraction of 2D joints within threshold_ratio * torso diameter of the
// ground truth; torso diameter = |gt l-shoulder - gt r-hip|. Throws when the
// torso joints coincide.
double pck(const KeypointSet& pred, const KeypointSet& gt, double threshold_ratio = 0.2);

// masked mean squared error between feature/embedding images
double feature_mse(const FeatureImage& pred, const FeatureImage& gt, const Mask& mask);

} // namespace hfg
