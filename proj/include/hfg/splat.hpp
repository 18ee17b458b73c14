// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hfg/core.hpp"

#include <optional>

namespace hfg {

// Rasterization constants. The binning radius is chosen so that any
// contribution outside it is guaranteed below the skip threshold
// (exp(-3.34^2/2) * 0.99 < 1/255), which keeps the tiled and naive paths on
// identical contributor sequences.
inline constexpr double kLowPass = 0.3;            // px^2, added to cov2d
inline constexpr double kAlphaClamp = 0.99;
inline constexpr double kSkipAlpha = 1.0 / 255.0;
inline constexpr double kMinTransmittance = 1e-4;
inline constexpr double kCullSigma = 3.0;          // image-bound cull radius
inline constexpr double kBinSigma = 3.34;          // tile binning radius
inline constexpr int kTileSize = 16;
inline constexpr double kAlphaEps = 1e-6;          // depth normalization floor

struct ProjectedGaussian {
    Vec2 mean2d;       // pixels
    Mat2 cov2d;        // Sigma' after low-pass dilation
    double view_depth; // camera-space z
    int index;         // source Gaussian id
    double radius;     // kBinSigma * sqrt(max eigenvalue of cov2d), pixels
    Vec3 conic;        // (A,B,C) of the precomputed inverse: power = -(A dx^2 + 2B dx dy + C dy^2)/2
    double skip_power; // log(kSkipAlpha / opacity); powers below it cannot survive the skip test
};

// EWA projection of one Gaussian. Returns nullopt when culled (behind the
// near plane or outside the image expanded by the 3-sigma radius).
std::optional<ProjectedGaussian> project(const Gaussian& g, const Camera& cam);

// exp(-1/2 d^T cov2d^{-1} d) at a pixel position.
double eval2d(const ProjectedGaussian& pg, const Vec2& pixel);

struct RenderOutput {
    RasterImage color;   // 3 channels
    FeatureImage feature;
    DepthMap depth;
    Image alpha;         // 1 channel
};

// Counters used by the finite-difference harness to detect instances where
// the render is not differentiable along the probe segment.
struct RenderStats {
    long contributions = 0; // composited (non-skipped) pixel contributions
    long clamped = 0;       // contributions hit the 0.99 alpha clamp
    uint64_t order_hash = 0; // hash of per-pixel contributor index sequences
};

struct RenderOptions {
    Vec3 background = Vec3::Zero();
    int threads = 1;
    RenderStats* stats = nullptr; // optional
};

// Tiled parallel renderer (16x16 tiles, per-tile depth sort, disjoint pixel
// writes). Deterministic for any thread count.
RenderOutput render(const ActivatedGaussians& set, const Camera& cam,
                    const RenderOptions& opts = {});

// Single-threaded reference path: global depth sort, every projected
// Gaussian evaluated at every pixel. Same per-pixel arithmetic as the tiled
// path; used as its oracle.
RenderOutput render_naive(const ActivatedGaussians& set, const Camera& cam,
                          const RenderOptions& opts = {});

} // namespace hfg
