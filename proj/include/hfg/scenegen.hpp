// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hfg/core.hpp"

#include <cstdint>

namespace hfg {

// Parent of each joint in the canonical order; -1 marks the pelvis root.
extern const int kJointParents[kNumJoints];

// 18 bones: every non-root joint paired with its parent, in joint order.
inline constexpr int kNumBones = kNumJoints - 1;

// An articulated figure: raw Gaussian parameters (feature_dim = 3 holds the
// per-Gaussian ground-truth embedding) plus its 3D joint positions.
struct Figure {
    GaussianSet gaussians;
    KeypointSet joints;
};

// Deterministic random figure: fixed skeleton proportions, per-joint random
// articulation within limits, 40 Gaussians per bone strung along each bone.
// The figure stands around (0, 1, 0), roughly 1.7 units tall.
Figure generate_figure(uint64_t seed);

// `count` cameras on a horizontal ring of the given radius, all looking at
// `target`, square image_size x image_size, fx = fy = fx_scale * image_size.
std::vector<Camera> camera_ring(int count, int image_size, double radius = 2.5,
                                const Vec3& target = Vec3(0.0, 1.0, 0.0),
                                double fx_scale = 1.2,
                                double height_offset = 0.3);

struct SceneGenConfig {
    int image_size = 128;
    int num_views = 8;
    double radius = 2.5;
    int threads = 1;
};

// One dataset sample: a figure rendered from every ring camera.
struct SceneSample {
    Figure figure;
    std::vector<Camera> cameras;
    std::vector<RasterImage> color;
    std::vector<DepthMap> depth;
    std::vector<Mask> mask;       // alpha > 0.5
    std::vector<FeatureImage> embed;
    std::vector<KeypointSet> kp2d;
    int target_view = 0;
    std::vector<int> source_views; // ring neighbors of the target
};

SceneSample make_sample(uint64_t seed, const SceneGenConfig& config);

} // namespace hfg
