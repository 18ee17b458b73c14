// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hfg/core.hpp"

#include <cstdint>

namespace hfg {

struct PointCloud {
    std::vector<Vec3> points;       // world units
    std::vector<int8_t> source_view; // optional tag, -1 when unknown

    size_t size() const { return points.size(); }
};

// Centered sample fed to the pose network; predicted 3D joints get the
// centroid added back.
struct SampledCloud {
    MatX points = MatX(0, 3); // n x 3, centroid-subtracted
    Vec3 centroid = Vec3::Zero();
};

// Lifts masked depth pixels to world-space points (row-major scan order).
PointCloud unproject_depth(const DepthMap& depth, const Mask& mask,
                           const Camera& cam, int8_t view_tag = -1);

// Concatenation, left points first.
PointCloud merge(const PointCloud& left, const PointCloud& right);

// Draws exactly n points: uniformly without replacement when the cloud is
// large enough, with replacement otherwise. Deterministic per seed. Output
// is centered; the subtracted centroid is returned alongside.
// Throws "no foreground points" on an empty cloud.
SampledCloud sample_cloud(const PointCloud& cloud, int n, uint64_t seed);

inline constexpr int kDefaultSamplePoints = 2048;

} // namespace hfg
