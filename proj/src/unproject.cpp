// SPDX-License-Identifier: Apache-2.0
#include "hfg/unproject.hpp"

#include "hfg/rng.hpp"

#include <numeric>

namespace hfg {

PointCloud unproject_depth(const DepthMap& depth, const Mask& mask,
                           const Camera& cam, int8_t view_tag) {
    if (depth.width() != cam.width || depth.height() != cam.height ||
        mask.width != cam.width || mask.height != cam.height)
        throw std::invalid_argument("unproject_depth: dimension mismatch");

    PointCloud out;
    for (int y = 0; y < depth.height(); ++y)
        for (int x = 0; x < depth.width(); ++x) {
            if (!mask(x, y)) continue;
            double d = depth(x, y);
            if (!(d > 0.0)) continue;
            double u = x + 0.5, v = y + 0.5;
            Vec3 p_cam((u - cam.cx) * d / cam.fx, (v - cam.cy) * d / cam.fy, d);
            out.points.push_back(cam.to_world(p_cam));
            out.source_view.push_back(view_tag);
        }
    return out;
}

PointCloud merge(const PointCloud& left, const PointCloud& right) {
    PointCloud out = left;
    out.points.insert(out.points.end(), right.points.begin(), right.points.end());
    out.source_view.insert(out.source_view.end(), right.source_view.begin(),
                           right.source_view.end());
    return out;
}

SampledCloud sample_cloud(const PointCloud& cloud, int n, uint64_t seed) {
    if (cloud.points.empty())
        throw std::invalid_argument("no foreground points");

    Rng rng(seed);
    const size_t total = cloud.points.size();
    std::vector<size_t> picks(n);
    if (total >= size_t(n)) {
        // partial Fisher-Yates without replacement
        std::vector<size_t> idx(total);
        std::iota(idx.begin(), idx.end(), size_t(0));
        for (int i = 0; i < n; ++i) {
            size_t j = i + size_t(rng.uniform_int(total - i));
            std::swap(idx[i], idx[j]);
            picks[i] = idx[i];
        }
    } else {
        for (int i = 0; i < n; ++i) picks[i] = size_t(rng.uniform_int(total));
    }

    SampledCloud out;
    out.points.resize(n, 3);
    Vec3 centroid = Vec3::Zero();
    for (int i = 0; i < n; ++i) centroid += cloud.points[picks[i]];
    centroid /= double(n);
    for (int i = 0; i < n; ++i) {
        Vec3 p = cloud.points[picks[i]] - centroid;
        out.points(i, 0) = p.x();
        out.points(i, 1) = p.y();
        out.points(i, 2) = p.z();
    }
    out.centroid = centroid;
    return out;
}

} // namespace hfg
