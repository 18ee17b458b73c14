// SPDX-License-Identifier: Apache-2.0
#include "hfg/splat.hpp"

#include "hfg/threading.hpp"
#include "splat_internal.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace hfg {

std::optional<ProjectedGaussian> project(const Gaussian& g, const Camera& cam) {
    Vec3 pc = cam.to_camera(g.position);
    double z = pc.z();
    if (z <= cam.near) return std::nullopt;

    Vec2 mean2d(cam.fx * pc.x() / z + cam.cx, cam.fy * pc.y() / z + cam.cy);

    // Jacobian of the projective transform at the Gaussian center.
    Mat23 jac;
    jac << cam.fx / z, 0.0, -cam.fx * pc.x() / (z * z),
           0.0, cam.fy / z, -cam.fy * pc.y() / (z * z);
    Mat23 t2 = jac * cam.rotation();
    Mat3 sigma = covariance3d(g.rotation, g.scale);
    Mat2 cov2d = t2 * sigma * t2.transpose();
    cov2d(0, 0) += kLowPass;
    cov2d(1, 1) += kLowPass;
    cov2d(1, 0) = cov2d(0, 1) = 0.5 * (cov2d(0, 1) + cov2d(1, 0));

    double mid = 0.5 * (cov2d(0, 0) + cov2d(1, 1));
    double disc = std::sqrt(std::max(0.0, 0.25 * (cov2d(0, 0) - cov2d(1, 1)) * (cov2d(0, 0) - cov2d(1, 1)) + cov2d(0, 1) * cov2d(0, 1)));
    double lambda_max = mid + disc;

    double cull_r = kCullSigma * std::sqrt(lambda_max);
    if (mean2d.x() < -cull_r || mean2d.x() > cam.width + cull_r ||
        mean2d.y() < -cull_r || mean2d.y() > cam.height + cull_r)
        return std::nullopt;

    ProjectedGaussian pg;
    pg.mean2d = mean2d;
    pg.cov2d = cov2d;
    pg.view_depth = z;
    pg.index = -1; // filled by the caller when rendering a set
    pg.radius = kBinSigma * std::sqrt(lambda_max);
    double det = cov2d(0, 0) * cov2d(1, 1) - cov2d(0, 1) * cov2d(0, 1);
    pg.conic = Vec3(cov2d(1, 1) / det, -cov2d(0, 1) / det, cov2d(0, 0) / det);
    pg.skip_power = g.opacity > 0.0
                        ? std::log(kSkipAlpha / g.opacity)
                        : std::numeric_limits<double>::infinity();
    return pg;
}

double eval2d(const ProjectedGaussian& pg, const Vec2& pixel) {
    double dx = pixel.x() - pg.mean2d.x(), dy = pixel.y() - pg.mean2d.y();
    double power = -0.5 * (pg.conic[0] * dx * dx + 2.0 * pg.conic[1] * dx * dy +
                           pg.conic[2] * dy * dy);
    return std::exp(std::min(power, 0.0));
}

namespace detail {

std::vector<ProjectedGaussian> project_set(const ActivatedGaussians& set,
                                           const Camera& cam) {
    std::vector<ProjectedGaussian> projs;
    projs.reserve(set.count);
    Gaussian g; // reused to avoid re-allocating the feature vector per call
    g.feature = VecX();
    for (int i = 0; i < set.count; ++i) {
        g.position = set.position[i];
        g.rotation = set.rotation[i];
        g.scale = set.scale[i];
        g.opacity = set.opacity[i];
        g.color = set.color[i];
        auto pg = project(g, cam);
        if (pg) {
            pg->index = i;
            projs.push_back(*pg);
        }
    }
    return projs;
}

} // namespace detail

RenderOutput render(const ActivatedGaussians& set, const Camera& cam,
                    const RenderOptions& opts) {
    cam.validate();
    const int w = cam.width, h = cam.height;
    RenderOutput out = detail::make_output(w, h, set.feature_dim);

    auto projs = detail::project_set(set, cam);
    auto grid = detail::build_tiles(projs, w, h);

    std::vector<RenderStats> tile_stats(opts.stats ? grid.tile_count() : 0);

    parallel_for(grid.tile_count(), opts.threads, [&](int ti) {
        const auto& list = grid.lists[ti];
        auto entries = detail::make_entries(projs, list.data(), list.size(), set);
        int tx = ti % grid.tiles_x, ty = ti / grid.tiles_x;
        int x0 = tx * kTileSize, x1 = std::min(w, x0 + kTileSize);
        int y0 = ty * kTileSize, y1 = std::min(h, y0 + kTileSize);
        RenderStats* stats = opts.stats ? &tile_stats[ti] : nullptr;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x)
                detail::composite_pixel(entries.data(), entries.size(), set,
                                        x + 0.5, y + 0.5, opts.background,
                                        out.color.at(x, y), out.feature.at(x, y),
                                        out.depth.at(x, y), out.alpha.at(x, y),
                                        nullptr, stats,
                                        uint64_t(y) * w + x);
    });

    if (opts.stats) {
        for (const auto& s : tile_stats) {
            opts.stats->contributions += s.contributions;
            opts.stats->clamped += s.clamped;
            opts.stats->order_hash += s.order_hash;
        }
    }
    return out;
}

RenderOutput render_naive(const ActivatedGaussians& set, const Camera& cam,
                          const RenderOptions& opts) {
    cam.validate();
    const int w = cam.width, h = cam.height;
    RenderOutput out = detail::make_output(w, h, set.feature_dim);

    auto projs = detail::project_set(set, cam);
    std::vector<int> ids(projs.size());
    std::iota(ids.begin(), ids.end(), 0);
    detail::sort_by_depth(ids, projs);

    auto entries = detail::make_entries(projs, ids.data(), ids.size(), set);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            detail::composite_pixel(entries.data(), entries.size(), set,
                                    x + 0.5, y + 0.5, opts.background,
                                    out.color.at(x, y), out.feature.at(x, y),
                                    out.depth.at(x, y), out.alpha.at(x, y),
                                    nullptr, opts.stats, uint64_t(y) * w + x);
    return out;
}

} // namespace hfg
