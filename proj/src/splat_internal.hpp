// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hfg/splat.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace hfg::detail {

// Projects every Gaussian in a set; culled entries are dropped and `index`
// is filled with the source id. Defined in splat.cpp.
std::vector<ProjectedGaussian> project_set(const ActivatedGaussians& set,
                                           const Camera& cam);

inline void sort_by_depth(std::vector<int>& ids,
                          const std::vector<ProjectedGaussian>& projs) {
    std::sort(ids.begin(), ids.end(), [&](int a, int b) {
        if (projs[a].view_depth != projs[b].view_depth)
            return projs[a].view_depth < projs[b].view_depth;
        return projs[a].index < projs[b].index;
    });
}

struct TileGrid {
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<int>> lists; // indices into the projection array

    int tile_count() const { return tiles_x * tiles_y; }
};

inline TileGrid build_tiles(const std::vector<ProjectedGaussian>& projs,
                            int width, int height) {
    TileGrid grid;
    grid.tiles_x = (width + kTileSize - 1) / kTileSize;
    grid.tiles_y = (height + kTileSize - 1) / kTileSize;
    grid.lists.resize(size_t(grid.tile_count()));
    for (int pi = 0; pi < int(projs.size()); ++pi) {
        const auto& pg = projs[pi];
        int tx0 = std::max(0, int(std::floor((pg.mean2d.x() - pg.radius) / kTileSize)));
        int tx1 = std::min(grid.tiles_x - 1, int(std::floor((pg.mean2d.x() + pg.radius) / kTileSize)));
        int ty0 = std::max(0, int(std::floor((pg.mean2d.y() - pg.radius) / kTileSize)));
        int ty1 = std::min(grid.tiles_y - 1, int(std::floor((pg.mean2d.y() + pg.radius) / kTileSize)));
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                grid.lists[size_t(ty) * grid.tiles_x + tx].push_back(pi);
    }
    for (auto& list : grid.lists) sort_by_depth(list, projs);
    return grid;
}

// Compact per-tile view of one projected Gaussian, laid out for the hot
// compositing loop.
struct TileEntry {
    double mx, my;          // mean2d
    double a_, b_, c_;      // conic
    double skip_power;      // precomputed log-space skip threshold
    double opacity;
    double depth;           // view_depth
    int index;              // source Gaussian id
    int list_pos;           // position in the depth-sorted tile list
};

inline std::vector<TileEntry> make_entries(
    const std::vector<ProjectedGaussian>& projs, const int* ids, size_t n,
    const ActivatedGaussians& set) {
    std::vector<TileEntry> entries(n);
    for (size_t k = 0; k < n; ++k) {
        const auto& pg = projs[ids[k]];
        entries[k] = {pg.mean2d.x(),          pg.mean2d.y(), pg.conic[0],
                      pg.conic[1],            pg.conic[2],   pg.skip_power,
                      set.opacity[pg.index],  pg.view_depth, pg.index,
                      int(k)};
    }
    return entries;
}

// One surviving contribution at a pixel, recorded for the backward pass.
struct Contribution {
    int list_pos;    // position in the depth-sorted tile list
    int index;       // source Gaussian id
    double gauss;    // eval2d value G
    double alpha;    // clamped alpha' actually composited
    double transmittance; // T before this contribution
    bool clamped;
};

// Front-to-back compositing of one pixel. `entries` must be depth-sorted and
// carry the activated opacity. Writes color[3], feature[F], depth and alpha;
// optionally records the surviving contributions.
inline void composite_pixel(const TileEntry* entries, size_t n_ids,
                            const ActivatedGaussians& set,
                            double px, double py, const Vec3& background,
                            double* color, double* feature, double* depth,
                            double* alpha_out,
                            std::vector<Contribution>* record = nullptr,
                            RenderStats* stats = nullptr,
                            uint64_t pixel_key = 0) {
    const int fdim = set.feature_dim;
    double t = 1.0;
    double c0 = 0, c1 = 0, c2 = 0, z_acc = 0;
    for (int f = 0; f < fdim; ++f) feature[f] = 0.0;
    uint64_t hash = 1469598103934665603ull;

    for (size_t k = 0; k < n_ids; ++k) {
        const TileEntry& e = entries[k];
        double dx = px - e.mx, dy = py - e.my;
        double power = -0.5 * (e.a_ * dx * dx + 2.0 * e.b_ * dx * dy +
                               e.c_ * dy * dy);
        if (power < e.skip_power) continue; // cannot pass the skip test
        double g = std::exp(std::min(power, 0.0));
        double a = e.opacity * g;
        bool clamped = a > kAlphaClamp;
        if (clamped) a = kAlphaClamp;
        if (a < kSkipAlpha) continue;

        double w = a * t;
        const Vec3& col = set.color[e.index];
        c0 += w * col.x();
        c1 += w * col.y();
        c2 += w * col.z();
        const VecX& fv = set.feature[e.index];
        for (int f = 0; f < fdim; ++f) feature[f] += w * fv[f];
        z_acc += w * e.depth;

        if (record) record->push_back({e.list_pos, e.index, g, a, t, clamped});
        if (stats) {
            stats->contributions++;
            if (clamped) stats->clamped++;
            hash = (hash ^ uint64_t(e.index + 1)) * 1099511628211ull;
        }
        t *= 1.0 - a;
        if (t < kMinTransmittance) break;
    }
    double alpha = 1.0 - t;
    color[0] = c0 + t * background.x();
    color[1] = c1 + t * background.y();
    color[2] = c2 + t * background.z();
    *depth = alpha > kAlphaEps ? z_acc / alpha : 0.0;
    *alpha_out = alpha;
    if (stats) stats->order_hash += hash * (pixel_key + 1); // order-free combine
}

inline RenderOutput make_output(int w, int h, int fdim) {
    RenderOutput out;
    out.color = RasterImage(w, h, 3);
    out.feature = FeatureImage(w, h, fdim);
    out.depth = DepthMap(w, h, 1);
    out.alpha = Image(w, h, 1);
    return out;
}

} // namespace hfg::detail
