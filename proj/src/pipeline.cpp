// SPDX-License-Identifier: Apache-2.0
#include "hfg/pipeline.hpp"

#include "hfg/rng.hpp"
#include "hfg/splat.hpp"
#include "hfg/unproject.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>

namespace hfg {

namespace {

// flat views of the per-group parameter arrays for the optimizer
std::vector<double> flatten_vec3(const std::vector<Vec3>& v) {
    std::vector<double> out;
    out.reserve(v.size() * 3);
    for (const auto& x : v) { out.push_back(x[0]); out.push_back(x[1]); out.push_back(x[2]); }
    return out;
}

void unflatten_vec3(std::vector<Vec3>& v, const std::vector<double>& flat) {
    for (size_t i = 0; i < v.size(); ++i)
        v[i] = Vec3(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
}

std::vector<double> flatten_vec4(const std::vector<Vec4>& v) {
    std::vector<double> out;
    out.reserve(v.size() * 4);
    for (const auto& x : v)
        for (int k = 0; k < 4; ++k) out.push_back(x[k]);
    return out;
}

void unflatten_vec4(std::vector<Vec4>& v, const std::vector<double>& flat) {
    for (size_t i = 0; i < v.size(); ++i)
        v[i] = Vec4(flat[4 * i], flat[4 * i + 1], flat[4 * i + 2], flat[4 * i + 3]);
}

std::vector<double> flatten_vecx(const std::vector<VecX>& v, int dim) {
    std::vector<double> out;
    out.reserve(v.size() * dim);
    for (const auto& x : v)
        for (int k = 0; k < dim; ++k) out.push_back(x[k]);
    return out;
}

void unflatten_vecx(std::vector<VecX>& v, const std::vector<double>& flat, int dim) {
    for (size_t i = 0; i < v.size(); ++i)
        for (int k = 0; k < dim; ++k) v[i][k] = flat[size_t(i) * dim + k];
}

Mask mask_from_alpha(const Image& alpha) {
    Mask m(alpha.width(), alpha.height());
    for (int y = 0; y < alpha.height(); ++y)
        for (int x = 0; x < alpha.width(); ++x)
            m(x, y) = alpha(x, y) > 0.5 ? 1 : 0;
    return m;
}

} // namespace

GaussianSet init_from_depth(const LoadedSample& sample, int feature_dim,
                            int max_points, uint64_t seed) {
    struct Seed { Vec3 pos; Vec3 color; double px_size; };
    std::vector<Seed> seeds;
    for (int view : sample.source_views) {
        const DepthMap& depth = sample.depth[view];
        const Mask& mask = sample.mask[view];
        const Camera& cam = sample.cameras[view];
        const RasterImage& color = sample.color[view];
        for (int y = 0; y < depth.height(); ++y)
            for (int x = 0; x < depth.width(); ++x) {
                if (!mask(x, y)) continue;
                double d = depth(x, y);
                if (!(d > 0.0)) continue;
                double u = x + 0.5, v = y + 0.5;
                Vec3 p_cam((u - cam.cx) * d / cam.fx, (v - cam.cy) * d / cam.fy, d);
                const double* c = color.at(x, y);
                seeds.push_back({cam.to_world(p_cam), Vec3(c[0], c[1], c[2]),
                                 1.5 * d / cam.fx});
            }
    }
    if (seeds.empty())
        throw std::invalid_argument("init_from_depth: no foreground depth points");

    std::vector<size_t> picks;
    if (int(seeds.size()) <= max_points) {
        picks.resize(seeds.size());
        std::iota(picks.begin(), picks.end(), size_t(0));
    } else {
        Rng rng(seed ^ 0x696e6974ull);
        std::vector<size_t> idx(seeds.size());
        std::iota(idx.begin(), idx.end(), size_t(0));
        picks.resize(max_points);
        for (int i = 0; i < max_points; ++i) {
            size_t j = i + size_t(rng.uniform_int(seeds.size() - i));
            std::swap(idx[i], idx[j]);
            picks[i] = idx[i];
        }
    }

    GaussianSet set;
    set.resize(int(picks.size()), feature_dim);
    for (size_t i = 0; i < picks.size(); ++i) {
        const Seed& s = seeds[picks[i]];
        set.position[i] = s.pos;
        set.rotation[i] = Vec4(1, 0, 0, 0);
        double sc = std::log(std::max(s.px_size, 1e-4));
        set.scale[i] = Vec3(sc, sc, sc);
        set.opacity[i] = logit(0.5);
        for (int k = 0; k < 3; ++k)
            set.color[i][k] = logit(std::clamp(s.color[k], 0.02, 0.98));
        set.feature[i] = VecX::Zero(feature_dim); // sigmoid -> 0.5
    }
    return set;
}

OptimizeResult optimize_scene(const LoadedSample& sample,
                              const OptimizeConfig& config) {
    std::vector<int> views = config.train_views;
    if (views.empty()) views.push_back(sample.target_view);
    for (int v : views)
        if (v < 0 || v >= int(sample.cameras.size()))
            throw std::invalid_argument("optimize_scene: train view out of range");

    const int fdim = config.shared_channels ? 3 : config.feature_dim;
    OptimizeResult res;
    res.gaussians = init_from_depth(sample, fdim, config.max_init_points,
                                    config.seed);
    res.decoder = init_decoder_weights(fdim, config.embed_dim, config.seed);
    const int n = res.gaussians.count;

    PoseWeights pose;
    bool has_pose = false;
    if (config.use_pose && !config.pose_weights_path.empty()) {
        pose = load_pose_weights(config.pose_weights_path);
        has_pose = true;
    }

    OptimizerState st_pos, st_rot, st_scale, st_op, st_color, st_feat,
        st_decoder, st_pose;
    RenderOptions ropts;
    ropts.background = config.background;
    ropts.threads = config.threads;

    if (!config.checkpoint_dir.empty())
        std::filesystem::create_directories(config.checkpoint_dir);

    double last_pose_loss = 0.0;
    for (int it = 0; it < config.iterations; ++it) {
        const int view = views[size_t(it) % views.size()];
        const Camera& cam = sample.cameras[view];
        const RasterImage& gt_color = sample.color[view];
        const DepthMap& gt_depth = sample.depth[view];
        const FeatureImage& gt_embed = sample.embed[view];
        const Mask& gt_mask = sample.mask[view];

        ActivatedGaussians act = activate(res.gaussians);
        RenderOutput out = render(act, cam, ropts);

        LossReport rep;
        RenderAdjoint adj;
        rep.l_image = loss_image(out.color, gt_color, gt_mask, &rep.l_mae,
                                 &rep.l_ssim);
        adj.color = loss_image_backward(out.color, gt_color, gt_mask);

        if (config.use_depth) {
            rep.l_depth = loss_depth({out.depth}, gt_depth, gt_mask);
            adj.depth = loss_depth_backward(out.depth, gt_depth, gt_mask);
        }

        DecoderGradients dgrads;
        bool has_dgrads = false;
        if (config.use_feature) {
            const Image& dec_in = config.shared_channels ? out.color : out.feature;
            Image decoded = decode_features(dec_in, out.alpha, res.decoder);
            rep.l_feature = loss_feature(decoded, gt_embed, gt_mask);
            Image d_embed = loss_feature_backward(decoded, gt_embed, gt_mask);
            Image d_in = decode_features_backward(dec_in, out.alpha, res.decoder,
                                                  d_embed, &dgrads);
            has_dgrads = true;
            if (config.shared_channels) {
                for (size_t i = 0; i < adj.color.data().size(); ++i)
                    adj.color.data()[i] += d_in.data()[i];
            } else {
                adj.feature = std::move(d_in);
            }
        }

        // pose step: fine-tune the pose net against the current geometry;
        // the sampled cloud is treated as constant
        if (has_pose && config.pose_every > 0 && it % config.pose_every == 0) {
            Mask amask = mask_from_alpha(out.alpha);
            PointCloud cloud;
            for (int y = 0; y < out.depth.height(); ++y)
                for (int x = 0; x < out.depth.width(); ++x)
                    if (amask(x, y) && out.depth(x, y) > 0.0) {
                        double d = out.depth(x, y);
                        Vec3 pc((x + 0.5 - cam.cx) * d / cam.fx,
                                (y + 0.5 - cam.cy) * d / cam.fy, d);
                        cloud.points.push_back(cam.to_world(pc));
                    }
            if (!cloud.points.empty()) {
                SampledCloud sc = sample_cloud(cloud, kDefaultSamplePoints,
                                               config.seed + uint64_t(it));
                PoseForwardCache cache;
                KeypointSet pred = forward_pose(sc, pose, &cache);
                last_pose_loss = loss_pose(pred, sample.kp3d);
                KeypointSet dj = loss_pose_backward(pred, sample.kp3d);
                VecX d_out(kNumJoints * pose.dim);
                for (int j = 0; j < kNumJoints; ++j)
                    for (int d = 0; d < pose.dim; ++d)
                        d_out[j * pose.dim + d] = dj.joints[j][d];
                PoseGradients pg = backward_pose(pose, cache, d_out);
                std::vector<double> flat = pose.flatten();
                std::vector<double> gflat = pg.flatten();
                adam_step(flat, gflat, st_pose, 1e-4, config.weight_decay);
                pose.unflatten(flat);
            }
        }
        rep.l_pose = last_pose_loss;
        rep.finalize();
        if (!std::isfinite(rep.total))
            throw numerical_error("optimize_scene: non-finite loss at iteration "
                                  + std::to_string(it));

        GradientBundle g = backward_render(res.gaussians, act, cam, adj, ropts);

        {
            auto flat = flatten_vec3(res.gaussians.position);
            auto gf = flatten_vec3(g.position);
            adam_step(flat, gf, st_pos, config.lr_position, config.weight_decay);
            unflatten_vec3(res.gaussians.position, flat);
        }
        {
            auto flat = flatten_vec4(res.gaussians.rotation);
            auto gf = flatten_vec4(g.rotation);
            adam_step(flat, gf, st_rot, config.lr_rotation, config.weight_decay);
            unflatten_vec4(res.gaussians.rotation, flat);
        }
        {
            auto flat = flatten_vec3(res.gaussians.scale);
            auto gf = flatten_vec3(g.scale);
            adam_step(flat, gf, st_scale, config.lr_scale, config.weight_decay);
            unflatten_vec3(res.gaussians.scale, flat);
        }
        adam_step(res.gaussians.opacity, g.opacity, st_op, config.lr_opacity,
                  config.weight_decay);
        {
            auto flat = flatten_vec3(res.gaussians.color);
            auto gf = flatten_vec3(g.color);
            adam_step(flat, gf, st_color, config.lr_color, config.weight_decay);
            unflatten_vec3(res.gaussians.color, flat);
        }
        if (!config.shared_channels && fdim > 0) {
            auto flat = flatten_vecx(res.gaussians.feature, fdim);
            auto gf = flatten_vecx(g.feature, fdim);
            adam_step(flat, gf, st_feat, config.lr_feature, config.weight_decay);
            unflatten_vecx(res.gaussians.feature, flat, fdim);
        }
        if (has_dgrads) {
            auto flat = res.decoder.flatten();
            auto gf = dgrads.flatten();
            adam_step(flat, gf, st_decoder, config.lr_decoder, config.weight_decay);
            res.decoder.unflatten(flat);
        }

        if (config.log_every > 0 && it % config.log_every == 0)
            res.trajectory.push_back(rep);

        if (config.checkpoint_every > 0 && !config.checkpoint_dir.empty() &&
            (it + 1) % config.checkpoint_every == 0) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "iter_%06d", it + 1);
            auto base = std::filesystem::path(config.checkpoint_dir) / buf;
            save_ply(base.string() + ".ply", res.gaussians);
            save_decoder_weights(base.string() + ".dec", res.decoder);
        }
    }
    (void)n;
    return res;
}

MetricReport evaluate_scene(const GaussianSet& gaussians,
                            const LoadedSample& sample,
                            const EvalOptions& opts) {
    const int view = opts.view < 0 ? sample.target_view : opts.view;
    const Camera& cam = sample.cameras[view];

    RenderOptions ropts;
    ropts.background = opts.background;
    ropts.threads = opts.threads;

    ActivatedGaussians act = activate(gaussians);
    RenderOutput out = render(act, cam, ropts);

    MetricReport m;
    m.psnr = psnr(out.color, sample.color[view]);
    m.ssim = ssim(out.color, sample.color[view]);

    if (opts.decoder) {
        const Image& dec_in = opts.shared_channels ? out.color : out.feature;
        Image decoded = decode_features(dec_in, out.alpha, *opts.decoder);
        m.feature_mse = feature_mse(decoded, sample.embed[view], sample.mask[view]);
    }

    if (opts.pose) {
        Mask amask = mask_from_alpha(out.alpha);
        PointCloud cloud;
        for (int y = 0; y < out.depth.height(); ++y)
            for (int x = 0; x < out.depth.width(); ++x)
                if (amask(x, y) && out.depth(x, y) > 0.0) {
                    double d = out.depth(x, y);
                    Vec3 pc((x + 0.5 - cam.cx) * d / cam.fx,
                            (y + 0.5 - cam.cy) * d / cam.fy, d);
                    cloud.points.push_back(cam.to_world(pc));
                }
        if (!cloud.points.empty()) {
            SampledCloud sc = sample_cloud(cloud, kDefaultSamplePoints, opts.seed);
            KeypointSet pred3d = forward_pose(sc, *opts.pose);
            m.mpjpe = mpjpe(pred3d, sample.kp3d);
            KeypointSet pred2d(2), gt2d = sample.kp2d[view];
            for (int j = 0; j < kNumJoints; ++j) {
                Vec2 px = cam.project_point(pred3d.joints[j]);
                pred2d.joints[j] = Vec3(px.x(), px.y(), 0.0);
            }
            m.pck = pck(pred2d, gt2d);
        }
    }

    if (opts.benchmark_fps) {
        auto t0 = std::chrono::steady_clock::now();
        int frames = 0;
        double elapsed = 0.0;
        do {
            RenderOutput bench = render(act, cam, ropts);
            (void)bench;
            ++frames;
            elapsed = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        } while (elapsed < 0.5 && frames < 1000);
        m.fps = frames / elapsed;
    }
    return m;
}

} // namespace hfg
