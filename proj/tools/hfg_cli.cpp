// SPDX-License-Identifier: Apache-2.0
//
// hfg — Gaussian feature-splatting toolkit.
//
// Subcommands: gen, optimize, train-pose, render, eval, gradcheck.
// Exit codes: 0 success, 1 invalid input, 2 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include "hfg/grad.hpp"
#include "hfg/io.hpp"
#include "hfg/pipeline.hpp"
#include "hfg/rng.hpp"
#include "hfg/scenegen.hpp"
#include "hfg/splat.hpp"
#include "hfg/threading.hpp"
#include "hfg/unproject.hpp"

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hfg;

namespace {

constexpr const char* kVersion = "1.0.0";

int cmd_gen(const std::string& out, int count, uint64_t seed, int image_size,
            int views, int threads) {
    fs::create_directories(out);
    SceneGenConfig cfg;
    cfg.image_size = image_size;
    cfg.num_views = views;
    cfg.threads = threads;
    for (int i = 0; i < count; ++i) {
        SceneSample s = make_sample(seed + uint64_t(i), cfg);
        save_sample(out, i, s);
    }
    Config manifest_cfg{{"count", std::to_string(count)},
                        {"image_size", std::to_string(image_size)},
                        {"views", std::to_string(views)}};
    save_manifest((fs::path(out) / "manifest.json").string(),
                  config_hash(manifest_cfg), seed, kVersion);
    std::cout << "wrote " << count << " samples to " << out << "\n";
    return 0;
}

void apply_config(OptimizeConfig& cfg, const Config& file) {
    auto get_d = [&](const char* k, double& v) {
        if (auto it = file.find(k); it != file.end()) v = std::stod(it->second);
    };
    auto get_i = [&](const char* k, int& v) {
        if (auto it = file.find(k); it != file.end()) v = std::stoi(it->second);
    };
    auto get_b = [&](const char* k, bool& v) {
        if (auto it = file.find(k); it != file.end())
            v = (it->second == "1" || it->second == "true");
    };
    get_i("iterations", cfg.iterations);
    get_i("feature_dim", cfg.feature_dim);
    get_i("embed_dim", cfg.embed_dim);
    get_d("lr_position", cfg.lr_position);
    get_d("lr_rotation", cfg.lr_rotation);
    get_d("lr_scale", cfg.lr_scale);
    get_d("lr_opacity", cfg.lr_opacity);
    get_d("lr_color", cfg.lr_color);
    get_d("lr_feature", cfg.lr_feature);
    get_d("lr_decoder", cfg.lr_decoder);
    get_d("weight_decay", cfg.weight_decay);
    get_b("use_depth", cfg.use_depth);
    get_b("use_feature", cfg.use_feature);
    get_b("use_pose", cfg.use_pose);
    get_b("shared_channels", cfg.shared_channels);
    get_i("pose_every", cfg.pose_every);
    get_i("checkpoint_every", cfg.checkpoint_every);
    get_i("max_init_points", cfg.max_init_points);
}

int cmd_optimize(const std::string& data, int sample_idx, const std::string& out,
                 OptimizeConfig cfg, const std::string& config_path,
                 int hold_out) {
    if (!config_path.empty()) apply_config(cfg, load_config(config_path));
    LoadedSample sample = load_sample(data, sample_idx);
    if (hold_out >= 0) {
        if (hold_out >= int(sample.cameras.size()))
            throw std::invalid_argument("--hold-out view out of range");
        for (int v = 0; v < int(sample.cameras.size()); ++v)
            if (v != hold_out) cfg.train_views.push_back(v);
    }
    OptimizeResult res = optimize_scene(sample, cfg);

    fs::create_directories(out);
    save_ply((fs::path(out) / "gaussians.ply").string(), res.gaussians);
    save_decoder_weights((fs::path(out) / "decoder.dec").string(), res.decoder);
    json traj = json::array();
    for (const auto& r : res.trajectory)
        traj.push_back({{"l_image", r.l_image},
                        {"l_mae", r.l_mae},
                        {"l_ssim", r.l_ssim},
                        {"l_depth", r.l_depth},
                        {"l_pose", r.l_pose},
                        {"l_feature", r.l_feature},
                        {"total", r.total}});
    std::ofstream tf((fs::path(out) / "trajectory.json").string());
    tf << traj.dump(2) << "\n";

    if (!res.trajectory.empty())
        std::cout << "loss " << res.trajectory.front().total << " -> "
                  << res.trajectory.back().total << " over "
                  << cfg.iterations << " iterations\n";
    return 0;
}

int cmd_train_pose(const std::string& data, const std::string& backbone,
                   const std::string& out, int epochs, double lr, int batch,
                   uint64_t seed, int threads, int holdout, int points) {
    int total = count_samples(data);
    if (total == 0) throw std::invalid_argument("no samples found in " + data);
    if (holdout >= total)
        throw std::invalid_argument("holdout exceeds sample count");

    PoseTrainConfig cfg;
    cfg.backbone = backbone_from_name(backbone);
    cfg.dim = 3;
    cfg.epochs = epochs;
    cfg.lr = lr;
    cfg.batch_size = batch;
    cfg.seed = seed;
    cfg.threads = threads;

    std::vector<PoseSample> train, val;
    for (int i = 0; i < total; ++i) {
        LoadedSample s = load_sample(data, i);
        PointCloud cloud;
        for (int view : s.source_views)
            cloud = merge(cloud, unproject_depth(s.depth[view], s.mask[view],
                                                 s.cameras[view], int8_t(view)));
        PoseSample ps;
        ps.cloud = sample_cloud(cloud, points, seed + uint64_t(i));
        ps.gt = s.kp3d;
        (i < total - holdout ? train : val).push_back(std::move(ps));
    }

    PoseTrainLog log;
    PoseWeights w = train_pose(train, val, cfg, &log);
    save_pose_weights(out, w);
    for (size_t e = 0; e < log.epoch_train_loss.size(); ++e)
        std::cout << "epoch " << e << " train_loss " << log.epoch_train_loss[e]
                  << " val_mpjpe "
                  << (e < log.epoch_val_mpjpe.size() ? log.epoch_val_mpjpe[e] : 0.0)
                  << "\n";
    return 0;
}

int cmd_render(const std::string& ply, const std::string& camera,
               const std::string& out, int threads, double bg) {
    GaussianSet set = load_ply(ply);
    Camera cam = load_camera(camera);
    RenderOptions opts;
    opts.background = Vec3(bg, bg, bg);
    opts.threads = threads;
    RenderOutput r = render(activate(set), cam, opts);
    fs::create_directories(fs::path(out).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(out).parent_path());
    save_png(out + "_color.png", r.color);
    save_pfm(out + "_depth.pfm", r.depth);
    save_pfm(out + "_alpha.pfm", r.alpha);
    if (r.feature.channels() == 1 || r.feature.channels() == 3)
        save_pfm(out + "_feature.pfm", r.feature);
    std::cout << "rendered " << cam.width << "x" << cam.height << " to "
              << out << "_*.{png,pfm}\n";
    return 0;
}

int cmd_eval(const std::string& data, int sample_idx, const std::string& ply,
             const std::string& decoder_path, const std::string& pose_path,
             int view, bool fps, uint64_t seed, int threads) {
    LoadedSample sample = load_sample(data, sample_idx);
    GaussianSet set = load_ply(ply);
    EvalOptions opts;
    opts.view = view;
    opts.benchmark_fps = fps;
    opts.seed = seed;
    opts.threads = threads;
    DecoderWeights dec;
    PoseWeights pose;
    if (!decoder_path.empty()) {
        dec = load_decoder_weights(decoder_path);
        opts.decoder = &dec;
        opts.shared_channels = (dec.feature_dim == 3 && set.feature_dim != 3);
    }
    if (!pose_path.empty()) {
        pose = load_pose_weights(pose_path);
        opts.pose = &pose;
    }
    MetricReport m = evaluate_scene(set, sample, opts);
    json j{{"psnr", m.psnr},
           {"ssim", m.ssim},
           {"mpjpe", m.mpjpe},
           {"pck", m.pck},
           {"feature_mse", m.feature_mse},
           {"fps", m.fps}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

// small-scene finite-difference audit of the renderer's backward pass
int cmd_gradcheck(uint64_t seed, double tol) {
    Rng rng(seed ^ 0x6763ull);
    const int n = 6, fdim = 2, size = 24;
    GaussianSet raw;
    raw.resize(n, fdim);
    for (int i = 0; i < n; ++i) {
        raw.position[i] = Vec3(rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25),
                               rng.uniform(-0.2, 0.2));
        Vec4 q(1.0 + rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
               rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
        raw.rotation[i] = q;
        double s = std::log(0.12 + rng.uniform(0.0, 0.05));
        raw.scale[i] = Vec3(s, s - 0.2, s + 0.1);
        raw.opacity[i] = logit(rng.uniform(0.4, 0.9));
        raw.color[i] = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1),
                            rng.uniform(-1, 1));
        for (int k = 0; k < fdim; ++k)
            raw.feature[i][k] = rng.uniform(-1, 1);
    }
    Camera cam;
    cam.width = cam.height = size;
    cam.fx = cam.fy = 1.2 * size;
    cam.cx = cam.cy = size / 2.0;
    cam.world_to_camera.setZero();
    cam.world_to_camera.leftCols<3>() = Mat3::Identity();
    cam.world_to_camera(2, 3) = 2.0;

    RenderAdjoint adjoint;
    adjoint.color = Image(size, size, 3);
    adjoint.feature = Image(size, size, fdim);
    adjoint.depth = Image(size, size, 1);
    adjoint.alpha = Image(size, size, 1);
    Rng arng(seed ^ 0x616463ull);
    auto fill = [&](Image& im) {
        for (double& v : im.data()) v = arng.uniform(-1.0, 1.0);
    };
    fill(adjoint.color);
    fill(adjoint.feature);
    fill(adjoint.depth);
    fill(adjoint.alpha);

    auto pack = [&](const GaussianSet& g) {
        std::vector<double> flat;
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < 3; ++k) flat.push_back(g.position[i][k]);
            for (int k = 0; k < 4; ++k) flat.push_back(g.rotation[i][k]);
            for (int k = 0; k < 3; ++k) flat.push_back(g.scale[i][k]);
            flat.push_back(g.opacity[i]);
            for (int k = 0; k < 3; ++k) flat.push_back(g.color[i][k]);
            for (int k = 0; k < fdim; ++k) flat.push_back(g.feature[i][k]);
        }
        return flat;
    };
    const int stride = 14 + fdim;
    auto unpack = [&](std::span<const double> flat) {
        GaussianSet g;
        g.resize(n, fdim);
        for (int i = 0; i < n; ++i) {
            const double* p = flat.data() + size_t(i) * stride;
            for (int k = 0; k < 3; ++k) g.position[i][k] = p[k];
            for (int k = 0; k < 4; ++k) g.rotation[i][k] = p[3 + k];
            for (int k = 0; k < 3; ++k) g.scale[i][k] = p[7 + k];
            g.opacity[i] = p[10];
            for (int k = 0; k < 3; ++k) g.color[i][k] = p[11 + k];
            for (int k = 0; k < fdim; ++k) g.feature[i][k] = p[14 + k];
        }
        return g;
    };
    auto loss_of = [&](std::span<const double> flat, RenderStats* stats) {
        GaussianSet g = unpack(flat);
        RenderOptions opts;
        opts.stats = stats;
        RenderOutput out = render(activate(g), cam, opts);
        double l = 0;
        auto dot = [](const Image& a, const Image& b) {
            double s = 0;
            for (size_t i = 0; i < a.data().size(); ++i)
                s += a.data()[i] * b.data()[i];
            return s;
        };
        l += dot(out.color, adjoint.color);
        l += dot(out.feature, adjoint.feature);
        l += dot(out.depth, adjoint.depth);
        l += dot(out.alpha, adjoint.alpha);
        return l;
    };

    ActivatedGaussians act = activate(raw);
    GradientBundle g = backward_render(raw, act, cam, adjoint);
    std::vector<double> analytic;
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) analytic.push_back(g.position[i][k]);
        for (int k = 0; k < 4; ++k) analytic.push_back(g.rotation[i][k]);
        for (int k = 0; k < 3; ++k) analytic.push_back(g.scale[i][k]);
        analytic.push_back(g.opacity[i]);
        for (int k = 0; k < 3; ++k) analytic.push_back(g.color[i][k]);
        for (int k = 0; k < fdim; ++k) analytic.push_back(g.feature[i][k]);
    }

    std::vector<double> params = pack(raw);
    RenderStats base;
    loss_of(params, &base);
    auto skip = [&](int idx) {
        // skip coordinates whose probe crosses a compositing discontinuity
        std::vector<double> p = params;
        const double eps = 1e-4;
        p[idx] = params[idx] + eps;
        RenderStats plus;
        loss_of(p, &plus);
        p[idx] = params[idx] - eps;
        RenderStats minus;
        loss_of(p, &minus);
        return plus.contributions != base.contributions ||
               minus.contributions != base.contributions ||
               plus.clamped != base.clamped || minus.clamped != base.clamped ||
               plus.order_hash != base.order_hash ||
               minus.order_hash != base.order_hash;
    };
    int skipped = 0;
    double err = finite_diff_check(
        [&](std::span<const double> p) { return loss_of(p, nullptr); }, params,
        analytic, 1e-4, skip, &skipped);

    std::cout << "gradcheck max relative error " << err << " (" << skipped
              << " skipped of " << params.size() << ")\n";
    if (!(err < tol)) {
        std::cerr << "gradcheck failed: " << err << " >= " << tol << "\n";
        return 2;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian feature-splatting toolkit"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a procedural dataset");
    std::string gen_out = "data";
    int gen_count = 8, gen_size = 128, gen_views = 8;
    uint64_t gen_seed = 0;
    int gen_threads = default_threads();
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--count", gen_count, "number of samples");
    gen->add_option("--seed", gen_seed, "base seed");
    gen->add_option("--image-size", gen_size, "square image size");
    gen->add_option("--views", gen_views, "cameras per sample");
    gen->add_option("--threads", gen_threads, "worker threads");

    // optimize
    auto* opt = app.add_subcommand("optimize", "fit Gaussians to one sample");
    std::string opt_data = "data", opt_out = "run", opt_cfg, opt_pose;
    int opt_sample = 0;
    OptimizeConfig ocfg;
    opt->add_option("--data", opt_data, "dataset directory");
    opt->add_option("--sample", opt_sample, "sample index");
    opt->add_option("--out", opt_out, "output directory");
    opt->add_option("--config", opt_cfg, "key=value config file");
    opt->add_option("--iters", ocfg.iterations, "optimization iterations");
    opt->add_option("--seed", ocfg.seed, "seed");
    opt->add_option("--threads", ocfg.threads, "worker threads");
    opt->add_option("--pose-weights", opt_pose, "pretrained pose checkpoint");
    opt->add_option("--pose-every", ocfg.pose_every, "pose step cadence");
    opt->add_option("--checkpoint-every", ocfg.checkpoint_every,
                    "checkpoint cadence (0 = off)");
    opt->add_option("--max-init-points", ocfg.max_init_points,
                    "initial Gaussian budget");
    int opt_holdout = -1;
    opt->add_option("--hold-out", opt_holdout,
                    "train on every view except this one");
    bool no_depth = false, no_feature = false, shared = false, use_pose = false;
    opt->add_flag("--no-depth", no_depth, "disable the depth loss");
    opt->add_flag("--no-feature", no_feature, "disable the feature loss");
    opt->add_flag("--shared-channels", shared,
                  "decode embeddings from color instead of feature channels");
    opt->add_flag("--use-pose", use_pose, "enable the pose refinement step");

    // train-pose
    auto* tp = app.add_subcommand("train-pose", "train a pose regressor");
    std::string tp_data = "data", tp_backbone = "hybrid", tp_out = "pose.ckpt";
    int tp_epochs = 30, tp_batch = 16, tp_holdout = 0, tp_points = 1024;
    double tp_lr = 1e-3;
    uint64_t tp_seed = 0;
    int tp_threads = default_threads();
    tp->add_option("--data", tp_data, "dataset directory");
    tp->add_option("--backbone", tp_backbone, "pointnet|dgcnn|hybrid");
    tp->add_option("--out", tp_out, "checkpoint path");
    tp->add_option("--epochs", tp_epochs, "training epochs");
    tp->add_option("--lr", tp_lr, "learning rate");
    tp->add_option("--batch-size", tp_batch, "mini-batch size");
    tp->add_option("--seed", tp_seed, "seed");
    tp->add_option("--threads", tp_threads, "worker threads");
    tp->add_option("--holdout", tp_holdout, "samples held out for validation");
    tp->add_option("--points", tp_points, "points sampled per cloud");

    // render
    auto* rd = app.add_subcommand("render", "render a saved Gaussian set");
    std::string rd_ply, rd_cam, rd_out = "render";
    int rd_threads = default_threads();
    double rd_bg = 0.0;
    rd->add_option("--ply", rd_ply, "gaussian PLY")->required();
    rd->add_option("--camera", rd_cam, "camera JSON")->required();
    rd->add_option("--out", rd_out, "output path prefix");
    rd->add_option("--threads", rd_threads, "worker threads");
    rd->add_option("--background", rd_bg, "background gray level");

    // eval
    auto* ev = app.add_subcommand("eval", "metrics of a fitted scene");
    std::string ev_data = "data", ev_ply, ev_dec, ev_pose;
    int ev_sample = 0, ev_view = -1, ev_threads = default_threads();
    bool ev_fps = false;
    uint64_t ev_seed = 0;
    ev->add_option("--data", ev_data, "dataset directory");
    ev->add_option("--sample", ev_sample, "sample index");
    ev->add_option("--ply", ev_ply, "gaussian PLY")->required();
    ev->add_option("--decoder", ev_dec, "decoder checkpoint");
    ev->add_option("--pose", ev_pose, "pose checkpoint");
    ev->add_option("--view", ev_view, "view index (-1 = target view)");
    ev->add_flag("--fps", ev_fps, "benchmark render throughput");
    ev->add_option("--seed", ev_seed, "seed");
    ev->add_option("--threads", ev_threads, "worker threads");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    uint64_t gc_seed = 1;
    double gc_tol = 1e-3;
    gc->add_option("--seed", gc_seed, "scene seed");
    gc->add_option("--tol", gc_tol, "max relative error tolerance");

    try {
        app.parse(argc, argv);
        if (gen->parsed())
            return cmd_gen(gen_out, gen_count, gen_seed, gen_size, gen_views,
                           gen_threads);
        if (opt->parsed()) {
            ocfg.use_depth = !no_depth;
            ocfg.use_feature = !no_feature;
            ocfg.shared_channels = shared;
            ocfg.use_pose = use_pose;
            ocfg.pose_weights_path = opt_pose;
            if (ocfg.checkpoint_every > 0) ocfg.checkpoint_dir = opt_out;
            return cmd_optimize(opt_data, opt_sample, opt_out, ocfg, opt_cfg,
                                opt_holdout);
        }
        if (tp->parsed())
            return cmd_train_pose(tp_data, tp_backbone, tp_out, tp_epochs, tp_lr,
                                  tp_batch, tp_seed, tp_threads, tp_holdout,
                                  tp_points);
        if (rd->parsed())
            return cmd_render(rd_ply, rd_cam, rd_out, rd_threads, rd_bg);
        if (ev->parsed())
            return cmd_eval(ev_data, ev_sample, ev_ply, ev_dec, ev_pose, ev_view,
                            ev_fps, ev_seed, ev_threads);
        if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_tol);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) ? 1 : 0;
    } catch (const numerical_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
