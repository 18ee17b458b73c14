// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hfg/losses.hpp"
#include "hfg/posenet.hpp"
#include "hfg/rng.hpp"

#include <algorithm>

using namespace hfg;

namespace {

SampledCloud random_cloud(uint64_t seed, int n) {
    Rng rng(seed);
    MatX pts(n, 3);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) pts(i, k) = rng.normal();
    SampledCloud c;
    c.centroid = pts.colwise().mean().transpose();
    c.points = pts.rowwise() - c.centroid.transpose();
    return c;
}

void zero_weights(PoseWeights& w) {
    for (auto* branch : {&w.global_mlp, &w.edge_mlp, &w.head})
        for (auto& l : *branch) {
            l.weight.setZero();
            l.bias.setZero();
        }
}

// Mixes the branch-selection structure of a forward pass into one value so a
// finite-difference probe can tell when it crossed a kink or an argmax flip.
uint64_t structure_signature(const PoseWeights& w, const SampledCloud& cloud) {
    PoseForwardCache c;
    forward_pose(cloud, w, &c);
    uint64_t h = 1469598103934665603ull;
    auto mix = [&](uint64_t v) { h = (h ^ v) * 1099511628211ull; };
    auto mix_signs = [&](const std::vector<MatX>& ms) {
        for (const auto& m : ms)
            for (int i = 0; i < m.size(); ++i) mix(m.data()[i] > 0 ? 1 : 2);
    };
    mix_signs(c.g_pre);
    mix_signs(c.e_pre);
    for (const auto& v : c.h_pre)
        for (int i = 0; i < v.size(); ++i) mix(v[i] > 0 ? 1 : 2);
    for (int v : c.g_argmax) mix(uint64_t(v) + 11);
    for (int v : c.e_argmax) mix(uint64_t(v) + 13);
    for (int v : c.e_nbr_argmax) mix(uint64_t(v) + 17);
    return h;
}

double head_dot(const PoseWeights& w, const SampledCloud& cloud, const VecX& adj) {
    PoseForwardCache c;
    forward_pose(cloud, w, &c);
    return adj.dot(c.output);
}

} // namespace

TEST_CASE("backbone names round-trip") {
    for (Backbone b : {Backbone::PointNet, Backbone::Dgcnn, Backbone::Hybrid})
        CHECK(backbone_from_name(backbone_name(b)) == b);
    CHECK_THROWS_AS(backbone_from_name("resnet"), std::invalid_argument);
}

TEST_CASE("knn_graph matches a brute-force oracle") {
    Rng rng(4);
    int n = 30, k = 5;
    MatX pts(n, 3);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) pts(i, c) = rng.uniform(-1, 1);
    Eigen::MatrixXi g = knn_graph(pts, k);
    REQUIRE(g.rows() == n);
    REQUIRE(g.cols() == k);
    for (int i = 0; i < n; ++i) {
        std::vector<int> order;
        for (int j = 0; j < n; ++j)
            if (j != i) order.push_back(j);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            double da = (pts.row(a) - pts.row(i)).squaredNorm();
            double db = (pts.row(b) - pts.row(i)).squaredNorm();
            if (da != db) return da < db;
            return a < b;
        });
        for (int s = 0; s < k; ++s) {
            CHECK(g(i, s) == order[s]);
            CHECK(g(i, s) != i);
        }
    }
}

TEST_CASE("knn_graph handles collinear points and rejects tiny clouds") {
    MatX pts(5, 3);
    for (int i = 0; i < 5; ++i) pts.row(i) = Vec3(i, 0, 0).transpose();
    Eigen::MatrixXi g = knn_graph(pts, 2);
    CHECK(g(0, 0) == 1);
    CHECK(g(0, 1) == 2);
    CHECK(g(2, 0) == 1); // ties (1 and 3 both at distance 1) break to lower index
    CHECK(g(2, 1) == 3);
    CHECK_THROWS_AS(knn_graph(pts, 5), std::invalid_argument);
}

TEST_CASE("param_count matches the closed-form layer arithmetic and flatten") {
    for (Backbone b : {Backbone::PointNet, Backbone::Dgcnn, Backbone::Hybrid}) {
        PoseWeights w = init_pose_weights(b, 3, 1);
        size_t expect = 0;
        for (auto* branch : {&w.global_mlp, &w.edge_mlp, &w.head})
            for (auto& l : *branch) expect += size_t(l.out()) * l.in() + l.out();
        CHECK(w.param_count() == expect);
        CHECK(w.flatten().size() == expect);
    }
    // explicit arithmetic for the hybrid head: (256+128)->256->128->57
    PoseWeights h = init_pose_weights(Backbone::Hybrid, 3, 0);
    CHECK(h.head_input_width() == 384);
    size_t head = 384 * 256 + 256 + 256 * 128 + 128 + 128 * 57 + 57;
    size_t global = 3 * 64 + 64 + 64 * 128 + 128 + 128 * 256 + 256;
    size_t edge = 6 * 64 + 64 + 64 * 128 + 128;
    CHECK(h.param_count() == head + global + edge);
}

TEST_CASE("flatten/unflatten round-trips bitwise") {
    PoseWeights w = init_pose_weights(Backbone::Hybrid, 2, 5, 4);
    std::vector<double> flat = w.flatten();
    PoseWeights w2 = init_pose_weights(Backbone::Hybrid, 2, 99, 4);
    w2.unflatten(flat);
    CHECK(w2.flatten() == flat);
}

TEST_CASE("zero weights predict the centroid for every joint") {
    PoseWeights w = init_pose_weights(Backbone::Hybrid, 3, 0, 4);
    zero_weights(w);
    SampledCloud cloud = random_cloud(1, 20);
    cloud.centroid = Vec3(0.4, -0.7, 1.2);
    KeypointSet out = forward_pose(cloud, w);
    for (const Vec3& j : out.joints) CHECK((j - cloud.centroid).norm() < 1e-12);

    PoseWeights w2 = init_pose_weights(Backbone::PointNet, 2, 0);
    zero_weights(w2);
    KeypointSet out2 = forward_pose(cloud, w2);
    for (const Vec3& j : out2.joints) CHECK(j.head<2>().norm() == 0.0);
}

TEST_CASE("forward_pose is invariant under point permutation") {
    for (Backbone b : {Backbone::PointNet, Backbone::Dgcnn, Backbone::Hybrid}) {
        PoseWeights w = init_pose_weights(b, 3, 7, 4);
        SampledCloud cloud = random_cloud(2, 24);
        KeypointSet a = forward_pose(cloud, w);
        SampledCloud shuffled = cloud;
        int n = int(cloud.points.rows());
        for (int i = 0; i < n; ++i)
            shuffled.points.row(i) = cloud.points.row((i * 7 + 3) % n);
        KeypointSet c = forward_pose(shuffled, w);
        for (int j = 0; j < kNumJoints; ++j)
            CHECK((a.joints[j] - c.joints[j]).norm() < 1e-12);
    }
}

TEST_CASE("forward_pose matches an independent straight-line PointNet oracle") {
    PoseWeights w = init_pose_weights(Backbone::PointNet, 3, 11);
    SampledCloud cloud = random_cloud(3, 10);

    auto lrelu = [](double x) { return x > 0 ? x : kLeakySlope * x; };
    int n = int(cloud.points.rows());
    // shared per-point MLP, plain loops
    MatX h = cloud.points;
    for (const Linear& l : w.global_mlp) {
        MatX z(n, l.out());
        for (int i = 0; i < n; ++i)
            for (int o = 0; o < l.out(); ++o) {
                double s = l.bias[o];
                for (int c = 0; c < l.in(); ++c) s += l.weight(o, c) * h(i, c);
                z(i, o) = lrelu(s);
            }
        h = z;
    }
    VecX pool = h.colwise().maxCoeff().transpose();
    VecX v = pool;
    for (size_t li = 0; li < w.head.size(); ++li) {
        const Linear& l = w.head[li];
        VecX z = l.weight * v + l.bias;
        if (li + 1 < w.head.size())
            for (int i = 0; i < z.size(); ++i) z[i] = lrelu(z[i]);
        v = z;
    }
    KeypointSet got = forward_pose(cloud, w);
    for (int j = 0; j < kNumJoints; ++j) {
        Vec3 expect = v.segment(j * 3, 3) + cloud.centroid;
        CHECK((got.joints[j] - expect).norm() < 1e-10);
    }
}

TEST_CASE("backward_pose matches central differences on sampled coordinates") {
    for (Backbone b : {Backbone::PointNet, Backbone::Dgcnn, Backbone::Hybrid}) {
        PoseWeights w = init_pose_weights(b, 3, 21, 4);
        SampledCloud cloud = random_cloud(4, 12);
        Rng rng(5);
        VecX adj(kNumJoints * 3);
        for (int i = 0; i < adj.size(); ++i) adj[i] = rng.uniform(-1, 1);

        PoseForwardCache cache;
        forward_pose(cloud, w, &cache);
        PoseGradients g = backward_pose(w, cache, adj);
        std::vector<double> flat = w.flatten();
        std::vector<double> gflat = g.flatten();
        REQUIRE(gflat.size() == flat.size());

        uint64_t base_sig = structure_signature(w, cloud);
        double eps = 1e-5;
        int checked = 0, skipped = 0;
        for (int probe = 0; probe < 60; ++probe) {
            size_t idx = rng.next() % flat.size();
            PoseWeights wp = w;
            std::vector<double> f2 = flat;
            f2[idx] += eps;
            wp.unflatten(f2);
            if (structure_signature(wp, cloud) != base_sig) { ++skipped; continue; }
            double hi = head_dot(wp, cloud, adj);
            f2[idx] = flat[idx] - eps;
            wp.unflatten(f2);
            if (structure_signature(wp, cloud) != base_sig) { ++skipped; continue; }
            double lo = head_dot(wp, cloud, adj);
            double num = (hi - lo) / (2 * eps);
            double den = std::max({std::abs(num), std::abs(gflat[idx]), 1e-6});
            CAPTURE(idx);
            CHECK(std::abs(num - gflat[idx]) / den < 1e-4);
            ++checked;
        }
        CAPTURE(backbone_name(b));
        CHECK(checked >= 40);
        CHECK(skipped <= 20);
    }
}

TEST_CASE("train_pose: zero learning rate leaves the weights unchanged") {
    std::vector<PoseSample> train(2), holdout;
    for (int i = 0; i < 2; ++i) {
        train[i].cloud = random_cloud(10 + i, 24);
        train[i].gt = KeypointSet(3);
    }
    PoseTrainConfig cfg;
    cfg.backbone = Backbone::PointNet;
    cfg.epochs = 2;
    cfg.lr = 0.0;
    cfg.batch_size = 2;
    cfg.seed = 3;
    PoseWeights init = init_pose_weights(cfg.backbone, cfg.dim, cfg.seed, cfg.knn_k);
    PoseWeights out = train_pose(train, holdout, cfg);
    CHECK(out.flatten() == init.flatten());
}

TEST_CASE("train_pose is deterministic per seed") {
    std::vector<PoseSample> train(3), holdout(1);
    Rng rng(20);
    for (int i = 0; i < 3; ++i) {
        train[i].cloud = random_cloud(30 + i, 20);
        for (auto& j : train[i].gt.joints)
            j = Vec3(rng.normal(), rng.normal(), rng.normal());
    }
    holdout[0].cloud = random_cloud(40, 20);
    PoseTrainConfig cfg;
    cfg.backbone = Backbone::Hybrid;
    cfg.knn_k = 4;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.seed = 9;
    auto t2 = train, h2 = holdout;
    PoseWeights a = train_pose(train, holdout, cfg);
    PoseWeights b = train_pose(t2, h2, cfg);
    CHECK(a.flatten() == b.flatten());
}

TEST_CASE("train_pose overfits a single sample") {
    std::vector<PoseSample> train(1), holdout;
    train[0].cloud = random_cloud(50, 32);
    Rng rng(51);
    for (auto& j : train[0].gt.joints)
        j = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    PoseTrainConfig cfg;
    cfg.backbone = Backbone::PointNet;
    cfg.epochs = 60;
    cfg.lr = 1e-3;
    cfg.weight_decay = 0.0;
    cfg.batch_size = 1;
    cfg.seed = 1;
    PoseWeights init = init_pose_weights(cfg.backbone, cfg.dim, cfg.seed, cfg.knn_k);
    double before = eval_pose_mpjpe(init, train, 1);
    PoseWeights out = train_pose(train, holdout, cfg);
    double after = eval_pose_mpjpe(out, train, 1);
    CHECK(after < 0.5 * before);
}

TEST_CASE("eval_pose_mpjpe agrees with the metric applied per sample") {
    PoseWeights w = init_pose_weights(Backbone::PointNet, 3, 2);
    std::vector<PoseSample> samples(3);
    Rng rng(60);
    double expect = 0;
    for (int i = 0; i < 3; ++i) {
        samples[i].cloud = random_cloud(70 + i, 16);
        for (auto& j : samples[i].gt.joints)
            j = Vec3(rng.normal(), rng.normal(), rng.normal());
    }
    for (int i = 0; i < 3; ++i)
        expect += mpjpe(forward_pose(samples[i].cloud, w), samples[i].gt) / 3.0;
    CHECK(eval_pose_mpjpe(w, samples, 2) == doctest::Approx(expect).epsilon(1e-12));
}
