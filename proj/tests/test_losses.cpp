// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hfg/losses.hpp"
#include "hfg/rng.hpp"

#include <functional>

using namespace hfg;

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

Image constant_image(int w, int h, int c, double v) { return Image(w, h, c, v); }

Image random_image(uint64_t seed, int w, int h, int c, double lo = 0.0, double hi = 1.0) {
    Rng rng(seed);
    Image im(w, h, c);
    for (double& v : im.data()) v = rng.uniform(lo, hi);
    return im;
}

Mask full_mask(int w, int h) { return Mask(w, h, 1); }

KeypointSet random_kps(uint64_t seed, int dim) {
    Rng rng(seed);
    KeypointSet k(dim);
    for (auto& j : k.joints)
        for (int d = 0; d < dim; ++d) j[d] = rng.uniform(-2, 2);
    return k;
}

// independent central differences over a subset of coordinates
void fd_image(Image& x, const std::function<double()>& f, const Image& analytic,
              uint64_t seed, double eps = 1e-6, int probes = 40,
              double near_kink = -1.0, const Image* kink_ref = nullptr) {
    Rng pick(seed);
    for (int p = 0; p < probes; ++p) {
        size_t idx = pick.next() % x.data().size();
        if (near_kink > 0 && kink_ref &&
            std::abs(x.data()[idx] - kink_ref->data()[idx]) < near_kink)
            continue; // |.| is not differentiable near the reference value
        double save = x.data()[idx];
        x.data()[idx] = save + eps;
        double hi = f();
        x.data()[idx] = save - eps;
        double lo = f();
        x.data()[idx] = save;
        double num = (hi - lo) / (2 * eps);
        double a = analytic.data()[idx];
        double den = std::max({std::abs(num), std::abs(a), 1e-6});
        CAPTURE(idx);
        CHECK(std::abs(num - a) / den < 1e-4);
    }
}

} // namespace

TEST_CASE("ssim of an image with itself is 1") {
    Image a = random_image(1, 16, 13, 3);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim of constant 0 vs constant 1 has a closed form") {
    Image a = constant_image(14, 14, 3, 0.0);
    Image b = constant_image(14, 14, 3, 1.0);
    // means 0 and 1, zero variances: ssim = C1*C2 / ((1+C1)*C2) = C1/(1+C1)
    CHECK(ssim(a, b) == doctest::Approx(kC1 / (1.0 + kC1)).epsilon(1e-12));
}

TEST_CASE("ssim of constant images with equal means is 1") {
    Image a = constant_image(12, 12, 3, 0.4);
    CHECK(ssim(a, a) == doctest::Approx(1.0));
}

TEST_CASE("ssim stays close to 1 under tiny noise") {
    Image a = random_image(2, 20, 20, 3, 0.3, 0.7);
    Image b = a;
    Rng rng(3);
    for (double& v : b.data()) v += rng.uniform(-1e-4, 1e-4);
    double s = ssim(a, b);
    CHECK(s > 0.99);
    CHECK(s <= 1.0 + 1e-12);
}

TEST_CASE("ssim rejects images smaller than the window") {
    Image a = constant_image(10, 12, 3, 0.5);
    CHECK_THROWS_AS(ssim(a, a), std::invalid_argument);
}

TEST_CASE("loss_image on constant images has a closed form") {
    int w = 13, h = 13;
    Image pred = constant_image(w, h, 3, 0.2);
    Image gt = constant_image(w, h, 3, 0.3);
    double s = (2 * 0.2 * 0.3 + kC1) / (0.2 * 0.2 + 0.3 * 0.3 + kC1); // contrast term = 1
    double expect = kImageMaeWeight * 0.1 + kImageSsimWeight * (1.0 - s);
    double mae = 0, sd = 0;
    CHECK(loss_image(pred, gt, full_mask(w, h), &mae, &sd) ==
          doctest::Approx(expect).epsilon(1e-9));
    CHECK(mae == doctest::Approx(0.1));
    CHECK(sd == doctest::Approx(1.0 - s).epsilon(1e-9));
}

TEST_CASE("loss_image: identical images under a partial mask give exactly 0") {
    Image a = random_image(4, 16, 16, 3);
    Mask m(16, 16, 0);
    m(3, 3) = m(8, 9) = 1;
    CHECK(loss_image(a, a, m) == doctest::Approx(0.0));
    Mask empty(16, 16, 0);
    CHECK_THROWS_AS(loss_image(a, a, empty), std::invalid_argument);
}

TEST_CASE("loss_image MAE term uses only masked pixels") {
    int w = 12, h = 12;
    Image pred = constant_image(w, h, 3, 0.5);
    Image gt = pred;
    Mask m(w, h, 0);
    m(2, 2) = 1;
    Image pred2 = pred;
    pred2(2, 2, 0) = 0.8; // only channel 0 differs at the masked pixel
    double mae = 0, sd = 0;
    loss_image(pred2, gt, m, &mae, &sd);
    CHECK(mae == doctest::Approx(0.3 / 3.0)); // mean over 3 channels of 1 pixel
    pred2(9, 9, 1) = 0.0; // big unmasked change: MAE must not move
    double mae2 = 0;
    loss_image(pred2, gt, m, &mae2, &sd);
    CHECK(mae2 == doctest::Approx(mae));
}

TEST_CASE("loss_depth decay weighting") {
    int w = 4, h = 4;
    DepthMap gt = constant_image(w, h, 1, 2.0);
    DepthMap p1 = constant_image(w, h, 1, 2.5); // error 0.5
    DepthMap p2 = constant_image(w, h, 1, 1.8); // error 0.2
    Mask m = full_mask(w, h);
    CHECK(loss_depth({p1}, gt, m) == doctest::Approx(0.5));
    CHECK(loss_depth({p1, p2}, gt, m) == doctest::Approx(0.9 * 0.5 + 0.2));
    CHECK(loss_depth({gt, gt}, gt, m) == doctest::Approx(0.0));
    CHECK_THROWS_AS(loss_depth({}, gt, m), std::invalid_argument);
}

TEST_CASE("loss_pose normalization and oracle") {
    KeypointSet gt = random_kps(5, 3);
    KeypointSet pred = gt;
    pred.joints[4] += Vec3(1, 0, 0);
    CHECK(loss_pose(pred, gt) == doctest::Approx(1.0 / (kNumJoints * 3)));

    KeypointSet pred2 = random_kps(6, 3);
    double sum = 0;
    for (int j = 0; j < kNumJoints; ++j)
        sum += (pred2.joints[j] - gt.joints[j]).squaredNorm();
    CHECK(loss_pose(pred2, gt) == doctest::Approx(sum / (kNumJoints * 3)).epsilon(1e-12));

    KeypointSet two(2);
    CHECK_THROWS_AS(loss_pose(two, gt), std::invalid_argument);
}

TEST_CASE("loss_feature is a masked mean absolute error") {
    int w = 6, h = 6, c = 4;
    Image gt = random_image(7, w, h, c);
    Image pred = gt;
    for (double& v : pred.data()) v += 0.25;
    CHECK(loss_feature(pred, gt, full_mask(w, h)) == doctest::Approx(0.25).epsilon(1e-12));
    Mask empty(w, h, 0);
    CHECK_THROWS_AS(loss_feature(pred, gt, empty), std::invalid_argument);
}

TEST_CASE("psnr") {
    Image a = random_image(8, 12, 12, 3);
    CHECK(std::isinf(psnr(a, a)));
    Image b = a;
    for (double& v : b.data()) v += 0.1; // MSE = 0.01
    CHECK(psnr(b, a) == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("mpjpe") {
    KeypointSet gt = random_kps(9, 3);
    CHECK(mpjpe(gt, gt) == doctest::Approx(0.0));
    KeypointSet pred = gt;
    Rng rng(10);
    for (auto& j : pred.joints) {
        Vec3 dir(rng.normal(), rng.normal(), rng.normal());
        j += dir.normalized(); // each joint exactly 1 away
    }
    CHECK(mpjpe(pred, gt) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pck identities, misses and translation invariance") {
    KeypointSet gt = random_kps(11, 2);
    CHECK(pck(gt, gt) == doctest::Approx(1.0));

    Vec2 torso(gt.joints[5].x() - gt.joints[9].x(),
               gt.joints[5].y() - gt.joints[9].y());
    double diam = torso.norm();
    KeypointSet far = gt;
    for (auto& j : far.joints) j += Vec3(10 * diam, 0, 0);
    CHECK(pck(far, gt) == doctest::Approx(0.0));

    // translating both sets together changes nothing
    KeypointSet pred = random_kps(12, 2);
    double base = pck(pred, gt);
    KeypointSet predt = pred, gtt = gt;
    for (auto& j : predt.joints) j += Vec3(3.5, -1.25, 0);
    for (auto& j : gtt.joints) j += Vec3(3.5, -1.25, 0);
    CHECK(pck(predt, gtt) == doctest::Approx(base));

    KeypointSet degen = gt;
    degen.joints[5] = degen.joints[9];
    CHECK_THROWS_AS(pck(gt, degen), std::invalid_argument);
    CHECK_THROWS_AS(pck(random_kps(13, 3), random_kps(14, 3)), std::invalid_argument);
}

TEST_CASE("pck matches a brute-force oracle on random cases") {
    Rng rng(15);
    for (int trial = 0; trial < 50; ++trial) {
        KeypointSet gt = random_kps(100 + trial, 2);
        KeypointSet pred = gt;
        for (auto& j : pred.joints)
            j += Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0);
        double ratio = rng.uniform(0.05, 0.5);
        Vec2 torso(gt.joints[5].x() - gt.joints[9].x(),
                   gt.joints[5].y() - gt.joints[9].y());
        double thresh = ratio * torso.norm();
        int hits = 0;
        for (int j = 0; j < kNumJoints; ++j) {
            double dx = pred.joints[j].x() - gt.joints[j].x();
            double dy = pred.joints[j].y() - gt.joints[j].y();
            if (std::sqrt(dx * dx + dy * dy) <= thresh) ++hits;
        }
        CHECK(pck(pred, gt, ratio) ==
              doctest::Approx(double(hits) / kNumJoints).epsilon(1e-12));
    }
}

TEST_CASE("feature_mse") {
    int w = 5, h = 5, c = 3;
    Image gt = random_image(16, w, h, c);
    Image pred = gt;
    for (double& v : pred.data()) v += 0.2;
    CHECK(feature_mse(pred, gt, full_mask(w, h)) == doctest::Approx(0.04).epsilon(1e-12));
    CHECK_THROWS_AS(feature_mse(pred, gt, Mask(w, h, 0)), std::invalid_argument);
}

TEST_CASE("ssim_backward matches central differences") {
    Image gt = random_image(17, 13, 13, 3, 0.2, 0.8);
    Image pred = random_image(18, 13, 13, 3, 0.2, 0.8);
    Image grad = ssim_backward(pred, gt);
    fd_image(pred, [&] { return ssim(pred, gt); }, grad, 19);
}

TEST_CASE("loss_image_backward matches central differences") {
    Image gt = random_image(20, 13, 13, 3, 0.2, 0.8);
    Image pred = random_image(21, 13, 13, 3, 0.2, 0.8);
    Mask m = full_mask(13, 13);
    Image grad = loss_image_backward(pred, gt, m);
    fd_image(pred, [&] { return loss_image(pred, gt, m); }, grad, 22,
             1e-6, 40, 1e-5, &gt);
}

TEST_CASE("loss_depth_backward matches central differences") {
    DepthMap gt = random_image(23, 9, 9, 1, 1.0, 3.0);
    DepthMap pred = random_image(24, 9, 9, 1, 1.0, 3.0);
    Mask m(9, 9, 0);
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 9; ++x) m(x, y) = (x + y) % 3 ? 1 : 0;
    Image grad = loss_depth_backward(pred, gt, m);
    fd_image(pred, [&] { return loss_depth({pred}, gt, m); }, grad, 25,
             1e-6, 40, 1e-5, &gt);
}

TEST_CASE("loss_pose_backward matches central differences") {
    KeypointSet gt = random_kps(26, 3);
    KeypointSet pred = random_kps(27, 3);
    KeypointSet grad = loss_pose_backward(pred, gt);
    double eps = 1e-6;
    for (int j = 0; j < kNumJoints; ++j)
        for (int d = 0; d < 3; ++d) {
            double save = pred.joints[j][d];
            pred.joints[j][d] = save + eps;
            double hi = loss_pose(pred, gt);
            pred.joints[j][d] = save - eps;
            double lo = loss_pose(pred, gt);
            pred.joints[j][d] = save;
            CHECK(grad.joints[j][d] ==
                  doctest::Approx((hi - lo) / (2 * eps)).epsilon(1e-6));
        }
}

TEST_CASE("loss_feature_backward matches central differences") {
    Image gt = random_image(28, 7, 7, 4);
    Image pred = random_image(29, 7, 7, 4);
    Mask m = full_mask(7, 7);
    Image grad = loss_feature_backward(pred, gt, m);
    fd_image(pred, [&] { return loss_feature(pred, gt, m); }, grad, 30,
             1e-6, 40, 1e-5, &gt);
}
