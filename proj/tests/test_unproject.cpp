// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hfg/rng.hpp"
#include "hfg/splat.hpp"
#include "hfg/unproject.hpp"

#include <set>

using namespace hfg;

namespace {

Camera identity_camera(int size = 16, double fx = 20.0) {
    Camera cam;
    cam.width = cam.height = size;
    cam.fx = cam.fy = fx;
    cam.cx = cam.cy = size / 2.0;
    cam.world_to_camera.setZero();
    cam.world_to_camera.leftCols<3>() = Mat3::Identity();
    return cam;
}

PointCloud grid_cloud(int n) {
    PointCloud c;
    for (int i = 0; i < n; ++i)
        c.points.emplace_back(i * 0.1, i * -0.2, 1.0 + i * 0.05);
    c.source_view.assign(n, 0);
    return c;
}

} // namespace

TEST_CASE("unproject_depth: the principal-point pixel maps to the optical axis") {
    Camera cam = identity_camera();
    DepthMap depth(16, 16, 1, 0.0);
    Mask mask(16, 16, 0);
    int cx = 8, cy = 8;
    depth(cx, cy) = 2.5;
    mask(cx, cy) = 1;
    PointCloud pc = unproject_depth(depth, mask, cam, 3);
    REQUIRE(pc.size() == 1);
    // pixel center (8.5, 8.5) is half a pixel off the principal point
    Vec3 expect(0.5 / 20.0 * 2.5, 0.5 / 20.0 * 2.5, 2.5);
    CHECK((pc.points[0] - expect).norm() < 1e-12);
    CHECK(pc.source_view[0] == 3);
    // and it reprojects back onto its own pixel center
    Vec2 px = cam.project_point(pc.points[0]);
    CHECK(px.x() == doctest::Approx(8.5));
    CHECK(px.y() == doctest::Approx(8.5));
}

TEST_CASE("unproject_depth: empty mask and zero-depth pixels give no points") {
    Camera cam = identity_camera();
    DepthMap depth(16, 16, 1, 1.0);
    Mask mask(16, 16, 0);
    CHECK(unproject_depth(depth, mask, cam).size() == 0);

    mask(4, 4) = 1;
    depth(4, 4) = 0.0; // masked but no surface
    CHECK(unproject_depth(depth, mask, cam).size() == 0);
}

TEST_CASE("unproject_depth respects the camera pose") {
    Camera cam = identity_camera();
    cam.world_to_camera.col(3) = Vec3(0.3, -0.2, 1.0);
    DepthMap depth(16, 16, 1, 0.0);
    Mask mask(16, 16, 0);
    depth(5, 11) = 1.7;
    mask(5, 11) = 1;
    PointCloud pc = unproject_depth(depth, mask, cam);
    REQUIRE(pc.size() == 1);
    Vec3 p_cam = cam.to_camera(pc.points[0]);
    CHECK(p_cam.z() == doctest::Approx(1.7));
    Vec2 px = cam.project_point(pc.points[0]);
    CHECK(px.x() == doctest::Approx(5.5));
    CHECK(px.y() == doctest::Approx(11.5));
}

TEST_CASE("merge concatenates left first") {
    PointCloud a = grid_cloud(10), b = grid_cloud(15);
    for (auto& v : b.source_view) v = 1;
    PointCloud m = merge(a, b);
    REQUIRE(m.size() == 25);
    CHECK(m.points[0] == a.points[0]);
    CHECK(m.points[9] == a.points[9]);
    CHECK(m.points[10] == b.points[0]);
    CHECK(m.source_view[9] == 0);
    CHECK(m.source_view[10] == 1);

    PointCloud empty;
    CHECK(merge(empty, a).size() == a.size());
    CHECK(merge(a, empty).size() == a.size());
}

TEST_CASE("sample_cloud: without replacement when large enough, centered") {
    PointCloud c = grid_cloud(50);
    SampledCloud s = sample_cloud(c, 20, 7);
    REQUIRE(s.points.rows() == 20);
    // output points + centroid must all be members of the input (no repeats)
    std::set<std::array<double, 3>> seen;
    for (int i = 0; i < 20; ++i) {
        Vec3 p = s.points.row(i).transpose() + s.centroid;
        bool found = false;
        for (const Vec3& q : c.points)
            if ((p - q).norm() < 1e-9) found = true;
        CHECK(found);
        auto key = std::array<double, 3>{p.x(), p.y(), p.z()};
        CHECK(!seen.count(key));
        seen.insert(key);
    }
    // centered
    Vec3 mean = s.points.colwise().mean().transpose();
    CHECK(mean.norm() < 1e-12);
}

TEST_CASE("sample_cloud: with replacement on small clouds, deterministic") {
    PointCloud c = grid_cloud(5);
    SampledCloud a = sample_cloud(c, 12, 3);
    SampledCloud b = sample_cloud(c, 12, 3);
    REQUIRE(a.points.rows() == 12);
    CHECK((a.points - b.points).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.centroid - b.centroid).norm() == 0.0);
    SampledCloud d = sample_cloud(c, 12, 4);
    CHECK((a.points - d.points).cwiseAbs().maxCoeff() > 0.0); // seed changes the draw

    PointCloud empty;
    CHECK_THROWS_WITH_AS(sample_cloud(empty, 8, 0), "no foreground points",
                         std::invalid_argument);
}

TEST_CASE("render then unproject round-trips the visible surface") {
    // A single opaque blob: unprojected depth points must lie near its center.
    GaussianSet raw;
    raw.resize(1, 1);
    raw.position[0] = Vec3(0.1, -0.05, 2.0);
    raw.scale[0] = Vec3(std::log(0.08), std::log(0.08), std::log(0.08));
    raw.opacity[0] = 6.0;
    Camera cam = identity_camera(32, 40.0);
    RenderOutput out = render(activate(raw), cam);
    Mask mask(32, 32, 0);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            mask(x, y) = out.alpha(x, y) > 0.5 ? 1 : 0;
    REQUIRE(mask.count() > 0);
    PointCloud pc = unproject_depth(out.depth, mask, cam);
    REQUIRE(pc.size() == mask.count());
    for (const Vec3& p : pc.points)
        CHECK((p - raw.position[0]).norm() < 4 * 0.08); // within a few sigma
}
