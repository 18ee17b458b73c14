// SPDX-License-Identifier: Apache-2.0
#include "hfg/scenegen.hpp"

#include "hfg/rng.hpp"
#include "hfg/splat.hpp"
#include "hfg/threading.hpp"

#include <cmath>

namespace hfg {

const int kJointParents[kNumJoints] = {
    1, 8, 1, 2, 3, 1, 5, 6, -1, 8, 9, 10, 8, 12, 13, 0, 0, 15, 16};

namespace {

constexpr int kGaussiansPerBone = 40;

// Rest offsets relative to the parent joint; pelvis entry is the root
// position. The figure faces +z with its right side toward -x.
const Vec3 kRestOffset[kNumJoints] = {
    {0.00, 0.15, 0.05},   // nose (from neck)
    {0.00, 0.45, 0.00},   // neck (from pelvis)
    {-0.18, -0.03, 0.00}, // r-shoulder
    {-0.26, 0.00, 0.00},  // r-elbow
    {-0.24, 0.00, 0.00},  // r-wrist
    {0.18, -0.03, 0.00},  // l-shoulder
    {0.26, 0.00, 0.00},   // l-elbow
    {0.24, 0.00, 0.00},   // l-wrist
    {0.00, 1.00, 0.00},   // pelvis (root position)
    {-0.09, -0.05, 0.00}, // r-hip
    {0.00, -0.40, 0.00},  // r-knee
    {0.00, -0.40, 0.00},  // r-ankle
    {0.09, -0.05, 0.00},  // l-hip
    {0.00, -0.40, 0.00},  // l-knee
    {0.00, -0.40, 0.00},  // l-ankle
    {-0.03, 0.04, 0.00},  // r-eye (from nose)
    {0.03, 0.04, 0.00},   // l-eye
    {-0.04, 0.00, -0.05}, // r-ear (from r-eye)
    {0.04, 0.00, -0.05},  // l-ear
};

// articulation range per joint, radians (applied per Euler axis)
double joint_range(int j) {
    switch (j) {
        case 2: case 5:           // shoulders
        case 9: case 12:          // hips
            return 60.0 * M_PI / 180.0;
        case 3: case 6:           // elbows
        case 10: case 13:         // knees
            return 60.0 * M_PI / 180.0;
        case 1: case 0:           // neck, head
            return 20.0 * M_PI / 180.0;
        default:
            return 0.0;
    }
}

Mat3 euler_zyx(double ax, double ay, double az) {
    Mat3 rx, ry, rz;
    rx << 1, 0, 0, 0, std::cos(ax), -std::sin(ax), 0, std::sin(ax), std::cos(ax);
    ry << std::cos(ay), 0, std::sin(ay), 0, 1, 0, -std::sin(ay), 0, std::cos(ay);
    rz << std::cos(az), -std::sin(az), 0, std::sin(az), std::cos(az), 0, 0, 0, 1;
    return rz * ry * rx;
}

// quaternion (w,x,y,z) rotating the +x axis onto the unit direction d
Vec4 quat_from_x_axis(const Vec3& d) {
    Vec3 x(1, 0, 0);
    double c = x.dot(d);
    if (c > 1.0 - 1e-12) return Vec4(1, 0, 0, 0);
    if (c < -1.0 + 1e-12) return Vec4(0, 0, 0, 1); // 180 deg about z
    Vec3 axis = x.cross(d).normalized();
    double half = std::acos(std::clamp(c, -1.0, 1.0)) * 0.5;
    double s = std::sin(half);
    return Vec4(std::cos(half), axis.x() * s, axis.y() * s, axis.z() * s);
}

// distinct per-bone base colors (HSV wheel converted crudely to RGB)
Vec3 bone_color(int bone) {
    double h = double(bone) / double(kNumBones) * 6.0;
    int i = int(h) % 6;
    double f = h - std::floor(h);
    double v = 0.9, s = 0.75;
    double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

double clamp01_logit(double y) {
    return logit(std::clamp(y, 0.02, 0.98));
}

} // namespace

Figure generate_figure(uint64_t seed) {
    Rng rng(seed ^ 0x666967ull);

    // sample local joint rotations within limits; root gets a free yaw
    Mat3 local[kNumJoints];
    for (int j = 0; j < kNumJoints; ++j) {
        double r = joint_range(j);
        if (r > 0.0)
            local[j] = euler_zyx(rng.uniform(-r, r), rng.uniform(-r, r),
                                 rng.uniform(-r, r));
        else
            local[j] = Mat3::Identity();
    }
    double yaw = rng.uniform(-M_PI, M_PI);
    local[8] = euler_zyx(0.0, yaw, 0.0);

    // forward kinematics in parent order (parents always precede children in
    // a BFS from the root)
    Figure fig;
    fig.joints.dim = 3;
    Mat3 world_rot[kNumJoints];
    std::vector<int> order = {8, 1, 9, 12, 0, 2, 5, 10, 13, 3, 6, 11, 14,
                              4, 7, 15, 16, 17, 18};
    for (int j : order) {
        int p = kJointParents[j];
        if (p < 0) {
            world_rot[j] = local[j];
            fig.joints.joints[j] = kRestOffset[j];
        } else {
            world_rot[j] = world_rot[p] * local[j];
            fig.joints.joints[j] =
                fig.joints.joints[p] + world_rot[p] * kRestOffset[j];
        }
    }

    // string Gaussians along every bone
    fig.gaussians.resize(kNumBones * kGaussiansPerBone, 3);
    int gi = 0;
    int bone = 0;
    for (int j = 0; j < kNumJoints; ++j) {
        int p = kJointParents[j];
        if (p < 0) continue;
        Vec3 a = fig.joints.joints[p];
        Vec3 b = fig.joints.joints[j];
        Vec3 seg = b - a;
        double len = seg.norm();
        Vec3 dir = len > 1e-12 ? Vec3(seg / len) : Vec3(1, 0, 0);
        Vec4 rot = quat_from_x_axis(dir);
        Vec3 base_color = bone_color(bone);
        // torso/limb bones are thicker than face bones
        double thickness = len > 0.2 ? 0.030 : 0.012;
        double along = std::max(len / kGaussiansPerBone * 1.5, thickness);
        double bone_val = (bone + 0.5) / double(kNumBones);

        for (int g = 0; g < kGaussiansPerBone; ++g, ++gi) {
            double t = (g + 0.5) / double(kGaussiansPerBone);
            Vec3 pos = a + t * seg;
            pos += Vec3(rng.normal(), rng.normal(), rng.normal()) *
                   (thickness * 0.3);
            fig.gaussians.position[gi] = pos;
            fig.gaussians.rotation[gi] = rot;
            fig.gaussians.scale[gi] = Vec3(std::log(along), std::log(thickness),
                                           std::log(thickness));
            fig.gaussians.opacity[gi] = logit(0.8);
            Vec3 c = base_color;
            for (int ch = 0; ch < 3; ++ch)
                c[ch] = std::clamp(c[ch] + 0.05 * rng.normal(), 0.02, 0.98);
            fig.gaussians.color[gi] = Vec3(logit(c[0]), logit(c[1]), logit(c[2]));
            VecX f(3);
            f << clamp01_logit(bone_val), clamp01_logit(t), logit(0.5);
            fig.gaussians.feature[gi] = f;
        }
        ++bone;
    }
    return fig;
}

std::vector<Camera> camera_ring(int count, int image_size, double radius,
                                const Vec3& target, double fx_scale,
                                double height_offset) {
    if (count < 1 || image_size < 1 || radius <= 0.0)
        throw std::invalid_argument("camera_ring: invalid parameters");
    std::vector<Camera> cams(count);
    for (int i = 0; i < count; ++i) {
        double theta = 2.0 * M_PI * double(i) / double(count);
        Vec3 pos = target + Vec3(radius * std::cos(theta), height_offset,
                                 radius * std::sin(theta));
        Vec3 f = (target - pos).normalized();
        Vec3 r = f.cross(Vec3(0, 1, 0)).normalized();
        Vec3 dn = f.cross(r); // x-right, y-down, z-forward
        Camera& c = cams[i];
        c.fx = c.fy = fx_scale * image_size;
        c.cx = c.cy = image_size / 2.0;
        c.width = c.height = image_size;
        Mat3 rot;
        rot.row(0) = r.transpose();
        rot.row(1) = dn.transpose();
        rot.row(2) = f.transpose();
        c.world_to_camera.leftCols<3>() = rot;
        c.world_to_camera.col(3) = -rot * pos;
        c.validate();
    }
    return cams;
}

SceneSample make_sample(uint64_t seed, const SceneGenConfig& config) {
    SceneSample s;
    s.figure = generate_figure(seed);
    s.cameras = camera_ring(config.num_views, config.image_size, config.radius);

    ActivatedGaussians act = activate(s.figure.gaussians);
    int n = config.num_views;
    s.color.resize(n);
    s.depth.resize(n);
    s.mask.resize(n);
    s.embed.resize(n);
    s.kp2d.resize(n);
    for (int v = 0; v < n; ++v) {
        RenderOptions opts;
        opts.threads = config.threads;
        RenderOutput out = render(act, s.cameras[v], opts);
        s.color[v] = std::move(out.color);
        s.depth[v] = std::move(out.depth);
        s.embed[v] = std::move(out.feature);
        Mask m(config.image_size, config.image_size);
        for (int y = 0; y < config.image_size; ++y)
            for (int x = 0; x < config.image_size; ++x)
                m(x, y) = out.alpha(x, y) > 0.5 ? 1 : 0;
        s.mask[v] = std::move(m);

        KeypointSet kp(2);
        for (int j = 0; j < kNumJoints; ++j) {
            Vec2 px = s.cameras[v].project_point(s.figure.joints.joints[j]);
            kp.joints[j] = Vec3(px.x(), px.y(), 0.0);
        }
        s.kp2d[v] = kp;
    }

    Rng rng(seed ^ 0x76696577ull);
    s.target_view = int(rng.uniform_int(uint64_t(n)));
    if (n > 1) {
        s.source_views.push_back((s.target_view + 1) % n);
        if (n > 2) s.source_views.push_back((s.target_view + n - 1) % n);
    } else {
        s.source_views.push_back(0);
    }
    return s;
}

} // namespace hfg
