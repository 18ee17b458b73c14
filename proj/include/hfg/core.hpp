// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hfg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Thrown when a computation produced non-finite values (maps to CLI exit 2).
struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Images

// Dense row-major grid of `channels` interleaved doubles per pixel.
class Image {
public:
    Image() = default;
    Image(int width, int height, int channels, double fill = 0.0)
        : w_(width), h_(height), c_(channels),
          data_(size_t(width) * height * channels, fill) {}

    int width() const { return w_; }
    int height() const { return h_; }
    int channels() const { return c_; }
    bool empty() const { return data_.empty(); }

    double* at(int x, int y) { return data_.data() + (size_t(y) * w_ + x) * c_; }
    const double* at(int x, int y) const { return data_.data() + (size_t(y) * w_ + x) * c_; }

    double& operator()(int x, int y, int ch = 0) { return at(x, y)[ch]; }
    double operator()(int x, int y, int ch = 0) const { return at(x, y)[ch]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Image& o) const {
        return w_ == o.w_ && h_ == o.h_ && c_ == o.c_;
    }

private:
    int w_ = 0, h_ = 0, c_ = 0;
    std::vector<double> data_;
};

using RasterImage = Image;  // 3 channels
using DepthMap = Image;     // 1 channel, world units, 0 = no surface
using FeatureImage = Image; // F channels

struct Mask {
    int width = 0, height = 0;
    std::vector<uint8_t> data; // 0 or 1

    Mask() = default;
    Mask(int w, int h, uint8_t fill = 0)
        : width(w), height(h), data(size_t(w) * h, fill) {}

    uint8_t operator()(int x, int y) const { return data[size_t(y) * width + x]; }
    uint8_t& operator()(int x, int y) { return data[size_t(y) * width + x]; }

    size_t count() const {
        size_t n = 0;
        for (uint8_t v : data) n += v ? 1 : 0;
        return n;
    }
};

// ---------------------------------------------------------------------------
// Gaussians

// One activated Gaussian. Quaternion storage order is (w,x,y,z).
struct Gaussian {
    Vec3 position;
    Vec4 rotation;  // unit quaternion
    Vec3 scale;     // positive lengths
    double opacity; // [0,1]
    Vec3 color;     // [0,1]
    VecX feature;   // [0,1] each, F components
};

// Raw (pre-activation) parameter arrays of the optimizable scene.
struct GaussianSet {
    int count = 0;
    int feature_dim = 8;
    std::vector<Vec3> position;   // activation is identity
    std::vector<Vec4> rotation;   // normalized on activation
    std::vector<Vec3> scale;      // exp on activation
    std::vector<double> opacity;  // sigmoid on activation
    std::vector<Vec3> color;      // sigmoid on activation
    std::vector<VecX> feature;    // sigmoid on activation

    void resize(int n, int fdim) {
        count = n;
        feature_dim = fdim;
        position.assign(n, Vec3::Zero());
        rotation.assign(n, Vec4(1, 0, 0, 0));
        scale.assign(n, Vec3::Zero());
        opacity.assign(n, 0.0);
        color.assign(n, Vec3::Zero());
        feature.assign(n, VecX::Zero(fdim));
    }
};

// Activated view of a GaussianSet.
struct ActivatedGaussians {
    int count = 0;
    int feature_dim = 8;
    std::vector<Vec3> position;
    std::vector<Vec4> rotation;
    std::vector<Vec3> scale;
    std::vector<double> opacity;
    std::vector<Vec3> color;
    std::vector<VecX> feature;

    Gaussian at(int i) const {
        return {position[i], rotation[i], scale[i], opacity[i], color[i], feature[i]};
    }
};

double sigmoid(double x);
double logit(double y);

// Applies the parameter activations: identity / normalize / exp / sigmoid.
// Throws std::invalid_argument("degenerate rotation") on a zero-norm quaternion.
ActivatedGaussians activate(const GaussianSet& raw);

// Rotation matrix from a unit quaternion (w,x,y,z).
Mat3 quat_to_matrix(const Vec4& q);

// Sigma = R S S^T R^T for an activated rotation/scale pair.
Mat3 covariance3d(const Vec4& rotation, const Vec3& scale);

// ---------------------------------------------------------------------------
// Camera

// Pinhole camera; world_to_camera is the view transform W (camera looks
// down +z, x right, y down).
struct Camera {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    Mat34 world_to_camera = Mat34::Zero();
    double near = 0.01;

    Mat3 rotation() const { return world_to_camera.leftCols<3>(); }
    Vec3 translation() const { return world_to_camera.col(3); }

    Vec3 to_camera(const Vec3& p_world) const {
        return rotation() * p_world + translation();
    }
    Vec3 to_world(const Vec3& p_cam) const {
        return rotation().transpose() * (p_cam - translation());
    }
    // Perspective projection to pixel coordinates.
    Vec2 project_point(const Vec3& p_world) const {
        Vec3 pc = to_camera(p_world);
        return {fx * pc.x() / pc.z() + cx, fy * pc.y() / pc.z() + cy};
    }

    // fx,fy > 0, rotation orthonormal within 1e-6.
    void validate() const;
};

// ---------------------------------------------------------------------------
// Keypoints

// Joint order: nose, neck, r-shoulder, r-elbow, r-wrist, l-shoulder, l-elbow,
// l-wrist, pelvis, r-hip, r-knee, r-ankle, l-hip, l-knee, l-ankle, r-eye,
// l-eye, r-ear, l-ear.
inline constexpr int kNumJoints = 19;

struct KeypointSet {
    int dim = 3; // 3 = world units, 2 = pixels (z ignored)
    std::vector<Vec3> joints; // always kNumJoints entries

    KeypointSet() : joints(kNumJoints, Vec3::Zero()) {}
    explicit KeypointSet(int d) : dim(d), joints(kNumJoints, Vec3::Zero()) {}
};

extern const char* const kJointNames[kNumJoints];

} // namespace hfg
