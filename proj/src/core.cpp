// SPDX-License-Identifier: Apache-2.0
#include "hfg/core.hpp"

#include <cmath>

namespace hfg {

const char* const kJointNames[kNumJoints] = {
    "nose",       "neck",      "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow",   "l_wrist",    "pelvis",  "r_hip",
    "r_knee",     "r_ankle",   "l_hip",      "l_knee",  "l_ankle",
    "r_eye",      "l_eye",     "r_ear",      "l_ear"};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double y) { return std::log(y / (1.0 - y)); }

ActivatedGaussians activate(const GaussianSet& raw) {
    ActivatedGaussians out;
    out.count = raw.count;
    out.feature_dim = raw.feature_dim;
    out.position = raw.position;
    out.rotation.resize(raw.count);
    out.scale.resize(raw.count);
    out.opacity.resize(raw.count);
    out.color.resize(raw.count);
    out.feature.resize(raw.count);
    for (int i = 0; i < raw.count; ++i) {
        double n = raw.rotation[i].norm();
        if (!(n > 0.0) || !std::isfinite(n))
            throw std::invalid_argument("degenerate rotation");
        out.rotation[i] = raw.rotation[i] / n;
        out.scale[i] = raw.scale[i].array().exp();
        out.opacity[i] = sigmoid(raw.opacity[i]);
        out.color[i] = raw.color[i].unaryExpr([](double v) { return sigmoid(v); });
        out.feature[i] = raw.feature[i].unaryExpr([](double v) { return sigmoid(v); });
    }
    return out;
}

Mat3 quat_to_matrix(const Vec4& q) {
    double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 covariance3d(const Vec4& rotation, const Vec3& scale) {
    Mat3 r = quat_to_matrix(rotation);
    Mat3 sigma = r * scale.cwiseProduct(scale).asDiagonal() * r.transpose();
    // symmetrize away rounding noise
    return 0.5 * (sigma + sigma.transpose());
}

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
        throw std::invalid_argument("camera focal lengths must be positive");
    if (width <= 0 || height <= 0)
        throw std::invalid_argument("camera image size must be positive");
    Mat3 r = rotation();
    if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
        throw std::invalid_argument("camera rotation is not orthonormal");
}

} // namespace hfg
