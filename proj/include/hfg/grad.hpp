// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hfg/core.hpp"
#include "hfg/splat.hpp"

#include <functional>
#include <span>

namespace hfg {

// Gradients of a scalar loss with respect to the raw (pre-activation)
// Gaussian parameters.
struct GradientBundle {
    std::vector<Vec3> position;
    std::vector<Vec4> rotation;
    std::vector<Vec3> scale;
    std::vector<double> opacity;
    std::vector<Vec3> color;
    std::vector<VecX> feature;

    void resize(int n, int fdim) {
        position.assign(n, Vec3::Zero());
        rotation.assign(n, Vec4::Zero());
        scale.assign(n, Vec3::Zero());
        opacity.assign(n, 0.0);
        color.assign(n, Vec3::Zero());
        feature.assign(n, VecX::Zero(fdim));
    }
};

// Per-pixel adjoints of the render outputs; any image may be empty, which
// reads as an all-zero adjoint.
struct RenderAdjoint {
    Image color;   // 3 channels
    Image feature; // F channels
    Image depth;   // 1 channel
    Image alpha;   // 1 channel
};

// Backward pass of render(): gradients of L = <adjoint, render(set, cam)>
// with respect to every raw parameter. `raw` and `act` must describe the
// same set. Clamp, skip and termination thresholds are stop-gradients.
// Throws numerical_error on non-finite adjoints.
GradientBundle backward_render(const GaussianSet& raw,
                               const ActivatedGaussians& act,
                               const Camera& cam,
                               const RenderAdjoint& adjoint,
                               const RenderOptions& opts = {});

// Central-difference verification of an analytic gradient. Returns the
// maximum relative error, with denominator max(|a|,|n|,1e-8).
// `skip` (optional) marks coordinates where f is known to be
// non-differentiable along the probe segment; those are not compared.
double finite_diff_check(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> params,
                         std::span<const double> analytic_grad,
                         double eps = 1e-4,
                         const std::function<bool(int)>& skip = nullptr,
                         int* skipped_count = nullptr);

// ---------------------------------------------------------------------------
// AdamW

struct OptimizerState {
    std::vector<double> m; // first moment
    std::vector<double> v; // second moment
    long step = 0;

    void ensure(size_t n) {
        if (m.size() != n) { m.assign(n, 0.0); v.assign(n, 0.0); step = 0; }
    }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// One decoupled-weight-decay Adam step, bias-corrected. Throws
// numerical_error("diverged") on non-finite gradients.
void adam_step(std::span<double> params, std::span<const double> grads,
               OptimizerState& state, double lr, double weight_decay);

} // namespace hfg
