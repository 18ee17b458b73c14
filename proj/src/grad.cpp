// SPDX-License-Identifier: Apache-2.0
#include "hfg/grad.hpp"

#include "hfg/threading.hpp"
#include "splat_internal.hpp"

#include <cmath>

namespace hfg {

namespace {

bool all_finite(const Image& img) {
    for (double v : img.data())
        if (!std::isfinite(v)) return false;
    return true;
}

// Gradient accumulator in projected (2D) space for one Gaussian.
struct Grad2D {
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Zero(); // dL/dSigma', kept symmetric
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    VecX feature;
    double z = 0.0;

    void init(int fdim) { feature = VecX::Zero(fdim); }

    void add(const Grad2D& o) {
        mean += o.mean;
        cov += o.cov;
        opacity += o.opacity;
        color += o.color;
        feature += o.feature;
        z += o.z;
    }
};

struct PixelContrib {
    int list_pos;
    double gauss;
    double alpha;
    double transmittance; // T before this contribution
    bool clamped;
};

} // namespace

GradientBundle backward_render(const GaussianSet& raw,
                               const ActivatedGaussians& act,
                               const Camera& cam,
                               const RenderAdjoint& adjoint,
                               const RenderOptions& opts) {
    cam.validate();
    if (!all_finite(adjoint.color) || !all_finite(adjoint.feature) ||
        !all_finite(adjoint.depth) || !all_finite(adjoint.alpha))
        throw numerical_error("backward_render: non-finite adjoints");

    const int w = cam.width, h = cam.height;
    const int fdim = act.feature_dim;
    const bool has_c = !adjoint.color.empty();
    const bool has_f = !adjoint.feature.empty();
    const bool has_d = !adjoint.depth.empty();
    const bool has_a = !adjoint.alpha.empty();

    auto projs = detail::project_set(act, cam);
    auto grid = detail::build_tiles(projs, w, h);

    // Per-tile 2D gradients, reduced in tile order after the parallel phase
    // so the result does not depend on the thread count.
    std::vector<std::vector<Grad2D>> tile_grads(grid.tile_count());

    parallel_for(grid.tile_count(), opts.threads, [&](int ti) {
        const auto& list = grid.lists[ti];
        if (list.empty()) return;
        auto& local = tile_grads[ti];
        local.resize(list.size());
        for (auto& g : local) g.init(fdim);

        auto entries = detail::make_entries(projs, list.data(), list.size(), act);
        int tx = ti % grid.tiles_x, ty = ti / grid.tiles_x;
        int x0 = tx * kTileSize, x1 = std::min(w, x0 + kTileSize);
        int y0 = ty * kTileSize, y1 = std::min(h, y0 + kTileSize);

        std::vector<PixelContrib> contribs;
        contribs.reserve(64);

        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                Vec2 pixel(x + 0.5, y + 0.5);

                // forward replay (same arithmetic as composite_pixel)
                contribs.clear();
                double t = 1.0, z_acc = 0.0;
                for (size_t k = 0; k < entries.size(); ++k) {
                    const auto& e = entries[k];
                    double dx = pixel.x() - e.mx, dy = pixel.y() - e.my;
                    double power = -0.5 * (e.a_ * dx * dx + 2.0 * e.b_ * dx * dy +
                                           e.c_ * dy * dy);
                    if (power < e.skip_power) continue;
                    double g = std::exp(std::min(power, 0.0));
                    double a = e.opacity * g;
                    bool clamped = a > kAlphaClamp;
                    if (clamped) a = kAlphaClamp;
                    if (a < kSkipAlpha) continue;
                    contribs.push_back({int(k), g, a, t, clamped});
                    z_acc += a * t * e.depth;
                    t *= 1.0 - a;
                    if (t < kMinTransmittance) break;
                }
                if (contribs.empty()) continue; // nothing depends on the parameters here

                const double t_end = t;
                const double alpha = 1.0 - t_end;

                Vec3 g_color = Vec3::Zero();
                if (has_c) {
                    const double* p = adjoint.color.at(x, y);
                    g_color = Vec3(p[0], p[1], p[2]);
                }
                double g_depth = has_d ? adjoint.depth(x, y) : 0.0;
                double g_alpha = has_a ? adjoint.alpha(x, y) : 0.0;

                double g_znum = 0.0, g_alpha_eff = g_alpha;
                if (alpha > kAlphaEps && g_depth != 0.0) {
                    g_znum = g_depth / alpha;
                    g_alpha_eff += -g_depth * z_acc / (alpha * alpha);
                }

                // suffix sum over s_j * w_j, seeded with the tail terms that
                // depend on the final transmittance
                double suffix = (g_color.dot(opts.background) - g_alpha_eff) * t_end;

                for (int ci = int(contribs.size()) - 1; ci >= 0; --ci) {
                    const auto& cb = contribs[ci];
                    const auto& pg = projs[list[cb.list_pos]];
                    const int gi = pg.index;
                    const double w_i = cb.alpha * cb.transmittance;

                    double s_i = 0.0;
                    if (has_c) s_i += g_color.dot(act.color[gi]);
                    if (has_f) {
                        const double* pf = adjoint.feature.at(x, y);
                        double dot = 0.0;
                        for (int f = 0; f < fdim; ++f) dot += pf[f] * act.feature[gi][f];
                        s_i += dot;
                    }
                    if (g_znum != 0.0) s_i += g_znum * pg.view_depth;

                    double d_alpha = s_i * cb.transmittance - suffix / (1.0 - cb.alpha);
                    suffix += s_i * w_i;

                    Grad2D& acc = local[cb.list_pos];
                    if (has_c) acc.color += w_i * g_color;
                    if (has_f) {
                        const double* pf = adjoint.feature.at(x, y);
                        for (int f = 0; f < fdim; ++f) acc.feature[f] += w_i * pf[f];
                    }
                    if (g_znum != 0.0) acc.z += w_i * g_znum;

                    if (cb.clamped) continue; // stop-gradient through the clamp
                    acc.opacity += d_alpha * cb.gauss;

                    const double d_gauss = d_alpha * act.opacity[gi];
                    // dG/dmean = G * M d, dG/dSigma' = (G/2) (M d)(M d)^T
                    const Mat2& cov = pg.cov2d;
                    double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
                    Vec2 d = pixel - pg.mean2d;
                    Vec2 md((cov(1, 1) * d.x() - cov(0, 1) * d.y()) / det,
                            (cov(0, 0) * d.y() - cov(0, 1) * d.x()) / det);
                    double scale = d_gauss * cb.gauss;
                    acc.mean += scale * md;
                    acc.cov += (0.5 * scale) * (md * md.transpose());
                }
            }
    });

    // ordered reduction
    std::vector<Grad2D> g2d(projs.size());
    for (auto& g : g2d) g.init(fdim);
    for (int ti = 0; ti < grid.tile_count(); ++ti) {
        const auto& list = grid.lists[ti];
        const auto& local = tile_grads[ti];
        for (size_t k = 0; k < local.size(); ++k) g2d[list[k]].add(local[k]);
    }

    // chain through projection, covariance construction and activations
    GradientBundle out;
    out.resize(raw.count, fdim);
    const Mat3 w_rot = cam.rotation();

    parallel_for(int(projs.size()), opts.threads, [&](int pi) {
        const auto& pg = projs[pi];
        const Grad2D& g = g2d[pi];
        const int i = pg.index;

        // color / feature / opacity through sigmoid
        const Vec3& c = act.color[i];
        for (int k = 0; k < 3; ++k)
            out.color[i][k] = g.color[k] * c[k] * (1.0 - c[k]);
        const VecX& fv = act.feature[i];
        for (int f = 0; f < fdim; ++f)
            out.feature[i][f] = g.feature[f] * fv[f] * (1.0 - fv[f]);
        double op = act.opacity[i];
        out.opacity[i] = g.opacity * op * (1.0 - op);

        // recompute the projection chain
        Vec3 pc = cam.to_camera(act.position[i]);
        double z = pc.z(), x = pc.x(), y = pc.y();
        Mat23 jac;
        jac << cam.fx / z, 0.0, -cam.fx * x / (z * z),
               0.0, cam.fy / z, -cam.fy * y / (z * z);
        Mat23 t2 = jac * w_rot;
        Mat3 sigma = covariance3d(act.rotation[i], act.scale[i]);
        Mat3 rot = quat_to_matrix(act.rotation[i]);
        Vec3 s = act.scale[i];

        Mat2 g_covp = 0.5 * (g.cov + g.cov.transpose());
        Mat3 g_sigma = t2.transpose() * g_covp * t2;
        Mat23 g_t2 = 2.0 * g_covp * t2 * sigma;
        Mat23 g_jac = g_t2 * w_rot.transpose();

        Vec3 g_pc = Vec3::Zero();
        g_pc.x() += g.mean.x() * cam.fx / z;
        g_pc.y() += g.mean.y() * cam.fy / z;
        g_pc.z() += -g.mean.x() * cam.fx * x / (z * z)
                  - g.mean.y() * cam.fy * y / (z * z);
        g_pc.x() += g_jac(0, 2) * (-cam.fx / (z * z));
        g_pc.y() += g_jac(1, 2) * (-cam.fy / (z * z));
        g_pc.z() += g_jac(0, 0) * (-cam.fx / (z * z))
                  + g_jac(1, 1) * (-cam.fy / (z * z))
                  + g_jac(0, 2) * (2.0 * cam.fx * x / (z * z * z))
                  + g_jac(1, 2) * (2.0 * cam.fy * y / (z * z * z));
        g_pc.z() += g.z;

        out.position[i] = w_rot.transpose() * g_pc;

        // Sigma = R diag(s^2) R^T
        Mat3 d_mat = s.cwiseProduct(s).asDiagonal();
        Mat3 g_rot = 2.0 * g_sigma * rot * d_mat;
        Mat3 rgr = rot.transpose() * g_sigma * rot;
        for (int k = 0; k < 3; ++k) {
            double g_scale = 2.0 * s[k] * rgr(k, k);
            out.scale[i][k] = g_scale * s[k]; // exp chain
        }

        // quaternion, then normalization back to the raw values
        const Vec4& q = act.rotation[i];
        double qw = q[0], qx = q[1], qy = q[2], qz = q[3];
        Mat3 dw, dx, dy, dz;
        dw << 0, -qz, qy,  qz, 0, -qx,  -qy, qx, 0;
        dx << 0, qy, qz,  qy, -2 * qx, -qw,  qz, qw, -2 * qx;
        dy << -2 * qy, qx, qw,  qx, 0, qz,  -qw, qz, -2 * qy;
        dz << -2 * qz, -qw, qx,  qw, -2 * qz, qy,  qx, qy, 0;
        Vec4 g_qhat(2.0 * (g_rot.array() * dw.array()).sum(),
                    2.0 * (g_rot.array() * dx.array()).sum(),
                    2.0 * (g_rot.array() * dy.array()).sum(),
                    2.0 * (g_rot.array() * dz.array()).sum());
        double qn = raw.rotation[i].norm();
        out.rotation[i] = (g_qhat - q * q.dot(g_qhat)) / qn;
    });

    return out;
}

double finite_diff_check(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> params,
                         std::span<const double> analytic_grad,
                         double eps,
                         const std::function<bool(int)>& skip,
                         int* skipped_count) {
    std::vector<double> x(params.begin(), params.end());
    double max_rel = 0.0;
    int skipped = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        if (skip && skip(int(i))) { skipped++; continue; }
        double orig = x[i];
        x[i] = orig + eps;
        double fp = f(x);
        x[i] = orig - eps;
        double fm = f(x);
        x[i] = orig;
        double numeric = (fp - fm) / (2.0 * eps);
        double analytic = analytic_grad[i];
        double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    }
    if (skipped_count) *skipped_count = skipped;
    return max_rel;
}

void adam_step(std::span<double> params, std::span<const double> grads,
               OptimizerState& state, double lr, double weight_decay) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    for (double g : grads)
        if (!std::isfinite(g)) throw numerical_error("diverged");

    state.ensure(params.size());
    state.step += 1;
    double bc1 = 1.0 - std::pow(kAdamBeta1, double(state.step));
    double bc2 = 1.0 - std::pow(kAdamBeta2, double(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        double g = grads[i];
        state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * g;
        state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * g * g;
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        params[i] -= lr * (mhat / (std::sqrt(vhat) + kAdamEps)
                           + weight_decay * params[i]);
    }
}

} // namespace hfg
