// SPDX-License-Identifier: Apache-2.0
#include "hfg/losses.hpp"

#include <cmath>
#include <limits>

namespace hfg {

namespace {

constexpr int kWin = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01; // (K1*L)^2, L=1
constexpr double kC2 = 0.03 * 0.03;

const double* window() {
    static double win[kWin];
    static bool ready = false;
    if (!ready) {
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            double d = i - (kWin - 1) / 2.0;
            win[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += win[i];
        }
        for (int i = 0; i < kWin; ++i) win[i] /= sum;
        ready = true;
    }
    return win;
}

// Separable valid-mode Gaussian blur of a single plane.
std::vector<double> blur_valid(const std::vector<double>& src, int w, int h,
                               int* out_w, int* out_h) {
    const double* win = window();
    int vw = w - kWin + 1, vh = h - kWin + 1;
    std::vector<double> tmp(size_t(vw) * h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < vw; ++x) {
            double s = 0.0;
            for (int k = 0; k < kWin; ++k) s += src[size_t(y) * w + x + k] * win[k];
            tmp[size_t(y) * vw + x] = s;
        }
    std::vector<double> out(size_t(vw) * vh, 0.0);
    for (int y = 0; y < vh; ++y)
        for (int x = 0; x < vw; ++x) {
            double s = 0.0;
            for (int k = 0; k < kWin; ++k) s += tmp[size_t(y + k) * vw + x] * win[k];
            out[size_t(y) * vw + x] = s;
        }
    *out_w = vw;
    *out_h = vh;
    return out;
}

// Transpose of blur_valid: distributes a valid-grid field back onto the
// full image through the same window.
std::vector<double> spread_valid(const std::vector<double>& field, int vw, int vh,
                                 int w, int h) {
    const double* win = window();
    std::vector<double> tmp(size_t(vw) * h, 0.0);
    for (int y = 0; y < vh; ++y)
        for (int x = 0; x < vw; ++x) {
            double v = field[size_t(y) * vw + x];
            if (v == 0.0) continue;
            for (int k = 0; k < kWin; ++k) tmp[size_t(y + k) * vw + x] += v * win[k];
        }
    std::vector<double> out(size_t(w) * h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < vw; ++x) {
            double v = tmp[size_t(y) * vw + x];
            if (v == 0.0) continue;
            for (int k = 0; k < kWin; ++k) out[size_t(y) * w + x + k] += v * win[k];
        }
    return out;
}

std::vector<double> channel_plane(const Image& img, int ch, bool squared = false) {
    std::vector<double> p(size_t(img.width()) * img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            double v = img(x, y, ch);
            p[size_t(y) * img.width() + x] = squared ? v * v : v;
        }
    return p;
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

void require_window(const Image& a) {
    if (a.width() < kWin || a.height() < kWin)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
}

double masked_mean_abs(const Image& pred, const Image& gt, const Mask& mask,
                       const char* what) {
    require_same_shape(pred, gt, what);
    if (pred.width() != mask.width || pred.height() != mask.height)
        throw std::invalid_argument(std::string(what) + ": mask shape mismatch");
    double sum = 0.0;
    size_t n = 0;
    for (int y = 0; y < pred.height(); ++y)
        for (int x = 0; x < pred.width(); ++x) {
            if (!mask(x, y)) continue;
            for (int c = 0; c < pred.channels(); ++c)
                sum += std::abs(pred(x, y, c) - gt(x, y, c));
            n += pred.channels();
        }
    if (n == 0) throw std::invalid_argument(std::string(what) + ": empty mask");
    return sum / double(n);
}

Image masked_mean_abs_backward(const Image& pred, const Image& gt, const Mask& mask) {
    Image grad(pred.width(), pred.height(), pred.channels(), 0.0);
    size_t n = mask.count() * pred.channels();
    double inv = 1.0 / double(n);
    for (int y = 0; y < pred.height(); ++y)
        for (int x = 0; x < pred.width(); ++x) {
            if (!mask(x, y)) continue;
            for (int c = 0; c < pred.channels(); ++c) {
                double d = pred(x, y, c) - gt(x, y, c);
                grad(x, y, c) = d > 0 ? inv : (d < 0 ? -inv : 0.0);
            }
        }
    return grad;
}

} // namespace

double ssim(const RasterImage& a, const RasterImage& b) {
    require_same_shape(a, b, "ssim");
    require_window(a);
    const int w = a.width(), h = a.height();
    double total = 0.0;
    size_t n = 0;
    for (int ch = 0; ch < a.channels(); ++ch) {
        auto x = channel_plane(a, ch);
        auto y = channel_plane(b, ch);
        auto x2 = channel_plane(a, ch, true);
        auto y2 = channel_plane(b, ch, true);
        std::vector<double> xy(x.size());
        for (size_t i = 0; i < x.size(); ++i) xy[i] = x[i] * y[i];

        int vw, vh;
        auto mu_x = blur_valid(x, w, h, &vw, &vh);
        auto mu_y = blur_valid(y, w, h, &vw, &vh);
        auto e_x2 = blur_valid(x2, w, h, &vw, &vh);
        auto e_y2 = blur_valid(y2, w, h, &vw, &vh);
        auto e_xy = blur_valid(xy, w, h, &vw, &vh);

        for (size_t i = 0; i < mu_x.size(); ++i) {
            double mx = mu_x[i], my = mu_y[i];
            double vx = e_x2[i] - mx * mx;
            double vy = e_y2[i] - my * my;
            double cxy = e_xy[i] - mx * my;
            double n1 = 2.0 * mx * my + kC1, n2 = 2.0 * cxy + kC2;
            double d1 = mx * mx + my * my + kC1, d2 = vx + vy + kC2;
            total += (n1 * n2) / (d1 * d2);
        }
        n += mu_x.size();
    }
    return total / double(n);
}

Image ssim_backward(const RasterImage& a, const RasterImage& b) {
    require_same_shape(a, b, "ssim");
    require_window(a);
    const int w = a.width(), h = a.height();
    Image grad(w, h, a.channels(), 0.0);

    for (int ch = 0; ch < a.channels(); ++ch) {
        auto x = channel_plane(a, ch);
        auto y = channel_plane(b, ch);
        auto x2 = channel_plane(a, ch, true);
        auto y2 = channel_plane(b, ch, true);
        std::vector<double> xy(x.size());
        for (size_t i = 0; i < x.size(); ++i) xy[i] = x[i] * y[i];

        int vw, vh;
        auto mu_x = blur_valid(x, w, h, &vw, &vh);
        auto mu_y = blur_valid(y, w, h, &vw, &vh);
        auto e_x2 = blur_valid(x2, w, h, &vw, &vh);
        auto e_y2 = blur_valid(y2, w, h, &vw, &vh);
        auto e_xy = blur_valid(xy, w, h, &vw, &vh);

        size_t nv = mu_x.size();
        // partials of the local SSIM value w.r.t. (mu_x, var_x, cov_xy)
        std::vector<double> pa(nv), pb(nv), pc(nv), pb_mux(nv), pc_muy(nv);
        for (size_t i = 0; i < nv; ++i) {
            double mx = mu_x[i], my = mu_y[i];
            double vx = e_x2[i] - mx * mx;
            double vy = e_y2[i] - my * my;
            double cxy = e_xy[i] - mx * my;
            double n1 = 2.0 * mx * my + kC1, n2 = 2.0 * cxy + kC2;
            double d1 = mx * mx + my * my + kC1, d2 = vx + vy + kC2;
            double s = (n1 * n2) / (d1 * d2);
            double da = 2.0 * my * n2 / (d1 * d2) - 2.0 * mx * s / d1;
            double db = -s / d2;
            double dc = 2.0 * n1 / (d1 * d2);
            pa[i] = da;
            pb[i] = db;
            pc[i] = dc;
            pb_mux[i] = db * mx;
            pc_muy[i] = dc * my;
        }

        // grad(g_k) = spread(A) + 2 g_k spread(B) - 2 spread(B mu_x)
        //           + h_k spread(C) - spread(C mu_y)
        auto sa = spread_valid(pa, vw, vh, w, h);
        auto sb = spread_valid(pb, vw, vh, w, h);
        auto sbm = spread_valid(pb_mux, vw, vh, w, h);
        auto sc = spread_valid(pc, vw, vh, w, h);
        auto scm = spread_valid(pc_muy, vw, vh, w, h);

        double norm = 1.0 / (double(nv) * a.channels());
        for (int py = 0; py < h; ++py)
            for (int px = 0; px < w; ++px) {
                size_t k = size_t(py) * w + px;
                double g = sa[k] + 2.0 * x[k] * sb[k] - 2.0 * sbm[k]
                         + y[k] * sc[k] - scm[k];
                grad(px, py, ch) = g * norm;
            }
    }
    return grad;
}

double loss_image(const RasterImage& pred, const RasterImage& gt, const Mask& mask,
                  double* out_mae, double* out_ssim) {
    double mae = masked_mean_abs(pred, gt, mask, "loss_image");
    double s = 1.0 - ssim(pred, gt);
    if (out_mae) *out_mae = mae;
    if (out_ssim) *out_ssim = s;
    return kImageMaeWeight * mae + kImageSsimWeight * s;
}

double loss_image(const RasterImage& pred, const RasterImage& gt, const Mask& mask) {
    return loss_image(pred, gt, mask, nullptr, nullptr);
}

Image loss_image_backward(const RasterImage& pred, const RasterImage& gt,
                          const Mask& mask) {
    if (mask.count() == 0) throw std::invalid_argument("loss_image: empty mask");
    Image grad = masked_mean_abs_backward(pred, gt, mask);
    Image sgrad = ssim_backward(pred, gt);
    for (size_t i = 0; i < grad.data().size(); ++i)
        grad.data()[i] = kImageMaeWeight * grad.data()[i]
                       - kImageSsimWeight * sgrad.data()[i];
    return grad;
}

double loss_depth(const std::vector<DepthMap>& preds, const DepthMap& gt,
                  const Mask& mask, double decay) {
    if (preds.empty()) throw std::invalid_argument("loss_depth: empty sequence");
    double total = 0.0;
    const int t_max = int(preds.size());
    for (int t = 1; t <= t_max; ++t)
        total += std::pow(decay, double(t_max - t))
               * masked_mean_abs(preds[t - 1], gt, mask, "loss_depth");
    return total;
}

Image loss_depth_backward(const DepthMap& pred, const DepthMap& gt, const Mask& mask) {
    if (mask.count() == 0) throw std::invalid_argument("loss_depth: empty mask");
    return masked_mean_abs_backward(pred, gt, mask);
}

double loss_pose(const KeypointSet& pred, const KeypointSet& gt) {
    if (pred.dim != gt.dim)
        throw std::invalid_argument("loss_pose: dimension mismatch");
    double sum = 0.0;
    for (int j = 0; j < kNumJoints; ++j)
        for (int d = 0; d < pred.dim; ++d) {
            double e = pred.joints[j][d] - gt.joints[j][d];
            sum += e * e;
        }
    return sum / double(kNumJoints * pred.dim);
}

KeypointSet loss_pose_backward(const KeypointSet& pred, const KeypointSet& gt) {
    if (pred.dim != gt.dim)
        throw std::invalid_argument("loss_pose: dimension mismatch");
    KeypointSet grad(pred.dim);
    double inv = 2.0 / double(kNumJoints * pred.dim);
    for (int j = 0; j < kNumJoints; ++j)
        for (int d = 0; d < pred.dim; ++d)
            grad.joints[j][d] = inv * (pred.joints[j][d] - gt.joints[j][d]);
    return grad;
}

double loss_feature(const FeatureImage& pred, const FeatureImage& gt, const Mask& mask) {
    return masked_mean_abs(pred, gt, mask, "loss_feature");
}

Image loss_feature_backward(const FeatureImage& pred, const FeatureImage& gt,
                            const Mask& mask) {
    if (mask.count() == 0) throw std::invalid_argument("loss_feature: empty mask");
    return masked_mean_abs_backward(pred, gt, mask);
}

double psnr(const RasterImage& pred, const RasterImage& gt) {
    require_same_shape(pred, gt, "psnr");
    double mse = 0.0;
    for (size_t i = 0; i < pred.data().size(); ++i) {
        double d = pred.data()[i] - gt.data()[i];
        mse += d * d;
    }
    mse /= double(pred.data().size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double mpjpe(const KeypointSet& pred, const KeypointSet& gt) {
    if (pred.dim != gt.dim)
        throw std::invalid_argument("mpjpe: dimension mismatch");
    double sum = 0.0;
    for (int j = 0; j < kNumJoints; ++j) {
        double d2 = 0.0;
        for (int d = 0; d < pred.dim; ++d) {
            double e = pred.joints[j][d] - gt.joints[j][d];
            d2 += e * e;
        }
        sum += std::sqrt(d2);
    }
    return sum / double(kNumJoints);
}

double pck(const KeypointSet& pred, const KeypointSet& gt, double threshold_ratio) {
    if (pred.dim != 2 || gt.dim != 2)
        throw std::invalid_argument("pck: expects 2D keypoints");
    // torso diameter: l-shoulder (5) to r-hip (9) of the ground truth
    Vec2 torso(gt.joints[5].x() - gt.joints[9].x(),
               gt.joints[5].y() - gt.joints[9].y());
    double diam = torso.norm();
    if (diam <= 1e-12) throw std::invalid_argument("pck: degenerate torso");
    double thresh = threshold_ratio * diam;
    int ok = 0;
    for (int j = 0; j < kNumJoints; ++j) {
        Vec2 e(pred.joints[j].x() - gt.joints[j].x(),
               pred.joints[j].y() - gt.joints[j].y());
        if (e.norm() <= thresh) ++ok;
    }
    return double(ok) / double(kNumJoints);
}

double feature_mse(const FeatureImage& pred, const FeatureImage& gt, const Mask& mask) {
    require_same_shape(pred, gt, "feature_mse");
    double sum = 0.0;
    size_t n = 0;
    for (int y = 0; y < pred.height(); ++y)
        for (int x = 0; x < pred.width(); ++x) {
            if (!mask(x, y)) continue;
            for (int c = 0; c < pred.channels(); ++c) {
                double d = pred(x, y, c) - gt(x, y, c);
                sum += d * d;
            }
            n += pred.channels();
        }
    if (n == 0) throw std::invalid_argument("feature_mse: empty mask");
    return sum / double(n);
}

} // namespace hfg
