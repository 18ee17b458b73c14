// SPDX-License-Identifier: Apache-2.0
#include "hfg/posenet.hpp"

#include "hfg/grad.hpp"
#include "hfg/losses.hpp"
#include "hfg/rng.hpp"
#include "hfg/threading.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hfg {

namespace {

constexpr int kGlobalWidths[] = {64, 128, 256};
constexpr int kEdgeWidths[] = {64, 128};
constexpr int kHeadHidden[] = {256, 128};

double lrelu(double x) { return x > 0.0 ? x : kLeakySlope * x; }
double lrelu_grad(double x) { return x > 0.0 ? 1.0 : kLeakySlope; }

MatX lrelu_mat(const MatX& m) {
    return m.unaryExpr([](double v) { return lrelu(v); });
}

Linear init_linear(int out, int in, Rng& rng) {
    Linear l;
    l.weight.resize(out, in);
    l.bias.resize(out);
    double bound = std::sqrt(1.0 / double(in));
    for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) l.weight(r, c) = rng.uniform(-bound, bound);
    for (int r = 0; r < out; ++r) l.bias(r) = rng.uniform(-bound, bound);
    return l;
}

void flatten_layers(const std::vector<Linear>& layers, std::vector<double>& out) {
    for (const auto& l : layers) {
        for (int r = 0; r < l.out(); ++r)
            for (int c = 0; c < l.in(); ++c) out.push_back(l.weight(r, c));
        for (int r = 0; r < l.out(); ++r) out.push_back(l.bias(r));
    }
}

void unflatten_layers(std::vector<Linear>& layers, const std::vector<double>& flat,
                      size_t& pos) {
    for (auto& l : layers) {
        for (int r = 0; r < l.out(); ++r)
            for (int c = 0; c < l.in(); ++c) l.weight(r, c) = flat[pos++];
        for (int r = 0; r < l.out(); ++r) l.bias(r) = flat[pos++];
    }
}

} // namespace

const char* backbone_name(Backbone b) {
    switch (b) {
        case Backbone::PointNet: return "pointnet";
        case Backbone::Dgcnn: return "dgcnn";
        case Backbone::Hybrid: return "hybrid";
    }
    return "?";
}

Backbone backbone_from_name(const std::string& name) {
    if (name == "pointnet") return Backbone::PointNet;
    if (name == "dgcnn") return Backbone::Dgcnn;
    if (name == "hybrid") return Backbone::Hybrid;
    throw std::invalid_argument("unknown backbone: " + name);
}

int PoseWeights::head_input_width() const {
    switch (backbone) {
        case Backbone::PointNet: return kGlobalWidths[2];
        case Backbone::Dgcnn: return kEdgeWidths[1];
        case Backbone::Hybrid: return kGlobalWidths[2] + kEdgeWidths[1];
    }
    return 0;
}

size_t PoseWeights::param_count() const {
    size_t n = 0;
    for (const auto& l : global_mlp) n += l.params();
    for (const auto& l : edge_mlp) n += l.params();
    for (const auto& l : head) n += l.params();
    return n;
}

void PoseWeights::check_shapes() const {
    auto check_chain = [](const std::vector<Linear>& ls, int in, const char* what) {
        for (const auto& l : ls) {
            if (l.in() != in || l.bias.size() != l.out())
                throw std::invalid_argument(std::string("pose weights: broken ") + what);
            in = l.out();
        }
        return in;
    };
    bool use_global = backbone != Backbone::Dgcnn;
    bool use_edge = backbone != Backbone::PointNet;
    if (use_global && check_chain(global_mlp, 3, "global branch") != kGlobalWidths[2])
        throw std::invalid_argument("pose weights: global branch width");
    if (use_edge && check_chain(edge_mlp, 6, "edge branch") != kEdgeWidths[1])
        throw std::invalid_argument("pose weights: edge branch width");
    int out = check_chain(head, head_input_width(), "head");
    if (out != kNumJoints * dim)
        throw std::invalid_argument("pose weights: head output width");
}

std::vector<double> PoseWeights::flatten() const {
    std::vector<double> flat;
    flat.reserve(param_count());
    flatten_layers(global_mlp, flat);
    flatten_layers(edge_mlp, flat);
    flatten_layers(head, flat);
    return flat;
}

void PoseWeights::unflatten(const std::vector<double>& flat) {
    size_t pos = 0;
    unflatten_layers(global_mlp, flat, pos);
    unflatten_layers(edge_mlp, flat, pos);
    unflatten_layers(head, flat, pos);
    if (pos != flat.size())
        throw std::invalid_argument("pose weights: flat size mismatch");
}

PoseWeights init_pose_weights(Backbone backbone, int dim, uint64_t seed, int knn_k) {
    PoseWeights w;
    w.backbone = backbone;
    w.dim = dim;
    w.knn_k = knn_k;
    Rng rng(seed ^ 0x706f7365ull);
    if (backbone != Backbone::Dgcnn) {
        int in = 3;
        for (int width : kGlobalWidths) {
            w.global_mlp.push_back(init_linear(width, in, rng));
            in = width;
        }
    }
    if (backbone != Backbone::PointNet) {
        int in = 6;
        for (int width : kEdgeWidths) {
            w.edge_mlp.push_back(init_linear(width, in, rng));
            in = width;
        }
    }
    int in = w.head_input_width();
    for (int width : kHeadHidden) {
        w.head.push_back(init_linear(width, in, rng));
        in = width;
    }
    w.head.push_back(init_linear(kNumJoints * dim, in, rng));
    return w;
}

Eigen::MatrixXi knn_graph(const MatX& points, int k) {
    const int n = int(points.rows());
    if (n < k + 1)
        throw std::invalid_argument("knn_graph: too few points");
    Eigen::MatrixXi nbrs(n, k);
    std::vector<std::pair<double, int>> cand(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double d2 = (points.row(j) - points.row(i)).squaredNorm();
            cand[j] = {d2, j};
        }
        cand[i].first = std::numeric_limits<double>::infinity(); // exclude self
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (int s = 0; s < k; ++s) nbrs(i, s) = cand[s].second;
        for (int j = 0; j < n; ++j) cand[j] = {0.0, 0}; // reset not needed, overwritten
    }
    return nbrs;
}

namespace {

// H -> per-layer pre-activations and leaky-ReLU activations
void mlp_forward(const std::vector<Linear>& layers, const MatX& input,
                 std::vector<MatX>* pre, std::vector<MatX>* act) {
    pre->clear();
    act->clear();
    const MatX* h = &input;
    for (const auto& l : layers) {
        MatX z = (*h * l.weight.transpose()).rowwise() + l.bias.transpose();
        pre->push_back(std::move(z));
        act->push_back(lrelu_mat(pre->back()));
        h = &act->back();
    }
}

// column-wise max with deterministic (first) argmax
void colwise_max(const MatX& m, VecX* pooled, std::vector<int>* argmax) {
    int cols = int(m.cols()), rows = int(m.rows());
    pooled->resize(cols);
    argmax->assign(cols, 0);
    for (int c = 0; c < cols; ++c) {
        double best = m(0, c);
        int bi = 0;
        for (int r = 1; r < rows; ++r)
            if (m(r, c) > best) { best = m(r, c); bi = r; }
        (*pooled)(c) = best;
        (*argmax)[c] = bi;
    }
}

} // namespace

KeypointSet forward_pose(const SampledCloud& cloud, const PoseWeights& weights,
                         PoseForwardCache* cache, const Eigen::MatrixXi* knn) {
    weights.check_shapes();
    const int n = int(cloud.points.rows());
    const bool use_global = weights.backbone != Backbone::Dgcnn;
    const bool use_edge = weights.backbone != Backbone::PointNet;

    PoseForwardCache local;
    PoseForwardCache& c = cache ? *cache : local;
    c.pts = cloud.points;

    if (use_global) {
        mlp_forward(weights.global_mlp, c.pts, &c.g_pre, &c.g_act);
        colwise_max(c.g_act.back(), &c.g_pool, &c.g_argmax);
    }

    if (use_edge) {
        const int k = weights.knn_k;
        c.knn = knn ? *knn : knn_graph(c.pts, k);
        c.edge_in.resize(size_t(n) * k, 6);
        for (int i = 0; i < n; ++i)
            for (int s = 0; s < k; ++s) {
                int j = c.knn(i, s);
                int r = i * k + s;
                c.edge_in(r, 0) = c.pts(j, 0) - c.pts(i, 0);
                c.edge_in(r, 1) = c.pts(j, 1) - c.pts(i, 1);
                c.edge_in(r, 2) = c.pts(j, 2) - c.pts(i, 2);
                c.edge_in(r, 3) = c.pts(i, 0);
                c.edge_in(r, 4) = c.pts(i, 1);
                c.edge_in(r, 5) = c.pts(i, 2);
            }
        mlp_forward(weights.edge_mlp, c.edge_in, &c.e_pre, &c.e_act);

        const MatX& last = c.e_act.back();
        const int width = int(last.cols());
        c.e_point.resize(n, width);
        c.e_nbr_argmax.assign(size_t(n) * width, 0);
        for (int i = 0; i < n; ++i)
            for (int col = 0; col < width; ++col) {
                double best = last(i * k, col);
                int bs = 0;
                for (int s = 1; s < k; ++s)
                    if (last(i * k + s, col) > best) { best = last(i * k + s, col); bs = s; }
                c.e_point(i, col) = best;
                c.e_nbr_argmax[size_t(i) * width + col] = bs;
            }
        colwise_max(c.e_point, &c.e_pool, &c.e_argmax);
    }

    c.head_in.resize(weights.head_input_width());
    if (weights.backbone == Backbone::PointNet) {
        c.head_in = c.g_pool;
    } else if (weights.backbone == Backbone::Dgcnn) {
        c.head_in = c.e_pool;
    } else {
        c.head_in << c.g_pool, c.e_pool;
    }

    c.h_pre.clear();
    c.h_act.clear();
    const VecX* h = &c.head_in;
    for (size_t l = 0; l < weights.head.size(); ++l) {
        VecX z = weights.head[l].weight * (*h) + weights.head[l].bias;
        c.h_pre.push_back(z);
        if (l + 1 < weights.head.size())
            c.h_act.push_back(z.unaryExpr([](double v) { return lrelu(v); }));
        else
            c.h_act.push_back(z); // linear output
        h = &c.h_act.back();
    }
    c.output = c.h_act.back();

    KeypointSet out(weights.dim);
    for (int j = 0; j < kNumJoints; ++j) {
        for (int d = 0; d < weights.dim; ++d)
            out.joints[j][d] = c.output[j * weights.dim + d];
        if (weights.dim == 3) out.joints[j] += cloud.centroid;
    }
    return out;
}

PoseGradients PoseGradients::zeros_like(const PoseWeights& w) {
    PoseGradients g;
    auto zero = [](const std::vector<Linear>& src) {
        std::vector<Linear> out;
        for (const auto& l : src)
            out.push_back({MatX::Zero(l.out(), l.in()), VecX::Zero(l.out())});
        return out;
    };
    g.global_mlp = zero(w.global_mlp);
    g.edge_mlp = zero(w.edge_mlp);
    g.head = zero(w.head);
    return g;
}

void PoseGradients::add(const PoseGradients& o) {
    auto acc = [](std::vector<Linear>& a, const std::vector<Linear>& b) {
        for (size_t i = 0; i < a.size(); ++i) {
            a[i].weight += b[i].weight;
            a[i].bias += b[i].bias;
        }
    };
    acc(global_mlp, o.global_mlp);
    acc(edge_mlp, o.edge_mlp);
    acc(head, o.head);
}

void PoseGradients::scale(double s) {
    auto sc = [s](std::vector<Linear>& a) {
        for (auto& l : a) { l.weight *= s; l.bias *= s; }
    };
    sc(global_mlp);
    sc(edge_mlp);
    sc(head);
}

std::vector<double> PoseGradients::flatten() const {
    std::vector<double> flat;
    flatten_layers(global_mlp, flat);
    flatten_layers(edge_mlp, flat);
    flatten_layers(head, flat);
    return flat;
}

PoseGradients backward_pose(const PoseWeights& weights,
                            const PoseForwardCache& cache,
                            const VecX& d_output) {
    PoseGradients g = PoseGradients::zeros_like(weights);
    const bool use_global = weights.backbone != Backbone::Dgcnn;
    const bool use_edge = weights.backbone != Backbone::PointNet;

    // head (vector case)
    VecX dh = d_output;
    for (int l = int(weights.head.size()) - 1; l >= 0; --l) {
        VecX dz = dh;
        if (l + 1 < int(weights.head.size()))
            for (int r = 0; r < dz.size(); ++r) dz[r] *= lrelu_grad(cache.h_pre[l][r]);
        const VecX& input = (l == 0) ? cache.head_in : cache.h_act[l - 1];
        g.head[l].weight += dz * input.transpose();
        g.head[l].bias += dz;
        dh = weights.head[l].weight.transpose() * dz;
    }

    int offset = 0;
    if (use_global) {
        int gw = int(cache.g_pool.size());
        // route the pooled gradient back to the argmax rows
        MatX da = MatX::Zero(cache.g_act.back().rows(), gw);
        for (int col = 0; col < gw; ++col)
            da(cache.g_argmax[col], col) = dh[offset + col];
        offset += gw;

        for (int l = int(weights.global_mlp.size()) - 1; l >= 0; --l) {
            MatX dz = da.cwiseProduct(cache.g_pre[l].unaryExpr(
                [](double v) { return lrelu_grad(v); }));
            const MatX& input = (l == 0) ? cache.pts : cache.g_act[l - 1];
            g.global_mlp[l].weight += dz.transpose() * input;
            g.global_mlp[l].bias += dz.colwise().sum().transpose();
            if (l > 0) da = dz * weights.global_mlp[l].weight;
        }
    }

    if (use_edge) {
        int ew = int(cache.e_pool.size());
        const int k = weights.knn_k;
        MatX da = MatX::Zero(cache.e_act.back().rows(), ew);
        for (int col = 0; col < ew; ++col) {
            int i = cache.e_argmax[col];
            int slot = cache.e_nbr_argmax[size_t(i) * ew + col];
            da(i * k + slot, col) = dh[offset + col];
        }

        for (int l = int(weights.edge_mlp.size()) - 1; l >= 0; --l) {
            MatX dz = da.cwiseProduct(cache.e_pre[l].unaryExpr(
                [](double v) { return lrelu_grad(v); }));
            const MatX& input = (l == 0) ? cache.edge_in : cache.e_act[l - 1];
            g.edge_mlp[l].weight += dz.transpose() * input;
            g.edge_mlp[l].bias += dz.colwise().sum().transpose();
            if (l > 0) da = dz * weights.edge_mlp[l].weight;
        }
    }
    return g;
}

void prepare_knn(std::vector<PoseSample>& samples, int k, int threads) {
    parallel_for(int(samples.size()), threads, [&](int i) {
        if (samples[i].knn.size() == 0)
            samples[i].knn = knn_graph(samples[i].cloud.points, k);
    });
}

namespace {

// per-sample loss and weight gradients
double sample_loss_and_grad(const PoseWeights& w, const PoseSample& sample,
                            PoseGradients* grads) {
    PoseForwardCache cache;
    const Eigen::MatrixXi* knn =
        (sample.knn.size() > 0 && w.backbone != Backbone::PointNet) ? &sample.knn
                                                                    : nullptr;
    KeypointSet pred = forward_pose(sample.cloud, w, &cache, knn);
    double loss = loss_pose(pred, sample.gt);
    if (grads) {
        KeypointSet dj = loss_pose_backward(pred, sample.gt);
        VecX d_out(kNumJoints * w.dim);
        for (int j = 0; j < kNumJoints; ++j)
            for (int d = 0; d < w.dim; ++d)
                d_out[j * w.dim + d] = dj.joints[j][d];
        *grads = backward_pose(w, cache, d_out);
    }
    return loss;
}

} // namespace

double eval_pose_mpjpe(const PoseWeights& weights, std::vector<PoseSample>& samples,
                       int threads) {
    if (samples.empty()) return 0.0;
    if (weights.backbone != Backbone::PointNet)
        prepare_knn(samples, weights.knn_k, threads);
    std::vector<double> errs(samples.size());
    parallel_for(int(samples.size()), threads, [&](int i) {
        const Eigen::MatrixXi* knn =
            samples[i].knn.size() > 0 ? &samples[i].knn : nullptr;
        KeypointSet pred = forward_pose(samples[i].cloud, weights, nullptr, knn);
        errs[i] = mpjpe(pred, samples[i].gt);
    });
    double sum = 0.0;
    for (double e : errs) sum += e;
    return sum / double(samples.size());
}

PoseWeights train_pose(std::vector<PoseSample>& train,
                       std::vector<PoseSample>& holdout,
                       const PoseTrainConfig& config,
                       PoseTrainLog* log) {
    PoseWeights weights = init_pose_weights(config.backbone, config.dim,
                                            config.seed, config.knn_k);
    if (config.backbone != Backbone::PointNet) {
        prepare_knn(train, config.knn_k, config.threads);
        prepare_knn(holdout, config.knn_k, config.threads);
    }

    OptimizerState opt;
    Rng shuffle_rng(config.seed ^ 0x747261696eull);
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // seeded Fisher-Yates shuffle
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += config.batch_size) {
            size_t end = std::min(order.size(), start + config.batch_size);
            int bs = int(end - start);
            std::vector<PoseGradients> grads(bs);
            std::vector<double> losses(bs);
            parallel_for(bs, config.threads, [&](int bi) {
                losses[bi] = sample_loss_and_grad(weights, train[order[start + bi]],
                                                  &grads[bi]);
            });
            PoseGradients batch = std::move(grads[0]);
            double batch_loss = losses[0];
            for (int bi = 1; bi < bs; ++bi) {
                batch.add(grads[bi]);
                batch_loss += losses[bi];
            }
            batch.scale(1.0 / double(bs));
            batch_loss /= double(bs);
            if (!std::isfinite(batch_loss))
                throw numerical_error("train_pose diverged at epoch "
                                      + std::to_string(epoch));
            epoch_loss += batch_loss;
            ++batches;

            if (config.lr != 0.0) {
                std::vector<double> flat = weights.flatten();
                std::vector<double> gflat = batch.flatten();
                adam_step(flat, gflat, opt, config.lr, config.weight_decay);
                weights.unflatten(flat);
            }
        }

        if (log) {
            log->epoch_train_loss.push_back(batches ? epoch_loss / batches : 0.0);
            log->epoch_val_mpjpe.push_back(
                eval_pose_mpjpe(weights, holdout, config.threads));
        }
    }
    return weights;
}

} // namespace hfg
