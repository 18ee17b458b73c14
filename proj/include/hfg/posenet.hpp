// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hfg/core.hpp"
#include "hfg/unproject.hpp"

#include <cstdint>

namespace hfg {

enum class Backbone { PointNet, Dgcnn, Hybrid };

const char* backbone_name(Backbone b);
Backbone backbone_from_name(const std::string& name);

struct Linear {
    MatX weight; // out x in
    VecX bias;   // out

    int in() const { return int(weight.cols()); }
    int out() const { return int(weight.rows()); }
    size_t params() const { return weight.size() + bias.size(); }
};

inline constexpr double kLeakySlope = 0.01;
inline constexpr int kDefaultKnnK = 16;

// All learnable tensors of one pose-regression backbone.
//   global branch: shared per-point MLP 3->64->128->256, max-pool
//   edge branch:   edge MLP 6->64->128, neighbor max, global max-pool
//   head:          (384|256|128)->256->128->19*dim
struct PoseWeights {
    Backbone backbone = Backbone::Hybrid;
    int dim = 3;
    int knn_k = kDefaultKnnK;
    std::vector<Linear> global_mlp;
    std::vector<Linear> edge_mlp;
    std::vector<Linear> head;

    int head_input_width() const;
    size_t param_count() const;
    void check_shapes() const; // throws on a broken chain

    // fixed flattening order: global, edge, head; per layer W row-major, then b
    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);
};

// Seeded uniform +-sqrt(1/fan_in) initialization.
PoseWeights init_pose_weights(Backbone backbone, int dim, uint64_t seed,
                              int knn_k = kDefaultKnnK);

// k nearest Euclidean neighbors per point, self excluded, ties broken by
// smaller index. Throws when the cloud has fewer than k+1 points.
Eigen::MatrixXi knn_graph(const MatX& points, int k);

// Intermediate activations saved for the backward pass.
struct PoseForwardCache {
    MatX pts;
    Eigen::MatrixXi knn;
    std::vector<MatX> g_pre, g_act;
    VecX g_pool;
    std::vector<int> g_argmax;
    MatX edge_in;
    std::vector<MatX> e_pre, e_act;
    MatX e_point;                 // n x edge_width after neighbor max
    std::vector<int> e_nbr_argmax; // flattened n*edge_width neighbor slots
    VecX e_pool;
    std::vector<int> e_argmax;
    VecX head_in;
    std::vector<VecX> h_pre, h_act;
    VecX output; // raw head output
};

// Forward pass. The cloud must already be centered (see sample_cloud); the
// centroid is added back for 3D output. For dim == 2 the raw outputs are
// pixel coordinates. `knn` optionally supplies a precomputed graph.
KeypointSet forward_pose(const SampledCloud& cloud, const PoseWeights& weights,
                         PoseForwardCache* cache = nullptr,
                         const Eigen::MatrixXi* knn = nullptr);

// Same layer shapes as PoseWeights, holding gradients.
struct PoseGradients {
    std::vector<Linear> global_mlp, edge_mlp, head;

    static PoseGradients zeros_like(const PoseWeights& w);
    void add(const PoseGradients& o);
    void scale(double s);
    std::vector<double> flatten() const;
};

// Weight gradients of <d_output, raw head output>.
PoseGradients backward_pose(const PoseWeights& weights,
                            const PoseForwardCache& cache,
                            const VecX& d_output);

// ---------------------------------------------------------------------------
// Training

struct PoseSample {
    SampledCloud cloud;
    KeypointSet gt;       // world units (dim 3) or pixels (dim 2)
    Eigen::MatrixXi knn;  // cached graph; empty -> computed on demand
};

struct PoseTrainConfig {
    Backbone backbone = Backbone::Hybrid;
    int dim = 3;
    int epochs = 30;
    double lr = 1e-3;
    double weight_decay = 1e-5;
    int batch_size = 16;
    uint64_t seed = 0;
    int knn_k = kDefaultKnnK;
    int threads = 1;
};

struct PoseTrainLog {
    std::vector<double> epoch_train_loss;
    std::vector<double> epoch_val_mpjpe;
};

// Precomputes the kNN graphs of a sample list in place.
void prepare_knn(std::vector<PoseSample>& samples, int k, int threads);

// Mini-batch AdamW on the mean pose loss; deterministic per seed. Throws
// numerical_error naming the epoch on divergence.
PoseWeights train_pose(std::vector<PoseSample>& train,
                       std::vector<PoseSample>& holdout,
                       const PoseTrainConfig& config,
                       PoseTrainLog* log = nullptr);

// Mean MPJPE of a weight set over a sample list.
double eval_pose_mpjpe(const PoseWeights& weights, std::vector<PoseSample>& samples,
                       int threads);

} // namespace hfg
