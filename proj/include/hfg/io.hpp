// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hfg/core.hpp"
#include "hfg/featdec.hpp"
#include "hfg/posenet.hpp"
#include "hfg/scenegen.hpp"

#include <map>
#include <string>

namespace hfg {

// Thrown on malformed input files; the message names the byte offset of the
// first inconsistency when it is known.
struct parse_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Gaussian sets: binary little-endian PLY storing the raw (pre-activation)
// parameters as float32, one vertex per Gaussian, with a
// "comment hfg_feature_dim <F>" header line.
void save_ply(const std::string& path, const GaussianSet& set);
GaussianSet load_ply(const std::string& path);

// ---------------------------------------------------------------------------
// PFM (Pf = 1 channel, PF = 3 channels), scale -1.0, rows bottom-up.
void save_pfm(const std::string& path, const Image& img);
Image load_pfm(const std::string& path);

// ---------------------------------------------------------------------------
// PNG, 8-bit gray (1 channel) or RGB (3 channels); doubles in [0,1].
void save_png(const std::string& path, const Image& img);
Image load_png(const std::string& path);

void save_mask(const std::string& path, const Mask& mask);
Mask load_mask(const std::string& path);

// ---------------------------------------------------------------------------
// JSON sidecars
void save_camera(const std::string& path, const Camera& cam);
Camera load_camera(const std::string& path);

void save_keypoints(const std::string& path, const KeypointSet& kp);
KeypointSet load_keypoints(const std::string& path);

// ---------------------------------------------------------------------------
// Network checkpoints: magic, then a sequence of named float32 matrices
// (uint32 name length, name bytes, uint32 rows, uint32 cols, row-major data).
// Hyperparameters travel in a "__meta__" pseudo-layer.
void save_pose_weights(const std::string& path, const PoseWeights& w);
PoseWeights load_pose_weights(const std::string& path);

void save_decoder_weights(const std::string& path, const DecoderWeights& w);
DecoderWeights load_decoder_weights(const std::string& path);

// ---------------------------------------------------------------------------
// Flat key=value config files; '#' starts a comment, blank lines ignored.
using Config = std::map<std::string, std::string>;
Config load_config(const std::string& path);
void save_config(const std::string& path, const Config& config);

// FNV-1a over "key=value\n" lines in sorted key order.
uint64_t config_hash(const Config& config);

// dataset manifest: {"config_hash": ..., "seed": ..., "version": ...}
void save_manifest(const std::string& path, uint64_t cfg_hash, uint64_t seed,
                   const std::string& version);

// ---------------------------------------------------------------------------
// Dataset directory layout:
//   <root>/manifest.json
//   <root>/sample_%05d/cam_<v>.json  color_<v>.png  depth_<v>.pfm
//                      mask_<v>.png  embed_<v>.pfm  kp2d_<v>.json
//                      kp3d.json     views.json
void save_sample(const std::string& root, int index, const SceneSample& sample);

// Everything make_sample produced except the figure's Gaussians.
struct LoadedSample {
    std::vector<Camera> cameras;
    std::vector<RasterImage> color;
    std::vector<DepthMap> depth;
    std::vector<Mask> mask;
    std::vector<FeatureImage> embed;
    std::vector<KeypointSet> kp2d;
    KeypointSet kp3d;
    int target_view = 0;
    std::vector<int> source_views;
};
LoadedSample load_sample(const std::string& root, int index);

std::string sample_dir(const std::string& root, int index);
int count_samples(const std::string& root);

} // namespace hfg
