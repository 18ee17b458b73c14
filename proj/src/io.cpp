// SPDX-License-Identifier: Apache-2.0
#include "hfg/io.hpp"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace hfg {

namespace {

void write_f32(std::ostream& os, float v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

float read_f32(std::istream& is) {
    float v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

std::ofstream open_out(const std::string& path, bool binary = true) {
    std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    return os;
}

std::ifstream open_in(const std::string& path, bool binary = true) {
    std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    return is;
}

json load_json(const std::string& path) {
    auto is = open_in(path, false);
    json j;
    try {
        is >> j;
    } catch (const json::parse_error& e) {
        throw parse_error(path + ": " + e.what());
    }
    return j;
}

void dump_json(const std::string& path, const json& j) {
    auto os = open_out(path, false);
    os << j.dump(2) << "\n";
}

} // namespace

// ---------------------------------------------------------------------------
// PLY

void save_ply(const std::string& path, const GaussianSet& set) {
    auto os = open_out(path);
    const int fd = set.feature_dim;
    os << "ply\nformat binary_little_endian 1.0\n"
       << "comment hfg_feature_dim " << fd << "\n"
       << "element vertex " << set.count << "\n";
    const char* base[] = {"x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3",
                          "scale_0", "scale_1", "scale_2", "opacity",
                          "r", "g", "b"};
    for (const char* p : base) os << "property float " << p << "\n";
    for (int f = 0; f < fd; ++f) os << "property float feat_" << f << "\n";
    os << "end_header\n";
    for (int i = 0; i < set.count; ++i) {
        for (int k = 0; k < 3; ++k) write_f32(os, float(set.position[i][k]));
        for (int k = 0; k < 4; ++k) write_f32(os, float(set.rotation[i][k]));
        for (int k = 0; k < 3; ++k) write_f32(os, float(set.scale[i][k]));
        write_f32(os, float(set.opacity[i]));
        for (int k = 0; k < 3; ++k) write_f32(os, float(set.color[i][k]));
        for (int k = 0; k < fd; ++k) write_f32(os, float(set.feature[i][k]));
    }
}

GaussianSet load_ply(const std::string& path) {
    auto is = open_in(path);
    std::string line;
    if (!std::getline(is, line) || line != "ply")
        throw parse_error(path + ": bad magic at offset 0");
    int count = -1, fd = -1, props = 0;
    bool fmt_ok = false;
    while (std::getline(is, line)) {
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "format") {
            std::string f;
            ss >> f;
            fmt_ok = (f == "binary_little_endian");
        } else if (tok == "comment") {
            std::string key;
            ss >> key;
            if (key == "hfg_feature_dim") ss >> fd;
        } else if (tok == "element") {
            std::string what;
            ss >> what >> count;
            if (what != "vertex")
                throw parse_error(path + ": unexpected element '" + what + "'");
        } else if (tok == "property") {
            ++props;
        } else if (tok == "end_header") {
            break;
        }
    }
    if (!fmt_ok) throw parse_error(path + ": not binary_little_endian");
    if (count < 0) throw parse_error(path + ": missing vertex element");
    if (fd < 0) throw parse_error(path + ": missing hfg_feature_dim comment");
    if (props != 14 + fd)
        throw parse_error(path + ": property count does not match feature dim");

    GaussianSet set;
    set.resize(count, fd);
    for (int i = 0; i < count; ++i) {
        for (int k = 0; k < 3; ++k) set.position[i][k] = read_f32(is);
        for (int k = 0; k < 4; ++k) set.rotation[i][k] = read_f32(is);
        for (int k = 0; k < 3; ++k) set.scale[i][k] = read_f32(is);
        set.opacity[i] = read_f32(is);
        for (int k = 0; k < 3; ++k) set.color[i][k] = read_f32(is);
        for (int k = 0; k < fd; ++k) set.feature[i][k] = read_f32(is);
        if (!is)
            throw parse_error(path + ": truncated vertex data at offset " +
                              std::to_string(is.tellg()));
    }
    return set;
}

// ---------------------------------------------------------------------------
// PFM

void save_pfm(const std::string& path, const Image& img) {
    if (img.channels() != 1 && img.channels() != 3)
        throw std::invalid_argument("save_pfm: 1 or 3 channels required");
    auto os = open_out(path);
    os << (img.channels() == 1 ? "Pf" : "PF") << "\n"
       << img.width() << " " << img.height() << "\n-1.0\n";
    for (int y = img.height() - 1; y >= 0; --y)
        for (int x = 0; x < img.width(); ++x)
            for (int ch = 0; ch < img.channels(); ++ch)
                write_f32(os, float(img(x, y, ch)));
}

Image load_pfm(const std::string& path) {
    auto is = open_in(path);
    std::string magic;
    is >> magic;
    if (magic != "Pf" && magic != "PF")
        throw parse_error(path + ": bad magic at offset 0");
    int channels = magic == "Pf" ? 1 : 3;
    int w = 0, h = 0;
    double scale = 0;
    is >> w >> h >> scale;
    if (!is || w <= 0 || h <= 0)
        throw parse_error(path + ": bad dimensions");
    if (scale >= 0)
        throw parse_error(path + ": big-endian data not supported");
    is.get(); // single whitespace after the scale
    Image img(w, h, channels);
    for (int y = h - 1; y >= 0; --y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < channels; ++ch)
                img(x, y, ch) = read_f32(is);
    if (!is)
        throw parse_error(path + ": truncated pixel data");
    return img;
}

// ---------------------------------------------------------------------------
// PNG

void save_png(const std::string& path, const Image& img) {
    if (img.channels() != 1 && img.channels() != 3)
        throw std::invalid_argument("save_png: 1 or 3 channels required");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                              nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("png write failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.width(), img.height(), 8,
                 img.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<uint8_t> row(size_t(img.width()) * img.channels());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x)
            for (int ch = 0; ch < img.channels(); ++ch) {
                double v = std::clamp(img(x, y, ch), 0.0, 1.0);
                row[size_t(x) * img.channels() + ch] =
                    uint8_t(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Image load_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open for reading: " + path);
    uint8_t sig[8];
    if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8)) {
        std::fclose(fp);
        throw parse_error(path + ": bad magic at offset 0");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                             nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw parse_error(path + ": png decode failed");
    }
    png_init_io(png, fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    int w = int(png_get_image_width(png, info));
    int h = int(png_get_image_height(png, info));
    int channels = int(png_get_channels(png, info));
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw parse_error(path + ": unsupported channel count");
    }
    Image img(w, h, channels);
    std::vector<uint8_t> row(size_t(w) * channels);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < channels; ++ch)
                img(x, y, ch) = row[size_t(x) * channels + ch] / 255.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

void save_mask(const std::string& path, const Mask& mask) {
    Image img(mask.width, mask.height, 1);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            img(x, y) = mask(x, y) ? 1.0 : 0.0;
    save_png(path, img);
}

Mask load_mask(const std::string& path) {
    Image img = load_png(path);
    if (img.channels() != 1)
        throw parse_error(path + ": mask must be grayscale");
    Mask m(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            m(x, y) = img(x, y) > 0.5 ? 1 : 0;
    return m;
}

// ---------------------------------------------------------------------------
// JSON sidecars

void save_camera(const std::string& path, const Camera& cam) {
    json j;
    j["fx"] = cam.fx;
    j["fy"] = cam.fy;
    j["cx"] = cam.cx;
    j["cy"] = cam.cy;
    j["width"] = cam.width;
    j["height"] = cam.height;
    j["near"] = cam.near;
    std::vector<double> m;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) m.push_back(cam.world_to_camera(r, c));
    j["world_to_camera"] = m;
    dump_json(path, j);
}

Camera load_camera(const std::string& path) {
    json j = load_json(path);
    Camera cam;
    try {
        cam.fx = j.at("fx");
        cam.fy = j.at("fy");
        cam.cx = j.at("cx");
        cam.cy = j.at("cy");
        cam.width = j.at("width");
        cam.height = j.at("height");
        cam.near = j.value("near", 0.01);
        auto m = j.at("world_to_camera").get<std::vector<double>>();
        if (m.size() != 12)
            throw parse_error(path + ": world_to_camera needs 12 entries");
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) cam.world_to_camera(r, c) = m[r * 4 + c];
    } catch (const json::exception& e) {
        throw parse_error(path + ": " + e.what());
    }
    cam.validate();
    return cam;
}

void save_keypoints(const std::string& path, const KeypointSet& kp) {
    json j;
    j["dim"] = kp.dim;
    json arr = json::array();
    for (int i = 0; i < kNumJoints; ++i) {
        json entry;
        entry["name"] = kJointNames[i];
        std::vector<double> p;
        for (int d = 0; d < kp.dim; ++d) p.push_back(kp.joints[i][d]);
        entry["p"] = p;
        arr.push_back(entry);
    }
    j["joints"] = arr;
    dump_json(path, j);
}

KeypointSet load_keypoints(const std::string& path) {
    json j = load_json(path);
    KeypointSet kp;
    try {
        kp.dim = j.at("dim");
        const auto& arr = j.at("joints");
        if (int(arr.size()) != kNumJoints)
            throw parse_error(path + ": expected " + std::to_string(kNumJoints) +
                              " joints");
        for (int i = 0; i < kNumJoints; ++i) {
            auto p = arr[i].at("p").get<std::vector<double>>();
            if (int(p.size()) != kp.dim)
                throw parse_error(path + ": joint dim mismatch");
            for (int d = 0; d < kp.dim; ++d) kp.joints[i][d] = p[d];
        }
    } catch (const json::exception& e) {
        throw parse_error(path + ": " + e.what());
    }
    return kp;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kPoseMagic[8] = {'H', 'F', 'G', 'P', 'O', 'S', 'E', '1'};
constexpr char kDecMagic[8] = {'H', 'F', 'G', 'D', 'E', 'C', '1', '\0'};

void write_matrix(std::ostream& os, const std::string& name, const MatX& m) {
    write_u32(os, uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_u32(os, uint32_t(m.rows()));
    write_u32(os, uint32_t(m.cols()));
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) write_f32(os, float(m(r, c)));
}

bool read_matrix(std::istream& is, std::string* name, MatX* m) {
    uint32_t len = read_u32(is);
    if (!is) return false; // clean EOF
    if (len > 4096) throw parse_error("checkpoint: implausible name length");
    name->resize(len);
    is.read(name->data(), len);
    uint32_t rows = read_u32(is), cols = read_u32(is);
    if (!is) throw parse_error("checkpoint: truncated header");
    m->resize(rows, cols);
    for (uint32_t r = 0; r < rows; ++r)
        for (uint32_t c = 0; c < cols; ++c) (*m)(r, c) = read_f32(is);
    if (!is) throw parse_error("checkpoint: truncated matrix data");
    return true;
}

void write_layers(std::ostream& os, const std::string& prefix,
                  const std::vector<Linear>& layers) {
    for (size_t i = 0; i < layers.size(); ++i) {
        std::string base = prefix + "." + std::to_string(i);
        write_matrix(os, base + ".weight", layers[i].weight);
        write_matrix(os, base + ".bias", layers[i].bias);
    }
}

struct MatrixMap {
    std::map<std::string, MatX> m;

    const MatX& get(const std::string& name, const std::string& path) const {
        auto it = m.find(name);
        if (it == m.end())
            throw parse_error(path + ": missing tensor '" + name + "'");
        return it->second;
    }
};

std::vector<Linear> read_layers(const MatrixMap& mm, const std::string& prefix,
                                int count, const std::string& path) {
    std::vector<Linear> out;
    for (int i = 0; i < count; ++i) {
        std::string base = prefix + "." + std::to_string(i);
        Linear l;
        l.weight = mm.get(base + ".weight", path);
        l.bias = mm.get(base + ".bias", path);
        out.push_back(std::move(l));
    }
    return out;
}

MatrixMap read_checkpoint(const std::string& path, const char expect[8]) {
    auto is = open_in(path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, expect, 8) != 0)
        throw parse_error(path + ": bad magic at offset 0");
    MatrixMap mm;
    std::string name;
    MatX m;
    while (read_matrix(is, &name, &m)) mm.m[name] = m;
    return mm;
}

} // namespace

void save_pose_weights(const std::string& path, const PoseWeights& w) {
    w.check_shapes();
    auto os = open_out(path);
    os.write(kPoseMagic, 8);
    MatX meta(1, 3);
    meta << double(int(w.backbone)), double(w.dim), double(w.knn_k);
    write_matrix(os, "__meta__", meta);
    write_layers(os, "global", w.global_mlp);
    write_layers(os, "edge", w.edge_mlp);
    write_layers(os, "head", w.head);
}

PoseWeights load_pose_weights(const std::string& path) {
    MatrixMap mm = read_checkpoint(path, kPoseMagic);
    const MatX& meta = mm.get("__meta__", path);
    if (meta.rows() != 1 || meta.cols() != 3)
        throw parse_error(path + ": bad meta shape");
    PoseWeights w;
    int bb = int(meta(0, 0));
    if (bb < 0 || bb > 2) throw parse_error(path + ": bad backbone id");
    w.backbone = Backbone(bb);
    w.dim = int(meta(0, 1));
    w.knn_k = int(meta(0, 2));
    if (w.backbone != Backbone::Dgcnn)
        w.global_mlp = read_layers(mm, "global", 3, path);
    if (w.backbone != Backbone::PointNet)
        w.edge_mlp = read_layers(mm, "edge", 2, path);
    w.head = read_layers(mm, "head", 3, path);
    w.check_shapes();
    return w;
}

void save_decoder_weights(const std::string& path, const DecoderWeights& w) {
    w.check_shapes();
    auto os = open_out(path);
    os.write(kDecMagic, 8);
    MatX meta(1, 2);
    meta << double(w.feature_dim), double(w.embed_dim);
    write_matrix(os, "__meta__", meta);
    write_layers(os, "layer", w.layers);
}

DecoderWeights load_decoder_weights(const std::string& path) {
    MatrixMap mm = read_checkpoint(path, kDecMagic);
    const MatX& meta = mm.get("__meta__", path);
    if (meta.rows() != 1 || meta.cols() != 2)
        throw parse_error(path + ": bad meta shape");
    DecoderWeights w;
    w.feature_dim = int(meta(0, 0));
    w.embed_dim = int(meta(0, 1));
    w.layers = read_layers(mm, "layer", 3, path);
    w.check_shapes();
    return w;
}

// ---------------------------------------------------------------------------
// Config

Config load_config(const std::string& path) {
    auto is = open_in(path, false);
    Config cfg;
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw parse_error(path + ":" + std::to_string(lineno) +
                              ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw parse_error(path + ":" + std::to_string(lineno) + ": empty key");
        cfg[key] = value;
    }
    return cfg;
}

void save_config(const std::string& path, const Config& config) {
    auto os = open_out(path, false);
    for (const auto& [k, v] : config) os << k << "=" << v << "\n";
}

uint64_t config_hash(const Config& config) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
    };
    for (const auto& [k, v] : config) {
        mix(k);
        mix("=");
        mix(v);
        mix("\n");
    }
    return h;
}

void save_manifest(const std::string& path, uint64_t cfg_hash, uint64_t seed,
                   const std::string& version) {
    json j;
    j["config_hash"] = cfg_hash;
    j["seed"] = seed;
    j["version"] = version;
    dump_json(path, j);
}

// ---------------------------------------------------------------------------
// Dataset directories

std::string sample_dir(const std::string& root, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%05d", index);
    return (fs::path(root) / buf).string();
}

int count_samples(const std::string& root) {
    int n = 0;
    while (fs::is_directory(sample_dir(root, n))) ++n;
    return n;
}

void save_sample(const std::string& root, int index, const SceneSample& sample) {
    fs::path dir = sample_dir(root, index);
    fs::create_directories(dir);
    int n = int(sample.cameras.size());
    for (int v = 0; v < n; ++v) {
        std::string vs = std::to_string(v);
        save_camera((dir / ("cam_" + vs + ".json")).string(), sample.cameras[v]);
        save_png((dir / ("color_" + vs + ".png")).string(), sample.color[v]);
        save_pfm((dir / ("depth_" + vs + ".pfm")).string(), sample.depth[v]);
        save_mask((dir / ("mask_" + vs + ".png")).string(), sample.mask[v]);
        save_pfm((dir / ("embed_" + vs + ".pfm")).string(), sample.embed[v]);
        save_keypoints((dir / ("kp2d_" + vs + ".json")).string(), sample.kp2d[v]);
    }
    save_keypoints((dir / "kp3d.json").string(), sample.figure.joints);
    json views;
    views["num_views"] = n;
    views["target_view"] = sample.target_view;
    views["source_views"] = sample.source_views;
    dump_json((dir / "views.json").string(), views);
}

LoadedSample load_sample(const std::string& root, int index) {
    fs::path dir = sample_dir(root, index);
    json views = load_json((dir / "views.json").string());
    LoadedSample s;
    int n = 0;
    try {
        n = views.at("num_views");
        s.target_view = views.at("target_view");
        s.source_views = views.at("source_views").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw parse_error((dir / "views.json").string() + ": " + e.what());
    }
    for (int v = 0; v < n; ++v) {
        std::string vs = std::to_string(v);
        s.cameras.push_back(load_camera((dir / ("cam_" + vs + ".json")).string()));
        s.color.push_back(load_png((dir / ("color_" + vs + ".png")).string()));
        s.depth.push_back(load_pfm((dir / ("depth_" + vs + ".pfm")).string()));
        s.mask.push_back(load_mask((dir / ("mask_" + vs + ".png")).string()));
        s.embed.push_back(load_pfm((dir / ("embed_" + vs + ".pfm")).string()));
        s.kp2d.push_back(load_keypoints((dir / ("kp2d_" + vs + ".json")).string()));
    }
    s.kp3d = load_keypoints((dir / "kp3d.json").string());
    return s;
}

} // namespace hfg
