#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace bgmatte {

enum class Ablation { Full, Baseline, ConvBranch, ConcatCondition };

inline std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::Full: return "full";
        case Ablation::Baseline: return "baseline";
        case Ablation::ConvBranch: return "conv_branch";
        default: return "concat_condition";
    }
}

inline Ablation ablation_from_string(const std::string& s) {
    if (s == "full") return Ablation::Full;
    if (s == "baseline") return Ablation::Baseline;
    if (s == "conv_branch") return Ablation::ConvBranch;
    if (s == "concat_condition") return Ablation::ConcatCondition;
    throw std::invalid_argument("unknown ablation '" + s + "'");
}

/// Training/run configuration. Full-scale defaults: lr_main 1e-5, lr_upsampler
/// 1e-6, batch 1, resolution 768, ~80k steps, 2 FBAM layers. Toy runs shrink the
/// dims but keep the same resolution bookkeeping.
struct TrainConfig {
    double lr_main = 1e-5;
    double lr_upsampler = 1e-6;
    int steps = 80000;
    int resolution = 768;
    int batch_size = 1;
    std::uint64_t seed = 0;
    int fbam_layers = 2;
    int window = 0;  // 0 = global attention
    Ablation ablation = Ablation::Full;

    int embed_dim = 64;
    int depth = 4;
    int num_heads = 4;
    int patch_size = 16;
    int mlp_ratio = 4;
    int upsampler_dim = 32;
    int upsample_factor = 8;
    int stage_channels[3] = {128, 64, 32};
    int head_channels = 16;

    int trimap_radius = -1;        // -1 = scale the 5px@768 default to the resolution
    bool augment = false;
    int warmstart_steps = 0;       // upsampler warm-start phase before joint training
    double warmstart_lr = 1e-3;

    int resolved_trimap_radius() const {
        if (trimap_radius >= 0) return trimap_radius;
        return std::max(0, int(std::lround(5.0 * resolution / 768.0)));
    }

    void validate() const {
        if (lr_main <= 0.0) throw std::invalid_argument("TrainConfig: lr_main must be > 0");
        if (lr_upsampler < 0.0) throw std::invalid_argument("TrainConfig: lr_upsampler must be >= 0");
        if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (resolution % patch_size != 0)
            throw std::invalid_argument("TrainConfig: resolution " + std::to_string(resolution) +
                                        " not divisible by patch size " + std::to_string(patch_size));
        if (resolution % 32 != 0)
            throw std::invalid_argument("TrainConfig: resolution " + std::to_string(resolution) +
                                        " not divisible by 32");
        if (fbam_layers < 1) throw std::invalid_argument("TrainConfig: fbam_layers must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// human-readable key-value config documents:  key = value, '#' comments
// ---------------------------------------------------------------------------

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::istream& in) {
    KeyValues kv;
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (!key.empty()) kv[key] = value;
    }
    return kv;
}

inline KeyValues read_key_values(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    return parse_key_values(f);
}

inline TrainConfig config_from_key_values(const KeyValues& kv) {
    TrainConfig c;
    auto get = [&](const char* key, auto& out) {
        auto it = kv.find(key);
        if (it == kv.end()) return;
        std::istringstream ss(it->second);
        ss >> out;
        if (ss.fail()) throw std::invalid_argument(std::string("config: bad value for ") + key);
    };
    get("lr_main", c.lr_main);
    get("lr_upsampler", c.lr_upsampler);
    get("steps", c.steps);
    get("resolution", c.resolution);
    get("batch_size", c.batch_size);
    get("seed", c.seed);
    get("fbam_layers", c.fbam_layers);
    get("window", c.window);
    if (auto it = kv.find("ablation"); it != kv.end()) c.ablation = ablation_from_string(it->second);
    get("embed_dim", c.embed_dim);
    get("depth", c.depth);
    get("num_heads", c.num_heads);
    get("patch_size", c.patch_size);
    get("mlp_ratio", c.mlp_ratio);
    get("upsampler_dim", c.upsampler_dim);
    get("upsample_factor", c.upsample_factor);
    get("stage_channels_0", c.stage_channels[0]);
    get("stage_channels_1", c.stage_channels[1]);
    get("stage_channels_2", c.stage_channels[2]);
    get("head_channels", c.head_channels);
    get("trimap_radius", c.trimap_radius);
    int aug = -1;
    get("augment", aug);
    if (aug >= 0) c.augment = aug != 0;
    get("warmstart_steps", c.warmstart_steps);
    get("warmstart_lr", c.warmstart_lr);
    return c;
}

/// Serialized in sorted key order so the text (and its hash) is stable.
inline std::string config_to_text(const TrainConfig& c) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "ablation = " << to_string(c.ablation) << "\n";
    ss << "augment = " << (c.augment ? 1 : 0) << "\n";
    ss << "batch_size = " << c.batch_size << "\n";
    ss << "depth = " << c.depth << "\n";
    ss << "embed_dim = " << c.embed_dim << "\n";
    ss << "fbam_layers = " << c.fbam_layers << "\n";
    ss << "head_channels = " << c.head_channels << "\n";
    ss << "lr_main = " << c.lr_main << "\n";
    ss << "lr_upsampler = " << c.lr_upsampler << "\n";
    ss << "mlp_ratio = " << c.mlp_ratio << "\n";
    ss << "num_heads = " << c.num_heads << "\n";
    ss << "patch_size = " << c.patch_size << "\n";
    ss << "resolution = " << c.resolution << "\n";
    ss << "seed = " << c.seed << "\n";
    ss << "stage_channels_0 = " << c.stage_channels[0] << "\n";
    ss << "stage_channels_1 = " << c.stage_channels[1] << "\n";
    ss << "stage_channels_2 = " << c.stage_channels[2] << "\n";
    ss << "steps = " << c.steps << "\n";
    ss << "trimap_radius = " << c.trimap_radius << "\n";
    ss << "upsample_factor = " << c.upsample_factor << "\n";
    ss << "upsampler_dim = " << c.upsampler_dim << "\n";
    ss << "warmstart_lr = " << c.warmstart_lr << "\n";
    ss << "warmstart_steps = " << c.warmstart_steps << "\n";
    ss << "window = " << c.window << "\n";
    return ss.str();
}

}  // namespace bgmatte
