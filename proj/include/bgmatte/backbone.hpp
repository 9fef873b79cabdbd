#pragma once

#include "bgmatte/nn.hpp"
#include "bgmatte/types.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace bgmatte::backbone {

using ad::Tape;
using ad::Var;

struct ViTConfig {
    int patch_size = 16;
    int embed_dim = 64;
    int depth = 4;
    int num_heads = 4;
    int mlp_ratio = 4;
    bool frozen = true;
    int in_channels = 3;  // 6 for the concat-conditioning ablation

    void validate() const {
        if (patch_size < 1) throw std::invalid_argument("ViTConfig: patch_size must be >= 1");
        if (depth < 1) throw std::invalid_argument("ViTConfig: depth must be >= 1");
        if (embed_dim % num_heads != 0)
            throw std::invalid_argument("ViTConfig: embed_dim " + std::to_string(embed_dim) +
                                        " not divisible by num_heads " + std::to_string(num_heads));
        if (embed_dim % 4 != 0)
            throw std::invalid_argument("ViTConfig: embed_dim must be divisible by 4 for 2-D sinusoidal encoding");
    }
};

template <typename T>
struct BlockT {
    nn::NormParamsT<T> ln1;
    nn::AttentionParamsT<T> attn;
    nn::NormParamsT<T> ln2;
    nn::MlpParamsT<T> mlp;
};

template <typename T>
struct ParamsT {
    nn::LinearParamsT<T> patch_proj;  // embed_dim x (P*P*in_channels)
    std::vector<BlockT<T>> blocks;
};

template <typename S> using Params = ParamsT<Mat<S>>;
template <typename S> using Vars = ParamsT<Var<S>>;

template <typename S>
Params<S> init(const ViTConfig& cfg, Rng& rng) {
    cfg.validate();
    Params<S> p;
    p.patch_proj = nn::init_linear<S>(rng, cfg.embed_dim, cfg.patch_size * cfg.patch_size * cfg.in_channels);
    p.blocks.resize(std::size_t(cfg.depth));
    for (auto& b : p.blocks) {
        b.ln1 = nn::init_norm<S>(cfg.embed_dim);
        b.attn = nn::init_attention<S>(rng, cfg.embed_dim);
        b.ln2 = nn::init_norm<S>(cfg.embed_dim);
        b.mlp = nn::init_mlp<S>(rng, cfg.embed_dim, cfg.mlp_ratio * cfg.embed_dim);
    }
    return p;
}

template <typename S>
Vars<S> lift(Tape<S>& t, const Params<S>& p, bool rg) {
    Vars<S> v;
    v.patch_proj = nn::lift(t, p.patch_proj, rg);
    for (const auto& b : p.blocks)
        v.blocks.push_back({nn::lift(t, b.ln1, rg), nn::lift(t, b.attn, rg), nn::lift(t, b.ln2, rg),
                            nn::lift(t, b.mlp, rg)});
    return v;
}

template <typename T, typename F>
void visit(ParamsT<T>& p, const std::string& prefix, F&& f) {
    nn::visit(p.patch_proj, prefix + ".patch_proj", f);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        std::string bp = prefix + ".block" + std::to_string(i);
        nn::visit(p.blocks[i].ln1, bp + ".ln1", f);
        nn::visit(p.blocks[i].attn, bp + ".attn", f);
        nn::visit(p.blocks[i].ln2, bp + ".ln2", f);
        nn::visit(p.blocks[i].mlp, bp + ".mlp", f);
    }
}

/// Fixed 2-D sinusoidal positional encoding: the first half of the embedding encodes
/// the token row, the second half the column; each half is (sin, cos) pairs with
/// frequencies 10000^(-2i/half_dim).
template <typename S>
Mat<S> positional_encoding(int grid_h, int grid_w, int dim) {
    const int half = dim / 2;
    const int quarter = half / 2;
    Mat<S> pe(Eigen::Index(grid_h) * grid_w, dim);
    for (int r = 0; r < grid_h; ++r)
        for (int c = 0; c < grid_w; ++c) {
            Eigen::Index row = Eigen::Index(r) * grid_w + c;
            for (int i = 0; i < quarter; ++i) {
                double omega = std::pow(10000.0, -2.0 * i / double(half));
                pe(row, 2 * i) = S(std::sin(r * omega));
                pe(row, 2 * i + 1) = S(std::cos(r * omega));
                pe(row, half + 2 * i) = S(std::sin(c * omega));
                pe(row, half + 2 * i + 1) = S(std::cos(c * omega));
            }
        }
    return pe;
}

/// Flattens each P x P patch in (py, px, channel) order, row-major over the patch grid.
template <typename S>
Mat<S> extract_patches(const FeatureGrid<S>& image, int patch) {
    const int gh = image.height / patch, gw = image.width / patch;
    const int c = image.channels();
    Mat<S> out(Eigen::Index(gh) * gw, Eigen::Index(patch) * patch * c);
    for (int pr = 0; pr < gh; ++pr)
        for (int pc = 0; pc < gw; ++pc) {
            Eigen::Index row = Eigen::Index(pr) * gw + pc;
            for (int py = 0; py < patch; ++py)
                for (int px = 0; px < patch; ++px)
                    for (int ch = 0; ch < c; ++ch)
                        out(row, (Eigen::Index(py) * patch + px) * c + ch) =
                            image.at(pr * patch + py, pc * patch + px, ch);
        }
    return out;
}

template <typename S>
void check_patchify_dims(const FeatureGrid<S>& image, const ViTConfig& cfg) {
    if (image.height % cfg.patch_size != 0)
        throw std::invalid_argument("patchify: image height " + std::to_string(image.height) +
                                    " not divisible by patch_size " + std::to_string(cfg.patch_size));
    if (image.width % cfg.patch_size != 0)
        throw std::invalid_argument("patchify: image width " + std::to_string(image.width) +
                                    " not divisible by patch_size " + std::to_string(cfg.patch_size));
    if (image.channels() != cfg.in_channels)
        throw std::invalid_argument("patchify: image has " + std::to_string(image.channels()) +
                                    " channels, config expects " + std::to_string(cfg.in_channels));
}

/// Patch embedding on the tape: linear projection of flattened patches plus the fixed
/// positional encoding.
template <typename S>
Var<S> patchify_fwd(Tape<S>& t, const FeatureGrid<S>& image, const nn::LinearVars<S>& proj, const ViTConfig& cfg,
                    int* grid_h = nullptr, int* grid_w = nullptr) {
    check_patchify_dims(image, cfg);
    const int gh = image.height / cfg.patch_size, gw = image.width / cfg.patch_size;
    if (grid_h) *grid_h = gh;
    if (grid_w) *grid_w = gw;
    Var<S> patches = ad::constant(t, extract_patches(image, cfg.patch_size));
    Var<S> tok = nn::linear(patches, proj);
    return ad::add(tok, ad::constant(t, positional_encoding<S>(gh, gw, cfg.embed_dim)));
}

template <typename S>
TokenGrid<S> patchify(const FeatureGrid<S>& image, const Params<S>& params, const ViTConfig& cfg) {
    Tape<S> t;
    auto proj = nn::lift(t, params.patch_proj, false);
    int gh = 0, gw = 0;
    Var<S> tok = patchify_fwd(t, image, proj, cfg, &gh, &gw);
    return TokenGrid<S>(tok.value(), gh, gw);
}

/// Pre-norm transformer encoder: x' = x + MHSA(LN(x)); x'' = x' + MLP(LN(x')).
/// Throws with the layer index if any intermediate goes non-finite.
template <typename S>
Var<S> encode_fwd([[maybe_unused]] Tape<S>& t, Var<S> tokens, const Vars<S>& params, const ViTConfig& cfg) {
    if (int(tokens.cols()) != cfg.embed_dim)
        throw std::invalid_argument("encode: token dim " + std::to_string(tokens.cols()) + " != embed_dim " +
                                    std::to_string(cfg.embed_dim));
    Var<S> x = tokens;
    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        const auto& b = params.blocks[l];
        Var<S> ln = nn::layer_norm(x, b.ln1);
        x = ad::add(x, nn::multihead_attention(ln, ln, b.attn, cfg.num_heads));
        x = ad::add(x, nn::mlp(nn::layer_norm(x, b.ln2), b.mlp));
        if (!x.value().allFinite())
            throw std::runtime_error("encode: non-finite values after layer " + std::to_string(l));
    }
    return x;
}

template <typename S>
TokenGrid<S> encode(const TokenGrid<S>& tokens, const Params<S>& params, const ViTConfig& cfg) {
    Tape<S> t;
    auto vars = lift(t, params, false);
    Var<S> out = encode_fwd(t, ad::constant(t, tokens.tokens), vars, cfg);
    return TokenGrid<S>(out.value(), tokens.grid_h, tokens.grid_w);
}

/// ||Xs Xs^T - Xt Xt^T||_F^2 over same-shape token matrices.
template <typename S>
S gram_loss(const TokenGrid<S>& student, const TokenGrid<S>& teacher) {
    if (student.tokens.rows() != teacher.tokens.rows() || student.tokens.cols() != teacher.tokens.cols())
        throw std::invalid_argument("gram_loss: student " + std::to_string(student.tokens.rows()) + "x" +
                                    std::to_string(student.tokens.cols()) + " vs teacher " +
                                    std::to_string(teacher.tokens.rows()) + "x" +
                                    std::to_string(teacher.tokens.cols()));
    Mat<S> gs = student.tokens * student.tokens.transpose();
    Mat<S> gt = teacher.tokens * teacher.tokens.transpose();
    return (gs - gt).squaredNorm();
}

}  // namespace bgmatte::backbone
