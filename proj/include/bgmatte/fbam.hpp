#pragma once

#include "bgmatte/nn.hpp"
#include "bgmatte/types.hpp"

#include <string>
#include <vector>

namespace bgmatte::fbam {

using ad::Tape;
using ad::Var;

struct FbamConfig {
    int num_layers = 2;
    int dim = 64;
    int num_heads = 4;

    void validate() const {
        if (num_layers < 1) throw std::invalid_argument("FbamConfig: num_layers must be >= 1");
        if (dim % num_heads != 0)
            throw std::invalid_argument("FbamConfig: dim " + std::to_string(dim) + " not divisible by num_heads " +
                                        std::to_string(num_heads));
    }
};

/// FBAM output rastered back to the token-grid geometry.
template <typename S>
struct AlignedFeatures {
    FeatureGrid<S> feature;
};

/// phi: pointwise conv + GroupNorm + ReLU, shared by the image and background streams.
template <typename T>
struct AdaptT {
    nn::LinearParamsT<T> conv;
    nn::NormParamsT<T> norm;
};

template <typename T>
struct LayerT {
    nn::NormParamsT<T> ln1;
    nn::AttentionParamsT<T> self_attn;
    nn::NormParamsT<T> ln_q;
    nn::NormParamsT<T> ln_kv;
    nn::AttentionParamsT<T> cross_attn;
    nn::NormParamsT<T> ln2;
    nn::MlpParamsT<T> mlp;
};

template <typename T>
struct ParamsT {
    AdaptT<T> adapt;
    std::vector<LayerT<T>> layers;
};

template <typename S> using Params = ParamsT<Mat<S>>;
template <typename S> using Vars = ParamsT<Var<S>>;

template <typename S>
Params<S> init(const FbamConfig& cfg, Rng& rng) {
    cfg.validate();
    Params<S> p;
    p.adapt.conv = nn::init_linear<S>(rng, cfg.dim, cfg.dim);
    p.adapt.norm = nn::init_norm<S>(cfg.dim);
    p.layers.resize(std::size_t(cfg.num_layers));
    for (auto& l : p.layers) {
        l.ln1 = nn::init_norm<S>(cfg.dim);
        l.self_attn = nn::init_attention<S>(rng, cfg.dim);
        l.ln_q = nn::init_norm<S>(cfg.dim);
        l.ln_kv = nn::init_norm<S>(cfg.dim);
        l.cross_attn = nn::init_attention<S>(rng, cfg.dim);
        l.ln2 = nn::init_norm<S>(cfg.dim);
        l.mlp = nn::init_mlp<S>(rng, cfg.dim, 4 * cfg.dim);
    }
    return p;
}

template <typename S>
Vars<S> lift(Tape<S>& t, const Params<S>& p, bool rg) {
    Vars<S> v;
    v.adapt = {nn::lift(t, p.adapt.conv, rg), nn::lift(t, p.adapt.norm, rg)};
    for (const auto& l : p.layers)
        v.layers.push_back({nn::lift(t, l.ln1, rg), nn::lift(t, l.self_attn, rg), nn::lift(t, l.ln_q, rg),
                            nn::lift(t, l.ln_kv, rg), nn::lift(t, l.cross_attn, rg), nn::lift(t, l.ln2, rg),
                            nn::lift(t, l.mlp, rg)});
    return v;
}

template <typename T, typename F>
void visit(ParamsT<T>& p, const std::string& prefix, F&& f) {
    nn::visit(p.adapt.conv, prefix + ".adapt.conv", f);
    nn::visit(p.adapt.norm, prefix + ".adapt.norm", f);
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        std::string lp = prefix + ".layer" + std::to_string(i);
        nn::visit(p.layers[i].ln1, lp + ".ln1", f);
        nn::visit(p.layers[i].self_attn, lp + ".self_attn", f);
        nn::visit(p.layers[i].ln_q, lp + ".ln_q", f);
        nn::visit(p.layers[i].ln_kv, lp + ".ln_kv", f);
        nn::visit(p.layers[i].cross_attn, lp + ".cross_attn", f);
        nn::visit(p.layers[i].ln2, lp + ".ln2", f);
        nn::visit(p.layers[i].mlp, lp + ".mlp", f);
    }
}

/// phi(x) = ReLU(GroupNorm(PointwiseConv(x))) applied token-wise.
template <typename S>
Var<S> adapt_fwd([[maybe_unused]] Tape<S>& t, Var<S> tokens, const AdaptT<Var<S>>& p) {
    if (tokens.cols() != p.conv.weight.value().cols())
        throw std::invalid_argument("adapt: token dim " + std::to_string(tokens.cols()) +
                                    " does not match conv input dim " +
                                    std::to_string(p.conv.weight.value().cols()));
    Var<S> y = nn::linear(tokens, p.conv);
    y = nn::group_norm(y, p.norm, nn::group_norm_groups(int(y.cols())));
    return ad::relu(y);
}

template <typename S>
TokenGrid<S> adapt(const TokenGrid<S>& tokens, const Params<S>& params) {
    Tape<S> t;
    AdaptT<Var<S>> av{nn::lift(t, params.adapt.conv, false), nn::lift(t, params.adapt.norm, false)};
    Var<S> out = adapt_fwd(t, ad::constant(t, tokens.tokens), av);
    return TokenGrid<S>(out.value(), tokens.grid_h, tokens.grid_w);
}

/// One FBAM layer; cross-attention keys/values always come from the layer-0 adapted
/// background stream.
template <typename S>
Var<S> layer_fwd([[maybe_unused]] Tape<S>& t, Var<S> x_img, Var<S> x_bg0, const LayerT<Var<S>>& l, int num_heads) {
    if (x_img.cols() != x_bg0.cols())
        throw std::invalid_argument("fbam_layer: stream dims differ, image " + std::to_string(x_img.cols()) +
                                    " vs background " + std::to_string(x_bg0.cols()));
    Var<S> norm = nn::layer_norm(x_img, l.ln1);
    Var<S> x_sa = ad::add(x_img, nn::multihead_attention(norm, norm, l.self_attn, num_heads));
    Var<S> x_ca = ad::add(x_sa, nn::multihead_attention(nn::layer_norm(x_sa, l.ln_q), nn::layer_norm(x_bg0, l.ln_kv),
                                                        l.cross_attn, num_heads));
    return ad::add(x_ca, nn::mlp(nn::layer_norm(x_ca, l.ln2), l.mlp));
}

template <typename S>
TokenGrid<S> fbam_layer(const TokenGrid<S>& x_img, const TokenGrid<S>& x_bg0, const Params<S>& params,
                        std::size_t layer_index, int num_heads) {
    Tape<S> t;
    Vars<S> v = lift(t, params, false);
    Var<S> out = layer_fwd(t, ad::constant(t, x_img.tokens), ad::constant(t, x_bg0.tokens),
                           v.layers.at(layer_index), num_heads);
    return TokenGrid<S>(out.value(), x_img.grid_h, x_img.grid_w);
}

/// Adapt both streams with the shared phi, run the layer stack on the image stream
/// (background fixed at its adapted layer-0 form), raster tokens to a feature map.
template <typename S>
Var<S> stack_fwd(Tape<S>& t, Var<S> img_tokens, Var<S> bg_tokens, const Vars<S>& params, const FbamConfig& cfg) {
    if (int(params.layers.size()) != cfg.num_layers)
        throw std::invalid_argument("fbam_stack: params carry " + std::to_string(params.layers.size()) +
                                    " layers, config expects " + std::to_string(cfg.num_layers));
    if (img_tokens.rows() != bg_tokens.rows() || img_tokens.cols() != bg_tokens.cols())
        throw std::invalid_argument("fbam_stack: image and background token shapes differ");
    Var<S> x = adapt_fwd(t, img_tokens, params.adapt);
    Var<S> bg0 = adapt_fwd(t, bg_tokens, params.adapt);
    for (const auto& l : params.layers) x = layer_fwd(t, x, bg0, l, cfg.num_heads);
    return x;
}

template <typename S>
AlignedFeatures<S> fbam_stack(const TokenGrid<S>& x_img, const TokenGrid<S>& x_bg, const FbamConfig& cfg,
                              const Params<S>& params) {
    Tape<S> t;
    Vars<S> v = lift(t, params, false);
    Var<S> out = stack_fwd(t, ad::constant(t, x_img.tokens), ad::constant(t, x_bg.tokens), v, cfg);
    return {FeatureGrid<S>(out.value(), x_img.grid_h, x_img.grid_w)};
}

}  // namespace bgmatte::fbam
