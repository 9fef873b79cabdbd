#pragma once

#include "bgmatte/nn.hpp"
#include "bgmatte/tape_spatial.hpp"
#include "bgmatte/types.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace bgmatte::upsampler {

using ad::Tape;
using ad::Var;

struct UpsamplerConfig {
    int internal_dim = 32;   // d
    int upsample_factor = 8;
    std::optional<int> window;  // m; absent = global attention

    void validate() const {
        if (upsample_factor < 1) throw std::invalid_argument("UpsamplerConfig: upsample_factor must be >= 1");
        if (window && *window < 1) throw std::invalid_argument("UpsamplerConfig: window must be >= 1");
    }
};

template <typename S>
struct GuidanceFeatures {
    FeatureGrid<S> feature;  // H x W x d
};

struct UpsampleStats {
    std::int64_t attention_entries = 0;  // score-matrix entries actually materialized
};

template <typename T>
struct ParamsT {
    nn::ConvParamsT<T> guide_conv;    // 3x3, image channels -> d
    nn::NormParamsT<T> guide_norm;
    nn::LinearParamsT<T> guide_out;   // pointwise d -> d
    nn::LinearParamsT<T> enc_q;       // pointwise d -> d
    nn::LinearParamsT<T> enc_k;       // pointwise d -> d
    nn::LinearParamsT<T> mod_proj;    // backbone D -> 2d (gamma, beta)
};

template <typename S> using Params = ParamsT<Mat<S>>;
template <typename S> using Vars = ParamsT<Var<S>>;

template <typename S>
Params<S> init(const UpsamplerConfig& cfg, int backbone_dim, Rng& rng) {
    cfg.validate();
    const int d = cfg.internal_dim;
    Params<S> p;
    p.guide_conv = nn::init_conv<S>(rng, d, 3, 9);
    p.guide_norm = nn::init_norm<S>(d);
    p.guide_out = nn::init_linear<S>(rng, d, d);
    p.enc_q = nn::init_linear<S>(rng, d, d);
    p.enc_k = nn::init_linear<S>(rng, d, d);
    p.mod_proj = nn::init_linear<S>(rng, 2 * d, backbone_dim);
    return p;
}

template <typename S>
Vars<S> lift(Tape<S>& t, const Params<S>& p, bool rg) {
    return {nn::lift(t, p.guide_conv, rg), nn::lift(t, p.guide_norm, rg), nn::lift(t, p.guide_out, rg),
            nn::lift(t, p.enc_q, rg),      nn::lift(t, p.enc_k, rg),      nn::lift(t, p.mod_proj, rg)};
}

template <typename T, typename F>
void visit(ParamsT<T>& p, const std::string& prefix, F&& f) {
    nn::visit(p.guide_conv, prefix + ".guide_conv", f);
    nn::visit(p.guide_norm, prefix + ".guide_norm", f);
    nn::visit(p.guide_out, prefix + ".guide_out", f);
    nn::visit(p.enc_q, prefix + ".enc_q", f);
    nn::visit(p.enc_k, prefix + ".enc_k", f);
    nn::visit(p.mod_proj, prefix + ".mod_proj", f);
}

/// Small convolutional stack on the source image: conv3x3 -> GN -> ReLU -> pointwise.
template <typename S>
Var<S> encode_guidance_fwd(Tape<S>& t, const FeatureGrid<S>& image, const Vars<S>& p) {
    Var<S> x = ad::constant(t, image.data);
    x = ad::conv3x3(x, image.height, image.width, p.guide_conv.weight, p.guide_conv.bias);
    x = ad::relu(nn::group_norm(x, p.guide_norm, nn::group_norm_groups(int(x.cols()))));
    return nn::linear(x, p.guide_out);
}

template <typename S>
GuidanceFeatures<S> encode_guidance(const FeatureGrid<S>& image, const Params<S>& params) {
    Tape<S> t;
    Vars<S> v = lift(t, params, false);
    Var<S> g = encode_guidance_fwd(t, image, v);
    return {FeatureGrid<S>(g.value(), image.height, image.width)};
}

/// Q = Pool_{out_h x out_w}(Enc_q(I_E)).
template <typename S>
Var<S> make_queries_fwd([[maybe_unused]] Tape<S>& t, Var<S> guidance, int h, int w, int out_h, int out_w,
                        const Vars<S>& p) {
    if (out_h > h || out_w > w)
        throw std::invalid_argument("make_queries: requested " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                                    " exceeds guidance " + std::to_string(h) + "x" + std::to_string(w));
    return ad::adaptive_avg_pool(nn::linear(guidance, p.enc_q), h, w, out_h, out_w);
}

template <typename S>
FeatureGrid<S> make_queries(const GuidanceFeatures<S>& g, int out_h, int out_w, const Params<S>& params) {
    Tape<S> t;
    Vars<S> v = lift(t, params, false);
    Var<S> q = make_queries_fwd(t, ad::constant(t, g.feature.data), g.feature.height, g.feature.width, out_h, out_w, v);
    return FeatureGrid<S>(q.value(), out_h, out_w);
}

/// K = gamma .* Pool_{hb x wb}(Enc_k(I_E)) + beta with (gamma, beta) = Proj(F_lr).
template <typename S>
Var<S> make_keys_fwd([[maybe_unused]] Tape<S>& t, Var<S> guidance, int h, int w, Var<S> f_lr, int hb, int wb,
                     const Vars<S>& p) {
    if (f_lr.rows() != Eigen::Index(hb) * wb)
        throw std::invalid_argument("make_keys: f_lr has " + std::to_string(f_lr.rows()) + " cells, grid says " +
                                    std::to_string(Eigen::Index(hb) * wb));
    const int d = int(p.enc_k.weight.value().rows());
    Var<S> pre = ad::adaptive_avg_pool(nn::linear(guidance, p.enc_k), h, w, hb, wb);
    Var<S> gb = nn::linear(f_lr, p.mod_proj);
    Var<S> gamma = ad::slice_cols(gb, 0, d);
    Var<S> beta = ad::slice_cols(gb, d, d);
    return ad::add(ad::mul(gamma, pre), beta);
}

template <typename S>
FeatureGrid<S> make_keys(const GuidanceFeatures<S>& g, const FeatureGrid<S>& f_lr, const Params<S>& params) {
    Tape<S> t;
    Vars<S> v = lift(t, params, false);
    Var<S> k = make_keys_fwd(t, ad::constant(t, g.feature.data), g.feature.height, g.feature.width,
                             ad::constant(t, f_lr.data), f_lr.height, f_lr.width, v);
    return FeatureGrid<S>(k.value(), f_lr.height, f_lr.width);
}

/// Single-head cross-attention from output-grid queries to backbone-grid keys with
/// V = F_lr, temperature 1/sqrt(d). Global unless cfg.window is set, in which case
/// attention is restricted to corresponding windows: key window (wy, wx) covers key
/// cells [wy*m, (wy+1)*m) x [wx*m, (wx+1)*m) clipped to the grid, and the queries of
/// the matching factor*m-sized output window attend only to those keys.
template <typename S>
Var<S> upsample_fwd(Tape<S>& t, Var<S> f_lr, int hb, int wb, const FeatureGrid<S>& image, const UpsamplerConfig& cfg,
                    const Vars<S>& p, UpsampleStats* stats = nullptr) {
    cfg.validate();
    const int f = cfg.upsample_factor;
    const int oh = hb * f, ow = wb * f;
    if (image.height < oh || image.width < ow)
        throw std::invalid_argument("upsample: image " + std::to_string(image.height) + "x" +
                                    std::to_string(image.width) + " smaller than output " + std::to_string(oh) + "x" +
                                    std::to_string(ow));
    Var<S> guidance = encode_guidance_fwd(t, image, p);
    Var<S> q = make_queries_fwd(t, guidance, image.height, image.width, oh, ow, p);
    Var<S> k = make_keys_fwd(t, guidance, image.height, image.width, f_lr, hb, wb, p);
    const S inv_sqrt = S(1) / std::sqrt(S(q.cols()));

    if (!cfg.window) {
        Var<S> attn = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt));
        if (stats) stats->attention_entries = std::int64_t(attn.rows()) * attn.cols();
        return ad::matmul(attn, f_lr);
    }

    const int m = *cfg.window;
    const int wy_count = (hb + m - 1) / m, wx_count = (wb + m - 1) / m;
    std::vector<Var<S>> parts;
    std::vector<std::vector<Eigen::Index>> dests;
    std::int64_t entries = 0;
    for (int wy = 0; wy < wy_count; ++wy)
        for (int wx = 0; wx < wx_count; ++wx) {
            std::vector<Eigen::Index> kidx;
            for (int ky = wy * m; ky < std::min((wy + 1) * m, hb); ++ky)
                for (int kx = wx * m; kx < std::min((wx + 1) * m, wb); ++kx)
                    kidx.push_back(Eigen::Index(ky) * wb + kx);
            std::vector<Eigen::Index> qidx;
            for (int y = wy * m * f; y < std::min((wy + 1) * m * f, oh); ++y)
                for (int x = wx * m * f; x < std::min((wx + 1) * m * f, ow); ++x)
                    qidx.push_back(Eigen::Index(y) * ow + x);
            Var<S> qw = ad::gather_rows(q, qidx);
            Var<S> kw = ad::gather_rows(k, kidx);
            Var<S> vw = ad::gather_rows(f_lr, kidx);
            Var<S> attn = ad::softmax_rows(ad::scale(ad::matmul_nt(qw, kw), inv_sqrt));
            entries += std::int64_t(attn.rows()) * attn.cols();
            parts.push_back(ad::matmul(attn, vw));
            dests.push_back(std::move(qidx));
        }
    if (stats) stats->attention_entries = entries;
    return ad::scatter_rows(parts, dests, Eigen::Index(oh) * ow);
}

template <typename S>
FeatureGrid<S> upsample(const FeatureGrid<S>& f_lr, const FeatureGrid<S>& image, const UpsamplerConfig& cfg,
                        const Params<S>& params, UpsampleStats* stats = nullptr) {
    Tape<S> t;
    Vars<S> v = lift(t, params, false);
    Var<S> out = upsample_fwd(t, ad::constant(t, f_lr.data), f_lr.height, f_lr.width, image, cfg, v, stats);
    return FeatureGrid<S>(out.value(), f_lr.height * cfg.upsample_factor, f_lr.width * cfg.upsample_factor);
}

/// Windowed variant: identical interface, window taken from cfg (must be set).
template <typename S>
FeatureGrid<S> upsample_windowed(const FeatureGrid<S>& f_lr, const FeatureGrid<S>& image, const UpsamplerConfig& cfg,
                                 const Params<S>& params, UpsampleStats* stats = nullptr) {
    if (!cfg.window) throw std::invalid_argument("upsample_windowed: cfg.window is not set");
    return upsample(f_lr, image, cfg, params, stats);
}

/// Score-matrix entry count for a given configuration (exact, matches the forward pass
/// when the grids divide evenly by the window).
inline std::int64_t attention_entry_count(const UpsamplerConfig& cfg, int hb, int wb) {
    const std::int64_t f = cfg.upsample_factor;
    const std::int64_t out = std::int64_t(hb) * f * wb * f;
    if (!cfg.window) return out * hb * wb;
    const int m = *cfg.window;
    std::int64_t entries = 0;
    const int wy_count = (hb + m - 1) / m, wx_count = (wb + m - 1) / m;
    for (int wy = 0; wy < wy_count; ++wy)
        for (int wx = 0; wx < wx_count; ++wx) {
            std::int64_t keys = std::int64_t(std::min((wy + 1) * m, hb) - wy * m) *
                                (std::min((wx + 1) * m, wb) - wx * m);
            std::int64_t queries = keys * f * f;
            entries += queries * keys;
        }
    return entries;
}

}  // namespace bgmatte::upsampler
