#pragma once

#include "bgmatte/fbam.hpp"
#include "bgmatte/nn.hpp"
#include "bgmatte/tape_spatial.hpp"
#include "bgmatte/types.hpp"

#include <array>
#include <type_traits>
#include <string>

namespace bgmatte::decoder {

using ad::Tape;
using ad::Var;

struct DecoderConfig {
    std::array<int, 3> stage_channels = {128, 64, 32};
    int head_channels = 16;

    void validate() const {
        for (int c : stage_channels)
            if (c <= 0) throw std::invalid_argument("DecoderConfig: stage channels must be positive");
        if (head_channels <= 0) throw std::invalid_argument("DecoderConfig: head_channels must be positive");
    }
};

/// Residual refinement unit: h' = ReLU(GN(conv1(h))); out = skip(h) + GN(conv2(h'))
/// with a 1x1 projection on the skip when channel counts differ.
template <typename T>
struct ResUnitT {
    nn::ConvParamsT<T> conv1, conv2;  // 3x3
    nn::NormParamsT<T> gn1, gn2;
    bool has_proj = false;
    nn::LinearParamsT<T> proj;
};

template <typename T>
struct ParamsT {
    DecoderConfig cfg;
    ResUnitT<T> stage1, stage2, stage3;
    ResUnitT<T> backbone_skip;               // adapts backbone tokens for the stage-1 merge
    bool has_upsampler_skip = true;
    ResUnitT<T> upsampler_skip;              // adapts upsampler features for the stage-3 merge
    nn::LinearParamsT<T> merge1;             // 1x1 after the stage-1 concat
    nn::LinearParamsT<T> merge3;             // 1x1 after the stage-3 concat -> head_channels
    nn::ConvParamsT<T> head;                 // 3x3 -> 1 channel
};

template <typename S> using ResUnit = ResUnitT<Mat<S>>;
template <typename S> using Params = ParamsT<Mat<S>>;
template <typename S> using Vars = ParamsT<Var<S>>;

template <typename S>
ResUnit<S> init_res_unit(Rng& rng, int c_in, int c_out) {
    ResUnit<S> u;
    u.conv1 = nn::init_conv<S>(rng, c_out, c_in, 9);
    u.gn1 = nn::init_norm<S>(c_out);
    u.conv2 = nn::init_conv<S>(rng, c_out, c_out, 9);
    u.gn2 = nn::init_norm<S>(c_out);
    u.has_proj = c_in != c_out;
    if (u.has_proj) u.proj = nn::init_linear<S>(rng, c_out, c_in);
    return u;
}

template <typename S>
Params<S> init(const DecoderConfig& cfg, int backbone_dim, bool upsampler_skip, Rng& rng) {
    cfg.validate();
    const auto [c1, c2, c3] = cfg.stage_channels;
    Params<S> p;
    p.cfg = cfg;
    p.stage1 = init_res_unit<S>(rng, backbone_dim, c1);
    p.backbone_skip = init_res_unit<S>(rng, backbone_dim, c1);
    p.merge1 = nn::init_linear<S>(rng, c1, 2 * c1);
    p.stage2 = init_res_unit<S>(rng, c1, c2);
    p.stage3 = init_res_unit<S>(rng, c2, c3);
    p.has_upsampler_skip = upsampler_skip;
    if (upsampler_skip) p.upsampler_skip = init_res_unit<S>(rng, backbone_dim, c3);
    p.merge3 = nn::init_linear<S>(rng, cfg.head_channels, upsampler_skip ? 2 * c3 : c3);
    p.head = nn::init_conv<S>(rng, 1, cfg.head_channels, 9);
    return p;
}

template <typename S>
ResUnitT<Var<S>> lift(Tape<S>& t, const ResUnit<S>& u, bool rg) {
    ResUnitT<Var<S>> v;
    v.conv1 = nn::lift(t, u.conv1, rg);
    v.gn1 = nn::lift(t, u.gn1, rg);
    v.conv2 = nn::lift(t, u.conv2, rg);
    v.gn2 = nn::lift(t, u.gn2, rg);
    v.has_proj = u.has_proj;
    if (u.has_proj) v.proj = nn::lift(t, u.proj, rg);
    return v;
}

template <typename S>
Vars<S> lift(Tape<S>& t, const Params<S>& p, bool rg) {
    Vars<S> v;
    v.cfg = p.cfg;
    v.stage1 = lift(t, p.stage1, rg);
    v.backbone_skip = lift(t, p.backbone_skip, rg);
    v.merge1 = nn::lift(t, p.merge1, rg);
    v.stage2 = lift(t, p.stage2, rg);
    v.stage3 = lift(t, p.stage3, rg);
    v.has_upsampler_skip = p.has_upsampler_skip;
    if (p.has_upsampler_skip) v.upsampler_skip = lift(t, p.upsampler_skip, rg);
    v.merge3 = nn::lift(t, p.merge3, rg);
    v.head = nn::lift(t, p.head, rg);
    return v;
}

template <typename T, typename F>
void visit_res_unit(ResUnitT<T>& u, const std::string& prefix, F&& f) {
    nn::visit(u.conv1, prefix + ".conv1", f);
    nn::visit(u.gn1, prefix + ".gn1", f);
    nn::visit(u.conv2, prefix + ".conv2", f);
    nn::visit(u.gn2, prefix + ".gn2", f);
    if (u.has_proj) nn::visit(u.proj, prefix + ".proj", f);
}

template <typename T, typename F>
void visit(ParamsT<T>& p, const std::string& prefix, F&& f) {
    visit_res_unit(p.stage1, prefix + ".stage1", f);
    visit_res_unit(p.backbone_skip, prefix + ".backbone_skip", f);
    nn::visit(p.merge1, prefix + ".merge1", f);
    visit_res_unit(p.stage2, prefix + ".stage2", f);
    visit_res_unit(p.stage3, prefix + ".stage3", f);
    if (p.has_upsampler_skip) visit_res_unit(p.upsampler_skip, prefix + ".upsampler_skip", f);
    nn::visit(p.merge3, prefix + ".merge3", f);
    nn::visit(p.head, prefix + ".head", f);
}

template <typename S>
Var<S> res_unit_fwd(Var<S> x, int h, int w, const ResUnitT<Var<S>>& u) {
    Var<S> hp = ad::conv3x3(x, h, w, u.conv1.weight, u.conv1.bias);
    hp = ad::relu(nn::group_norm(hp, u.gn1, nn::group_norm_groups(int(hp.cols()))));
    Var<S> res = ad::conv3x3(hp, h, w, u.conv2.weight, u.conv2.bias);
    res = nn::group_norm(res, u.gn2, nn::group_norm_groups(int(res.cols())));
    Var<S> skip = u.has_proj ? nn::linear(x, u.proj) : x;
    return ad::add(skip, res);
}

template <typename S>
FeatureGrid<S> residual_unit(const FeatureGrid<S>& x, const ResUnit<S>& u) {
    Tape<S> t;
    auto v = lift(t, u, false);
    Var<S> out = res_unit_fwd(ad::constant(t, x.data), x.height, x.width, v);
    return FeatureGrid<S>(out.value(), x.height, x.width);
}

namespace detail {
inline void require_dims(int got_h, int got_w, int want_h, int want_w, const char* what) {
    if (got_h != want_h || got_w != want_w)
        throw std::invalid_argument(std::string("decode: ") + what + " expected " + std::to_string(want_h) + "x" +
                                    std::to_string(want_w) + ", got " + std::to_string(got_h) + "x" +
                                    std::to_string(got_w));
}
}  // namespace detail

/// Three progressive 2x stages from the 1/16-scale aligned features, with the
/// backbone skip merged at stage 1 and the upsampler skip at stage 3, then a final
/// 2x + 3x3 conv + sigmoid head. `hires` must sit at 8x the token grid (1/2 scale);
/// pass nullptr when the model runs without the upsampler.
/// `extra_hires` is an optional additional 1/2-scale stream (convolutional shortcut
/// ablation), already adapted to stage-3 width, concatenated before merge3 -- its
/// width must be accounted for in merge3 at init time by the caller.
template <typename S>
Var<S> decode_fwd(Tape<S>& t, Var<S> aligned, int hb, int wb, Var<S> backbone_feat,
                  std::type_identity_t<const Var<S>*> hires, int hires_h, int hires_w, const Vars<S>& p,
                  std::type_identity_t<const Var<S>*> extra_hires = nullptr, int* stage_dims = nullptr) {
    if (backbone_feat.rows() != aligned.rows())
        throw std::invalid_argument("decode: backbone feature count " + std::to_string(backbone_feat.rows()) +
                                    " does not match aligned grid " + std::to_string(aligned.rows()));
    if (hires) detail::require_dims(hires_h, hires_w, 8 * hb, 8 * wb, "upsampler features");

    // stage 1: 1/16 -> 1/8, merge 2x-upsampled residual-adapted backbone features
    int h = 2 * hb, w = 2 * wb;
    Var<S> x = res_unit_fwd(ad::bilinear_up2(aligned, hb, wb), h, w, p.stage1);
    Var<S> skip = res_unit_fwd(ad::bilinear_up2(backbone_feat, hb, wb), h, w, p.backbone_skip);
    x = nn::linear(ad::concat_cols<S>({x, skip}), p.merge1);
    if (stage_dims) stage_dims[0] = h;

    // stage 2: 1/8 -> 1/4
    x = res_unit_fwd(ad::bilinear_up2(x, h, w), 2 * h, 2 * w, p.stage2);
    h *= 2;
    w *= 2;
    if (stage_dims) stage_dims[1] = h;

    // stage 3: 1/4 -> 1/2, merge adapted upsampler features
    x = res_unit_fwd(ad::bilinear_up2(x, h, w), 2 * h, 2 * w, p.stage3);
    h *= 2;
    w *= 2;
    if (stage_dims) stage_dims[2] = h;
    std::vector<Var<S>> streams{x};
    if (hires && p.has_upsampler_skip) streams.push_back(res_unit_fwd(*hires, h, w, p.upsampler_skip));
    if (extra_hires) streams.push_back(*extra_hires);
    x = nn::linear(streams.size() > 1 ? ad::concat_cols(streams) : x, p.merge3);

    // head: one additional 2x, 3x3 conv to one channel, sigmoid
    x = ad::bilinear_up2(x, h, w);
    h *= 2;
    w *= 2;
    if (stage_dims) stage_dims[3] = h;
    return ad::sigmoid(ad::conv3x3(x, h, w, p.head.weight, p.head.bias));
}

template <typename S>
AlphaMatte<S> decode(const fbam::AlignedFeatures<S>& aligned, const TokenGrid<S>& backbone_feat,
                     const FeatureGrid<S>& hires_feat, const Params<S>& params) {
    if (backbone_feat.grid_h != aligned.feature.height || backbone_feat.grid_w != aligned.feature.width)
        throw std::invalid_argument("decode: backbone grid " + std::to_string(backbone_feat.grid_h) + "x" +
                                    std::to_string(backbone_feat.grid_w) + " does not match aligned " +
                                    std::to_string(aligned.feature.height) + "x" +
                                    std::to_string(aligned.feature.width));
    Tape<S> t;
    auto v = lift(t, params, false);
    Var<S> hires = ad::constant(t, hires_feat.data);
    Var<S> out = decode_fwd(t, ad::constant(t, aligned.feature.data), aligned.feature.height, aligned.feature.width,
                            ad::constant(t, backbone_feat.tokens), &hires, hires_feat.height, hires_feat.width, v);
    const int hh = 16 * aligned.feature.height, ww = 16 * aligned.feature.width;
    Mat<S> alpha(hh, ww);
    for (int y = 0; y < hh; ++y)
        for (int x = 0; x < ww; ++x) alpha(y, x) = out.value()(Eigen::Index(y) * ww + x, 0);
    return AlphaMatte<S>(std::move(alpha));
}

}  // namespace bgmatte::decoder
