#pragma once

#include "bgmatte/backbone.hpp"
#include "bgmatte/config.hpp"
#include "bgmatte/decoder.hpp"
#include "bgmatte/fbam.hpp"
#include "bgmatte/upsampler.hpp"

#include <cstdint>
#include <string>

namespace bgmatte::model {

using ad::Tape;
using ad::Var;

/// Full model parameter bundle; which sub-modules exist depends on the ablation.
template <typename S>
struct ModelParams {
    TrainConfig cfg;
    backbone::ViTConfig vit_cfg;
    fbam::FbamConfig fbam_cfg;
    upsampler::UpsamplerConfig ups_cfg;

    backbone::Params<S> backbone_p;
    fbam::Params<S> fbam_p;
    upsampler::Params<S> upsampler_p;
    decoder::Params<S> decoder_p;
    nn::ConvParams<S> conv_branch_in;   // 3x3 on the half-res image (conv_branch only)
    nn::NormParams<S> conv_branch_norm;
    nn::ConvParams<S> conv_branch_out;

    bool has_fbam = true;
    bool has_upsampler = true;
    bool has_conv_branch = false;
};

template <typename S>
struct ModelVars {
    backbone::Vars<S> backbone_v;
    fbam::Vars<S> fbam_v;
    upsampler::Vars<S> upsampler_v;
    decoder::Vars<S> decoder_v;
    nn::ConvVars<S> conv_branch_in;
    nn::NormVars<S> conv_branch_norm;
    nn::ConvVars<S> conv_branch_out;
};

/// Constructs all modules from the config. Each module draws from its own seed
/// stream, so the presence of one module never shifts another's initialization.
template <typename S>
ModelParams<S> build_model(const TrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (cfg.patch_size != 16)
        throw std::invalid_argument("build_model: the decoder's 16x total upsampling requires patch_size 16");
    ModelParams<S> m;
    m.cfg = cfg;
    m.cfg.seed = seed;

    m.vit_cfg.patch_size = cfg.patch_size;
    m.vit_cfg.embed_dim = cfg.embed_dim;
    m.vit_cfg.depth = cfg.depth;
    m.vit_cfg.num_heads = cfg.num_heads;
    m.vit_cfg.mlp_ratio = cfg.mlp_ratio;
    m.vit_cfg.frozen = cfg.ablation != Ablation::ConcatCondition;
    m.vit_cfg.in_channels = cfg.ablation == Ablation::ConcatCondition ? 6 : 3;

    m.fbam_cfg.num_layers = cfg.fbam_layers;
    m.fbam_cfg.dim = cfg.embed_dim;
    m.fbam_cfg.num_heads = cfg.num_heads;

    m.ups_cfg.internal_dim = cfg.upsampler_dim;
    m.ups_cfg.upsample_factor = cfg.upsample_factor;
    if (cfg.window > 0) m.ups_cfg.window = cfg.window;

    m.has_fbam = cfg.ablation == Ablation::Full || cfg.ablation == Ablation::ConvBranch;
    m.has_upsampler = cfg.ablation != Ablation::Baseline;
    m.has_conv_branch = cfg.ablation == Ablation::ConvBranch;

    decoder::DecoderConfig dc;
    dc.stage_channels = {cfg.stage_channels[0], cfg.stage_channels[1], cfg.stage_channels[2]};
    dc.head_channels = cfg.head_channels;

    Rng rb(mix_seed(seed, 1));
    m.backbone_p = backbone::init<S>(m.vit_cfg, rb);
    if (m.has_fbam) {
        Rng rf(mix_seed(seed, 2));
        m.fbam_p = fbam::init<S>(m.fbam_cfg, rf);
    }
    if (m.has_upsampler) {
        Rng ru(mix_seed(seed, 3));
        m.upsampler_p = upsampler::init<S>(m.ups_cfg, cfg.embed_dim, ru);
    }
    {
        Rng rd(mix_seed(seed, 4));
        m.decoder_p = decoder::init<S>(dc, cfg.embed_dim, m.has_upsampler, rd);
        if (m.has_conv_branch) {
            // widen merge3 for the extra half-res stream
            int c3 = dc.stage_channels[2];
            int width = (m.has_upsampler ? 2 : 1) * c3 + c3;
            Rng rm(mix_seed(seed, 5));
            m.decoder_p.merge3 = nn::init_linear<S>(rm, dc.head_channels, width);
        }
    }
    if (m.has_conv_branch) {
        Rng rc(mix_seed(seed, 6));
        int c3 = dc.stage_channels[2];
        m.conv_branch_in = nn::init_conv<S>(rc, c3, 3, 9);
        m.conv_branch_norm = nn::init_norm<S>(c3);
        m.conv_branch_out = nn::init_conv<S>(rc, c3, c3, 9);
    }
    return m;
}

/// Per-module trainability mask used when lifting onto a tape.
struct GradMask {
    bool backbone = false;
    bool fbam = true;
    bool upsampler = true;
    bool decoder = true;
    bool conv_branch = true;

    static GradMask none() { return {false, false, false, false, false}; }
    static GradMask all() { return {true, true, true, true, true}; }
};

template <typename S>
ModelVars<S> lift(Tape<S>& t, const ModelParams<S>& m, const GradMask& g) {
    ModelVars<S> v;
    v.backbone_v = backbone::lift(t, m.backbone_p, g.backbone);
    if (m.has_fbam) v.fbam_v = fbam::lift(t, m.fbam_p, g.fbam);
    if (m.has_upsampler) v.upsampler_v = upsampler::lift(t, m.upsampler_p, g.upsampler);
    v.decoder_v = decoder::lift(t, m.decoder_p, g.decoder);
    if (m.has_conv_branch) {
        v.conv_branch_in = nn::lift(t, m.conv_branch_in, g.conv_branch);
        v.conv_branch_norm = nn::lift(t, m.conv_branch_norm, g.conv_branch);
        v.conv_branch_out = nn::lift(t, m.conv_branch_out, g.conv_branch);
    }
    return v;
}

/// Stable-ordered traversal over every parameter matrix; names are prefixed by
/// module so optimizer groups and serialization can classify them.
template <typename S, typename F>
void visit_params(ModelParams<S>& m, F&& f) {
    backbone::visit(m.backbone_p, "backbone", f);
    if (m.has_fbam) fbam::visit(m.fbam_p, "fbam", f);
    if (m.has_upsampler) upsampler::visit(m.upsampler_p, "upsampler", f);
    decoder::visit(m.decoder_p, "decoder", f);
    if (m.has_conv_branch) {
        nn::visit(m.conv_branch_in, "convbranch.in", f);
        nn::visit(m.conv_branch_norm, "convbranch.norm", f);
        nn::visit(m.conv_branch_out, "convbranch.out", f);
    }
}

template <typename S, typename F>
void visit_vars(ModelVars<S>& v, const ModelParams<S>& m, F&& f) {
    backbone::visit(v.backbone_v, "backbone", f);
    if (m.has_fbam) fbam::visit(v.fbam_v, "fbam", f);
    if (m.has_upsampler) upsampler::visit(v.upsampler_v, "upsampler", f);
    decoder::visit(v.decoder_v, "decoder", f);
    if (m.has_conv_branch) {
        nn::visit(v.conv_branch_in, "convbranch.in", f);
        nn::visit(v.conv_branch_norm, "convbranch.norm", f);
        nn::visit(v.conv_branch_out, "convbranch.out", f);
    }
}

template <typename S>
long parameter_count(const ModelParams<S>& m) {
    long n = 0;
    visit_params(const_cast<ModelParams<S>&>(m), [&](const std::string&, const Mat<S>& mat) { n += long(mat.size()); });
    return n;
}

/// Stage resolutions of the pipeline for a given input size: token grid, the three
/// decoder stages, and the head output. Pure bookkeeping, shared with the forward
/// pass via the same formulas.
struct PipelinePlan {
    int tokens_h = 0, tokens_w = 0;
    int stage1 = 0, stage2 = 0, stage3 = 0;
    int head = 0;
    int upsampler_h = 0, upsampler_w = 0;
};

inline PipelinePlan pipeline_plan(int res, int patch, int factor) {
    PipelinePlan p;
    p.tokens_h = res / patch;
    p.tokens_w = res / patch;
    p.stage1 = 2 * p.tokens_h;
    p.stage2 = 4 * p.tokens_h;
    p.stage3 = 8 * p.tokens_h;
    p.head = 16 * p.tokens_h;
    p.upsampler_h = factor * p.tokens_h;
    p.upsampler_w = factor * p.tokens_w;
    return p;
}

/// Full forward pass on the tape. Returns the (H*W) x 1 alpha column;
/// `stage_dims` (4 ints) and `ups_stats` are optional instrumentation.
template <typename S>
Var<S> forward_fwd(Tape<S>& t, const ModelParams<S>& m, const ModelVars<S>& v, const FeatureGrid<S>& image,
                   const FeatureGrid<S>& background, upsampler::UpsampleStats* ups_stats = nullptr,
                   int* stage_dims = nullptr) {
    if (image.height != background.height || image.width != background.width)
        throw std::invalid_argument("forward: image " + std::to_string(image.height) + "x" +
                                    std::to_string(image.width) + " vs background " +
                                    std::to_string(background.height) + "x" + std::to_string(background.width));

    int gh = 0, gw = 0;
    Var<S> tok_img;
    if (m.vit_cfg.in_channels == 6) {
        FeatureGrid<S> both(image.height, image.width, 6);
        both.data << image.data, background.data;
        tok_img = backbone::encode_fwd(t, backbone::patchify_fwd(t, both, v.backbone_v.patch_proj, m.vit_cfg, &gh, &gw),
                                       v.backbone_v, m.vit_cfg);
    } else {
        tok_img = backbone::encode_fwd(t, backbone::patchify_fwd(t, image, v.backbone_v.patch_proj, m.vit_cfg, &gh, &gw),
                                       v.backbone_v, m.vit_cfg);
    }

    Var<S> aligned = tok_img;
    if (m.has_fbam) {
        Var<S> tok_bg = backbone::encode_fwd(
            t, backbone::patchify_fwd(t, background, v.backbone_v.patch_proj, m.vit_cfg), v.backbone_v, m.vit_cfg);
        aligned = fbam::stack_fwd(t, tok_img, tok_bg, v.fbam_v, m.fbam_cfg);
    }

    Var<S> hires;
    bool have_hires = m.has_upsampler;
    int hires_h = 0, hires_w = 0;
    if (have_hires) {
        hires = upsampler::upsample_fwd(t, tok_img, gh, gw, image, m.ups_cfg, v.upsampler_v, ups_stats);
        hires_h = gh * m.ups_cfg.upsample_factor;
        hires_w = gw * m.ups_cfg.upsample_factor;
    }

    Var<S> conv_feat;
    bool have_conv = m.has_conv_branch;
    if (have_conv) {
        // half-res convolutional shortcut straight from the image
        Var<S> img_v = ad::constant(t, image.data);
        Var<S> half = ad::bilinear_resize(img_v, image.height, image.width, image.height / 2, image.width / 2);
        Var<S> c = ad::conv3x3(half, image.height / 2, image.width / 2, v.conv_branch_in.weight, v.conv_branch_in.bias);
        c = ad::relu(nn::group_norm(c, v.conv_branch_norm, nn::group_norm_groups(int(c.cols()))));
        conv_feat = ad::conv3x3(c, image.height / 2, image.width / 2, v.conv_branch_out.weight, v.conv_branch_out.bias);
    }

    return decoder::decode_fwd(t, aligned, gh, gw, tok_img, have_hires ? &hires : nullptr, hires_h, hires_w,
                               v.decoder_v, have_conv ? &conv_feat : nullptr, stage_dims);
}

/// Forward pass without gradients; returns the H x W alpha matte.
template <typename S>
AlphaMatte<S> infer(const FeatureGrid<S>& image, const FeatureGrid<S>& background, const ModelParams<S>& m,
                    upsampler::UpsampleStats* ups_stats = nullptr, int* stage_dims = nullptr) {
    if (image.height % m.vit_cfg.patch_size != 0 || image.width % m.vit_cfg.patch_size != 0)
        throw std::invalid_argument("infer: image dims " + std::to_string(image.height) + "x" +
                                    std::to_string(image.width) + " must be divisible by " +
                                    std::to_string(m.vit_cfg.patch_size));
    Tape<S> t;
    auto v = lift(t, m, GradMask::none());
    Var<S> out = forward_fwd(t, m, v, image, background, ups_stats, stage_dims);
    Mat<S> alpha(image.height, image.width);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) alpha(y, x) = out.value()(Eigen::Index(y) * image.width + x, 0);
    return AlphaMatte<S>(std::move(alpha));
}

}  // namespace bgmatte::model
