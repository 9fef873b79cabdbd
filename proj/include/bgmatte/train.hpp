#pragma once

#include "bgmatte/checkpoint.hpp"
#include "bgmatte/datagen.hpp"
#include "bgmatte/losses.hpp"
#include "bgmatte/metrics.hpp"
#include "bgmatte/model.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

namespace bgmatte::harness {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// Learning rate per parameter group; 0 skips the update entirely so the tensor
/// stays bit-identical. The frozen backbone is excluded this way.
inline double group_lr(const std::string& name, const TrainConfig& cfg, bool backbone_frozen) {
    if (name.rfind("backbone", 0) == 0) return backbone_frozen ? 0.0 : cfg.lr_main;
    if (name.rfind("upsampler", 0) == 0) return cfg.lr_upsampler;
    return cfg.lr_main;  // fbam, decoder, convbranch
}

/// Deterministic stream of training samples.
using DataSource = std::function<ImageSample<float>(long step)>;

/// Pre-generated pool of synthetic samples, cycled by step.
inline DataSource synth_source(const std::string& kind, int count, int resolution, std::uint64_t seed,
                               bool with_augment_pipeline = false, datagen::AugmentSpec* aug_spec = nullptr) {
    auto samples = std::make_shared<std::vector<ImageSample<float>>>();
    for (int i = 0; i < count; ++i) {
        std::uint64_t s = mix_seed(seed, std::uint64_t(i));
        if (with_augment_pipeline && aug_spec)
            samples->push_back(datagen::synth_training_sample<float>(resolution, *aug_spec, s));
        else
            samples->push_back(datagen::synth_sample<float>(kind, resolution, s));
    }
    return [samples](long step) { return (*samples)[std::size_t(step) % samples->size()]; };
}

inline DataSource directory_source(const std::string& dir, int resolution) {
    auto loaded = std::make_shared<std::vector<ImageSample<float>>>();
    for (auto& ls : datagen::load_samples<float>(dir)) {
        ImageSample<float> s = std::move(ls.sample);
        if (s.image.height != resolution || s.image.width != resolution) {
            s.image = datagen::bilinear_resize(s.image, resolution, resolution);
            s.background = datagen::bilinear_resize(s.background, resolution, resolution);
            s.alpha_gt = datagen::bilinear_resize(s.alpha_gt, resolution, resolution);
        }
        loaded->push_back(std::move(s));
    }
    if (loaded->empty()) throw std::runtime_error("directory_source: no samples in " + dir);
    return [loaded](long step) { return (*loaded)[std::size_t(step) % loaded->size()]; };
}

struct LossRecord {
    long step;
    double loss;
};

struct TrainResult {
    Checkpoint ckpt;
    std::vector<LossRecord> curve;
    bool aborted = false;
    long abort_step = -1;
};

namespace detail {

struct FlatParams {
    std::vector<std::string> names;
    std::vector<MatF*> mats;
};

inline FlatParams flatten(model::ModelParams<float>& m) {
    FlatParams fp;
    model::visit_params(m, [&](const std::string& name, MatF& mat) {
        fp.names.push_back(name);
        fp.mats.push_back(&mat);
    });
    return fp;
}

inline void adam_step(FlatParams& fp, const std::vector<MatF>& grads, AdamState& opt, const TrainConfig& cfg,
                      bool backbone_frozen, double lr_scale = 1.0) {
    if (opt.m.empty()) {
        for (MatF* m : fp.mats) {
            opt.m.push_back(MatF::Zero(m->rows(), m->cols()));
            opt.v.push_back(MatF::Zero(m->rows(), m->cols()));
        }
    }
    ++opt.step;
    const float b1 = float(kAdamBeta1), b2 = float(kAdamBeta2);
    const float bc1 = 1.0f - std::pow(b1, float(opt.step));
    const float bc2 = 1.0f - std::pow(b2, float(opt.step));
    for (std::size_t i = 0; i < fp.mats.size(); ++i) {
        double lr = group_lr(fp.names[i], cfg, backbone_frozen) * lr_scale;
        if (lr == 0.0) continue;
        MatF& m = opt.m[i];
        MatF& v = opt.v[i];
        const MatF& g = grads[i];
        m = b1 * m + (1.0f - b1) * g;
        v = (b2 * v.array() + (1.0f - b2) * g.array().square()).matrix();
        auto mhat = m.array() / bc1;
        auto vhat = v.array() / bc2;
        fp.mats[i]->array() -= float(lr) * mhat / (vhat.sqrt() + float(kAdamEps));
    }
}

}  // namespace detail

/// One optimization step; returns the loss. Gradients of frozen / zero-rate groups
/// are never materialized.
inline double train_step(Checkpoint& ckpt, const ImageSample<float>& sample, long step) {
    const TrainConfig& cfg = ckpt.params.cfg;
    model::GradMask mask = model::GradMask::all();
    mask.backbone = !ckpt.params.vit_cfg.frozen;
    mask.upsampler = ckpt.params.has_upsampler && cfg.lr_upsampler != 0.0;
    mask.fbam = ckpt.params.has_fbam;
    mask.conv_branch = ckpt.params.has_conv_branch;

    ad::Tape<float> t;
    auto vars = model::lift(t, ckpt.params, mask);
    auto pred = model::forward_fwd(t, ckpt.params, vars, sample.image, sample.background);
    Trimap trimap = losses::derive_trimap(sample.alpha_gt, cfg.resolved_trimap_radius());
    auto loss = losses::total_loss_fwd(t, pred, sample.alpha_gt, trimap, sample.image.height, sample.image.width);
    double loss_val = double(loss.value()(0, 0));
    if (!std::isfinite(loss_val)) return loss_val;

    t.backward(loss.id);
    auto fp = detail::flatten(ckpt.params);
    std::vector<MatF> grads;
    std::size_t k = 0;
    model::visit_vars(vars, ckpt.params, [&](const std::string&, ad::Var<float>& pv) {
        grads.push_back(pv.has_grad() ? pv.grad() : MatF::Zero(fp.mats[k]->rows(), fp.mats[k]->cols()));
        ++k;
    });
    detail::adam_step(fp, grads, ckpt.opt, cfg, ckpt.params.vit_cfg.frozen);
    (void)step;
    return loss_val;
}

/// Warm-start the upsampler alone on a feature-reconstruction objective: a fixed
/// random projection of a synthetic image is pooled to the token grid and the
/// upsampler must rebuild its half-resolution version from that plus the image.
inline void warmstart_upsampler(Checkpoint& ckpt, int steps, double lr, std::uint64_t seed) {
    if (steps <= 0 || !ckpt.params.has_upsampler) return;
    const TrainConfig& cfg = ckpt.params.cfg;
    const int res = cfg.resolution;
    const int grid = res / cfg.patch_size;
    const int half = grid * cfg.upsample_factor;
    Rng prng(mix_seed(seed, 77));
    MatF proj = nn::randn<float>(prng, cfg.embed_dim, 3, 0.5);

    AdamState opt;
    TrainConfig wcfg = cfg;
    wcfg.lr_upsampler = lr;
    for (int s = 0; s < steps; ++s) {
        auto sample = datagen::synth_sample<float>("disk", res, mix_seed(seed, std::uint64_t(s)));
        MatF target_full = sample.image.data * proj.transpose();  // res x res x D feature field

        ad::Tape<float> t;
        auto uv = upsampler::lift(t, ckpt.params.upsampler_p, true);
        auto tgt = ad::constant(t, target_full);
        auto f_lr = ad::adaptive_avg_pool(tgt, res, res, grid, grid);
        auto rebuilt = upsampler::upsample_fwd(t, f_lr, grid, grid, sample.image, ckpt.params.ups_cfg, uv);
        auto tgt_half = ad::adaptive_avg_pool(tgt, res, res, half, half);
        auto loss = ad::mean_all(ad::abs(ad::sub(rebuilt, tgt_half)));
        t.backward(loss.id);

        detail::FlatParams fp;
        upsampler::visit(ckpt.params.upsampler_p, "upsampler", [&](const std::string& n, MatF& m) {
            fp.names.push_back(n);
            fp.mats.push_back(&m);
        });
        std::vector<MatF> grads;
        std::size_t k = 0;
        upsampler::visit(uv, "upsampler", [&](const std::string&, ad::Var<float>& pv) {
            grads.push_back(pv.has_grad() ? pv.grad() : MatF::Zero(fp.mats[k]->rows(), fp.mats[k]->cols()));
            ++k;
        });
        detail::adam_step(fp, grads, opt, wcfg, true);
    }
}

/// Deterministic single-threaded loop. On a non-finite loss the parameters roll
/// back one step and the result is flagged with the failing step index.
inline TrainResult train(const TrainConfig& cfg, const DataSource& data, const std::string& curve_path = "") {
    cfg.validate();
    TrainResult result;
    result.ckpt.params = model::build_model<float>(cfg, cfg.seed);
    result.ckpt.rng_state = cfg.seed;
    if (cfg.warmstart_steps > 0) warmstart_upsampler(result.ckpt, cfg.warmstart_steps, cfg.warmstart_lr, cfg.seed);

    std::ofstream curve;
    if (!curve_path.empty()) curve.open(curve_path, std::ios::app);

    model::ModelParams<float> last_good = result.ckpt.params;
    AdamState last_good_opt = result.ckpt.opt;
    for (long step = 0; step < cfg.steps; ++step) {
        double loss_acc = 0.0;
        bool finite = true;
        for (int b = 0; b < cfg.batch_size && finite; ++b) {
            ImageSample<float> sample = data(step * cfg.batch_size + b);
            if (cfg.augment) {
                datagen::AugmentSpec spec;
                spec.flip_prob = 0.5;
                spec.brightness_lo = 0.9;
                spec.brightness_hi = 1.1;
                spec.saturation_lo = 0.9;
                spec.saturation_hi = 1.1;
                sample = datagen::augment(sample, spec, mix_seed(cfg.seed, 0x400000 + std::uint64_t(step)));
            }
            double loss = train_step(result.ckpt, sample, step);
            finite = std::isfinite(loss);
            loss_acc += loss;
        }
        if (!finite) {
            result.ckpt.params = last_good;
            result.ckpt.opt = last_good_opt;
            result.aborted = true;
            result.abort_step = step;
            break;
        }
        double mean_loss = loss_acc / cfg.batch_size;
        result.curve.push_back({step, mean_loss});
        if (curve.is_open()) curve << "{\"step\": " << step << ", \"loss\": " << mean_loss << "}\n";
        last_good = result.ckpt.params;
        last_good_opt = result.ckpt.opt;
        result.ckpt.step = step + 1;
        result.ckpt.rng_state = mix_seed(cfg.seed, std::uint64_t(step + 1));
    }
    return result;
}

// ---------------------------------------------------------------------------
// evaluation and the background-shift stress protocol
// ---------------------------------------------------------------------------

/// The three standard stress levels: none / small / large (angle deg, scale, shear).
inline std::vector<datagen::ShiftSpec> standard_shift_levels(std::uint64_t seed) {
    return {
        {0.0, 0.0, 1.0, 1.0, 0.0, 0.0, mix_seed(seed, 900)},
        {-2.0, 2.0, 0.95, 1.05, -0.02, 0.02, mix_seed(seed, 901)},
        {-5.0, 5.0, 0.90, 1.10, -0.07, 0.07, mix_seed(seed, 902)},
    };
}

template <typename S>
metrics::MetricsReport evaluate(const model::ModelParams<S>& params, const std::vector<ImageSample<S>>& samples,
                                const datagen::ShiftSpec* shift = nullptr) {
    metrics::MetricsReport rep;
    std::vector<AlphaMatte<S>> pred_seq, gt_seq;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        FeatureGrid<S> bg = s.background;
        if (shift) {
            datagen::ShiftSpec per_sample = *shift;
            per_sample.seed = mix_seed(shift->seed, std::uint64_t(i));
            bg = datagen::shift_background(bg, per_sample);
        }
        AlphaMatte<S> pred = model::infer(s.image, bg, params);
        metrics::SampleMetrics sm;
        sm.id = datagen::sample_stem(int(i));
        sm.mad = metrics::mad(pred, s.alpha_gt);
        sm.mse = metrics::mse(pred, s.alpha_gt);
        sm.grad = metrics::grad_metric(pred, s.alpha_gt);
        sm.conn = metrics::conn_metric(pred, s.alpha_gt);
        rep.per_sample.push_back(sm);
        if (s.frame_index) {
            pred_seq.push_back(pred);
            gt_seq.push_back(s.alpha_gt);
        }
    }
    if (pred_seq.size() >= 2) rep.per_sequence_dtssd.push_back({"seq0", metrics::dtssd(pred_seq, gt_seq)});
    return rep;
}

/// Runs the shift protocol: one report per level, background input warped only.
template <typename S>
std::vector<metrics::MetricsReport> stress_shift(const model::ModelParams<S>& params,
                                                 const std::vector<ImageSample<S>>& samples,
                                                 const std::vector<datagen::ShiftSpec>& levels) {
    std::vector<metrics::MetricsReport> reports;
    for (std::size_t lvl = 0; lvl < levels.size(); ++lvl) {
        metrics::MetricsReport rep = evaluate(params, samples, &levels[lvl]);
        rep.shift_level = int(lvl);
        rep.seed = levels[lvl].seed;
        reports.push_back(std::move(rep));
    }
    return reports;
}

}  // namespace bgmatte::harness
