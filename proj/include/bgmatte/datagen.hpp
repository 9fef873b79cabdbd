#pragma once

#include "bgmatte/png_io.hpp"
#include "bgmatte/rng.hpp"
#include "bgmatte/tape_spatial.hpp"
#include "bgmatte/types.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace bgmatte::datagen {

struct ShiftSpec {
    double angle_lo = 0.0, angle_hi = 0.0;      // degrees
    double scale_lo = 1.0, scale_hi = 1.0;
    double shear_lo = 0.0, shear_hi = 0.0;
    std::uint64_t seed = 0;

    bool is_identity_range() const {
        return angle_lo == 0.0 && angle_hi == 0.0 && scale_lo == 1.0 && scale_hi == 1.0 && shear_lo == 0.0 &&
               shear_hi == 0.0;
    }
};

struct AugmentSpec {
    double flip_prob = 0.0;
    double saturation_lo = 1.0, saturation_hi = 1.0;
    double hue_lo = 0.0, hue_hi = 0.0;          // fraction of a full hue turn
    double brightness_lo = 1.0, brightness_hi = 1.0;
    double sharpness_lo = 1.0, sharpness_hi = 1.0;
    double rotation_lo = 0.0, rotation_hi = 0.0;  // degrees
    double scale_lo = 1.0, scale_hi = 1.0;
    double shear_lo = 0.0, shear_hi = 0.0;
    int distractor_count_lo = 0, distractor_count_hi = 2;
    int target_count_lo = 0, target_count_hi = 3;

    void validate() const {
        if (flip_prob < 0.0 || flip_prob > 1.0) throw std::invalid_argument("AugmentSpec: flip_prob outside [0,1]");
        auto ordered = [](double lo, double hi) { return lo <= hi; };
        if (!ordered(saturation_lo, saturation_hi) || !ordered(hue_lo, hue_hi) ||
            !ordered(brightness_lo, brightness_hi) || !ordered(sharpness_lo, sharpness_hi) ||
            !ordered(rotation_lo, rotation_hi) || !ordered(scale_lo, scale_hi) || !ordered(shear_lo, shear_hi) ||
            distractor_count_lo > distractor_count_hi || target_count_lo > target_count_hi)
            throw std::invalid_argument("AugmentSpec: ranges must be well-ordered");
    }
};

// ---------------------------------------------------------------------------
// compositing
// ---------------------------------------------------------------------------

/// I = alpha*F + (1-alpha)*B per pixel and channel, clamped to [0,1].
template <typename S>
FeatureGrid<S> composite(const FeatureGrid<S>& fg, const AlphaMatte<S>& alpha, const FeatureGrid<S>& bg) {
    if (fg.height != bg.height || fg.width != bg.width || fg.channels() != bg.channels())
        throw std::invalid_argument("composite: fg " + std::to_string(fg.height) + "x" + std::to_string(fg.width) +
                                    " vs bg " + std::to_string(bg.height) + "x" + std::to_string(bg.width));
    if (alpha.height() != fg.height || alpha.width() != fg.width)
        throw std::invalid_argument("composite: alpha " + std::to_string(alpha.height()) + "x" +
                                    std::to_string(alpha.width()) + " does not match image dims");
    FeatureGrid<S> out(fg.height, fg.width, fg.channels());
    for (Eigen::Index i = 0; i < out.pixels(); ++i) {
        S a = alpha.alpha(int(i / fg.width), int(i % fg.width));
        for (int c = 0; c < fg.channels(); ++c)
            out.data(i, c) = std::clamp(a * fg.data(i, c) + (S(1) - a) * bg.data(i, c), S(0), S(1));
    }
    return out;
}

// ---------------------------------------------------------------------------
// resampling and warps (plain, non-tape)
// ---------------------------------------------------------------------------

template <typename S>
FeatureGrid<S> bilinear_resize(const FeatureGrid<S>& src, int oh, int ow) {
    FeatureGrid<S> out(oh, ow, src.channels());
    ad::detail::for_each_bilinear_tap<S>(src.height, src.width, oh, ow,
                                         [&](Eigen::Index o, Eigen::Index i, S w) { out.data.row(o) += w * src.data.row(i); });
    return out;
}

template <typename S>
AlphaMatte<S> bilinear_resize(const AlphaMatte<S>& src, int oh, int ow) {
    AlphaMatte<S> out(oh, ow);
    ad::detail::for_each_bilinear_tap<S>(
        src.height(), src.width(), oh, ow, [&](Eigen::Index o, Eigen::Index i, S w) {
            out.alpha(int(o / ow), int(o % ow)) += w * src.alpha(int(i / src.width()), int(i % src.width()));
        });
    return out;
}

struct AffineParams {
    double angle_deg = 0.0;
    double scale = 1.0;
    double shear = 0.0;  // x-shear coefficient
};

/// Center-anchored affine warp with bilinear sampling and edge replication.
/// Forward map: p_out = R(angle) * Shear(shear) * scale * (p_src - c) + c; sampling
/// inverts it per output pixel.
template <typename S>
FeatureGrid<S> warp_affine(const FeatureGrid<S>& src, const AffineParams& p) {
    const double th = p.angle_deg * M_PI / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    // A = R * Shear_x * scale acting on (x, y); x right, y down
    const double a00 = p.scale * ct, a01 = p.scale * (ct * p.shear - st);
    const double a10 = p.scale * st, a11 = p.scale * (st * p.shear + ct);
    const double det = a00 * a11 - a01 * a10;
    if (std::abs(det) < 1e-12) throw std::invalid_argument("warp_affine: singular transform");
    const double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;
    const double cy = (src.height - 1) / 2.0, cx = (src.width - 1) / 2.0;

    FeatureGrid<S> out(src.height, src.width, src.channels());
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            double dx = x - cx, dy = y - cy;
            double sx = i00 * dx + i01 * dy + cx;
            double sy = i10 * dx + i11 * dy + cy;
            int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
            double fx = sx - x0, fy = sy - y0;
            auto cl = [](int v, int hi) { return std::min(std::max(v, 0), hi); };
            int x0c = cl(x0, src.width - 1), x1c = cl(x0 + 1, src.width - 1);
            int y0c = cl(y0, src.height - 1), y1c = cl(y0 + 1, src.height - 1);
            for (int c = 0; c < src.channels(); ++c) {
                double v = (1 - fy) * ((1 - fx) * src.at(y0c, x0c, c) + fx * src.at(y0c, x1c, c)) +
                           fy * ((1 - fx) * src.at(y1c, x0c, c) + fx * src.at(y1c, x1c, c));
                out.at(y, x, c) = S(v);
            }
        }
    return out;
}

template <typename S>
AlphaMatte<S> warp_affine(const AlphaMatte<S>& src, const AffineParams& p) {
    FeatureGrid<S> g(src.height(), src.width(), 1);
    for (int y = 0; y < src.height(); ++y)
        for (int x = 0; x < src.width(); ++x) g.at(y, x, 0) = src.alpha(y, x);
    FeatureGrid<S> w = warp_affine(g, p);
    AlphaMatte<S> out(src.height(), src.width());
    for (int y = 0; y < src.height(); ++y)
        for (int x = 0; x < src.width(); ++x) out.alpha(y, x) = w.at(y, x, 0);
    return out;
}

template <typename S>
FeatureGrid<S> flip_horizontal(const FeatureGrid<S>& src) {
    FeatureGrid<S> out(src.height, src.width, src.channels());
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x)
            for (int c = 0; c < src.channels(); ++c) out.at(y, x, c) = src.at(y, src.width - 1 - x, c);
    return out;
}

template <typename S>
AlphaMatte<S> flip_horizontal(const AlphaMatte<S>& src) {
    AlphaMatte<S> out(src.height(), src.width());
    for (int y = 0; y < src.height(); ++y)
        for (int x = 0; x < src.width(); ++x) out.alpha(y, x) = src.alpha(y, src.width() - 1 - x);
    return out;
}

// ---------------------------------------------------------------------------
// photometric jitter
// ---------------------------------------------------------------------------

struct JitterParams {
    double saturation = 1.0;
    double hue = 0.0;
    double brightness = 1.0;
    double sharpness = 1.0;
};

namespace detail {

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    v = mx;
    double d = mx - mn;
    s = mx == 0.0 ? 0.0 : d / mx;
    if (d == 0.0) {
        h = 0.0;
        return;
    }
    if (mx == r)
        h = std::fmod((g - b) / d, 6.0);
    else if (mx == g)
        h = (b - r) / d + 2.0;
    else
        h = (r - g) / d + 4.0;
    h /= 6.0;
    if (h < 0.0) h += 1.0;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    double hh = std::fmod(h, 1.0) * 6.0;
    int i = int(std::floor(hh)) % 6;
    double f = hh - std::floor(hh);
    double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

}  // namespace detail

template <typename S>
FeatureGrid<S> apply_jitter(const FeatureGrid<S>& src, const JitterParams& p) {
    FeatureGrid<S> out = src;
    // saturation: lerp toward luma; hue: HSV rotation; brightness: scale
    for (Eigen::Index i = 0; i < out.pixels(); ++i) {
        double r = out.data(i, 0), g = out.data(i, 1), b = out.data(i, 2);
        if (p.saturation != 1.0) {
            double gray = 0.299 * r + 0.587 * g + 0.114 * b;
            r = gray + p.saturation * (r - gray);
            g = gray + p.saturation * (g - gray);
            b = gray + p.saturation * (b - gray);
            r = std::clamp(r, 0.0, 1.0);
            g = std::clamp(g, 0.0, 1.0);
            b = std::clamp(b, 0.0, 1.0);
        }
        if (p.hue != 0.0) {
            double h, s, v;
            detail::rgb_to_hsv(r, g, b, h, s, v);
            detail::hsv_to_rgb(h + p.hue, s, v, r, g, b);
        }
        if (p.brightness != 1.0) {
            r = std::min(1.0, p.brightness * r);
            g = std::min(1.0, p.brightness * g);
            b = std::min(1.0, p.brightness * b);
        }
        out.data(i, 0) = S(r);
        out.data(i, 1) = S(g);
        out.data(i, 2) = S(b);
    }
    if (p.sharpness != 1.0) {
        // unsharp mask around a [1,2,1]x[1,2,1]/16 blur
        FeatureGrid<S> blur(out.height, out.width, out.channels());
        const double k[3] = {0.25, 0.5, 0.25};
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x)
                for (int c = 0; c < out.channels(); ++c) {
                    double acc = 0.0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            int yy = std::clamp(y + dy, 0, out.height - 1);
                            int xx = std::clamp(x + dx, 0, out.width - 1);
                            acc += k[dy + 1] * k[dx + 1] * out.at(yy, xx, c);
                        }
                    blur.at(y, x, c) = S(acc);
                }
        for (Eigen::Index i = 0; i < out.pixels(); ++i)
            for (int c = 0; c < out.channels(); ++c)
                out.data(i, c) =
                    S(std::clamp(double(blur.data(i, c)) + p.sharpness * double(out.data(i, c) - blur.data(i, c)),
                                 0.0, 1.0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// distractors
// ---------------------------------------------------------------------------

template <typename S>
struct Cutout {
    FeatureGrid<S> image;
    AlphaMatte<S> alpha;
};

/// Composites `count` randomly placed and scaled foreground cutouts into the
/// background. The result is meant to serve as both the model's background input and
/// the compositing base, so the inserted subjects are semantically background.
template <typename S>
FeatureGrid<S> insert_distractors(const FeatureGrid<S>& bg, const std::vector<Cutout<S>>& fg_pool, int count,
                                  std::uint64_t seed) {
    if (count < 0) throw std::invalid_argument("insert_distractors: count must be >= 0");
    if (count > 0 && fg_pool.empty())
        throw std::invalid_argument("insert_distractors: empty foreground pool with count > 0");
    FeatureGrid<S> out = bg;
    Rng rng(seed);
    for (int k = 0; k < count; ++k) {
        const Cutout<S>& cut = fg_pool[std::size_t(rng.uniform_int(0, int(fg_pool.size()) - 1))];
        double rel = rng.uniform(0.2, 0.5);  // distractor extent relative to the background
        int th = std::max(2, int(std::lround(rel * bg.height)));
        int tw = std::max(2, int(std::lround(rel * bg.width)));
        FeatureGrid<S> fg_small = bilinear_resize(cut.image, th, tw);
        AlphaMatte<S> a_small = bilinear_resize(cut.alpha, th, tw);
        int oy = rng.uniform_int(0, std::max(0, bg.height - th));
        int ox = rng.uniform_int(0, std::max(0, bg.width - tw));
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x) {
                if (oy + y >= bg.height || ox + x >= bg.width) continue;
                S a = a_small.alpha(y, x);
                for (int c = 0; c < bg.channels(); ++c)
                    out.at(oy + y, ox + x, c) =
                        std::clamp(a * fg_small.at(y, x, c) + (S(1) - a) * out.at(oy + y, ox + x, c), S(0), S(1));
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

struct AugmentDraw {
    bool flip = false;
    JitterParams fg_jitter, bg_jitter;
    AffineParams fg_affine, bg_affine;
};

/// Deterministic parameter draw; consumed in a fixed order.
inline AugmentDraw sample_augment_params(const AugmentSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    AugmentDraw d;
    d.flip = rng.uniform() < spec.flip_prob;
    d.fg_jitter = {rng.uniform(spec.saturation_lo, spec.saturation_hi), rng.uniform(spec.hue_lo, spec.hue_hi),
                   rng.uniform(spec.brightness_lo, spec.brightness_hi),
                   rng.uniform(spec.sharpness_lo, spec.sharpness_hi)};
    d.fg_affine = {rng.uniform(spec.rotation_lo, spec.rotation_hi), rng.uniform(spec.scale_lo, spec.scale_hi),
                   rng.uniform(spec.shear_lo, spec.shear_hi)};
    d.bg_jitter = {rng.uniform(spec.saturation_lo, spec.saturation_hi), rng.uniform(spec.hue_lo, spec.hue_hi),
                   rng.uniform(spec.brightness_lo, spec.brightness_hi),
                   rng.uniform(spec.sharpness_lo, spec.sharpness_hi)};
    d.bg_affine = {rng.uniform(spec.rotation_lo, spec.rotation_hi), rng.uniform(spec.scale_lo, spec.scale_hi),
                   rng.uniform(spec.shear_lo, spec.shear_hi)};
    return d;
}

inline bool is_identity(const AffineParams& p) { return p.angle_deg == 0.0 && p.scale == 1.0 && p.shear == 0.0; }
inline bool is_identity(const JitterParams& p) {
    return p.saturation == 1.0 && p.hue == 0.0 && p.brightness == 1.0 && p.sharpness == 1.0;
}

/// Flip is drawn once and applied to all three maps; the geometric warp is applied
/// identically to the composited frame and its alpha; the background input gets an
/// independent jitter/affine draw, which is what makes it slightly inconsistent with
/// the frame the way a real capture is.
template <typename S>
ImageSample<S> augment(const ImageSample<S>& sample, const AugmentSpec& spec, std::uint64_t seed) {
    AugmentDraw d = sample_augment_params(spec, seed);
    ImageSample<S> out = sample;
    if (d.flip) {
        out.image = flip_horizontal(out.image);
        out.alpha_gt = flip_horizontal(out.alpha_gt);
        out.background = flip_horizontal(out.background);
    }
    if (!is_identity(d.fg_affine)) {
        out.image = warp_affine(out.image, d.fg_affine);
        out.alpha_gt = warp_affine(out.alpha_gt, d.fg_affine);
    }
    if (!is_identity(d.fg_jitter)) out.image = apply_jitter(out.image, d.fg_jitter);
    if (!is_identity(d.bg_affine)) out.background = warp_affine(out.background, d.bg_affine);
    if (!is_identity(d.bg_jitter)) out.background = apply_jitter(out.background, d.bg_jitter);
    return out;
}

/// Samples (angle, scale, shear) uniformly from the spec ranges and warps.
template <typename S>
FeatureGrid<S> shift_background(const FeatureGrid<S>& bg, const ShiftSpec& spec) {
    Rng rng(spec.seed);
    AffineParams p{rng.uniform(spec.angle_lo, spec.angle_hi), rng.uniform(spec.scale_lo, spec.scale_hi),
                   rng.uniform(spec.shear_lo, spec.shear_hi)};
    if (is_identity(p)) return bg;
    return warp_affine(bg, p);
}

// ---------------------------------------------------------------------------
// synthetic scenes with exact alpha
// ---------------------------------------------------------------------------

/// Soft-edged disk: alpha = clamp((r0 - |x-c|)/w + 0.5, 0, 1); r0 <= 0 means no disk.
template <typename S>
AlphaMatte<S> disk_alpha(int res, double cy, double cx, double r0, double soft_w) {
    AlphaMatte<S> a(res, res);
    if (r0 <= 0.0) return a;
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            double d = std::hypot(y - cy, x - cx);
            a.alpha(y, x) = S(std::clamp((r0 - d) / soft_w + 0.5, 0.0, 1.0));
        }
    return a;
}

/// Soft-edged convex polygon via its edge half-plane distances.
template <typename S>
AlphaMatte<S> polygon_alpha(int res, const std::vector<std::pair<double, double>>& verts, double soft_w) {
    AlphaMatte<S> a(res, res);
    const std::size_t n = verts.size();
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            double sdf = -1e30;  // max over edges of signed distance (negative inside)
            for (std::size_t i = 0; i < n; ++i) {
                auto [y0, x0] = verts[i];
                auto [y1, x1] = verts[(i + 1) % n];
                double ey = y1 - y0, ex = x1 - x0;
                double len = std::hypot(ey, ex);
                // outward normal for the screen-clockwise vertex order produced below
                double nyv = ex / len, nxv = -ey / len;
                sdf = std::max(sdf, (y - y0) * nyv + (x - x0) * nxv);
            }
            a.alpha(y, x) = S(std::clamp(-sdf / soft_w + 0.5, 0.0, 1.0));
        }
    return a;
}

/// Smooth two-color gradient along a random direction.
template <typename S>
FeatureGrid<S> gradient_field(int res, Rng& rng) {
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
        c0[c] = rng.uniform(0.1, 0.9);
        c1[c] = rng.uniform(0.1, 0.9);
    }
    double th = rng.uniform(0.0, 2.0 * M_PI);
    double dy = std::sin(th), dx = std::cos(th);
    FeatureGrid<S> g(res, res, 3);
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            double t = ((y * dy + x * dx) / res + 1.0) / 2.0;
            t = std::clamp(t, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) g.at(y, x, c) = S(c0[c] + t * (c1[c] - c0[c]));
        }
    return g;
}

/// Procedural textured background: gradient base plus sinusoidal gratings.
template <typename S>
FeatureGrid<S> textured_background(int res, Rng& rng) {
    FeatureGrid<S> bg = gradient_field<S>(res, rng);
    for (int wave = 0; wave < 3; ++wave) {
        double freq = rng.uniform(2.0, 8.0) * 2.0 * M_PI / res;
        double th = rng.uniform(0.0, 2.0 * M_PI);
        double phase = rng.uniform(0.0, 2.0 * M_PI);
        double amp = rng.uniform(0.02, 0.08);
        double dy = std::sin(th), dx = std::cos(th);
        int ch = rng.uniform_int(0, 2);
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) {
                double v = bg.at(y, x, ch) + amp * std::sin(freq * (y * dy + x * dx) + phase);
                bg.at(y, x, ch) = S(std::clamp(v, 0.0, 1.0));
            }
    }
    return bg;
}

template <typename S>
ImageSample<S> synth_sample(const std::string& kind, int resolution, std::uint64_t seed) {
    Rng rng(seed);
    FeatureGrid<S> bg = textured_background<S>(resolution, rng);
    FeatureGrid<S> fg = gradient_field<S>(resolution, rng);
    AlphaMatte<S> alpha;
    if (kind == "disk") {
        double cy = rng.uniform(0.35, 0.65) * resolution;
        double cx = rng.uniform(0.35, 0.65) * resolution;
        double r0 = rng.uniform(0.18, 0.32) * resolution;
        double w = rng.uniform(1.5, 3.0);
        alpha = disk_alpha<S>(resolution, cy, cx, r0, w);
    } else if (kind == "poly") {
        int nv = rng.uniform_int(3, 6);
        double cy = rng.uniform(0.4, 0.6) * resolution;
        double cx = rng.uniform(0.4, 0.6) * resolution;
        double rad = rng.uniform(0.18, 0.3) * resolution;
        std::vector<double> angles;
        for (int i = 0; i < nv; ++i) angles.push_back(rng.uniform(0.0, 2.0 * M_PI));
        std::sort(angles.begin(), angles.end());
        std::vector<std::pair<double, double>> verts;
        // counterclockwise in (y down, x right) coordinates means decreasing angle
        for (int i = nv - 1; i >= 0; --i)
            verts.push_back({cy + rad * std::sin(angles[std::size_t(i)]), cx + rad * std::cos(angles[std::size_t(i)])});
        alpha = polygon_alpha<S>(resolution, verts, rng.uniform(1.5, 3.0));
    } else {
        throw std::invalid_argument("synth_sample: unsupported kind '" + kind + "'");
    }
    ImageSample<S> s;
    s.image = composite(fg, alpha, bg);
    s.background = bg;
    s.alpha_gt = alpha;
    return s;
}

/// Multi-frame disk scene with linear motion; frame t carries frame_index = t.
template <typename S>
std::vector<ImageSample<S>> synth_sequence(int resolution, int frames, double velocity, std::uint64_t seed) {
    Rng rng(seed);
    FeatureGrid<S> bg = textured_background<S>(resolution, rng);
    FeatureGrid<S> fg = gradient_field<S>(resolution, rng);
    double cy = rng.uniform(0.4, 0.6) * resolution;
    double cx = rng.uniform(0.3, 0.4) * resolution;
    double r0 = rng.uniform(0.15, 0.25) * resolution;
    double w = rng.uniform(1.5, 3.0);
    double th = rng.uniform(0.0, 2.0 * M_PI);
    double vy = velocity * std::sin(th), vx = velocity * std::cos(th);
    std::vector<ImageSample<S>> seq;
    for (int t = 0; t < frames; ++t) {
        AlphaMatte<S> alpha = disk_alpha<S>(resolution, cy + t * vy, cx + t * vx, r0, w);
        ImageSample<S> s;
        s.image = composite(fg, alpha, bg);
        s.background = bg;
        s.alpha_gt = alpha;
        s.frame_index = t;
        seq.push_back(std::move(s));
    }
    return seq;
}

/// Full training-sample factory: textured background, optional distractor cutouts
/// (which stay in the background input), then 0..n target foregrounds composited on
/// top with their union alpha as ground truth.
template <typename S>
ImageSample<S> synth_training_sample(int resolution, const AugmentSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    FeatureGrid<S> bg = textured_background<S>(resolution, rng);

    int n_distract = rng.uniform_int(spec.distractor_count_lo, spec.distractor_count_hi);
    if (n_distract > 0) {
        std::vector<Cutout<S>> pool;
        for (int i = 0; i < 2; ++i) {
            auto cut = synth_sample<S>(i % 2 == 0 ? "disk" : "poly", std::max(16, resolution / 2),
                                       mix_seed(seed, 100 + std::uint64_t(i)));
            pool.push_back({cut.image, cut.alpha_gt});
        }
        bg = insert_distractors(bg, pool, n_distract, mix_seed(seed, 200));
    }

    int n_targets = rng.uniform_int(spec.target_count_lo, spec.target_count_hi);
    FeatureGrid<S> image = bg;
    AlphaMatte<S> alpha(resolution, resolution);
    for (int k = 0; k < n_targets; ++k) {
        auto target = synth_sample<S>(k % 2 == 0 ? "disk" : "poly", resolution, mix_seed(seed, 300 + std::uint64_t(k)));
        image = composite(target.image, target.alpha_gt, image);
        for (int y = 0; y < resolution; ++y)
            for (int x = 0; x < resolution; ++x)
                alpha.alpha(y, x) =
                    target.alpha_gt.alpha(y, x) + (S(1) - target.alpha_gt.alpha(y, x)) * alpha.alpha(y, x);
    }
    ImageSample<S> s;
    s.image = image;
    s.background = bg;
    s.alpha_gt = alpha;
    return s;
}

// ---------------------------------------------------------------------------
// sample directories: NNNN_img.png / NNNN_bg.png / NNNN_alpha.png / NNNN_meta.json
// ---------------------------------------------------------------------------

inline std::string sample_stem(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", index);
    return buf;
}

template <typename S>
void write_sample(const std::string& dir, int index, const ImageSample<S>& sample, const nlohmann::json& meta) {
    std::filesystem::create_directories(dir);
    std::string stem = dir + "/" + sample_stem(index);
    png::write_image(stem + "_img.png", sample.image);
    png::write_image(stem + "_bg.png", sample.background);
    png::write_alpha(stem + "_alpha.png", sample.alpha_gt);
    nlohmann::json m = meta;
    if (sample.frame_index) m["frame_index"] = *sample.frame_index;
    std::ofstream f(stem + "_meta.json");
    f << m.dump(2) << "\n";
}

template <typename S>
struct LoadedSample {
    ImageSample<S> sample;
    nlohmann::json meta;
    std::string stem;
};

template <typename S>
std::vector<LoadedSample<S>> load_samples(const std::string& dir) {
    std::vector<std::string> stems;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        if (name.size() > 8 && name.substr(name.size() - 8) == "_img.png")
            stems.push_back(name.substr(0, name.size() - 8));
    }
    std::sort(stems.begin(), stems.end());
    std::vector<LoadedSample<S>> out;
    for (const auto& stem : stems) {
        LoadedSample<S> ls;
        ls.stem = stem;
        ls.sample.image = png::read_image<S>(dir + "/" + stem + "_img.png");
        ls.sample.background = png::read_image<S>(dir + "/" + stem + "_bg.png");
        ls.sample.alpha_gt = png::read_alpha<S>(dir + "/" + stem + "_alpha.png");
        std::ifstream mf(dir + "/" + stem + "_meta.json");
        if (mf) {
            mf >> ls.meta;
            if (ls.meta.contains("frame_index")) {
                int fi = ls.meta["frame_index"];
                ls.sample.frame_index = fi;
            }
        }
        out.push_back(std::move(ls));
    }
    return out;
}

}  // namespace bgmatte::datagen
