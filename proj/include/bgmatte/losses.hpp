#pragma once

#include "bgmatte/tape_spatial.hpp"
#include "bgmatte/types.hpp"

#include <string>
#include <vector>

namespace bgmatte::losses {

using ad::Tape;
using ad::Var;

inline constexpr double kTrimapEps = 1.0 / 255.0;
inline constexpr int kLaplacianLevels = 5;

/// Binary erosion with a square structuring element of the given radius;
/// out-of-bounds counts as off, so shapes shrink from the image border too.
inline Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> erode_square(
    const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& mask, int radius) {
    using BoolMap = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const int h = int(mask.rows()), w = int(mask.cols());
    BoolMap tmp(h, w), out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool keep = true;
            for (int d = -radius; d <= radius && keep; ++d) {
                int xx = x + d;
                keep = xx >= 0 && xx < w && mask(y, xx);
            }
            tmp(y, x) = keep;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool keep = true;
            for (int d = -radius; d <= radius && keep; ++d) {
                int yy = y + d;
                keep = yy >= 0 && yy < h && tmp(yy, x);
            }
            out(y, x) = keep;
        }
    return out;
}

/// FG = erode({alpha >= 1-eps}), BG = erode({alpha <= eps}), UNKNOWN = the rest.
template <typename S>
Trimap derive_trimap(const AlphaMatte<S>& alpha_gt, int erode_radius) {
    if (erode_radius < 0)
        throw std::invalid_argument("derive_trimap: radius must be nonnegative, got " + std::to_string(erode_radius));
    using BoolMap = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const int h = alpha_gt.height(), w = alpha_gt.width();
    BoolMap fg0(h, w), bg0(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            fg0(y, x) = double(alpha_gt.alpha(y, x)) >= 1.0 - kTrimapEps;
            bg0(y, x) = double(alpha_gt.alpha(y, x)) <= kTrimapEps;
        }
    BoolMap fg = erode_radius > 0 ? erode_square(fg0, erode_radius) : fg0;
    BoolMap bg = erode_radius > 0 ? erode_square(bg0, erode_radius) : bg0;
    Trimap t(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            t.set(y, x, fg(y, x) ? Region::Foreground : (bg(y, x) ? Region::Background : Region::Unknown));
    return t;
}

namespace detail {

/// 0/1 column masks for the unknown and known regions, in alpha pixel order.
template <typename S>
std::pair<Mat<S>, Mat<S>> region_masks(const Trimap& trimap) {
    const Eigen::Index n = Eigen::Index(trimap.height()) * trimap.width();
    Mat<S> unknown = Mat<S>::Zero(n, 1), known = Mat<S>::Zero(n, 1);
    for (int y = 0; y < trimap.height(); ++y)
        for (int x = 0; x < trimap.width(); ++x) {
            Eigen::Index i = Eigen::Index(y) * trimap.width() + x;
            if (trimap.at(y, x) == Region::Unknown)
                unknown(i, 0) = S(1);
            else
                known(i, 0) = S(1);
        }
    return {unknown, known};
}

template <typename S>
void require_alpha_dims(Eigen::Index pred_rows, int h, int w, const char* who) {
    if (pred_rows != Eigen::Index(h) * w)
        throw std::invalid_argument(std::string(who) + ": prediction has " + std::to_string(pred_rows) +
                                    " pixels, expected " + std::to_string(Eigen::Index(h) * w));
}

}  // namespace detail

/// Mean |pred-gt| over UNKNOWN plus mean |pred-gt| over KNOWN; empty regions add 0.
template <typename S>
Var<S> separate_l1_fwd(Tape<S>& t, Var<S> pred, const AlphaMatte<S>& gt, const Trimap& trimap) {
    if (gt.height() != trimap.height() || gt.width() != trimap.width())
        throw std::invalid_argument("separate_l1: trimap " + std::to_string(trimap.height()) + "x" +
                                    std::to_string(trimap.width()) + " vs alpha " + std::to_string(gt.height()) +
                                    "x" + std::to_string(gt.width()));
    detail::require_alpha_dims<S>(pred.rows(), gt.height(), gt.width(), "separate_l1");
    auto [unknown, known] = detail::region_masks<S>(trimap);
    Var<S> diff = ad::abs(ad::sub(pred, ad::constant(t, Mat<S>(gt.flat()))));
    Var<S> total = ad::constant(t, Mat<S>(Mat<S>::Zero(1, 1)));
    S n_u = unknown.sum(), n_k = known.sum();
    if (n_u > S(0)) total = ad::add(total, ad::scale(ad::sum_all(ad::mul_const(diff, unknown)), S(1) / n_u));
    if (n_k > S(0)) total = ad::add(total, ad::scale(ad::sum_all(ad::mul_const(diff, known)), S(1) / n_k));
    return total;
}

template <typename S>
S separate_l1(const AlphaMatte<S>& pred, const AlphaMatte<S>& gt, const Trimap& trimap) {
    require_same_shape(pred, gt, "separate_l1");
    Tape<S> t;
    return separate_l1_fwd(t, ad::constant(t, Mat<S>(pred.flat())), gt, trimap).value()(0, 0);
}

/// One Laplacian band step: returns (band = x - up(down(x)), down(x)). The expand is
/// a normalized convolution over the zero-inserted lattice so constants are
/// reproduced exactly up to the image border and bands vanish on constant inputs.
template <typename S>
std::pair<Var<S>, Var<S>> pyramid_step(Var<S> x, int h, int w) {
    Tape<S>& t = *x.tape;
    Var<S> down = ad::decimate2(ad::blur14641(x, h, w), h, w);
    Var<S> ones = ad::constant(t, Mat<S>(Mat<S>::Ones(Eigen::Index(h / 2) * (w / 2), 1)));
    Mat<S> norm = ad::blur14641(ad::zero_expand2(ones, h / 2, w / 2), h, w).value();
    Mat<S> inv_norm(norm.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) inv_norm.col(c) = norm.col(0).cwiseInverse();
    Var<S> up = ad::mul_const(ad::blur14641(ad::zero_expand2(down, h / 2, w / 2), h, w), inv_norm);
    return {ad::sub(x, up), down};
}

/// Sum over 5 levels of 2^(k-1) * mean |Lap_k(pred) - Lap_k(gt)|; levels 1..4 are
/// band residuals, level 5 is the coarsest Gaussian.
template <typename S>
Var<S> laplacian_loss_fwd(Tape<S>& t, Var<S> pred, const AlphaMatte<S>& gt, int h, int w) {
    const int divisor = 1 << (kLaplacianLevels - 1);
    if (h % divisor != 0 || w % divisor != 0)
        throw std::invalid_argument("laplacian_loss: dims " + std::to_string(h) + "x" + std::to_string(w) +
                                    " must be divisible by " + std::to_string(divisor));
    detail::require_alpha_dims<S>(pred.rows(), h, w, "laplacian_loss");
    Var<S> gp = ad::constant(t, Mat<S>(gt.flat()));
    Var<S> total = ad::constant(t, Mat<S>(Mat<S>::Zero(1, 1)));
    int ch = h, cw = w;
    Var<S> p = pred, g = gp;
    for (int level = 0; level < kLaplacianLevels; ++level) {
        S weight = S(1 << level);
        if (level == kLaplacianLevels - 1) {
            total = ad::add(total, ad::scale(ad::mean_all(ad::abs(ad::sub(p, g))), weight));
            break;
        }
        auto [pb, pd] = pyramid_step(p, ch, cw);
        auto [gb, gd] = pyramid_step(g, ch, cw);
        total = ad::add(total, ad::scale(ad::mean_all(ad::abs(ad::sub(pb, gb))), weight));
        p = pd;
        g = gd;
        ch /= 2;
        cw /= 2;
    }
    return total;
}

template <typename S>
S laplacian_loss(const AlphaMatte<S>& pred, const AlphaMatte<S>& gt) {
    require_same_shape(pred, gt, "laplacian_loss");
    Tape<S> t;
    return laplacian_loss_fwd(t, ad::constant(t, Mat<S>(pred.flat())), gt, pred.height(), pred.width()).value()(0, 0);
}

/// mean |dx pred - dx gt| + mean |dy pred - dy gt| with forward differences.
template <typename S>
Var<S> gradient_penalty_fwd(Tape<S>& t, Var<S> pred, const AlphaMatte<S>& gt, int h, int w) {
    detail::require_alpha_dims<S>(pred.rows(), h, w, "gradient_penalty");
    Var<S> g = ad::constant(t, Mat<S>(gt.flat()));
    Var<S> dx = ad::sub(ad::diff_x(pred, h, w), ad::diff_x(g, h, w));
    Var<S> dy = ad::sub(ad::diff_y(pred, h, w), ad::diff_y(g, h, w));
    return ad::add(ad::mean_all(ad::abs(dx)), ad::mean_all(ad::abs(dy)));
}

template <typename S>
S gradient_penalty(const AlphaMatte<S>& pred, const AlphaMatte<S>& gt) {
    require_same_shape(pred, gt, "gradient_penalty");
    Tape<S> t;
    return gradient_penalty_fwd(t, ad::constant(t, Mat<S>(pred.flat())), gt, pred.height(), pred.width())
        .value()(0, 0);
}

/// Unweighted sum of the separate L1, Laplacian, and gradient-penalty terms.
template <typename S>
Var<S> total_loss_fwd(Tape<S>& t, Var<S> pred, const AlphaMatte<S>& gt, const Trimap& trimap, int h, int w) {
    Var<S> l1 = separate_l1_fwd(t, pred, gt, trimap);
    Var<S> lap = laplacian_loss_fwd(t, pred, gt, h, w);
    Var<S> gp = gradient_penalty_fwd(t, pred, gt, h, w);
    return ad::add(ad::add(l1, lap), gp);
}

template <typename S>
S total_loss(const AlphaMatte<S>& pred, const AlphaMatte<S>& gt, const Trimap& trimap) {
    require_same_shape(pred, gt, "total_loss");
    Tape<S> t;
    return total_loss_fwd(t, ad::constant(t, Mat<S>(pred.flat())), gt, trimap, pred.height(), pred.width())
        .value()(0, 0);
}

}  // namespace bgmatte::losses
