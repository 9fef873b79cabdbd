#pragma once

#include "bgmatte/tape.hpp"

#include <array>
#include <vector>

namespace bgmatte::ad {

// Spatial ops view an (h*w) x C matrix as an h x w image with C channels.
// Forward and backward iterate the same tap enumeration, so the backward pass is
// the exact adjoint of the forward stencil.

/// 3x3 convolution, zero padding, stride 1. Weight layout: (c_out) x (9*c_in) with
/// tap-major columns, tap order (dy,dx) scanning dy=-1..1, dx=-1..1. Bias 1 x c_out.
template <typename S>
Var<S> conv3x3(Var<S> x, int h, int w, Var<S> weight, Var<S> bias) {
    Tape<S>& t = *x.tape;
    const int cin = int(x.cols());
    const int cout = int(weight.value().rows());
    if (weight.value().cols() != Eigen::Index(9) * cin)
        throw std::invalid_argument("conv3x3: weight expects " + std::to_string(9 * cin) + " input columns, got " +
                                    std::to_string(weight.value().cols()));

    auto shifted = [h, w, cin](const Mat<S>& src, int dy, int dx) {
        Mat<S> out = Mat<S>::Zero(Eigen::Index(h) * w, cin);
        for (int y = 0; y < h; ++y) {
            int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
            if (x0 >= x1) continue;
            out.block(Eigen::Index(y) * w + x0, 0, x1 - x0, cin) =
                src.block(Eigen::Index(sy) * w + x0 + dx, 0, x1 - x0, cin);
        }
        return out;
    };

    Mat<S> v = Mat<S>::Zero(Eigen::Index(h) * w, cout);
    {
        const Mat<S>& xin = x.value();
        const Mat<S>& wv = weight.value();
        int tap = 0;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx, ++tap)
                v.noalias() += shifted(xin, dy, dx) * wv.middleCols(Eigen::Index(tap) * cin, cin).transpose();
        v.rowwise() += bias.value().row(0);
    }

    int ix = x.id, iw = weight.id, ib = bias.id;
    bool rg = x.requires_grad() || weight.requires_grad() || bias.requires_grad();
    int id = t.emplace(std::move(v), rg, [ix, iw, ib, h, w, cin, cout, shifted](Tape<S>& tp, int self) {
        const Mat<S>& g = tp.node(self).grad;
        const Mat<S>& xin = tp.value(ix);
        const Mat<S>& wv = tp.value(iw);
        if (tp.node(ib).requires_grad) tp.accumulate(ib, Mat<S>(g.colwise().sum()));
        Mat<S> gw;
        bool want_w = tp.node(iw).requires_grad;
        bool want_x = tp.node(ix).requires_grad;
        if (want_w) gw = Mat<S>::Zero(cout, Eigen::Index(9) * cin);
        Mat<S> gx;
        if (want_x) gx = Mat<S>::Zero(Eigen::Index(h) * w, cin);
        int tap = 0;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx, ++tap) {
                if (want_w)
                    gw.middleCols(Eigen::Index(tap) * cin, cin).noalias() += g.transpose() * shifted(xin, dy, dx);
                if (want_x) {
                    // adjoint of shifted(.., dy, dx) is shifted(.., -dy, -dx)
                    Mat<S> gtap = g * wv.middleCols(Eigen::Index(tap) * cin, cin);
                    gx.noalias() += shifted(gtap, -dy, -dx);
                }
            }
        if (want_w) tp.accumulate(iw, gw);
        if (want_x) tp.accumulate(ix, gx);
    });
    return {&t, id};
}

namespace detail {

/// Enumerates bilinear interpolation taps for resizing h x w -> oh x ow
/// (half-pixel centers, clamped to edges: the align_corners=false convention).
template <typename S, typename F>
void for_each_bilinear_tap(int h, int w, int oh, int ow, F&& fn) {
    const double sy = double(h) / oh, sx = double(w) / ow;
    for (int oy = 0; oy < oh; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        int y0 = int(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::min(std::max(y0, 0), h - 1);
        int y1c = std::min(std::max(y0 + 1, 0), h - 1);
        for (int ox = 0; ox < ow; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            int x0 = int(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::min(std::max(x0, 0), w - 1);
            int x1c = std::min(std::max(x0 + 1, 0), w - 1);
            Eigen::Index o = Eigen::Index(oy) * ow + ox;
            fn(o, Eigen::Index(y0c) * w + x0c, S((1 - wy) * (1 - wx)));
            fn(o, Eigen::Index(y0c) * w + x1c, S((1 - wy) * wx));
            fn(o, Eigen::Index(y1c) * w + x0c, S(wy * (1 - wx)));
            fn(o, Eigen::Index(y1c) * w + x1c, S(wy * wx));
        }
    }
}

/// Adaptive average-pooling taps: output cell (oy,ox) averages the input block
/// rows [floor(oy*h/oh), ceil((oy+1)*h/oh)) x cols [floor(ox*w/ow), ceil((ox+1)*w/ow)).
template <typename S, typename F>
void for_each_pool_tap(int h, int w, int oh, int ow, F&& fn) {
    for (int oy = 0; oy < oh; ++oy) {
        int y0 = (oy * h) / oh;
        int y1 = ((oy + 1) * h + oh - 1) / oh;
        for (int ox = 0; ox < ow; ++ox) {
            int x0 = (ox * w) / ow;
            int x1 = ((ox + 1) * w + ow - 1) / ow;
            S inv = S(1) / S((y1 - y0) * (x1 - x0));
            Eigen::Index o = Eigen::Index(oy) * ow + ox;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) fn(o, Eigen::Index(y) * w + x, inv);
        }
    }
}

}  // namespace detail

/// Generic linear-stencil node: out[o] = sum taps w * in[i].
template <typename S, typename TapFn>
Var<S> stencil_node(Var<S> x, Eigen::Index out_rows, TapFn taps) {
    Tape<S>& t = *x.tape;
    const Mat<S>& xin = x.value();
    Mat<S> v = Mat<S>::Zero(out_rows, xin.cols());
    taps([&](Eigen::Index o, Eigen::Index i, S wt) { v.row(o) += wt * xin.row(i); });
    int ix = x.id;
    Eigen::Index in_rows = xin.rows();
    int id = t.emplace(std::move(v), x.requires_grad(), [ix, in_rows, taps](Tape<S>& tp, int self) {
        const Mat<S>& g = tp.node(self).grad;
        Mat<S> gx = Mat<S>::Zero(in_rows, g.cols());
        taps([&](Eigen::Index o, Eigen::Index i, S wt) { gx.row(i) += wt * g.row(o); });
        tp.accumulate(ix, gx);
    });
    return {&t, id};
}

template <typename S>
Var<S> bilinear_resize(Var<S> x, int h, int w, int oh, int ow) {
    return stencil_node(x, Eigen::Index(oh) * ow, [h, w, oh, ow](auto&& fn) {
        detail::for_each_bilinear_tap<S>(h, w, oh, ow, fn);
    });
}

template <typename S>
Var<S> bilinear_up2(Var<S> x, int h, int w) {
    return bilinear_resize(x, h, w, 2 * h, 2 * w);
}

template <typename S>
Var<S> adaptive_avg_pool(Var<S> x, int h, int w, int oh, int ow) {
    if (oh > h || ow > w)
        throw std::invalid_argument("adaptive_avg_pool: requested " + std::to_string(oh) + "x" + std::to_string(ow) +
                                    " exceeds source " + std::to_string(h) + "x" + std::to_string(w));
    return stencil_node(x, Eigen::Index(oh) * ow, [h, w, oh, ow](auto&& fn) {
        detail::for_each_pool_tap<S>(h, w, oh, ow, fn);
    });
}

/// Separable [1,4,6,4,1]/16 blur along one axis with edge replication.
template <typename S>
Var<S> blur14641_axis(Var<S> x, int h, int w, bool along_rows) {
    return stencil_node(x, Eigen::Index(h) * w, [h, w, along_rows](auto&& fn) {
        const S k[5] = {S(1) / 16, S(4) / 16, S(6) / 16, S(4) / 16, S(1) / 16};
        for (int y = 0; y < h; ++y)
            for (int x0 = 0; x0 < w; ++x0) {
                Eigen::Index o = Eigen::Index(y) * w + x0;
                for (int d = -2; d <= 2; ++d) {
                    int yy = y, xx = x0;
                    if (along_rows)
                        yy = std::min(std::max(y + d, 0), h - 1);
                    else
                        xx = std::min(std::max(x0 + d, 0), w - 1);
                    fn(o, Eigen::Index(yy) * w + xx, k[std::size_t(d + 2)]);
                }
            }
    });
}

template <typename S>
Var<S> blur14641(Var<S> x, int h, int w) {
    return blur14641_axis(blur14641_axis(x, h, w, true), h, w, false);
}

/// Keeps pixels at even coordinates: h x w -> h/2 x w/2.
template <typename S>
Var<S> decimate2(Var<S> x, int h, int w) {
    int oh = h / 2, ow = w / 2;
    return stencil_node(x, Eigen::Index(oh) * ow, [w, oh, ow](auto&& fn) {
        for (int y = 0; y < oh; ++y)
            for (int x0 = 0; x0 < ow; ++x0)
                fn(Eigen::Index(y) * ow + x0, Eigen::Index(2 * y) * w + 2 * x0, S(1));
    });
}

/// Zero insertion to 2x size; values land on even coordinates.
template <typename S>
Var<S> zero_expand2(Var<S> x, int h, int w) {
    int oh = 2 * h, ow = 2 * w;
    return stencil_node(x, Eigen::Index(oh) * ow, [w, h, ow](auto&& fn) {
        for (int y = 0; y < h; ++y)
            for (int x0 = 0; x0 < w; ++x0)
                fn(Eigen::Index(2 * y) * ow + 2 * x0, Eigen::Index(y) * w + x0, S(1));
    });
}

template <typename S>
Var<S> gather_rows(Var<S> x, std::vector<Eigen::Index> idx) {
    Tape<S>& t = *x.tape;
    Mat<S> v(Eigen::Index(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) v.row(Eigen::Index(i)) = x.value().row(idx[i]);
    int ix = x.id;
    Eigen::Index in_rows = x.rows();
    int id = t.emplace(std::move(v), x.requires_grad(), [ix, in_rows, idx = std::move(idx)](Tape<S>& tp, int self) {
        const Mat<S>& g = tp.node(self).grad;
        Mat<S> gx = Mat<S>::Zero(in_rows, g.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += g.row(Eigen::Index(i));
        tp.accumulate(ix, gx);
    });
    return {&t, id};
}

/// Writes each part's rows to the given destination rows of a fresh matrix.
/// Destinations must be disjoint and cover the output exactly once.
template <typename S>
Var<S> scatter_rows(const std::vector<Var<S>>& parts, const std::vector<std::vector<Eigen::Index>>& dests,
                    Eigen::Index out_rows) {
    Tape<S>& t = *parts.front().tape;
    Mat<S> v(out_rows, parts.front().cols());
    bool rg = false;
    std::vector<int> ids;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        rg = rg || parts[p].requires_grad();
        ids.push_back(parts[p].id);
        for (std::size_t i = 0; i < dests[p].size(); ++i) v.row(dests[p][i]) = parts[p].value().row(Eigen::Index(i));
    }
    int id = t.emplace(std::move(v), rg, [ids, dests](Tape<S>& tp, int self) {
        const Mat<S>& g = tp.node(self).grad;
        for (std::size_t p = 0; p < ids.size(); ++p) {
            Mat<S> gp(Eigen::Index(dests[p].size()), g.cols());
            for (std::size_t i = 0; i < dests[p].size(); ++i) gp.row(Eigen::Index(i)) = g.row(dests[p][i]);
            tp.accumulate(ids[p], gp);
        }
    });
    return {&t, id};
}

/// Forward difference along x with edge clamp (last column is 0).
template <typename S>
Var<S> diff_x(Var<S> x, int h, int w) {
    return stencil_node(x, Eigen::Index(h) * w, [h, w](auto&& fn) {
        for (int y = 0; y < h; ++y)
            for (int x0 = 0; x0 + 1 < w; ++x0) {
                Eigen::Index o = Eigen::Index(y) * w + x0;
                fn(o, o + 1, S(1));
                fn(o, o, S(-1));
            }
    });
}

/// Forward difference along y with edge clamp (last row is 0).
template <typename S>
Var<S> diff_y(Var<S> x, int h, int w) {
    return stencil_node(x, Eigen::Index(h) * w, [h, w](auto&& fn) {
        for (int y = 0; y + 1 < h; ++y)
            for (int x0 = 0; x0 < w; ++x0) {
                Eigen::Index o = Eigen::Index(y) * w + x0;
                fn(o, o + w, S(1));
                fn(o, o, S(-1));
            }
    });
}

}  // namespace bgmatte::ad
