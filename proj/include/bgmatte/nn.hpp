#pragma once

#include "bgmatte/rng.hpp"
#include "bgmatte/tape.hpp"

#include <string>
#include <vector>

namespace bgmatte::nn {

using ad::Tape;
using ad::Var;

// Parameter structs are templated on the element type so the same layout serves
// both storage (Mat<S>) and tape views (Var<S>).

template <typename T>
struct LinearParamsT {
    T weight;  // out x in
    T bias;    // 1 x out
};

template <typename T>
struct NormParamsT {
    T gamma;  // 1 x C
    T beta;   // 1 x C
};

template <typename T>
struct AttentionParamsT {
    LinearParamsT<T> q, k, v, o;
};

template <typename T>
struct MlpParamsT {
    LinearParamsT<T> fc1, fc2;
};

template <typename T>
struct ConvParamsT {
    T weight;  // c_out x (taps*c_in)
    T bias;    // 1 x c_out
};

template <typename S> using LinearParams = LinearParamsT<Mat<S>>;
template <typename S> using NormParams = NormParamsT<Mat<S>>;
template <typename S> using AttentionParams = AttentionParamsT<Mat<S>>;
template <typename S> using MlpParams = MlpParamsT<Mat<S>>;
template <typename S> using ConvParams = ConvParamsT<Mat<S>>;

template <typename S> using LinearVars = LinearParamsT<Var<S>>;
template <typename S> using NormVars = NormParamsT<Var<S>>;
template <typename S> using AttentionVars = AttentionParamsT<Var<S>>;
template <typename S> using MlpVars = MlpParamsT<Var<S>>;
template <typename S> using ConvVars = ConvParamsT<Var<S>>;

// ---------------------------------------------------------------------------
// initialization (consumes the rng stream in declaration order)
// ---------------------------------------------------------------------------

template <typename S>
Mat<S> randn(Rng& rng, Eigen::Index rows, Eigen::Index cols, double std_dev) {
    Mat<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = S(rng.normal() * std_dev);
    return m;
}

template <typename S>
LinearParams<S> init_linear(Rng& rng, int out, int in, double std_dev = 0.02) {
    return {randn<S>(rng, out, in, std_dev), Mat<S>::Zero(1, out)};
}

template <typename S>
NormParams<S> init_norm(int channels) {
    return {Mat<S>::Ones(1, channels), Mat<S>::Zero(1, channels)};
}

template <typename S>
AttentionParams<S> init_attention(Rng& rng, int dim) {
    return {init_linear<S>(rng, dim, dim), init_linear<S>(rng, dim, dim),
            init_linear<S>(rng, dim, dim), init_linear<S>(rng, dim, dim)};
}

template <typename S>
MlpParams<S> init_mlp(Rng& rng, int dim, int hidden) {
    return {init_linear<S>(rng, hidden, dim), init_linear<S>(rng, dim, hidden)};
}

template <typename S>
ConvParams<S> init_conv(Rng& rng, int c_out, int c_in, int taps) {
    double he = std::sqrt(2.0 / double(taps * c_in));
    return {randn<S>(rng, c_out, Eigen::Index(taps) * c_in, he), Mat<S>::Zero(1, c_out)};
}

// ---------------------------------------------------------------------------
// lift: register parameters as tape leaves
// ---------------------------------------------------------------------------

template <typename S>
LinearVars<S> lift(Tape<S>& t, const LinearParams<S>& p, bool rg) {
    return {ad::leaf(t, p.weight, rg), ad::leaf(t, p.bias, rg)};
}

template <typename S>
NormVars<S> lift(Tape<S>& t, const NormParams<S>& p, bool rg) {
    return {ad::leaf(t, p.gamma, rg), ad::leaf(t, p.beta, rg)};
}

template <typename S>
AttentionVars<S> lift(Tape<S>& t, const AttentionParams<S>& p, bool rg) {
    return {lift(t, p.q, rg), lift(t, p.k, rg), lift(t, p.v, rg), lift(t, p.o, rg)};
}

template <typename S>
MlpVars<S> lift(Tape<S>& t, const MlpParams<S>& p, bool rg) {
    return {lift(t, p.fc1, rg), lift(t, p.fc2, rg)};
}

template <typename S>
ConvVars<S> lift(Tape<S>& t, const ConvParams<S>& p, bool rg) {
    return {ad::leaf(t, p.weight, rg), ad::leaf(t, p.bias, rg)};
}

// ---------------------------------------------------------------------------
// visit: stable-ordered traversal of the raw matrices (serialization, Adam, counts)
// ---------------------------------------------------------------------------

template <typename T, typename F>
void visit(LinearParamsT<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".weight", p.weight);
    f(prefix + ".bias", p.bias);
}

template <typename T, typename F>
void visit(NormParamsT<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".gamma", p.gamma);
    f(prefix + ".beta", p.beta);
}

template <typename T, typename F>
void visit(AttentionParamsT<T>& p, const std::string& prefix, F&& f) {
    visit(p.q, prefix + ".q", f);
    visit(p.k, prefix + ".k", f);
    visit(p.v, prefix + ".v", f);
    visit(p.o, prefix + ".o", f);
}

template <typename T, typename F>
void visit(MlpParamsT<T>& p, const std::string& prefix, F&& f) {
    visit(p.fc1, prefix + ".fc1", f);
    visit(p.fc2, prefix + ".fc2", f);
}

template <typename T, typename F>
void visit(ConvParamsT<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".weight", p.weight);
    f(prefix + ".bias", p.bias);
}

// ---------------------------------------------------------------------------
// core layers
// ---------------------------------------------------------------------------

/// x * W^T + b broadcast over rows.
template <typename S>
Var<S> linear(Var<S> x, const LinearVars<S>& p) {
    Tape<S>& t = *x.tape;
    Mat<S> v = x.value() * p.weight.value().transpose();
    v.rowwise() += p.bias.value().row(0);
    int ix = x.id, iw = p.weight.id, ib = p.bias.id;
    bool rg = x.requires_grad() || p.weight.requires_grad() || p.bias.requires_grad();
    int id = t.emplace(std::move(v), rg, [ix, iw, ib](Tape<S>& tp, int self) {
        const Mat<S>& g = tp.node(self).grad;
        tp.accumulate(ix, Mat<S>(g * tp.value(iw)));
        tp.accumulate(iw, Mat<S>(g.transpose() * tp.value(ix)));
        tp.accumulate(ib, Mat<S>(g.colwise().sum()));
    });
    return {&t, id};
}

inline constexpr double kNormEps = 1e-5;

/// Per-row layer norm over channels with biased variance, eps 1e-5.
template <typename S>
Var<S> layer_norm(Var<S> x, const NormVars<S>& p) {
    Tape<S>& t = *x.tape;
    const Mat<S>& xin = x.value();
    const Eigen::Index n = xin.rows(), c = xin.cols();
    Mat<S> xhat(n, c);
    Mat<S> inv_sigma(n, 1);
    for (Eigen::Index r = 0; r < n; ++r) {
        S mu = xin.row(r).mean();
        S var = (xin.row(r).array() - mu).square().mean();
        S is = S(1) / std::sqrt(var + S(kNormEps));
        inv_sigma(r, 0) = is;
        xhat.row(r) = (xin.row(r).array() - mu) * is;
    }
    Mat<S> v = xhat;
    v.array().rowwise() *= p.gamma.value().row(0).array();
    v.rowwise() += p.beta.value().row(0);

    int ix = x.id, ig = p.gamma.id, ib = p.beta.id;
    bool rg = x.requires_grad() || p.gamma.requires_grad() || p.beta.requires_grad();
    int id = t.emplace(std::move(v), rg,
                       [ix, ig, ib, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Tape<S>& tp, int self) {
        const Mat<S>& g = tp.node(self).grad;
        const Mat<S>& gamma = tp.value(ig);
        if (tp.node(ig).requires_grad) tp.accumulate(ig, Mat<S>(g.cwiseProduct(xhat).colwise().sum()));
        if (tp.node(ib).requires_grad) tp.accumulate(ib, Mat<S>(g.colwise().sum()));
        if (!tp.node(ix).requires_grad) return;
        Mat<S> gx(g.rows(), g.cols());
        const Eigen::Index c = g.cols();
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            auto gh = (g.row(r).array() * gamma.row(0).array()).eval();  // d/dxhat
            S m1 = gh.mean();
            S m2 = (gh * xhat.row(r).array()).mean();
            gx.row(r) = (inv_sigma(r, 0) * (gh - m1 - xhat.row(r).array() * m2)).matrix();
            (void)c;
        }
        tp.accumulate(ix, gx);
    });
    return {&t, id};
}

/// Group norm with batch-1 semantics: statistics over all rows x channels of each
/// group, per-channel affine. eps 1e-5.
template <typename S>
Var<S> group_norm(Var<S> x, const NormVars<S>& p, int groups) {
    Tape<S>& t = *x.tape;
    const Mat<S>& xin = x.value();
    const Eigen::Index n = xin.rows(), c = xin.cols();
    if (c % groups != 0)
        throw std::invalid_argument("group_norm: " + std::to_string(c) + " channels not divisible by " +
                                    std::to_string(groups) + " groups");
    const Eigen::Index gc = c / groups;
    Mat<S> xhat(n, c);
    std::vector<S> inv_sigma(static_cast<std::size_t>(groups));
    for (int g = 0; g < groups; ++g) {
        auto block = xin.middleCols(Eigen::Index(g) * gc, gc);
        S mu = block.mean();
        S var = (block.array() - mu).square().mean();
        S is = S(1) / std::sqrt(var + S(kNormEps));
        inv_sigma[std::size_t(g)] = is;
        xhat.middleCols(Eigen::Index(g) * gc, gc) = ((block.array() - mu) * is).matrix();
    }
    Mat<S> v = xhat;
    v.array().rowwise() *= p.gamma.value().row(0).array();
    v.rowwise() += p.beta.value().row(0);

    int ix = x.id, ig = p.gamma.id, ib = p.beta.id;
    bool rg = x.requires_grad() || p.gamma.requires_grad() || p.beta.requires_grad();
    int id = t.emplace(std::move(v), rg,
                       [ix, ig, ib, groups, gc, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Tape<S>& tp,
                                                                                                          int self) {
        const Mat<S>& g = tp.node(self).grad;
        const Mat<S>& gamma = tp.value(ig);
        if (tp.node(ig).requires_grad) tp.accumulate(ig, Mat<S>(g.cwiseProduct(xhat).colwise().sum()));
        if (tp.node(ib).requires_grad) tp.accumulate(ib, Mat<S>(g.colwise().sum()));
        if (!tp.node(ix).requires_grad) return;
        Mat<S> gx(g.rows(), g.cols());
        for (int grp = 0; grp < groups; ++grp) {
            auto gh = (g.middleCols(Eigen::Index(grp) * gc, gc).array().rowwise() *
                       gamma.row(0).middleCols(Eigen::Index(grp) * gc, gc).array())
                          .eval();
            auto xh = xhat.middleCols(Eigen::Index(grp) * gc, gc).array();
            S m1 = gh.mean();
            S m2 = (gh * xh).mean();
            gx.middleCols(Eigen::Index(grp) * gc, gc) =
                (inv_sigma[std::size_t(grp)] * (gh - m1 - xh * m2)).matrix();
        }
        tp.accumulate(ix, gx);
    });
    return {&t, id};
}

/// Multi-head attention with queries from `q_in` and keys/values from `kv_in`
/// (q_in == kv_in gives self-attention). Heads split the embedding into contiguous
/// chunks; scores are scaled by 1/sqrt(head_dim).
template <typename S>
Var<S> multihead_attention(Var<S> q_in, Var<S> kv_in, const AttentionVars<S>& p, int num_heads) {
    const int dim = int(q_in.cols());
    if (dim % num_heads != 0)
        throw std::invalid_argument("attention: dim " + std::to_string(dim) + " not divisible by " +
                                    std::to_string(num_heads) + " heads");
    const int hd = dim / num_heads;
    Var<S> q = linear(q_in, p.q);
    Var<S> k = linear(kv_in, p.k);
    Var<S> v = linear(kv_in, p.v);
    const S inv_sqrt = S(1) / std::sqrt(S(hd));
    std::vector<Var<S>> heads;
    heads.reserve(std::size_t(num_heads));
    for (int h = 0; h < num_heads; ++h) {
        Var<S> qh = ad::slice_cols(q, h * hd, hd);
        Var<S> kh = ad::slice_cols(k, h * hd, hd);
        Var<S> vh = ad::slice_cols(v, h * hd, hd);
        Var<S> attn = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
        heads.push_back(ad::matmul(attn, vh));
    }
    return linear(ad::concat_cols(heads), p.o);
}

/// Two-layer MLP with exact GELU.
template <typename S>
Var<S> mlp(Var<S> x, const MlpVars<S>& p) {
    return linear(ad::gelu(linear(x, p.fc1)), p.fc2);
}

/// min(8, channels), reduced to the nearest divisor so groups always tile the channels.
inline int group_norm_groups(int channels) {
    int g = std::min(8, channels);
    while (channels % g != 0) --g;
    return g;
}

}  // namespace bgmatte::nn
