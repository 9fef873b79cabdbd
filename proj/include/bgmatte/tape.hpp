#pragma once

#include "bgmatte/types.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace bgmatte::ad {

/// Reverse-mode tape over dense row-major matrices. Nodes are appended in evaluation
/// order, so creation order is already topological; backward() walks it in reverse.
/// Gradients are materialized only for nodes whose subtree contains a grad-requiring
/// leaf, which makes frozen parameters (and constant inputs) free during backward.
template <typename S>
class Tape {
public:
    struct Node {
        Mat<S> value;
        Mat<S> grad;
        std::function<void(Tape&, int)> backward;
        bool requires_grad = false;
        bool has_grad = false;
    };

    int emplace(Mat<S> value, bool requires_grad, std::function<void(Tape&, int)> back = nullptr) {
        nodes_.push_back(Node{std::move(value), {}, std::move(back), requires_grad, false});
        return int(nodes_.size()) - 1;
    }

    Node& node(int id) { return nodes_[std::size_t(id)]; }
    const Node& node(int id) const { return nodes_[std::size_t(id)]; }
    const Mat<S>& value(int id) const { return nodes_[std::size_t(id)].value; }
    std::size_t size() const { return nodes_.size(); }

    void accumulate(int id, const Mat<S>& g) {
        Node& n = nodes_[std::size_t(id)];
        if (!n.requires_grad) return;
        if (!n.has_grad) {
            n.grad = g;
            n.has_grad = true;
        } else {
            n.grad += g;
        }
    }

    /// Seeds d(root)/d(root) = 1 and propagates. Root is typically a 1x1 loss.
    void backward(int root) {
        Node& r = nodes_[std::size_t(root)];
        if (!r.requires_grad)
            throw std::logic_error("Tape::backward: root does not depend on any trainable leaf");
        r.grad = Mat<S>::Ones(r.value.rows(), r.value.cols());
        r.has_grad = true;
        for (int i = root; i >= 0; --i) {
            Node& n = nodes_[std::size_t(i)];
            if (n.has_grad && n.backward) n.backward(*this, i);
        }
    }

private:
    std::vector<Node> nodes_;
};

template <typename S>
struct Var {
    Tape<S>* tape = nullptr;
    int id = -1;

    const Mat<S>& value() const { return tape->value(id); }
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    bool requires_grad() const { return tape->node(id).requires_grad; }
    bool has_grad() const { return tape->node(id).has_grad; }
    const Mat<S>& grad() const { return tape->node(id).grad; }
};

template <typename S>
Var<S> leaf(Tape<S>& t, Mat<S> v, bool requires_grad = false) {
    return {&t, t.emplace(std::move(v), requires_grad)};
}

template <typename S>
Var<S> constant(Tape<S>& t, Mat<S> v) {
    return leaf(t, std::move(v), false);
}

// ---------------------------------------------------------------------------
// elementwise / linear algebra
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    Tape<S>& t = *a.tape;
    int ia = a.id, ib = b.id;
    bool rg = a.requires_grad() || b.requires_grad();
    int id = t.emplace(a.value() + b.value(), rg, [ia, ib](Tape<S>& tp, int self) {
        const Mat<S>& g = tp.node(self).grad;
        tp.accumulate(ia, g);
        tp.accumulate(ib, g);
    });
    return {&t, id};
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
    Tape<S>& t = *a.tape;
    int ia = a.id, ib = b.id;
    bool rg = a.requires_grad() || b.requires_grad();
    int id = t.emplace(a.value() - b.value(), rg, [ia, ib](Tape<S>& tp, int self) {
        const Mat<S>& g = tp.node(self).grad;
        tp.accumulate(ia, g);
        tp.accumulate(ib, Mat<S>(-g));
    });
    return {&t, id};
}

template <typename S>
Var<S> scale(Var<S> a, S s) {
    Tape<S>& t = *a.tape;
    int ia = a.id;
    int id = t.emplace(a.value() * s, a.requires_grad(), [ia, s](Tape<S>& tp, int self) {
        tp.accumulate(ia, Mat<S>(tp.node(self).grad * s));
    });
    return {&t, id};
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
    Tape<S>& t = *a.tape;
    int ia = a.id, ib = b.id;
    bool rg = a.requires_grad() || b.requires_grad();
    int id = t.emplace(a.value().cwiseProduct(b.value()), rg, [ia, ib](Tape<S>& tp, int self) {
        const Mat<S>& g = tp.node(self).grad;
        tp.accumulate(ia, Mat<S>(g.cwiseProduct(tp.value(ib))));
        tp.accumulate(ib, Mat<S>(g.cwiseProduct(tp.value(ia))));
    });
    return {&t, id};
}

/// Elementwise product with a fixed matrix (masks, level weights).
template <typename S>
Var<S> mul_const(Var<S> a, const Mat<S>& m) {
    Tape<S>& t = *a.tape;
    int ia = a.id;
    Mat<S> mc = m;
    int id = t.emplace(a.value().cwiseProduct(mc), a.requires_grad(), [ia, mc](Tape<S>& tp, int self) {
        tp.accumulate(ia, Mat<S>(tp.node(self).grad.cwiseProduct(mc)));
    });
    return {&t, id};
}

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
    Tape<S>& t = *a.tape;
    int ia = a.id, ib = b.id;
    bool rg = a.requires_grad() || b.requires_grad();
    int id = t.emplace(a.value() * b.value(), rg, [ia, ib](Tape<S>& tp, int self) {
        const Mat<S>& g = tp.node(self).grad;
        tp.accumulate(ia, Mat<S>(g * tp.value(ib).transpose()));
        tp.accumulate(ib, Mat<S>(tp.value(ia).transpose() * g));
    });
    return {&t, id};
}

/// a * b^T without materializing the transpose node.
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
    Tape<S>& t = *a.tape;
    int ia = a.id, ib = b.id;
    bool rg = a.requires_grad() || b.requires_grad();
    int id = t.emplace(a.value() * b.value().transpose(), rg, [ia, ib](Tape<S>& tp, int self) {
        const Mat<S>& g = tp.node(self).grad;
        tp.accumulate(ia, Mat<S>(g * tp.value(ib)));
        tp.accumulate(ib, Mat<S>(g.transpose() * tp.value(ia)));
    });
    return {&t, id};
}

template <typename S>
Var<S> relu(Var<S> a) {
    Tape<S>& t = *a.tape;
    int ia = a.id;
    int id = t.emplace(a.value().cwiseMax(S(0)), a.requires_grad(), [ia](Tape<S>& tp, int self) {
        const Mat<S>& x = tp.value(ia);
        Mat<S> gx = tp.node(self).grad;
        for (Eigen::Index i = 0; i < gx.size(); ++i)
            if (x(i) <= S(0)) gx(i) = S(0);
        tp.accumulate(ia, gx);
    });
    return {&t, id};
}

/// Exact (erf-based) GELU.
template <typename S>
Var<S> gelu(Var<S> a) {
    Tape<S>& t = *a.tape;
    int ia = a.id;
    const S inv_sqrt2 = S(M_SQRT1_2);
    Mat<S> y = a.value();
    for (Eigen::Index i = 0; i < y.size(); ++i)
        y(i) = S(0.5) * y(i) * (S(1) + std::erf(y(i) * inv_sqrt2));
    int id = t.emplace(std::move(y), a.requires_grad(), [ia, inv_sqrt2](Tape<S>& tp, int self) {
        const Mat<S>& x = tp.value(ia);
        Mat<S> gx = tp.node(self).grad;
        const S inv_sqrt2pi = S(1) / std::sqrt(S(2) * S(M_PI));
        for (Eigen::Index i = 0; i < gx.size(); ++i) {
            S cdf = S(0.5) * (S(1) + std::erf(x(i) * inv_sqrt2));
            S pdf = inv_sqrt2pi * std::exp(S(-0.5) * x(i) * x(i));
            gx(i) *= cdf + x(i) * pdf;
        }
        tp.accumulate(ia, gx);
    });
    return {&t, id};
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
    Tape<S>& t = *a.tape;
    int ia = a.id;
    Mat<S> y = a.value();
    for (Eigen::Index i = 0; i < y.size(); ++i)
        y(i) = S(1) / (S(1) + std::exp(-y(i)));
    int id = t.emplace(std::move(y), a.requires_grad(), [ia](Tape<S>& tp, int self) {
        const Mat<S>& y = tp.value(self);
        Mat<S> gx = tp.node(self).grad;
        gx.array() *= y.array() * (S(1) - y.array());
        tp.accumulate(ia, gx);
    });
    return {&t, id};
}

/// Absolute value with subgradient 0 at the kink.
template <typename S>
Var<S> abs(Var<S> a) {
    Tape<S>& t = *a.tape;
    int ia = a.id;
    int id = t.emplace(a.value().cwiseAbs(), a.requires_grad(), [ia](Tape<S>& tp, int self) {
        const Mat<S>& x = tp.value(ia);
        Mat<S> gx = tp.node(self).grad;
        for (Eigen::Index i = 0; i < gx.size(); ++i) {
            if (x(i) > S(0)) continue;
            gx(i) = x(i) < S(0) ? -gx(i) : S(0);
        }
        tp.accumulate(ia, gx);
    });
    return {&t, id};
}

/// Row-wise softmax with max-subtraction stabilization.
template <typename S>
Var<S> softmax_rows(Var<S> a) {
    Tape<S>& t = *a.tape;
    int ia = a.id;
    Mat<S> y = a.value();
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        S m = y.row(r).maxCoeff();
        y.row(r) = (y.row(r).array() - m).exp();
        y.row(r) /= y.row(r).sum();
    }
    int id = t.emplace(std::move(y), a.requires_grad(), [ia](Tape<S>& tp, int self) {
        const Mat<S>& y = tp.value(self);
        const Mat<S>& g = tp.node(self).grad;
        Mat<S> gx(y.rows(), y.cols());
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            S dot = g.row(r).dot(y.row(r));
            gx.row(r) = (y.row(r).array() * (g.row(r).array() - dot)).matrix();
        }
        tp.accumulate(ia, gx);
    });
    return {&t, id};
}

template <typename S>
Var<S> slice_cols(Var<S> a, int c0, int n) {
    Tape<S>& t = *a.tape;
    int ia = a.id;
    Eigen::Index total = a.cols();
    int id = t.emplace(a.value().middleCols(c0, n), a.requires_grad(), [ia, c0, n, total](Tape<S>& tp, int self) {
        const Mat<S>& g = tp.node(self).grad;
        Mat<S> gx = Mat<S>::Zero(g.rows(), total);
        gx.middleCols(c0, n) = g;
        tp.accumulate(ia, gx);
    });
    return {&t, id};
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
    Tape<S>& t = *parts.front().tape;
    Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    bool rg = false;
    std::vector<int> ids;
    std::vector<int> widths;
    for (const auto& p : parts) {
        cols += p.cols();
        rg = rg || p.requires_grad();
        ids.push_back(p.id);
        widths.push_back(int(p.cols()));
    }
    Mat<S> v(rows, cols);
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        v.middleCols(off, p.cols()) = p.value();
        off += p.cols();
    }
    int id = t.emplace(std::move(v), rg, [ids, widths](Tape<S>& tp, int self) {
        const Mat<S>& g = tp.node(self).grad;
        Eigen::Index off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            tp.accumulate(ids[k], Mat<S>(g.middleCols(off, widths[k])));
            off += widths[k];
        }
    });
    return {&t, id};
}

template <typename S>
Var<S> sum_all(Var<S> a) {
    Tape<S>& t = *a.tape;
    int ia = a.id;
    Mat<S> v(1, 1);
    v(0, 0) = a.value().sum();
    Eigen::Index r = a.rows(), c = a.cols();
    int id = t.emplace(std::move(v), a.requires_grad(), [ia, r, c](Tape<S>& tp, int self) {
        tp.accumulate(ia, Mat<S>(Mat<S>::Constant(r, c, tp.node(self).grad(0, 0))));
    });
    return {&t, id};
}

template <typename S>
Var<S> mean_all(Var<S> a) {
    return scale(sum_all(a), S(1) / S(a.value().size()));
}

}  // namespace bgmatte::ad
