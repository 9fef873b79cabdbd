#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace bgmatte {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using MatD = Mat<double>;

/// Rank-3 H x W x C array stored as a (H*W) x C row-major matrix.
/// Pixel (y, x) lives on row y*width + x, so column c is the flattened channel plane.
template <typename S>
struct FeatureGrid {
    Mat<S> data;
    int height = 0;
    int width = 0;

    FeatureGrid() = default;
    FeatureGrid(int h, int w, int c) : data(Mat<S>::Zero(Eigen::Index(h) * w, c)), height(h), width(w) {}
    FeatureGrid(Mat<S> d, int h, int w) : data(std::move(d)), height(h), width(w) {
        if (data.rows() != Eigen::Index(height) * width)
            throw std::invalid_argument("FeatureGrid: data rows " + std::to_string(data.rows()) +
                                        " do not match height*width " + std::to_string(Eigen::Index(height) * width));
    }

    int channels() const { return int(data.cols()); }
    Eigen::Index pixels() const { return data.rows(); }
    S& at(int y, int x, int c) { return data(Eigen::Index(y) * width + x, c); }
    S at(int y, int x, int c) const { return data(Eigen::Index(y) * width + x, c); }

    template <typename T>
    FeatureGrid<T> cast() const {
        return FeatureGrid<T>(data.template cast<T>(), height, width);
    }
};

/// N x D token matrix with the token-grid geometry it was rastered from.
/// Token (r, c) of the grid lives on row r*grid_w + c (row-major patch order).
template <typename S>
struct TokenGrid {
    Mat<S> tokens;
    int grid_h = 0;
    int grid_w = 0;

    TokenGrid() = default;
    TokenGrid(Mat<S> t, int gh, int gw) : tokens(std::move(t)), grid_h(gh), grid_w(gw) {
        if (tokens.rows() != Eigen::Index(grid_h) * grid_w)
            throw std::invalid_argument("TokenGrid: token count " + std::to_string(tokens.rows()) +
                                        " does not match grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w));
    }

    Eigen::Index count() const { return tokens.rows(); }
    int dim() const { return int(tokens.cols()); }

    FeatureGrid<S> as_grid() const { return FeatureGrid<S>(tokens, grid_h, grid_w); }

    template <typename T>
    TokenGrid<T> cast() const {
        return TokenGrid<T>(tokens.template cast<T>(), grid_h, grid_w);
    }
};

/// Per-pixel opacity in [0,1], stored H x W.
template <typename S>
struct AlphaMatte {
    Mat<S> alpha;

    AlphaMatte() = default;
    explicit AlphaMatte(Mat<S> a) : alpha(std::move(a)) {}
    AlphaMatte(int h, int w) : alpha(Mat<S>::Zero(h, w)) {}

    int height() const { return int(alpha.rows()); }
    int width() const { return int(alpha.cols()); }

    // (H*W) x 1 column view in pixel order; alpha is row-major so memory is already flat.
    Eigen::Map<const Mat<S>> flat() const {
        return Eigen::Map<const Mat<S>>(alpha.data(), alpha.size(), 1);
    }

    template <typename T>
    AlphaMatte<T> cast() const {
        return AlphaMatte<T>(alpha.template cast<T>());
    }
};

enum class Region : std::uint8_t { Background = 0, Unknown = 1, Foreground = 2 };

/// Three-way FG / BG / UNKNOWN label map, H x W.
struct Trimap {
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> labels;

    Trimap() = default;
    Trimap(int h, int w) : labels(h, w) { labels.setConstant(std::uint8_t(Region::Unknown)); }

    int height() const { return int(labels.rows()); }
    int width() const { return int(labels.cols()); }
    Region at(int y, int x) const { return Region(labels(y, x)); }
    void set(int y, int x, Region r) { labels(y, x) = std::uint8_t(r); }
};

/// One training/evaluation unit: composited frame, captured background, ground truth.
template <typename S>
struct ImageSample {
    FeatureGrid<S> image;
    FeatureGrid<S> background;
    AlphaMatte<S> alpha_gt;
    std::optional<int> frame_index;
};

template <typename S>
void require_same_shape(const AlphaMatte<S>& a, const AlphaMatte<S>& b, const char* who) {
    if (a.height() != b.height() || a.width() != b.width())
        throw std::invalid_argument(std::string(who) + ": shape mismatch " + std::to_string(a.height()) + "x" +
                                    std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                                    std::to_string(b.width()));
}

}  // namespace bgmatte
