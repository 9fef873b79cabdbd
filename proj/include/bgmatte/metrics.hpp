#pragma once

#include "bgmatte/losses.hpp"
#include "bgmatte/types.hpp"

#include "json.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <string>
#include <vector>

namespace bgmatte::metrics {

// Reported scalings: MAD/MSE x1000, Grad/Conn x1e-3, dtSSD x100. These match the
// magnitude conventions of the usual matting benchmarks and are config-visible here.
inline constexpr double kMadScale = 1000.0;
inline constexpr double kMseScale = 1000.0;
inline constexpr double kGradScale = 1e-3;
inline constexpr double kConnScale = 1e-3;
inline constexpr double kDtssdScale = 100.0;

inline constexpr double kGradSigma = 1.4;
inline constexpr int kGradRadius = 5;
inline constexpr double kConnStep = 0.1;
inline constexpr double kConnDistThreshold = 0.15;

template <typename S>
double mad(const AlphaMatte<S>& pred, const AlphaMatte<S>& gt) {
    require_same_shape(pred, gt, "mad");
    return (pred.alpha.template cast<double>() - gt.alpha.template cast<double>()).cwiseAbs().mean() * kMadScale;
}

template <typename S>
double mse(const AlphaMatte<S>& pred, const AlphaMatte<S>& gt) {
    require_same_shape(pred, gt, "mse");
    return (pred.alpha.template cast<double>() - gt.alpha.template cast<double>()).array().square().mean() *
           kMseScale;
}

namespace detail {

/// Separable Gaussian (sigma 1.4, radius 5) and its derivative, edge replication.
inline void gauss_kernels(std::vector<double>& g, std::vector<double>& gd) {
    g.assign(2 * kGradRadius + 1, 0.0);
    gd.assign(2 * kGradRadius + 1, 0.0);
    double norm = 0.0;
    for (int i = -kGradRadius; i <= kGradRadius; ++i) {
        g[std::size_t(i + kGradRadius)] = std::exp(-0.5 * i * i / (kGradSigma * kGradSigma));
        norm += g[std::size_t(i + kGradRadius)];
    }
    for (int i = -kGradRadius; i <= kGradRadius; ++i) {
        g[std::size_t(i + kGradRadius)] /= norm;
        gd[std::size_t(i + kGradRadius)] = -double(i) / (kGradSigma * kGradSigma) * g[std::size_t(i + kGradRadius)];
    }
}

inline MatD sep_filter(const MatD& img, const std::vector<double>& kx, const std::vector<double>& ky) {
    const int h = int(img.rows()), w = int(img.cols());
    const int r = int(kx.size() / 2);
    MatD tmp = MatD::Zero(h, w), out = MatD::Zero(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int d = -r; d <= r; ++d)
                tmp(y, x) += kx[std::size_t(d + r)] * img(y, std::clamp(x + d, 0, w - 1));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int d = -r; d <= r; ++d)
                out(y, x) += ky[std::size_t(d + r)] * tmp(std::clamp(y + d, 0, h - 1), x);
    return out;
}

}  // namespace detail

/// Sum of squared Gaussian-derivative response differences, x 1e-3.
template <typename S>
double grad_metric(const AlphaMatte<S>& pred, const AlphaMatte<S>& gt) {
    require_same_shape(pred, gt, "grad_metric");
    std::vector<double> g, gd;
    detail::gauss_kernels(g, gd);
    MatD p = pred.alpha.template cast<double>(), q = gt.alpha.template cast<double>();
    MatD pdx = detail::sep_filter(p, gd, g), pdy = detail::sep_filter(p, g, gd);
    MatD qdx = detail::sep_filter(q, gd, g), qdy = detail::sep_filter(q, g, gd);
    double total = (pdx - qdx).array().square().sum() + (pdy - qdy).array().square().sum();
    return total * kGradScale;
}

namespace detail {

/// Largest 4-connected component of a binary map; ties break toward the component
/// containing the smallest pixel index. Returns a 0/1 mask (all zero if empty).
inline Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> largest_component(
    const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& mask) {
    const int h = int(mask.rows()), w = int(mask.cols());
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> label(h, w);
    label.setConstant(-1);
    std::vector<long> sizes;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask(y, x) || label(y, x) >= 0) continue;
            int id = int(sizes.size());
            sizes.push_back(0);
            queue.push_back({y, x});
            label(y, x) = id;
            while (!queue.empty()) {
                auto [cy, cx] = queue.front();
                queue.pop_front();
                ++sizes[std::size_t(id)];
                constexpr int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    int ny = cy + dy[k], nx = cx + dx[k];
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    if (!mask(ny, nx) || label(ny, nx) >= 0) continue;
                    label(ny, nx) = id;
                    queue.push_back({ny, nx});
                }
            }
        }
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(h, w);
    out.setZero();
    if (sizes.empty()) return out;
    int best = 0;
    for (std::size_t i = 1; i < sizes.size(); ++i)
        if (sizes[i] > sizes[std::size_t(best)]) best = int(i);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(y, x) = label(y, x) == best ? 1 : 0;
    return out;
}

}  // namespace detail

/// Connectivity error: per-pixel connectedness level from a 0.1-stepped threshold
/// sweep over the joint (pred AND gt) binarization, distance threshold 0.15,
/// summed |phi_pred - phi_gt|, x 1e-3.
template <typename S>
double conn_metric(const AlphaMatte<S>& pred, const AlphaMatte<S>& gt) {
    require_same_shape(pred, gt, "conn_metric");
    const int h = pred.height(), w = pred.width();
    MatD p = pred.alpha.template cast<double>(), q = gt.alpha.template cast<double>();
    MatD l_map = MatD::Constant(h, w, -1.0);
    const int nsteps = int(std::lround(1.0 / kConnStep));
    using U8Map = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    for (int s = 1; s <= nsteps; ++s) {
        const double theta = s * kConnStep;
        U8Map joint(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) joint(y, x) = p(y, x) >= theta && q(y, x) >= theta ? 1 : 0;
        U8Map omega = detail::largest_component(joint);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (l_map(y, x) < 0.0 && !omega(y, x)) l_map(y, x) = theta - kConnStep;
    }
    double total = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double l = l_map(y, x) < 0.0 ? 1.0 : l_map(y, x);
            double dp = p(y, x) - l, dq = q(y, x) - l;
            double phi_p = 1.0 - (dp >= kConnDistThreshold ? dp : 0.0);
            double phi_q = 1.0 - (dq >= kConnDistThreshold ? dq : 0.0);
            total += std::abs(phi_p - phi_q);
        }
    return total * kConnScale;
}

/// sqrt(mean over (t, p) of squared difference of temporal derivatives), x 100.
template <typename S>
double dtssd(const std::vector<AlphaMatte<S>>& pred_seq, const std::vector<AlphaMatte<S>>& gt_seq) {
    if (pred_seq.size() != gt_seq.size())
        throw std::invalid_argument("dtssd: sequence lengths differ, " + std::to_string(pred_seq.size()) + " vs " +
                                    std::to_string(gt_seq.size()));
    if (pred_seq.size() < 2) throw std::invalid_argument("dtssd: need at least 2 frames");
    double total = 0.0;
    long count = 0;
    for (std::size_t t = 0; t + 1 < pred_seq.size(); ++t) {
        require_same_shape(pred_seq[t], gt_seq[t], "dtssd");
        MatD dp = (pred_seq[t + 1].alpha.template cast<double>() - pred_seq[t].alpha.template cast<double>());
        MatD dq = (gt_seq[t + 1].alpha.template cast<double>() - gt_seq[t].alpha.template cast<double>());
        total += (dp - dq).array().square().sum();
        count += dp.size();
    }
    return std::sqrt(total / double(count)) * kDtssdScale;
}

/// Evaluation trimap: the training derivation at the benchmark's erosion radius
/// (25 at 1024; scale proportionally at other resolutions).
template <typename S>
Trimap gen_eval_trimap(const AlphaMatte<S>& alpha_gt, int erosion = 25) {
    return losses::derive_trimap(alpha_gt, erosion);
}

inline int scaled_eval_erosion(int resolution, int base = 25, int base_res = 1024) {
    return std::max(0, int(std::lround(double(base) * resolution / base_res)));
}

/// Evaluation mask: (alpha > 0.95) eroded with a 7x7 elliptical structuring element
/// (offsets dy^2 + dx^2 <= 9).
template <typename S>
Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gen_eval_mask(const AlphaMatte<S>& alpha_gt) {
    using BoolMap = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const int h = alpha_gt.height(), w = alpha_gt.width();
    BoolMap mask(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) mask(y, x) = double(alpha_gt.alpha(y, x)) > 0.95;
    constexpr int r = 3;
    BoolMap out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool keep = true;
            for (int dy = -r; dy <= r && keep; ++dy)
                for (int dx = -r; dx <= r && keep; ++dx) {
                    if (dy * dy + dx * dx > r * r) continue;
                    int yy = y + dy, xx = x + dx;
                    keep = yy >= 0 && yy < h && xx >= 0 && xx < w && mask(yy, xx);
                }
            out(y, x) = keep;
        }
    return out;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

struct SampleMetrics {
    std::string id;
    double mad = 0.0, mse = 0.0, grad = 0.0, conn = 0.0;
};

struct MetricsReport {
    std::vector<SampleMetrics> per_sample;
    std::vector<std::pair<std::string, double>> per_sequence_dtssd;
    std::string config_hash;
    std::uint64_t seed = 0;
    int shift_level = -1;  // -1 = not a stress run

    double mean_mad() const { return mean([](const SampleMetrics& s) { return s.mad; }); }
    double mean_mse() const { return mean([](const SampleMetrics& s) { return s.mse; }); }
    double mean_grad() const { return mean([](const SampleMetrics& s) { return s.grad; }); }
    double mean_conn() const { return mean([](const SampleMetrics& s) { return s.conn; }); }
    double mean_dtssd() const {
        if (per_sequence_dtssd.empty()) return 0.0;
        double t = 0.0;
        for (const auto& [_, v] : per_sequence_dtssd) t += v;
        return t / double(per_sequence_dtssd.size());
    }

    template <typename F>
    double mean(F&& f) const {
        if (per_sample.empty()) return 0.0;
        double t = 0.0;
        for (const auto& s : per_sample) t += f(s);
        return t / double(per_sample.size());
    }

    void write_csv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("MetricsReport: cannot open " + path);
        f << "id,mad,mse,grad,conn\n";
        f.precision(9);
        for (const auto& s : per_sample)
            f << s.id << "," << s.mad << "," << s.mse << "," << s.grad << "," << s.conn << "\n";
    }

    nlohmann::json summary() const {
        nlohmann::json j;
        j["samples"] = per_sample.size();
        j["mad"] = mean_mad();
        j["mse"] = mean_mse();
        j["grad"] = mean_grad();
        j["conn"] = mean_conn();
        if (!per_sequence_dtssd.empty()) {
            j["dtssd"] = mean_dtssd();
            j["sequences"] = per_sequence_dtssd.size();
        }
        j["config_hash"] = config_hash;
        j["seed"] = seed;
        if (shift_level >= 0) j["shift_level"] = shift_level;
        return j;
    }

    void write_summary(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("MetricsReport: cannot open " + path);
        f << summary().dump(2) << "\n";
    }
};

/// FNV-1a of the resolved config text; recorded in report provenance.
inline std::string config_hash(const std::string& text) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace bgmatte::metrics
