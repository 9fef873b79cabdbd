#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bgmatte/losses.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace bgmatte;
namespace ls = bgmatte::losses;
using test_util::random_mat;

namespace {

AlphaMatte<double> random_alpha(Rng& rng, int h, int w) {
    MatD a(h, w);
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng.uniform();
    return AlphaMatte<double>(a);
}

oracle::Image image_of(const AlphaMatte<double>& a) {
    oracle::Image img(std::size_t(a.height()), std::vector<double>(std::size_t(a.width())));
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) img[std::size_t(y)][std::size_t(x)] = a.alpha(y, x);
    return img;
}

}  // namespace

TEST_CASE("trimap: binary alpha with radius 0 partitions exactly, no unknown") {
    MatD a(4, 4);
    a << 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 1, 0, 1, 0;
    auto t = ls::derive_trimap(AlphaMatte<double>(a), 0);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            CHECK(t.at(y, x) != Region::Unknown);
            CHECK((t.at(y, x) == Region::Foreground) == (a(y, x) == 1.0));
        }
    CHECK_THROWS_AS(ls::derive_trimap(AlphaMatte<double>(a), -1), std::invalid_argument);
}

TEST_CASE("trimap: all-ones alpha, radius 3 shrinks FG 3px from the border") {
    AlphaMatte<double> a(MatD::Ones(10, 12));
    auto t = ls::derive_trimap(a, 3);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 12; ++x) {
            bool interior = y >= 3 && y <= 6 && x >= 3 && x <= 8;
            CHECK(t.at(y, x) == (interior ? Region::Foreground : Region::Unknown));
        }
}

TEST_CASE("trimap: soft disk produces an annulus containing all soft pixels") {
    const int n = 24;
    MatD a(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double d = std::hypot(y - 11.5, x - 11.5);
            a(y, x) = std::clamp((7.0 - d) / 3.0 + 0.5, 0.0, 1.0);
        }
    AlphaMatte<double> alpha(a);
    auto t = ls::derive_trimap(alpha, 2);

    // brute-force oracle: threshold then erode with the same square SE
    std::vector<std::vector<bool>> fg0(n, std::vector<bool>(n)), bg0(n, std::vector<bool>(n));
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            fg0[std::size_t(y)][std::size_t(x)] = a(y, x) >= 1.0 - 1.0 / 255.0;
            bg0[std::size_t(y)][std::size_t(x)] = a(y, x) <= 1.0 / 255.0;
        }
    auto se = oracle::square_se(2);
    auto fg = oracle::erode(fg0, se);
    auto bg = oracle::erode(bg0, se);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            Region want = fg[std::size_t(y)][std::size_t(x)]
                              ? Region::Foreground
                              : (bg[std::size_t(y)][std::size_t(x)] ? Region::Background : Region::Unknown);
            CHECK(t.at(y, x) == want);
            if (a(y, x) > 0.0 && a(y, x) < 1.0) CHECK(t.at(y, x) == Region::Unknown);
        }
}

TEST_CASE("separate_l1 hand cases") {
    MatD gt(2, 2), pred(2, 2);
    gt << 1, 1, 0, 0;
    pred << 1, 0.5, 0, 0;
    Trimap tri(2, 2);
    tri.set(0, 0, Region::Foreground);
    tri.set(0, 1, Region::Unknown);
    tri.set(1, 0, Region::Background);
    tri.set(1, 1, Region::Background);
    double got = ls::separate_l1(AlphaMatte<double>(pred), AlphaMatte<double>(gt), tri);
    CHECK(got == doctest::Approx(0.5));  // unknown mean 0.5 + known mean 0

    CHECK(ls::separate_l1(AlphaMatte<double>(gt), AlphaMatte<double>(gt), tri) == 0.0);

    // all pixels unknown: plain mean absolute error
    Trimap all_u(2, 2);
    double mae = (pred - gt).cwiseAbs().mean();
    CHECK(ls::separate_l1(AlphaMatte<double>(pred), AlphaMatte<double>(gt), all_u) == doctest::Approx(mae));

    Trimap bad(3, 2);
    CHECK_THROWS_AS(ls::separate_l1(AlphaMatte<double>(pred), AlphaMatte<double>(gt), bad), std::invalid_argument);
}

TEST_CASE("laplacian loss equals brute-force pyramid oracle") {
    Rng rng(1);
    auto pred = random_alpha(rng, 32, 32);
    auto gt = random_alpha(rng, 32, 32);
    CHECK(ls::laplacian_loss(pred, pred) == 0.0);
    double got = ls::laplacian_loss(pred, gt);
    double want = oracle::laplacian_loss(image_of(pred), image_of(gt));
    CHECK(got == doctest::Approx(want).epsilon(1e-12));

    // constant difference: only the coarse level contributes
    AlphaMatte<double> ca(MatD::Constant(32, 32, 0.75));
    AlphaMatte<double> cb(MatD::Constant(32, 32, 0.25));
    double cgot = ls::laplacian_loss(ca, cb);
    CHECK(cgot == doctest::Approx(oracle::laplacian_loss(image_of(ca), image_of(cb))).epsilon(1e-12));
    CHECK(cgot == doctest::Approx(16.0 * 0.5));  // bands cancel, level-5 weight 2^4 on |0.5|

    // single-pixel impulse difference
    AlphaMatte<double> ia(MatD::Zero(32, 32)), ib(MatD::Zero(32, 32));
    ib.alpha(13, 7) = 1.0;
    CHECK(ls::laplacian_loss(ia, ib) ==
          doctest::Approx(oracle::laplacian_loss(image_of(ia), image_of(ib))).epsilon(1e-9));

    AlphaMatte<double> odd(MatD::Zero(24, 24));
    CHECK_THROWS_WITH_AS(ls::laplacian_loss(odd, odd), doctest::Contains("divisible by 16"), std::invalid_argument);
}

TEST_CASE("gradient penalty: offsets vanish, ramps match hand computation") {
    Rng rng(2);
    auto pred = random_alpha(rng, 8, 8);
    CHECK(ls::gradient_penalty(pred, pred) == 0.0);

    AlphaMatte<double> shifted(MatD(pred.alpha.array() + 0.25));
    CHECK(ls::gradient_penalty(shifted, pred) == doctest::Approx(0.0));

    // horizontal ramp vs flat on a 1x3 row: dx = (0.2, 0.2, clamp 0), dy = 0
    MatD ramp(1, 3), flat(1, 3);
    ramp << 0.1, 0.3, 0.5;
    flat.setZero();
    double got = ls::gradient_penalty(AlphaMatte<double>(ramp), AlphaMatte<double>(flat));
    CHECK(got == doctest::Approx((0.2 + 0.2 + 0.0) / 3.0));

    MatD other(2, 2);
    CHECK_THROWS_AS(ls::gradient_penalty(AlphaMatte<double>(ramp), AlphaMatte<double>(other)),
                    std::invalid_argument);
}

TEST_CASE("total loss adds the three terms") {
    Rng rng(3);
    auto pred = random_alpha(rng, 32, 32);
    auto gt = random_alpha(rng, 32, 32);
    auto tri = ls::derive_trimap(gt, 1);
    CHECK(ls::total_loss(gt, gt, tri) == 0.0);
    double total = ls::total_loss(pred, gt, tri);
    double parts = ls::separate_l1(pred, gt, tri) + ls::laplacian_loss(pred, gt) + ls::gradient_penalty(pred, gt);
    CHECK(std::abs(total - parts) < 1e-12);
    CHECK(total > 0.0);

    // term-wise oracle composition on a small random case
    double oracle_sum = oracle::laplacian_loss(image_of(pred), image_of(gt));
    double mean_u = 0.0, mean_k = 0.0;
    int cu = 0, ck = 0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            double d = std::abs(pred.alpha(y, x) - gt.alpha(y, x));
            if (tri.at(y, x) == Region::Unknown) {
                mean_u += d;
                ++cu;
            } else {
                mean_k += d;
                ++ck;
            }
        }
    if (cu > 0) oracle_sum += mean_u / cu;
    if (ck > 0) oracle_sum += mean_k / ck;
    double gp = 0.0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            double px = x + 1 < 32 ? pred.alpha(y, x + 1) - pred.alpha(y, x) : 0.0;
            double gx = x + 1 < 32 ? gt.alpha(y, x + 1) - gt.alpha(y, x) : 0.0;
            gp += std::abs(px - gx);
        }
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            double py = y + 1 < 32 ? pred.alpha(y + 1, x) - pred.alpha(y, x) : 0.0;
            double gy = y + 1 < 32 ? gt.alpha(y + 1, x) - gt.alpha(y, x) : 0.0;
            gp += std::abs(py - gy);
        }
    oracle_sum += gp / (32.0 * 32.0);
    CHECK(total == doctest::Approx(oracle_sum).epsilon(1e-10));
}

TEST_CASE("loss terms are nonnegative on random pairs") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        auto a = random_alpha(rng, 16, 16);
        auto b = random_alpha(rng, 16, 16);
        auto tri = ls::derive_trimap(b, 1);
        CHECK(ls::separate_l1(a, b, tri) >= 0.0);
        CHECK(ls::laplacian_loss(a, b) >= 0.0);
        CHECK(ls::gradient_penalty(a, b) >= 0.0);
    }
}

TEST_CASE("total loss gradient w.r.t. prediction matches finite differences") {
    Rng rng(5);
    auto gt = random_alpha(rng, 16, 16);
    auto tri = ls::derive_trimap(gt, 1);
    MatD pred = random_mat<double>(rng, 16 * 16, 1, 0.05, 0.95);

    ad::Tape<double> t;
    auto pv = ad::leaf(t, pred, true);
    auto loss = ls::total_loss_fwd(t, pv, gt, tri, 16, 16);
    t.backward(loss.id);
    MatD analytic = pv.grad();

    auto eval = [&]() {
        ad::Tape<double> t2;
        auto p2 = ad::constant(t2, pred);
        return ls::total_loss_fwd(t2, p2, gt, tri, 16, 16).value()(0, 0);
    };
    Rng pick(6);
    int passed = 0, failed = 0;
    for (int rep = 0; rep < 30; ++rep) {
        Eigen::Index idx = Eigen::Index(pick.uniform_int(0, int(pred.size()) - 1));
        auto verdict = test_util::fd_check_entry(eval, pred(idx), analytic(idx));
        if (verdict == test_util::FdVerdict::Pass) ++passed;
        if (verdict == test_util::FdVerdict::Fail) ++failed;
    }
    CHECK(failed == 0);
    CHECK(passed >= 20);
}
