#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bgmatte/decoder.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace bgmatte;
namespace dec = bgmatte::decoder;
using test_util::random_mat;

namespace {

template <typename S>
FeatureGrid<S> random_grid(Rng& rng, int h, int w, int c, double lo = -1.0, double hi = 1.0) {
    FeatureGrid<S> g(h, w, c);
    for (Eigen::Index i = 0; i < g.data.size(); ++i) g.data(i) = S(rng.uniform(lo, hi));
    return g;
}

oracle::ResidualUnitWeights unit_weights(const dec::ResUnit<double>& u) {
    oracle::ResidualUnitWeights w;
    w.conv1_w = oracle::rows_of(u.conv1.weight);
    w.conv1_b = oracle::vec_of(u.conv1.bias);
    w.conv2_w = oracle::rows_of(u.conv2.weight);
    w.conv2_b = oracle::vec_of(u.conv2.bias);
    w.gn1_g = oracle::vec_of(u.gn1.gamma);
    w.gn1_b = oracle::vec_of(u.gn1.beta);
    w.gn2_g = oracle::vec_of(u.gn2.gamma);
    w.gn2_b = oracle::vec_of(u.gn2.beta);
    w.gn1_groups = nn::group_norm_groups(int(u.gn1.gamma.cols()));
    w.gn2_groups = nn::group_norm_groups(int(u.gn2.gamma.cols()));
    w.has_proj = u.has_proj;
    if (u.has_proj) {
        w.proj_w = oracle::rows_of(u.proj.weight);
        w.proj_b = oracle::vec_of(u.proj.bias);
    }
    return w;
}

}  // namespace

TEST_CASE("residual unit with zero conv2 is a pure skip") {
    Rng rng(1);
    auto unit = dec::init_res_unit<double>(rng, 8, 8);
    unit.conv2.weight.setZero();
    unit.conv2.bias.setZero();
    unit.gn2.gamma.setZero();  // GN(0) = beta; keep beta zero so the residual vanishes
    unit.gn2.beta.setZero();
    auto x = random_grid<double>(rng, 4, 4, 8);
    auto out = dec::residual_unit(x, unit);
    CHECK((out.data - x.data).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("channel-changing unit with zero residual branch returns the projected input") {
    Rng rng(2);
    auto unit = dec::init_res_unit<double>(rng, 8, 12);
    REQUIRE(unit.has_proj);
    unit.gn2.gamma.setZero();
    unit.gn2.beta.setZero();
    auto x = random_grid<double>(rng, 4, 4, 8);
    auto out = dec::residual_unit(x, unit);
    auto want = oracle::linear(oracle::rows_of(x.data), oracle::rows_of(unit.proj.weight),
                               oracle::vec_of(unit.proj.bias));
    for (Eigen::Index r = 0; r < out.data.rows(); ++r)
        for (Eigen::Index c = 0; c < out.data.cols(); ++c)
            CHECK(out.data(r, c) == doctest::Approx(want[std::size_t(r)][std::size_t(c)]).epsilon(1e-12));
}

TEST_CASE("residual unit matches scalar oracle on random instances") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(10 + seed);
        auto unit = dec::init_res_unit<double>(rng, 8, 8);
        auto x = random_grid<double>(rng, 4, 4, 8);
        auto out = dec::residual_unit(x, unit);
        auto want = oracle::residual_unit(oracle::rows_of(x.data), 4, 4, unit_weights(unit));
        double err = 0.0;
        for (Eigen::Index r = 0; r < out.data.rows(); ++r)
            for (Eigen::Index c = 0; c < out.data.cols(); ++c)
                err = std::max(err, std::abs(out.data(r, c) - want[std::size_t(r)][std::size_t(c)]));
        CHECK(err < 1e-10);
    }
}

TEST_CASE("decode scale bookkeeping: 4x4 tokens -> 8/16/32 stages, 64 head") {
    dec::DecoderConfig cfg;
    cfg.stage_channels = {16, 12, 8};
    cfg.head_channels = 8;
    Rng rng(3);
    const int D = 8;
    auto params = dec::init<double>(cfg, D, true, rng);

    auto aligned = fbam::AlignedFeatures<double>{random_grid<double>(rng, 4, 4, D)};
    TokenGrid<double> backbone(random_mat<double>(rng, 16, D), 4, 4);
    auto hires = random_grid<double>(rng, 32, 32, D);

    ad::Tape<double> t;
    auto v = dec::lift(t, params, false);
    auto hv = ad::constant(t, hires.data);
    int stage_dims[4] = {0, 0, 0, 0};
    auto out = dec::decode_fwd(t, ad::constant(t, aligned.feature.data), 4, 4, ad::constant(t, backbone.tokens), &hv,
                               32, 32, v, nullptr, stage_dims);
    CHECK(stage_dims[0] == 8);
    CHECK(stage_dims[1] == 16);
    CHECK(stage_dims[2] == 32);
    CHECK(stage_dims[3] == 64);
    CHECK(out.rows() == 64 * 64);
    CHECK(out.cols() == 1);

    // alpha bounds
    CHECK(out.value().minCoeff() >= 0.0);
    CHECK(out.value().maxCoeff() <= 1.0);

    // scale mismatch rejected with expected-vs-actual dims
    auto bad_hires = random_grid<double>(rng, 16, 16, D);
    CHECK_THROWS_WITH_AS(dec::decode(aligned, backbone, bad_hires, params), doctest::Contains("expected 32x32"),
                         std::invalid_argument);
}

TEST_CASE("all-zero features and zero biases give alpha 0.5 everywhere") {
    dec::DecoderConfig cfg;
    cfg.stage_channels = {8, 8, 8};
    cfg.head_channels = 8;
    Rng rng(4);
    const int D = 8;
    auto params = dec::init<float>(cfg, D, true, rng);
    // zero input + GN(0)=0 + zero biases everywhere keeps every pre-activation 0,
    // so the head sees logit 0 -> sigmoid 0.5
    auto zero_all = [](auto& unit) {
        unit.conv1.bias.setZero();
        unit.conv2.bias.setZero();
        unit.gn1.beta.setZero();
        unit.gn2.beta.setZero();
        if (unit.has_proj) unit.proj.bias.setZero();
    };
    zero_all(params.stage1);
    zero_all(params.stage2);
    zero_all(params.stage3);
    zero_all(params.backbone_skip);
    zero_all(params.upsampler_skip);

    auto aligned = fbam::AlignedFeatures<float>{FeatureGrid<float>(2, 2, D)};
    TokenGrid<float> backbone(MatF::Zero(4, D), 2, 2);
    FeatureGrid<float> hires(16, 16, D);
    auto alpha = dec::decode(aligned, backbone, hires, params);
    CHECK(alpha.height() == 32);
    CHECK(alpha.width() == 32);
    CHECK((alpha.alpha.array() - 0.5f).abs().maxCoeff() < 1e-7f);
}

TEST_CASE("head saturation drives alpha to the [0,1] endpoints") {
    dec::DecoderConfig cfg;
    cfg.stage_channels = {8, 8, 8};
    cfg.head_channels = 8;
    Rng rng(5);
    const int D = 8;
    auto params = dec::init<float>(cfg, D, true, rng);
    auto aligned = fbam::AlignedFeatures<float>{random_grid<float>(rng, 2, 2, D)};
    TokenGrid<float> backbone(random_mat<float>(rng, 4, D), 2, 2);
    auto hires = random_grid<float>(rng, 16, 16, D);

    params.head.bias.setConstant(1e9f);
    auto hi = dec::decode(aligned, backbone, hires, params);
    CHECK(hi.alpha.minCoeff() == 1.0f);
    params.head.bias.setConstant(-1e9f);
    auto lo = dec::decode(aligned, backbone, hires, params);
    CHECK(lo.alpha.maxCoeff() == 0.0f);
}

TEST_CASE("output stays in [0,1] and matches input dims for divisible sizes") {
    dec::DecoderConfig cfg;
    cfg.stage_channels = {12, 10, 8};
    cfg.head_channels = 6;
    Rng rng(6);
    const int D = 8;
    auto params = dec::init<float>(cfg, D, true, rng);
    for (auto [gh, gw] : {std::pair{2, 3}, std::pair{3, 2}, std::pair{4, 4}}) {
        auto aligned = fbam::AlignedFeatures<float>{random_grid<float>(rng, gh, gw, D)};
        TokenGrid<float> backbone(random_mat<float>(rng, gh * gw, D), gh, gw);
        auto hires = random_grid<float>(rng, 8 * gh, 8 * gw, D);
        auto alpha = dec::decode(aligned, backbone, hires, params);
        CHECK(alpha.height() == 16 * gh);
        CHECK(alpha.width() == 16 * gw);
        CHECK(alpha.alpha.minCoeff() >= 0.0f);
        CHECK(alpha.alpha.maxCoeff() <= 1.0f);
    }
}

TEST_CASE("decoder gradients match central finite differences") {
    dec::DecoderConfig cfg;
    cfg.stage_channels = {6, 5, 4};
    cfg.head_channels = 4;
    Rng rng(7);
    const int D = 6;
    auto params = dec::init<double>(cfg, D, true, rng);
    auto aligned = random_grid<double>(rng, 2, 2, D);
    MatD backbone = random_mat<double>(rng, 4, D);
    auto hires = random_grid<double>(rng, 16, 16, D);
    MatD mixer = random_mat<double>(rng, 32 * 32, 1);

    ad::Tape<double> t;
    auto v = dec::lift(t, params, true);
    auto hv = ad::constant(t, hires.data);
    auto out = dec::decode_fwd(t, ad::constant(t, aligned.data), 2, 2, ad::constant(t, backbone), &hv, 16, 16, v);
    auto l = ad::sum_all(ad::mul(out, ad::constant(t, mixer)));
    t.backward(l.id);

    std::vector<ad::Var<double>> pv;
    dec::visit(v, "dec", [&](const std::string&, ad::Var<double>& x) { pv.push_back(x); });
    std::vector<MatD*> pm;
    dec::visit(params, "dec", [&](const std::string&, MatD& m) { pm.push_back(&m); });
    REQUIRE(pv.size() == pm.size());

    auto eval = [&]() {
        ad::Tape<double> t2;
        auto v2 = dec::lift(t2, params, false);
        auto hv2 = ad::constant(t2, hires.data);
        auto o2 = dec::decode_fwd(t2, ad::constant(t2, aligned.data), 2, 2, ad::constant(t2, backbone), &hv2, 16, 16,
                                  v2);
        return o2.value().cwiseProduct(mixer).sum();
    };

    Rng pick(8);
    int passed = 0, failed = 0;
    for (std::size_t k = 0; k < pm.size(); ++k) {
        MatD& m = *pm[k];
        MatD analytic = pv[k].has_grad() ? pv[k].grad() : MatD::Zero(m.rows(), m.cols());
        Eigen::Index idx = Eigen::Index(pick.uniform_int(0, int(m.size()) - 1));
        auto verdict = test_util::fd_check_entry(eval, m(idx), analytic(idx));
        if (verdict == test_util::FdVerdict::Pass) ++passed;
        if (verdict == test_util::FdVerdict::Fail) ++failed;
    }
    CHECK(failed == 0);
    CHECK(passed >= 20);
}
