#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bgmatte/datagen.hpp"
#include "test_util.hpp"

#include <filesystem>

using namespace bgmatte;
namespace dg = bgmatte::datagen;

namespace {

template <typename S>
FeatureGrid<S> random_image(Rng& rng, int h, int w) {
    FeatureGrid<S> img(h, w, 3);
    for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data(i) = S(rng.uniform());
    return img;
}

}  // namespace

TEST_CASE("composite endpoints, midpoint, and per-pixel oracle") {
    Rng rng(1);
    auto fg = random_image<double>(rng, 6, 6);
    auto bg = random_image<double>(rng, 6, 6);

    AlphaMatte<double> ones(MatD::Ones(6, 6));
    CHECK((dg::composite(fg, ones, bg).data - fg.data).cwiseAbs().maxCoeff() == 0.0);
    AlphaMatte<double> zeros(MatD::Zero(6, 6));
    CHECK((dg::composite(fg, zeros, bg).data - bg.data).cwiseAbs().maxCoeff() == 0.0);

    FeatureGrid<double> f8(6, 6, 3), b2(6, 6, 3);
    f8.data.setConstant(0.8);
    b2.data.setConstant(0.2);
    AlphaMatte<double> half(MatD::Constant(6, 6, 0.5));
    CHECK((dg::composite(f8, half, b2).data.array() - 0.5).abs().maxCoeff() < 1e-12);

    AlphaMatte<double> a(6, 6);
    for (Eigen::Index i = 0; i < 36; ++i) a.alpha(i / 6, i % 6) = rng.uniform();
    auto out = dg::composite(fg, a, bg);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
            for (int c = 0; c < 3; ++c) {
                double want = a.alpha(y, x) * fg.at(y, x, c) + (1.0 - a.alpha(y, x)) * bg.at(y, x, c);
                CHECK(std::abs(out.at(y, x, c) - std::clamp(want, 0.0, 1.0)) < 1e-12);
            }

    FeatureGrid<double> wrong(4, 4, 3);
    CHECK_THROWS_AS(dg::composite(fg, a, wrong), std::invalid_argument);
}

TEST_CASE("alpha recovery round-trip validates compositing") {
    Rng rng(2);
    auto fg = random_image<double>(rng, 8, 8);
    auto bg = random_image<double>(rng, 8, 8);
    AlphaMatte<double> a(8, 8);
    for (Eigen::Index i = 0; i < 64; ++i) a.alpha(i / 8, i % 8) = rng.uniform();
    auto img = dg::composite(fg, a, bg);
    // solve I = aF + (1-a)B per pixel via least squares over channels where F != B
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            double num = 0.0, den = 0.0;
            for (int c = 0; c < 3; ++c) {
                double d = fg.at(y, x, c) - bg.at(y, x, c);
                num += (img.at(y, x, c) - bg.at(y, x, c)) * d;
                den += d * d;
            }
            if (den < 1e-6) continue;
            CHECK(std::abs(num / den - a.alpha(y, x)) < 1e-6);
        }
}

TEST_CASE("insert_distractors: count 0 is a no-op, empty pool rejected, square region diff") {
    Rng rng(3);
    auto bg = random_image<double>(rng, 32, 32);
    std::vector<dg::Cutout<double>> pool;
    CHECK((dg::insert_distractors(bg, pool, 0, 7).data - bg.data).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(dg::insert_distractors(bg, pool, 1, 7), std::invalid_argument);

    // one opaque square cutout: the output differs from bg exactly inside one rectangle
    FeatureGrid<double> sq(8, 8, 3);
    sq.data.setConstant(1.0);  // far from any bg value after compositing with alpha 1
    AlphaMatte<double> sqa(MatD::Ones(8, 8));
    pool.push_back({sq, sqa});
    auto out = dg::insert_distractors(bg, pool, 1, 99);

    int y0 = 99, y1 = -1, x0 = 99, x1 = -1;
    long diff_count = 0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            bool differs = false;
            for (int c = 0; c < 3; ++c)
                if (out.at(y, x, c) != bg.at(y, x, c)) differs = true;
            if (differs) {
                ++diff_count;
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
        }
    REQUIRE(diff_count > 0);
    // region-diff oracle: the changed set fills its own bounding box exactly
    CHECK(diff_count == long(y1 - y0 + 1) * (x1 - x0 + 1));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) CHECK(out.at(y, x, 0) == 1.0);

    // determinism
    auto out2 = dg::insert_distractors(bg, pool, 1, 99);
    CHECK((out.data - out2.data).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("augment: identity spec, flip involution, brightness on constants") {
    Rng rng(4);
    ImageSample<double> s;
    s.image = random_image<double>(rng, 16, 16);
    s.background = random_image<double>(rng, 16, 16);
    s.alpha_gt = AlphaMatte<double>(MatD::Constant(16, 16, 0.5));

    dg::AugmentSpec identity;  // zero-width ranges, flip_prob 0
    auto same = dg::augment(s, identity, 5);
    CHECK((same.image.data - s.image.data).cwiseAbs().maxCoeff() == 0.0);
    CHECK((same.background.data - s.background.data).cwiseAbs().maxCoeff() == 0.0);
    CHECK((same.alpha_gt.alpha - s.alpha_gt.alpha).cwiseAbs().maxCoeff() == 0.0);

    dg::AugmentSpec fliponly;
    fliponly.flip_prob = 1.0;
    auto twice = dg::augment(dg::augment(s, fliponly, 6), fliponly, 7);
    CHECK((twice.image.data - s.image.data).cwiseAbs().maxCoeff() == 0.0);
    CHECK((twice.alpha_gt.alpha - s.alpha_gt.alpha).cwiseAbs().maxCoeff() == 0.0);

    dg::AugmentSpec bright;
    bright.brightness_lo = bright.brightness_hi = 1.7;
    ImageSample<double> cs = s;
    cs.image.data.setConstant(0.4);
    auto lit = dg::augment(cs, bright, 8);
    CHECK((lit.image.data.array() - std::min(1.0, 1.7 * 0.4)).abs().maxCoeff() < 1e-12);

    dg::AugmentSpec bad;
    bad.scale_lo = 1.2;
    bad.scale_hi = 0.8;
    CHECK_THROWS_AS(dg::augment(s, bad, 9), std::invalid_argument);
}

TEST_CASE("augment applies the same warp to image and alpha") {
    Rng rng(5);
    ImageSample<double> s;
    s.image = random_image<double>(rng, 24, 24);
    s.background = random_image<double>(rng, 24, 24);
    MatD a = MatD::Zero(24, 24);
    a.block(6, 6, 10, 10).setOnes();
    s.alpha_gt = AlphaMatte<double>(a);

    dg::AugmentSpec spec;
    spec.rotation_lo = -20.0;
    spec.rotation_hi = 20.0;
    spec.scale_lo = 0.9;
    spec.scale_hi = 1.1;
    spec.shear_lo = -0.05;
    spec.shear_hi = 0.05;
    const std::uint64_t seed = 11;
    auto out = dg::augment(s, spec, seed);

    auto draw = dg::sample_augment_params(spec, seed);
    auto want_alpha = dg::warp_affine(s.alpha_gt, draw.fg_affine);
    CHECK((out.alpha_gt.alpha - want_alpha.alpha).cwiseAbs().maxCoeff() == 0.0);
    auto want_img = dg::warp_affine(s.image, draw.fg_affine);
    CHECK((out.image.data - want_img.data).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shift_background: identity ranges reproduce the input, table levels warp") {
    Rng rng(6);
    auto bg = random_image<float>(rng, 32, 32);
    dg::ShiftSpec none;
    none.seed = 3;
    auto same = dg::shift_background(bg, none);
    CHECK((same.data - bg.data).cwiseAbs().maxCoeff() < 1e-6f);

    dg::ShiftSpec level1{-2.0, 2.0, 0.95, 1.05, -0.02, 0.02, 4};
    auto shifted = dg::shift_background(bg, level1);
    CHECK((shifted.data - bg.data).cwiseAbs().maxCoeff() > 0.0f);
    auto shifted2 = dg::shift_background(bg, level1);
    CHECK((shifted.data - shifted2.data).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("synth disk matches its closed form; zero radius is empty") {
    auto a = dg::disk_alpha<double>(33, 16.0, 16.0, 8.0, 2.0);
    for (int y = 0; y < 33; ++y)
        for (int x = 0; x < 33; ++x) {
            double d = std::hypot(y - 16.0, x - 16.0);
            double want = std::clamp((8.0 - d) / 2.0 + 0.5, 0.0, 1.0);
            CHECK(std::abs(a.alpha(y, x) - want) < 1e-9);
        }
    auto zero = dg::disk_alpha<double>(16, 8.0, 8.0, 0.0, 2.0);
    CHECK(zero.alpha.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("synth_sample determinism, alpha consistency, unsupported kind") {
    auto s1 = dg::synth_sample<float>("disk", 32, 42);
    auto s2 = dg::synth_sample<float>("disk", 32, 42);
    CHECK((s1.image.data - s2.image.data).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((s1.background.data - s2.background.data).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((s1.alpha_gt.alpha - s2.alpha_gt.alpha).cwiseAbs().maxCoeff() == 0.0f);

    auto p = dg::synth_sample<float>("poly", 32, 7);
    CHECK(p.alpha_gt.alpha.maxCoeff() > 0.9f);
    CHECK(p.alpha_gt.alpha.minCoeff() == 0.0f);

    // image equals composite(fg, alpha, bg) by construction: alpha==0 pixels show bg
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            if (s1.alpha_gt.alpha(y, x) == 0.0f)
                for (int c = 0; c < 3; ++c) CHECK(s1.image.at(y, x, c) == s1.background.at(y, x, c));

    CHECK_THROWS_AS(dg::synth_sample<float>("mandelbrot", 32, 1), std::invalid_argument);
}

TEST_CASE("synth_sequence: zero velocity keeps all frames identical") {
    auto seq = dg::synth_sequence<float>(32, 4, 0.0, 9);
    REQUIRE(seq.size() == 4);
    for (std::size_t t = 1; t < seq.size(); ++t) {
        CHECK((seq[t].alpha_gt.alpha - seq[0].alpha_gt.alpha).cwiseAbs().maxCoeff() == 0.0f);
        CHECK((seq[t].image.data - seq[0].image.data).cwiseAbs().maxCoeff() == 0.0f);
        CHECK(seq[t].frame_index == int(t));
    }
    auto moving = dg::synth_sequence<float>(32, 4, 2.0, 9);
    CHECK((moving[1].alpha_gt.alpha - moving[0].alpha_gt.alpha).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("synth_training_sample respects distractor semantics") {
    dg::AugmentSpec spec;
    spec.target_count_lo = spec.target_count_hi = 1;
    spec.distractor_count_lo = spec.distractor_count_hi = 2;
    auto s = dg::synth_training_sample<float>(48, spec, 13);
    // distractors live in the background input: alpha==0 pixels still match bg exactly
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x)
            if (s.alpha_gt.alpha(y, x) == 0.0f)
                for (int c = 0; c < 3; ++c) CHECK(s.image.at(y, x, c) == s.background.at(y, x, c));
    CHECK(s.alpha_gt.alpha.maxCoeff() > 0.5f);
}

TEST_CASE("png round trip and sample directory IO") {
    std::string dir = std::filesystem::temp_directory_path() / "bgmatte_dgtest";
    std::filesystem::remove_all(dir);
    Rng rng(7);
    ImageSample<float> s;
    s.image = random_image<float>(rng, 24, 16);
    s.background = random_image<float>(rng, 24, 16);
    MatF a(24, 16);
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = float(rng.uniform());
    s.alpha_gt = AlphaMatte<float>(a);
    s.frame_index = 5;

    dg::write_sample(dir, 3, s, {{"kind", "disk"}, {"seed", 7}});
    auto loaded = dg::load_samples<float>(dir);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].stem == "0003");
    CHECK(loaded[0].sample.frame_index == 5);
    CHECK(loaded[0].meta["kind"] == "disk");
    CHECK(loaded[0].sample.image.height == 24);
    CHECK(loaded[0].sample.image.width == 16);
    // 8-bit quantization: half a level of tolerance
    CHECK((loaded[0].sample.image.data - s.image.data).cwiseAbs().maxCoeff() <= 0.5f / 255.0f + 1e-6f);
    CHECK((loaded[0].sample.alpha_gt.alpha - s.alpha_gt.alpha).cwiseAbs().maxCoeff() <= 0.5f / 255.0f + 1e-6f);
    std::filesystem::remove_all(dir);
}

TEST_CASE("geometric warp keeps binary masks binary away from edges") {
    MatD a = MatD::Zero(32, 32);
    a.block(8, 8, 12, 12).setOnes();
    AlphaMatte<double> mask(a);
    dg::AffineParams p{15.0, 1.05, 0.02};
    auto warped = dg::warp_affine(mask, p);
    // bilinear softening is confined to a 1px band around the region boundary:
    // every non-binary output pixel must touch both values in its source 2x2 cell,
    // so interior pixels stay exactly 0 or 1
    int soft = 0, binary = 0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            double v = warped.alpha(y, x);
            if (v == 0.0 || v == 1.0)
                ++binary;
            else
                ++soft;
        }
    CHECK(binary > soft);  // softening is a thin band, not the bulk
    CHECK(warped.alpha.minCoeff() >= 0.0);
    CHECK(warped.alpha.maxCoeff() <= 1.0);
}
