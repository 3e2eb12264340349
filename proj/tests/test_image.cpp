#include <doctest.h>

#include <random>

#include "helpers.h"
#include "vps/image.h"

using namespace vps;

TEST_SUITE_BEGIN("image");

TEST_CASE("bilinear sample of constant image") {
    ColorImage img(16, 12, 0.37f);
    const auto s = sample_bilinear(img, Vec2(5.3, 7.8));
    REQUIRE(s.has_value());
    CHECK((s->value - Vec3::Constant(0.37f)).norm() < 1e-7);
    CHECK(s->grad.norm() < 1e-7);
}

TEST_CASE("bilinear gradient of linear ramp") {
    const int w = 32, h = 16;
    ColorImage img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            img.set(x, y, Vec3::Constant(double(x) / (w - 1)));
    const auto s = sample_bilinear(img, Vec2(11.4, 6.2));
    REQUIRE(s.has_value());
    for (int c = 0; c < 3; ++c) {
        CHECK(s->grad(0, c) == doctest::Approx(1.0 / (w - 1)).epsilon(1e-6));
        CHECK(std::abs(s->grad(1, c)) < 1e-9);
    }
}

TEST_CASE("bilinear gradient matches finite differences of the sampler") {
    const ColorImage img = test::random_image(24, 20, 99);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        const Vec2 px(2.0 + U(rng) * (img.width - 5), 2.0 + U(rng) * (img.height - 5));
        const auto s = sample_bilinear(img, px);
        REQUIRE(s.has_value());
        const Vec3 fx = 0.5 * (sample_bilinear(img, px + Vec2(1, 0))->value -
                               sample_bilinear(img, px - Vec2(1, 0))->value);
        const Vec3 fy = 0.5 * (sample_bilinear(img, px + Vec2(0, 1))->value -
                               sample_bilinear(img, px - Vec2(0, 1))->value);
        worst = std::max(worst, (s->grad.row(0).transpose() - fx).norm());
        worst = std::max(worst, (s->grad.row(1).transpose() - fy).norm());
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("bilinear sample at integer coordinates equals stored pixel") {
    const ColorImage img = test::random_image(9, 7, 123);
    for (int y = 1; y < img.height - 1; ++y)
        for (int x = 1; x < img.width - 1; ++x) {
            const auto s = sample_bilinear(img, Vec2(x, y));
            REQUIRE(s.has_value());
            CHECK((s->value - img.at(x, y)).norm() < 1e-12);
        }
}

TEST_CASE("out-of-bounds sampling reports no sample") {
    ColorImage img(8, 8, 0.5f);
    CHECK_FALSE(sample_bilinear(img, Vec2(0.4, 4)).has_value());
    CHECK_FALSE(sample_bilinear(img, Vec2(4, 6.7)).has_value());
    CHECK(sample_bilinear(img, Vec2(1.0, 1.0)).has_value());
    CHECK(sample_bilinear(img, Vec2(6.0, 6.0)).has_value());
}

TEST_CASE("sharpness: constant is zero, blur reduces, checkerboard above constant") {
    ColorImage flat(32, 32, 0.6f);
    CHECK(sharpness(flat) == doctest::Approx(0.0));

    const ColorImage noisy = test::random_image(48, 48, 321);
    const ColorImage blurred = test::gaussian_blur(noisy, 2.0);
    CHECK(sharpness(blurred) < sharpness(noisy));

    ColorImage checker(32, 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            checker.set(x, y, Vec3::Constant((x + y) % 2 ? 1.0 : 0.0));
    CHECK(sharpness(checker) > sharpness(flat));
}

TEST_CASE("select_keyframes windowing and tie-break") {
    SUBCASE("10 identical frames, fraction 0.2") {
        const std::vector<double> scores(10, 1.0);
        CHECK(select_keyframes(scores, 0.2) == std::vector<int>{0, 5});
    }
    SUBCASE("fraction 1 selects all") {
        const std::vector<double> scores(7, 0.5);
        CHECK(select_keyframes(scores, 1.0) == std::vector<int>{0, 1, 2, 3, 4, 5, 6});
    }
    SUBCASE("empty input") { CHECK(select_keyframes({}, 0.3).empty()); }
    SUBCASE("300 frames, fraction 0.1: one per 10-frame window") {
        std::mt19937_64 rng(17);
        std::uniform_real_distribution<double> U(0.0, 1.0);
        std::vector<double> scores(300);
        for (double& s : scores) s = U(rng);
        const auto kf = select_keyframes(scores, 0.1);
        REQUIRE(kf.size() == 30);
        for (int w = 0; w < 30; ++w) {
            CHECK(kf[w] >= 10 * w);
            CHECK(kf[w] < 10 * (w + 1));
            for (int i = 10 * w; i < 10 * (w + 1); ++i)
                CHECK(scores[kf[w]] >= scores[i]);
        }
    }
    SUBCASE("output strictly increasing and duplicate-free") {
        std::mt19937_64 rng(31);
        std::uniform_real_distribution<double> U(0.0, 1.0);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> scores(40 + int(U(rng) * 100));
            for (double& s : scores) s = U(rng);
            const double fraction = 0.05 + 0.9 * U(rng);
            const auto kf = select_keyframes(scores, fraction);
            for (size_t i = 1; i < kf.size(); ++i) CHECK(kf[i] > kf[i - 1]);
        }
    }
}

TEST_SUITE_END();
