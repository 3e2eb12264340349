#include <doctest.h>

#include <random>

#include "helpers.h"
#include "vps/geometry.h"

using namespace vps;

TEST_SUITE_BEGIN("geometry");

TEST_CASE("project on optical axis and pinhole linearity") {
    Intrinsics K;
    K.fx = K.fy = 100;
    K.cx = K.cy = 50;
    K.width = K.height = 100;
    CHECK((project(K, Vec3(0, 0, 1)) - Vec2(50, 50)).norm() == doctest::Approx(0.0));
    CHECK((project(K, Vec3(0.5, 0, 1)) - Vec2(100, 50)).norm() == doctest::Approx(0.0));
    CHECK_THROWS_AS(project(K, Vec3(0, 0, -1)), Error);
    CHECK_THROWS_AS(project(K, Vec3(0, 0, 0)), Error);
}

TEST_CASE("backproject examples and invalid depth") {
    Intrinsics K;
    K.fx = K.fy = 100;
    K.cx = K.cy = 50;
    K.width = K.height = 100;
    CHECK((backproject(K, Vec2(50, 50), 2) - Vec3(0, 0, 2)).norm() < 1e-15);
    CHECK((backproject(K, Vec2(150, 50), 1) - Vec3(1, 0, 1)).norm() < 1e-15);
    CHECK_THROWS_AS(backproject(K, Vec2(0, 0), 0.0), Error);
}

TEST_CASE("project/backproject round trip, 1000 random points") {
    Intrinsics K;
    K.fx = 320;
    K.fy = 300;
    K.cx = 161.2;
    K.cy = 118.7;
    K.width = 320;
    K.height = 240;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Vec3 p(U(rng), U(rng), 0.3 + 4.7 * std::abs(U(rng)));
        const Vec3 q = backproject(K, project(K, p), p.z());
        worst = std::max(worst, (p - q).norm());
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("se3_exp identities") {
    CHECK((se3_exp(Twist{}).R - Mat3::Identity()).norm() < 1e-15);
    CHECK(se3_exp(Twist{}).t.norm() < 1e-15);

    Twist xi;
    xi.omega = Vec3(0, 0, M_PI / 2);
    const Pose p = se3_exp(xi);
    CHECK((p.R * Vec3(1, 0, 0) - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("exp(xi) exp(-xi) = identity for 100 random twists") {
    std::mt19937_64 rng(11);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Twist xi = test::random_twist(rng, 1.5, 1.0);
        Twist neg;
        neg.omega = -xi.omega;
        neg.v = -xi.v;
        const Pose p = se3_exp(xi).compose(se3_exp(neg));
        worst = std::max(worst, (p.R - Mat3::Identity()).norm() + p.t.norm());
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("log(exp(xi)) = xi within 1e-7 for |omega| < pi") {
    std::mt19937_64 rng(13);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        Twist xi = test::random_twist(rng, 0.9, 1.0); // omega scale keeps |w| < pi
        if (xi.omega.norm() >= M_PI) xi.omega *= 3.0 / xi.omega.norm();
        const Twist back = se3_log(se3_exp(xi));
        worst = std::max(worst, (back.vec() - xi.vec()).norm());
    }
    CHECK(worst < 1e-7);
}

TEST_CASE("pose algebra invariants") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> N(0, 1);
    for (int i = 0; i < 50; ++i) {
        const Pose P = se3_exp(test::random_twist(rng, 1.0, 2.0));
        CHECK((P.R.transpose() * P.R - Mat3::Identity()).norm() < 1e-9);
        CHECK(P.R.determinant() == doctest::Approx(1.0).epsilon(1e-9));
        const Pose I = P.compose(P.inverse());
        CHECK((I.R - Mat3::Identity()).norm() < 1e-9);
        CHECK(I.t.norm() < 1e-9);

        const Vec3 y(N(rng), N(rng), N(rng));
        CHECK((P.world_to_cam(P.apply(y)) - y).norm() < 1e-9);
    }
}

TEST_CASE("world_to_cam convention x_cam = R^T (x - t)") {
    CHECK((Pose{}.world_to_cam(Vec3(1, 2, 3)) - Vec3(1, 2, 3)).norm() == 0.0);
    Pose P;
    P.t = Vec3(1, 0, 0);
    CHECK(P.world_to_cam(Vec3(1, 0, 0)).norm() == 0.0);
}

TEST_CASE("projection jacobian matches central differences") {
    Intrinsics K;
    K.fx = 517.3;
    K.fy = 516.5;
    K.cx = 318.6;
    K.cy = 255.3;
    K.width = 640;
    K.height = 480;
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Vec3 q(U(rng), U(rng), 0.3 + 4.7 * std::abs(U(rng)));
        const auto J = project_jacobian(K, q);
        const double h = 1e-6;
        for (int a = 0; a < 3; ++a) {
            Vec3 qp = q, qm = q;
            qp[a] += h;
            qm[a] -= h;
            const Vec2 fd = (project(K, qp) - project(K, qm)) / (2 * h);
            for (int r = 0; r < 2; ++r)
                worst = std::max(worst,
                                 std::abs(J(r, a) - fd[r]) /
                                     std::max(1.0, std::abs(fd[r])));
        }
    }
    CHECK(worst < 1e-5);
}

TEST_SUITE_END();
