#include "vps/geometry.h"

#include <cmath>

namespace vps {

namespace {
// Below this angle the Rodrigues terms switch to their series expansions.
constexpr double kSmallAngle = 1e-8;
} // namespace

Vec2 project(const Intrinsics& K, const Vec3& p) {
    if (p.z() <= 0.0)
        throw Error("project: point behind camera (z <= 0)");
    const double iz = 1.0 / p.z();
    return Vec2(K.fx * p.x() * iz + K.cx, K.fy * p.y() * iz + K.cy);
}

Vec3 backproject(const Intrinsics& K, const Vec2& px, double z) {
    if (z <= 0.0)
        throw Error("backproject: invalid depth (z <= 0)");
    return Vec3((px.x() - K.cx) * z / K.fx, (px.y() - K.cy) * z / K.fy, z);
}

Eigen::Matrix<double, 2, 3> project_jacobian(const Intrinsics& K, const Vec3& q) {
    const double iz = 1.0 / q.z();
    const double iz2 = iz * iz;
    Eigen::Matrix<double, 2, 3> J;
    J << K.fx * iz, 0, -K.fx * q.x() * iz2,
         0, K.fy * iz, -K.fy * q.y() * iz2;
    return J;
}

Mat3 so3_exp(const Vec3& omega) {
    const double theta = omega.norm();
    const Mat3 W = skew(omega);
    double a, b;
    if (theta < kSmallAngle) {
        a = 1.0 - theta * theta / 6.0;
        b = 0.5 - theta * theta / 24.0;
    } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / (theta * theta);
    }
    return Mat3::Identity() + a * W + b * W * W;
}

Vec3 so3_log(const Mat3& R) {
    const double c = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
    const double theta = std::acos(c);
    Vec3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
    if (theta < kSmallAngle)
        return 0.5 * w;
    if (theta > M_PI - 1e-6) {
        // Near pi the off-diagonal formula degenerates; recover the axis from
        // the symmetric part.
        Mat3 S = 0.5 * (R + Mat3::Identity());
        Vec3 axis;
        int k;
        S.diagonal().maxCoeff(&k);
        axis[k] = std::sqrt(std::max(S(k, k), 0.0));
        for (int i = 0; i < 3; ++i)
            if (i != k) axis[i] = S(k, i) / axis[k];
        axis.normalize();
        if (Vec3(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1)).dot(axis) < 0)
            axis = -axis;
        return theta * axis;
    }
    return (theta / (2.0 * std::sin(theta))) * w;
}

Pose se3_exp(const Twist& xi) {
    const double theta = xi.omega.norm();
    const Mat3 W = skew(xi.omega);
    double b, c;
    if (theta < kSmallAngle) {
        b = 0.5 - theta * theta / 24.0;
        c = 1.0 / 6.0 - theta * theta / 120.0;
    } else {
        b = (1.0 - std::cos(theta)) / (theta * theta);
        c = (theta - std::sin(theta)) / (theta * theta * theta);
    }
    const Mat3 V = Mat3::Identity() + b * W + c * W * W;
    return Pose{so3_exp(xi.omega), V * xi.v};
}

Twist se3_log(const Pose& p) {
    const Vec3 omega = so3_log(p.R);
    const double theta = omega.norm();
    const Mat3 W = skew(omega);
    Mat3 Vinv;
    if (theta < kSmallAngle) {
        Vinv = Mat3::Identity() - 0.5 * W + (1.0 / 12.0) * W * W;
    } else {
        const double half = 0.5 * theta;
        const double k = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
        Vinv = Mat3::Identity() - 0.5 * W + k * W * W;
    }
    return Twist{omega, Vinv * p.t};
}

} // namespace vps
