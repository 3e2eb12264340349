#pragma once

#include <Eigen/Dense>

#include "vps/errors.h"
#include "vps/types.h"

namespace vps {

// Rigid body transform, camera-to-world: point_world = R * point_cam + t.
struct Pose {
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    Vec3 apply(const Vec3& x) const { return R * x + t; }
    // x_cam = R^T (x_world - t); the Eq.-style convention used everywhere here.
    Vec3 world_to_cam(const Vec3& x) const { return R.transpose() * (x - t); }

    Pose inverse() const { return Pose{R.transpose(), -(R.transpose() * t)}; }

    Pose compose(const Pose& other) const {
        return Pose{R * other.R, R * other.t + t};
    }
    Vec3 camera_center() const { return t; }
};

// Pinhole camera. depth_scale is the raw-unit-per-meter divisor of 16-bit
// depth images (TUM convention 5000).
struct Intrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    double depth_scale = 5000.0;

    bool valid() const {
        return fx > 0 && fy > 0 && cx >= 0 && cx < width && cy >= 0 && cy < height;
    }
};

// se(3) element, (omega, v): rotation part first.
struct Twist {
    Vec3 omega = Vec3::Zero();
    Vec3 v = Vec3::Zero();

    Vec6 vec() const {
        Vec6 x;
        x << omega, v;
        return x;
    }
    static Twist from_vec(const Vec6& x) { return Twist{x.head<3>(), x.tail<3>()}; }
    double norm() const { return vec().norm(); }
};

Vec2 project(const Intrinsics& K, const Vec3& p);
Vec3 backproject(const Intrinsics& K, const Vec2& px, double z);

// d(project)/dq at camera point q, 2x3.
Eigen::Matrix<double, 2, 3> project_jacobian(const Intrinsics& K, const Vec3& q);

Pose se3_exp(const Twist& xi);
Twist se3_log(const Pose& p);

Mat3 so3_exp(const Vec3& omega);
Vec3 so3_log(const Mat3& R);

inline Vec3 pose_apply(const Pose& p, const Vec3& x) { return p.apply(x); }
inline Pose pose_inverse(const Pose& p) { return p.inverse(); }
inline Vec3 world_to_cam(const Pose& p, const Vec3& x) { return p.world_to_cam(x); }

} // namespace vps
