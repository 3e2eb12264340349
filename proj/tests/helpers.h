#pragma once

#include <cmath>
#include <random>

#include "vps/image.h"
#include "vps/synth.h"
#include "vps/volume.h"

namespace vps::test {

// Grid initialized from an analytic scene: every voxel with |sdf| <= band
// inside the box gets exact psi/gradient and weight 1.
inline VoxelGrid grid_from_scene(const AnalyticScene& scene, double vs, double band,
                                 const Vec3& box_lo, const Vec3& box_hi,
                                 double trunc_mult = 5.0) {
    VoxelGrid grid(vs, Vec3::Zero(), trunc_mult * vs);
    const Vec3i lo = grid.nearest_index(box_lo);
    const Vec3i hi = grid.nearest_index(box_hi);
    for (int x = lo.x(); x <= hi.x(); ++x)
        for (int y = lo.y(); y <= hi.y(); ++y)
            for (int z = lo.z(); z <= hi.z(); ++z) {
                const Vec3i idx(x, y, z);
                const Vec3 c = grid.center(idx);
                const double d = scene.sdf(c);
                if (std::abs(d) > band) continue;
                VoxelRecord rec;
                rec.psi = std::clamp(d, -grid.truncation(), grid.truncation());
                rec.grad = scene.gradient(c);
                rec.weight = 1.0;
                rec.albedo = scene.albedo(c - rec.grad * rec.psi);
                grid.at_or_insert(idx) = rec;
            }
    return grid;
}

inline AnalyticScene unit_sphere_scene() {
    AnalyticScene s;
    s.shapes = {Shape::sphere(Vec3::Zero(), 1.0)};
    return s;
}

inline VoxelGrid sphere_grid(double vs = 0.02, double band_mult = 5.0) {
    const AnalyticScene s = unit_sphere_scene();
    return grid_from_scene(s, vs, band_mult * vs, Vec3(-1.4, -1.4, -1.4),
                           Vec3(1.4, 1.4, 1.4), band_mult);
}

inline AnalyticScene plane_scene(double z0 = 0.0) {
    AnalyticScene s;
    s.shapes = {Shape::plane(Vec3(0, 0, 1), z0)};
    return s;
}

inline VoxelGrid plane_grid(double vs = 0.02, double band_mult = 5.0, double z0 = 0.0) {
    const AnalyticScene s = plane_scene(z0);
    return grid_from_scene(s, vs, band_mult * vs, Vec3(-0.5, -0.5, z0 - 0.3),
                           Vec3(0.5, 0.5, z0 + 0.3), band_mult);
}

inline ColorImage random_image(int w, int h, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> U(0.f, 1.f);
    ColorImage img(w, h);
    for (float& v : img.data) v = U(rng);
    return img;
}

inline ColorImage gaussian_blur(const ColorImage& src, double sigma) {
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * r + 1);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + r];
    }
    for (double& v : k) v /= sum;
    auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
    ColorImage tmp(src.width, src.height), out(src.width, src.height);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            Vec3 acc = Vec3::Zero();
            for (int i = -r; i <= r; ++i)
                acc += k[i + r] * src.at(clampi(x + i, 0, src.width - 1), y);
            tmp.set(x, y, acc);
        }
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            Vec3 acc = Vec3::Zero();
            for (int i = -r; i <= r; ++i)
                acc += k[i + r] * tmp.at(x, clampi(y + i, 0, src.height - 1));
            out.set(x, y, acc);
        }
    return out;
}

inline Vec3 eval_surface_point(const VoxelGrid& grid, const Vec3i& idx,
                               const VoxelRecord& rec) {
    return grid.center(idx) - rec.psi * rec.grad;
}

// Depth rendered from the grid's own zero crossing: coarse sphere-trace of the
// analytic scene, then Newton on the extrapolated grid field. Back-projected
// points satisfy d_S = 0 to machine precision.
inline DepthImage render_depth_from_grid(const VoxelGrid& grid, const AnalyticScene& scene,
                                         const Intrinsics& K, const Pose& pose) {
    DepthImage depth(K.width, K.height, 0.f);
    for (int y = 0; y < K.height; ++y)
        for (int x = 0; x < K.width; ++x) {
            const Vec3 dir_cam = Vec3((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0).normalized();
            const Vec3 dir = pose.R * dir_cam;
            double t = 0.0;
            bool hit = false;
            for (int step = 0; step < 64; ++step) {
                const double d = scene.sdf(pose.t + t * dir);
                if (d < 1e-4) {
                    hit = true;
                    break;
                }
                t += d;
                if (t > 20.0) break;
            }
            if (!hit) continue;
            bool on_grid = false;
            for (int it = 0; it < 30; ++it) {
                const auto d = extrapolated_distance(grid, pose.t + t * dir);
                if (!d) break;
                t += d->d;
                if (std::abs(d->d) < 1e-11) {
                    on_grid = true;
                    break;
                }
            }
            if (on_grid && t > 0) depth.at(x, y) = static_cast<float>(t * dir_cam.z());
        }
    return depth;
}

inline Twist random_twist(std::mt19937_64& rng, double omega_scale, double v_scale) {
    std::normal_distribution<double> N(0.0, 1.0);
    Twist xi;
    xi.omega = Vec3(N(rng), N(rng), N(rng)).normalized() *
               omega_scale * std::abs(N(rng));
    xi.v = Vec3(N(rng), N(rng), N(rng)).normalized() * v_scale * std::abs(N(rng));
    return xi;
}

} // namespace vps::test
