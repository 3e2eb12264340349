#include "vps/synth.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "vps/parallel.h"

namespace vps {

double Shape::sdf(const Vec3& x) const {
    switch (kind) {
        case Kind::Sphere:
            return (x - center).norm() - radius;
        case Kind::Torus: {
            const Vec3 d = x - center;
            const double h = d.dot(axis);
            const Vec3 radial = d - h * axis;
            const double q = radial.norm() - radius;
            return std::sqrt(q * q + h * h) - minor;
        }
        case Kind::Plane:
            return axis.dot(x) - offset;
    }
    return 0.0;
}

Vec3 Shape::gradient(const Vec3& x) const {
    switch (kind) {
        case Kind::Sphere: {
            const Vec3 d = x - center;
            const double n = d.norm();
            return n > 1e-12 ? Vec3(d / n) : Vec3(0, 0, 1);
        }
        case Kind::Torus: {
            const Vec3 d = x - center;
            const double h = d.dot(axis);
            const Vec3 radial = d - h * axis;
            const double rn = radial.norm();
            if (rn < 1e-12) return axis; // on the torus axis, degenerate
            const double q = rn - radius;
            const double len = std::sqrt(q * q + h * h);
            if (len < 1e-12) return axis;
            return (q * (radial / rn) + h * axis) / len;
        }
        case Kind::Plane:
            return axis;
    }
    return Vec3(0, 0, 1);
}

double AnalyticScene::sdf(const Vec3& x) const {
    double d = std::numeric_limits<double>::infinity();
    for (const Shape& s : shapes) d = std::min(d, s.sdf(x));
    return d;
}

Vec3 AnalyticScene::gradient(const Vec3& x) const {
    double best = std::numeric_limits<double>::infinity();
    const Shape* arg = nullptr;
    for (const Shape& s : shapes) {
        const double d = s.sdf(x);
        if (d < best) {
            best = d;
            arg = &s;
        }
    }
    return arg != nullptr ? arg->gradient(x) : Vec3(0, 0, 1);
}

Vec3 AnalyticScene::albedo(const Vec3& x) const {
    switch (albedo_pattern) {
        case AlbedoPattern::Constant:
            return albedo_a;
        case AlbedoPattern::Checkerboard: {
            const int64_t c = static_cast<int64_t>(std::floor(x.x() / checker_scale)) +
                              static_cast<int64_t>(std::floor(x.y() / checker_scale)) +
                              static_cast<int64_t>(std::floor(x.z() / checker_scale));
            return ((c % 2 + 2) % 2 == 0) ? albedo_a : albedo_b;
        }
        case AlbedoPattern::AxisGradient: {
            const double t = std::clamp(0.5 + gradient_axis.dot(x), 0.0, 1.0);
            return albedo_a * t + albedo_b * (1.0 - t);
        }
    }
    return albedo_a;
}

std::vector<Pose> orbit_trajectory(const Vec3& target, double radius, double height,
                                   int n_frames, double arc_deg) {
    std::vector<Pose> poses;
    poses.reserve(n_frames);
    const double arc = arc_deg * M_PI / 180.0;
    for (int i = 0; i < n_frames; ++i) {
        const double a = n_frames > 1 ? arc * i / n_frames : 0.0;
        // slight height wobble breaks planar degeneracy
        const double h = height + 0.08 * radius * std::sin(3.0 * a);
        Pose p;
        p.t = target + Vec3(radius * std::cos(a), radius * std::sin(a), h);
        const Vec3 fwd = (target - p.t).normalized();
        Vec3 up(0, 0, 1);
        if (std::abs(fwd.dot(up)) > 0.99) up = Vec3(0, 1, 0);
        const Vec3 right = up.cross(fwd).normalized();
        up = fwd.cross(right).normalized();
        p.R.col(0) = right;
        p.R.col(1) = up;
        p.R.col(2) = fwd;
        poses.push_back(p);
    }
    return poses;
}

namespace {

// Sphere tracing along a ray; returns the ray parameter of the hit.
bool sphere_trace(const AnalyticScene& scene, const Vec3& origin, const Vec3& dir,
                  double& t_hit) {
    double t = 0.0;
    const double t_max = 20.0;
    for (int step = 0; step < 64; ++step) {
        const Vec3 p = origin + t * dir;
        const double d = scene.sdf(p);
        if (d < 1e-6) {
            t_hit = t;
            return true;
        }
        t += d;
        if (t > t_max) return false;
    }
    // Accept grazing hits that converged close to the surface.
    if (scene.sdf(origin + t * dir) < 1e-4) {
        t_hit = t;
        return true;
    }
    return false;
}

} // namespace

void render_frame(const AnalyticScene& scene, const Intrinsics& K, const Pose& pose,
                  ColorImage& color, DepthImage& depth, std::vector<Vec3f>* normal_map) {
    color = ColorImage(K.width, K.height, 0.f);
    depth = DepthImage(K.width, K.height, 0.f);
    if (normal_map != nullptr)
        normal_map->assign(static_cast<size_t>(K.width) * K.height, Vec3f::Zero());

    parallel_for(static_cast<size_t>(K.height), [&](size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < K.width; ++x) {
            const Vec3 dir_cam =
                Vec3((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0).normalized();
            const Vec3 dir = pose.R * dir_cam;
            double t_hit;
            if (!sphere_trace(scene, pose.t, dir, t_hit)) continue;
            const Vec3 hit = pose.t + t_hit * dir;
            depth.at(x, y) = static_cast<float>(t_hit * dir_cam.z());
            const Vec3 n = scene.gradient(hit);
            if (normal_map != nullptr)
                (*normal_map)[static_cast<size_t>(y) * K.width + x] = n.cast<float>();
            const Vec3 rho = scene.albedo(hit);
            Vec3 c;
            if (scene.light_model == LightModel::SH) {
                // world-frame light parameterization: <l_hat, SH(n_world)>
                c = rho * scene.sh_light.dot(sh_basis(n));
            } else {
                const Vec3 x_cam = pose.world_to_cam(hit);
                const Vec3 n_cam = pose.R.transpose() * n;
                c = render_pls(rho, n_cam, x_cam, scene.pls_intensity);
            }
            color.set(x, y, c.cwiseMax(0.0).cwiseMin(1.0));
        }
    }, worker_threads(), 8);
}

DepthImage kinect_noise(const DepthImage& depth, uint64_t seed,
                        const KinectNoiseModel& model) {
    DepthImage out = depth;
    parallel_for(static_cast<size_t>(depth.height), [&](size_t row) {
        // Independent stream per row: seed derivation keeps the output
        // byte-identical under row-parallel execution.
        std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + row + 1);
        std::normal_distribution<double> N(0.0, 1.0);
        const int y = static_cast<int>(row);
        for (int x = 0; x < depth.width; ++x) {
            const float z = depth.at(x, y);
            if (z <= 0.f) continue;
            const double zn = z + model.sigma(z) * N(rng);
            out.at(x, y) = zn > 0.0 ? static_cast<float>(zn) : 0.f;
        }
    }, worker_threads(), 1);
    return out;
}

double brute_force_irradiance(const Vec3& n,
                              const std::function<double(const Vec3&)>& env,
                              int samples, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    double sum = 0.0;
    for (int k = 0; k < samples; ++k) {
        // uniform direction on S^2
        const double z = 2.0 * U(rng) - 1.0;
        const double phi = 2.0 * M_PI * U(rng);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const Vec3 i(r * std::cos(phi), r * std::sin(phi), z);
        const double c = i.dot(n);
        if (c > 0.0) sum += env(i) * c;
    }
    return sum * 4.0 * M_PI / samples;
}

Vec4 fit_sh_first_order(const std::vector<Vec3>& normals,
                        const std::vector<double>& values) {
    Eigen::Matrix4d A = Eigen::Matrix4d::Zero();
    Vec4 b = Vec4::Zero();
    for (size_t k = 0; k < normals.size(); ++k) {
        const Vec4 B = sh_basis(normals[k]);
        A += B * B.transpose();
        b += values[k] * B;
    }
    return A.ldlt().solve(b);
}

std::vector<Frame> make_dataset(const AnalyticScene& scene, const Intrinsics& K,
                                const std::vector<Pose>& trajectory,
                                uint64_t noise_seed, double fps) {
    std::vector<Frame> frames;
    frames.reserve(trajectory.size());
    for (size_t i = 0; i < trajectory.size(); ++i) {
        Frame f;
        f.timestamp = static_cast<double>(i) / fps;
        f.pose = trajectory[i];
        f.has_pose = true;
        render_frame(scene, K, trajectory[i], f.color, f.depth);
        if (noise_seed != 0) f.depth = kinect_noise(f.depth, noise_seed + i);
        if (scene.light_model == LightModel::SH)
            f.light = LightState::shared_sh(scene.sh_light);
        else
            f.light = LightState::point_light(scene.pls_intensity);
        frames.push_back(std::move(f));
    }
    return frames;
}

PointCloud ground_truth_cloud(const AnalyticScene& scene, const Intrinsics& K,
                              const std::vector<Pose>& trajectory, int stride) {
    PointCloud cloud;
    ColorImage color;
    DepthImage depth;
    for (const Pose& pose : trajectory) {
        render_frame(scene, K, pose, color, depth);
        for (int y = 0; y < depth.height; y += stride)
            for (int x = 0; x < depth.width; x += stride) {
                const float z = depth.at(x, y);
                if (z <= 0.f) continue;
                const Vec3 p = pose.apply(backproject(K, Vec2(x, y), z));
                const Vec3 a = scene.albedo(p).cwiseMax(0.0).cwiseMin(1.0) * 255.0;
                cloud.points.push_back(p.cast<float>());
                cloud.colors.push_back({static_cast<uint8_t>(std::lround(a[0])),
                                        static_cast<uint8_t>(std::lround(a[1])),
                                        static_cast<uint8_t>(std::lround(a[2]))});
            }
    }
    return cloud;
}

} // namespace vps
