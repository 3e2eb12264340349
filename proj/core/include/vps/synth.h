#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "vps/dataset_io.h"
#include "vps/frame.h"

namespace vps {

// Analytic signed distance shapes with exact unit gradients.
struct Shape {
    enum class Kind { Sphere, Torus, Plane } kind = Kind::Sphere;
    Vec3 center = Vec3::Zero(); // sphere/torus center; plane: n*d point via d
    double radius = 1.0;        // sphere radius / torus major radius
    double minor = 0.25;        // torus tube radius
    Vec3 axis = Vec3(0, 0, 1);  // torus axis / plane normal
    double offset = 0.0;        // plane: <axis, x> = offset

    double sdf(const Vec3& x) const;
    Vec3 gradient(const Vec3& x) const;

    static Shape sphere(const Vec3& c, double r) {
        Shape s;
        s.kind = Kind::Sphere;
        s.center = c;
        s.radius = r;
        return s;
    }
    static Shape torus(const Vec3& c, const Vec3& axis, double R, double r) {
        Shape s;
        s.kind = Kind::Torus;
        s.center = c;
        s.axis = axis.normalized();
        s.radius = R;
        s.minor = r;
        return s;
    }
    static Shape plane(const Vec3& n, double offset) {
        Shape s;
        s.kind = Kind::Plane;
        s.axis = n.normalized();
        s.offset = offset;
        return s;
    }
};

enum class AlbedoPattern { Constant, Checkerboard, AxisGradient };

struct AnalyticScene {
    std::vector<Shape> shapes; // union (min of SDFs)
    AlbedoPattern albedo_pattern = AlbedoPattern::Constant;
    Vec3 albedo_a = Vec3(0.7, 0.7, 0.7);
    Vec3 albedo_b = Vec3(0.25, 0.25, 0.25); // second checker color
    double checker_scale = 0.12;            // meters per tile
    Vec3 gradient_axis = Vec3(1, 0, 0);

    LightModel light_model = LightModel::SH;
    Vec4 sh_light = Vec4(1.0, 0.0, 0.0, 0.0); // world-frame parameterization
    double pls_intensity = 2.0;

    double sdf(const Vec3& x) const;
    Vec3 gradient(const Vec3& x) const;
    Vec3 albedo(const Vec3& x) const;
};

// Poses on an orbit looking at a target; arc_deg = 360 for a full circle.
std::vector<Pose> orbit_trajectory(const Vec3& target, double radius, double height,
                                   int n_frames, double arc_deg = 360.0);

// Sphere-traced render with the scene's GT light and albedo; misses get
// invalid depth and black color. Colors are clamped to [0,1] at synthesis.
void render_frame(const AnalyticScene& scene, const Intrinsics& K, const Pose& pose,
                  ColorImage& color, DepthImage& depth,
                  std::vector<Vec3f>* normal_map = nullptr);

// Axial Kinect noise z + N(0, sigma(z)^2), sigma(z) = a + b (z - z0)^2 with
// the constants from the accuracy literature. Deterministic per seed; row
// streams are derived independently so row-parallel rendering stays stable.
struct KinectNoiseModel {
    double sigma_base = 0.0012;
    double sigma_quad = 0.0019;
    double z_ref = 0.4;
    double sigma(double z) const {
        const double d = z - z_ref;
        return sigma_base + sigma_quad * d * d;
    }
};

DepthImage kinect_noise(const DepthImage& depth, uint64_t seed,
                        const KinectNoiseModel& model = {});

// Monte-Carlo estimate of the hemisphere integral of L(i) max(<i,n>,0).
double brute_force_irradiance(const Vec3& n, const std::function<double(const Vec3&)>& env,
                              int samples, uint64_t seed);

// Least-squares first-order SH fit to samples (n_k, value_k).
Vec4 fit_sh_first_order(const std::vector<Vec3>& normals,
                        const std::vector<double>& values);

// Renders the full sequence (GT poses + per-frame timestamps i/fps) and
// optionally perturbs depth with Kinect noise. seed = 0 keeps depth clean.
std::vector<Frame> make_dataset(const AnalyticScene& scene, const Intrinsics& K,
                                const std::vector<Pose>& trajectory,
                                uint64_t noise_seed = 0, double fps = 30.0);

// Dense GT cloud from noise-free renders at the given poses.
PointCloud ground_truth_cloud(const AnalyticScene& scene, const Intrinsics& K,
                              const std::vector<Pose>& trajectory, int stride = 2);

} // namespace vps
