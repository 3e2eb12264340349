#include <doctest.h>

#include <random>

#include "helpers.h"
#include "vps/dataset_io.h"
#include "vps/eval.h"
#include "vps/fusion.h"
#include "vps/synth.h"
#include "vps/tracking.h"

using namespace vps;

namespace {

Intrinsics small_K() {
    Intrinsics K;
    K.width = 160;
    K.height = 120;
    K.fx = K.fy = 120;
    K.cx = 80;
    K.cy = 60;
    return K;
}

AnalyticScene blob_scene() {
    AnalyticScene scene;
    scene.shapes = {
        Shape::sphere(Vec3(0, 0, 0), 0.5),
        Shape::sphere(Vec3(0.38, 0.14, 0.18), 0.3),
        Shape::torus(Vec3(-0.22, -0.12, -0.05), Vec3(0.3, 0.2, 0.93), 0.42, 0.16),
    };
    return scene;
}

} // namespace

TEST_SUITE_BEGIN("tracking");

TEST_CASE("track_frame with depth from the grid's own surface keeps the pose") {
    const Intrinsics K = small_K();
    const AnalyticScene scene = blob_scene();
    const VoxelGrid grid = test::grid_from_scene(scene, 0.02, 0.1, Vec3(-1, -1, -1),
                                                 Vec3(1, 1, 1));
    const Pose pose = orbit_trajectory(Vec3::Zero(), 2.0, 0.3, 1, 0.0)[0];
    const DepthImage depth = test::render_depth_from_grid(grid, scene, K, pose);
    const TrackResult res = track_frame(grid, depth, K, pose);
    const Twist delta = se3_log(pose.inverse().compose(res.pose));
    CHECK(delta.norm() < 1e-6);
    CHECK(res.inliers > 500);
}

TEST_CASE("track_frame recovers a perturbed pose") {
    const Intrinsics K = small_K();
    const AnalyticScene scene = blob_scene();
    const VoxelGrid grid = test::grid_from_scene(scene, 0.02, 0.1, Vec3(-1, -1, -1),
                                                 Vec3(1, 1, 1));
    const Pose pose = orbit_trajectory(Vec3::Zero(), 2.0, 0.3, 1, 0.0)[0];
    ColorImage color;
    DepthImage depth;
    render_frame(scene, K, pose, color, depth);

    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 5; ++trial) {
        Twist xi = test::random_twist(rng, 0.02, 0.02);
        const double n = xi.vec().norm();
        xi.omega *= 0.05 / n;
        xi.v *= 0.05 / n; // total twist norm 0.05-ish
        const Pose init = pose.compose(se3_exp(xi));
        const TrackResult res = track_frame(grid, depth, K, init);
        const Twist err = se3_log(pose.inverse().compose(res.pose));
        CHECK(err.omega.norm() < 0.2 * M_PI / 180.0);
        CHECK(err.v.norm() < 0.005); // vs/4
    }
}

TEST_CASE("tracking energy is non-increasing across accepted steps") {
    const Intrinsics K = small_K();
    const AnalyticScene scene = blob_scene();
    const VoxelGrid grid = test::grid_from_scene(scene, 0.02, 0.1, Vec3(-1, -1, -1),
                                                 Vec3(1, 1, 1));
    const Pose pose = orbit_trajectory(Vec3::Zero(), 2.0, 0.3, 1, 0.0)[0];
    ColorImage color;
    DepthImage depth;
    render_frame(scene, K, pose, color, depth);
    std::mt19937_64 rng(23);
    const Pose init = pose.compose(se3_exp(test::random_twist(rng, 0.02, 0.03)));
    const TrackResult res = track_frame(grid, depth, K, init);
    REQUIRE(res.energies.size() >= 2);
    for (size_t i = 1; i < res.energies.size(); ++i)
        CHECK(res.energies[i] <= res.energies[i - 1]);
}

TEST_CASE("all points outside the volume raises tracking-lost") {
    const Intrinsics K = small_K();
    const VoxelGrid grid = test::sphere_grid(0.02, 5.0);
    DepthImage depth(K.width, K.height, 4.5f); // plane far behind the sphere band
    Pose init;
    init.t = Vec3(0, 0, 20.0); // camera far away, all points out of volume
    CHECK_THROWS_AS(track_frame(grid, depth, K, init), TrackingLost);
}

TEST_CASE("track_sequence: single frame, skipped invalid frame, synthetic orbit") {
    const Intrinsics K = small_K();
    AnalyticScene scene = blob_scene();
    scene.albedo_pattern = AlbedoPattern::Checkerboard;

    SUBCASE("single frame gives identity pose and a fused grid") {
        auto frames = make_dataset(scene, K, orbit_trajectory(Vec3::Zero(), 2.0, 0.3, 1, 0.0));
        // world frame = first camera: re-express depth in that frame
        VoxelGrid grid(0.02, Vec3::Zero(), 0.1);
        auto local = frames;
        const SequenceResult res = track_sequence(grid, local, K);
        REQUIRE(res.poses.size() == 1);
        CHECK((res.poses[0].R - Mat3::Identity()).norm() == 0.0);
        CHECK(res.poses[0].t.norm() == 0.0);
        CHECK(grid.size() > 100);
    }

    SUBCASE("all-invalid depth frame is skipped and the sequence continues") {
        auto frames = make_dataset(scene, K, orbit_trajectory(Vec3::Zero(), 2.0, 0.3, 6, 10.0));
        frames[3].depth = DepthImage(K.width, K.height, 0.f);
        VoxelGrid grid(0.02, Vec3::Zero(), 0.1);
        const SequenceResult res = track_sequence(grid, frames, K);
        REQUIRE(res.poses.size() == 6);
        CHECK(res.tracked[3] == 0);
        CHECK(res.tracked[4] == 1);
        // skipped frame keeps the previous pose
        CHECK((res.poses[3].t - res.poses[2].t).norm() == 0.0);
    }

    SUBCASE("20-frame noise-free arc orbit: ATE below half a voxel") {
        const auto gt_poses = orbit_trajectory(Vec3::Zero(), 2.0, 0.3, 20, 10.0);
        auto frames = make_dataset(scene, K, gt_poses);
        VoxelGrid grid(0.02, Vec3::Zero(), 0.1);
        const SequenceResult res = track_sequence(grid, frames, K);
        // estimated poses are in the frame of camera 0; ATE alignment absorbs it
        std::vector<TrajectoryEntry> est, gt;
        for (size_t i = 0; i < gt_poses.size(); ++i) {
            est.push_back({double(i), res.poses[i]});
            gt.push_back({double(i), gt_poses[i]});
        }
        CHECK(ate_rmse(est, gt) < 0.01);
    }
}

TEST_CASE("tracking is equivariant under lattice-preserving re-basing") {
    const Intrinsics K = small_K();
    const AnalyticScene scene = blob_scene();
    // G: 90-degree rotation about z plus an integer-voxel translation
    Pose G;
    G.R = so3_exp(Vec3(0, 0, M_PI / 2));
    G.t = Vec3(0.10, -0.06, 0.04); // multiples of vs = 0.02

    AnalyticScene scene_g = scene;
    for (Shape& s : scene_g.shapes) {
        s.center = G.apply(s.center);
        s.axis = G.R * s.axis;
    }

    const VoxelGrid grid = test::grid_from_scene(scene, 0.02, 0.1, Vec3(-1, -1, -1),
                                                 Vec3(1, 1, 1));
    const VoxelGrid grid_g = test::grid_from_scene(
        scene_g, 0.02, 0.1, Vec3(-1.2, -1.2, -1.2), Vec3(1.2, 1.2, 1.2));

    const Pose pose = orbit_trajectory(Vec3::Zero(), 2.0, 0.3, 1, 0.0)[0];
    ColorImage color;
    DepthImage depth;
    render_frame(scene, K, pose, color, depth);

    std::mt19937_64 rng(29);
    const Pose init = pose.compose(se3_exp(test::random_twist(rng, 0.01, 0.02)));
    const Pose tracked = track_frame(grid, depth, K, init).pose;
    const Pose tracked_g = track_frame(grid_g, depth, K, G.compose(init)).pose;

    const Pose expect = G.compose(tracked);
    CHECK((tracked_g.R - expect.R).norm() < 1e-6);
    CHECK((tracked_g.t - expect.t).norm() < 1e-6);
}

TEST_SUITE_END();
