#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "config.h"
#include "vps/dataset_io.h"
#include "vps/eval.h"
#include "vps/fusion.h"
#include "vps/parallel.h"
#include "vps/refine.h"
#include "vps/synth.h"
#include "vps/tracking.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Distinct exit codes per failure class.
constexpr int kExitUsage = 2;
constexpr int kExitDataset = 3;
constexpr int kExitTrackingLost = 4;
constexpr int kExitNumerical = 5;

struct Options {
    vps::cli::Config cfg;
    std::string out_dir = "out";
    std::string dataset_dir;
    std::string grid_path;
    std::string trajectory_path;
    std::string model_flag;
    std::string eval_at_flag;
    std::string eikonal_flag;
    std::string refine_poses_flag;
    int max_frames_flag = -1;
    double keyframe_fraction_flag = -1.0;
    long long seed_flag = -1;
    int threads = 1;
};

vps::Intrinsics synth_intrinsics(const vps::cli::Config& c) {
    vps::Intrinsics K;
    K.width = c.get_int("synth", "width", 160);
    K.height = c.get_int("synth", "height", 120);
    K.fx = c.get_num("synth", "fx", 0.75 * K.width);
    K.fy = K.fx;
    K.cx = K.width / 2.0;
    K.cy = K.height / 2.0;
    K.depth_scale = 5000.0;
    return K;
}

vps::AnalyticScene make_scene(const vps::cli::Config& c, const std::string& model_flag) {
    vps::AnalyticScene scene;
    const std::string kind = c.get_str("synth", "scene", "blob");
    if (kind == "sphere") {
        scene.shapes = {vps::Shape::sphere(vps::Vec3(0, 0, 0), 0.6)};
    } else if (kind == "blob") {
        scene.shapes = {
            vps::Shape::sphere(vps::Vec3(0, 0, 0), 0.5),
            vps::Shape::sphere(vps::Vec3(0.38, 0.14, 0.18), 0.3),
            vps::Shape::torus(vps::Vec3(-0.22, -0.12, -0.05),
                              vps::Vec3(0.3, 0.2, 0.93), 0.42, 0.16),
        };
    } else if (kind == "plane") {
        scene.shapes = {vps::Shape::plane(vps::Vec3(0, 0, 1), 0.0)};
    } else {
        throw vps::cli::ConfigError("unknown synth.scene '" + kind + "'");
    }

    const std::string albedo = c.get_str("synth", "albedo", "checkerboard");
    if (albedo == "constant") {
        scene.albedo_pattern = vps::AlbedoPattern::Constant;
    } else if (albedo == "checkerboard") {
        scene.albedo_pattern = vps::AlbedoPattern::Checkerboard;
        scene.albedo_a = vps::Vec3(0.82, 0.45, 0.35);
        scene.albedo_b = vps::Vec3(0.30, 0.42, 0.72);
    } else if (albedo == "gradient") {
        scene.albedo_pattern = vps::AlbedoPattern::AxisGradient;
        scene.albedo_a = vps::Vec3(0.85, 0.70, 0.45);
        scene.albedo_b = vps::Vec3(0.30, 0.35, 0.60);
    } else {
        throw vps::cli::ConfigError("unknown synth.albedo '" + albedo + "'");
    }
    scene.checker_scale = c.get_num("synth", "checker_scale", 0.12);

    std::string model = c.get_str("synth", "model", c.get_str("refine", "model", "sh"));
    if (!model_flag.empty()) model = model_flag;
    if (model == "sh") {
        scene.light_model = vps::LightModel::SH;
        scene.sh_light = vps::Vec4(0.85, 0.25, 0.15, 0.35);
    } else if (model == "pls") {
        scene.light_model = vps::LightModel::PLS;
        scene.pls_intensity = c.get_num("synth", "pls_intensity", 6.0);
    } else {
        throw vps::cli::ConfigError("unknown light model '" + model + "'");
    }
    return scene;
}

std::vector<vps::Pose> make_trajectory(const vps::cli::Config& c) {
    const int frames = c.get_int("synth", "frames", 60);
    const double radius = c.get_num("synth", "orbit_radius", 2.0);
    const double height = c.get_num("synth", "orbit_height", 0.4);
    const double arc = c.get_num("synth", "arc_deg", 360.0);
    return vps::orbit_trajectory(vps::Vec3(0, 0, 0), radius, height, frames, arc);
}

int run_synth(const Options& opt) {
    if (!opt.cfg.has("synth", "seed") && opt.seed_flag < 0)
        throw vps::cli::ConfigError("[synth] requires a seed (config key or --seed)");
    const uint64_t seed = opt.seed_flag >= 0
                              ? static_cast<uint64_t>(opt.seed_flag)
                              : static_cast<uint64_t>(opt.cfg.get_num("synth", "seed", 0));

    const vps::Intrinsics K = synth_intrinsics(opt.cfg);
    const vps::AnalyticScene scene = make_scene(opt.cfg, opt.model_flag);
    const auto trajectory = make_trajectory(opt.cfg);
    const bool noise = opt.cfg.get_flag("synth", "noise", true);
    const double fps = opt.cfg.get_num("synth", "fps", 30.0);

    auto frames = vps::make_dataset(scene, K, trajectory, noise ? seed + 1 : 0, fps);

    const fs::path out(opt.out_dir);
    fs::create_directories(out);
    vps::write_tum_dataset((out / "dataset").string(), frames, K);
    vps::save_ply(vps::ground_truth_cloud(scene, K, trajectory), (out / "gt_cloud.ply").string());
    std::cout << "synth: wrote " << frames.size() << " frames to " << (out / "dataset")
              << "\n";
    return 0;
}

vps::DatasetIndex open_dataset(const Options& opt) {
    std::string dir = opt.dataset_dir;
    if (dir.empty()) dir = opt.cfg.get_str("dataset", "dir", "");
    if (dir.empty()) throw vps::DatasetError("no dataset directory given (--dataset)");
    int max_frames = opt.cfg.get_int("dataset", "max_frames", 300);
    if (opt.max_frames_flag > 0) max_frames = opt.max_frames_flag;

    vps::Intrinsics K_cfg;
    const vps::Intrinsics* K_override = nullptr;
    if (opt.cfg.has("dataset", "fx")) {
        K_cfg.fx = opt.cfg.get_num("dataset", "fx", 0);
        K_cfg.fy = opt.cfg.get_num("dataset", "fy", K_cfg.fx);
        K_cfg.cx = opt.cfg.get_num("dataset", "cx", 0);
        K_cfg.cy = opt.cfg.get_num("dataset", "cy", 0);
        K_cfg.width = opt.cfg.get_int("dataset", "width", 640);
        K_cfg.height = opt.cfg.get_int("dataset", "height", 480);
        K_cfg.depth_scale = opt.cfg.get_num("dataset", "depth_scale", 5000.0);
        K_override = &K_cfg;
    }
    auto index = vps::load_tum_index(dir, max_frames, K_override);
    index.max_depth = opt.cfg.get_num("dataset", "max_depth", 5.0);
    return index;
}

vps::VoxelGrid make_grid(const Options& opt) {
    const double vs = opt.cfg.get_num("grid", "voxel_size", 0.02);
    const double T = opt.cfg.get_num("grid", "truncation", 5.0 * vs);
    return vps::VoxelGrid(vs, vps::Vec3(0, 0, 0), T);
}

int run_track(const Options& opt) {
    const auto index = open_dataset(opt);
    auto grid = make_grid(opt);

    vps::TrackConfig tc;
    tc.stride = opt.cfg.get_int("tracking", "stride", 2);
    tc.max_iterations = opt.cfg.get_int("tracking", "max_iters", 20);
    tc.step_tol = opt.cfg.get_num("tracking", "step_tol", 1e-6);
    tc.min_inliers = opt.cfg.get_int("tracking", "min_inliers", 100);

    // Frames stream through one at a time; only the grid accumulates.
    std::vector<vps::TrajectoryEntry> traj;
    vps::Pose current;
    int lost = 0;
    for (size_t i = 0; i < index.entries.size(); ++i) {
        vps::Frame f;
        f.timestamp = index.entries[i].t_rgb;
        f.color = vps::load_color_png(index.entries[i].rgb_path);
        f.depth = vps::load_depth_png(index.entries[i].depth_path, index.K.depth_scale,
                                      index.max_depth);
        bool ok = true;
        if (i > 0) {
            try {
                current = vps::track_frame(grid, f.depth, index.K, current, tc).pose;
            } catch (const vps::TrackingLost&) {
                ok = false;
                ++lost;
            }
        }
        f.pose = current;
        f.has_pose = ok;
        if (ok) vps::integrate_frame(grid, f, index.K, static_cast<int>(i));
        traj.push_back({f.timestamp, current});
    }
    if (traj.empty()) throw vps::DatasetError("dataset has no frames");
    vps::init_albedo(grid);

    const fs::path out(opt.out_dir);
    fs::create_directories(out);
    vps::save_grid(grid, (out / "grid.gsdf").string());
    vps::save_trajectory_tum(traj, (out / "trajectory.txt").string());
    vps::save_ply(vps::export_surface_points(grid), (out / "cloud_initial.ply").string());
    std::cout << "track: " << traj.size() << " frames (" << lost << " lost), "
              << grid.size() << " voxels -> " << (out / "grid.gsdf") << "\n";
    return 0;
}

vps::RefineConfig refine_config(const Options& opt) {
    const auto& c = opt.cfg;
    vps::RefineConfig rc;
    std::string model = c.get_str("refine", "model", "sh");
    if (!opt.model_flag.empty()) model = opt.model_flag;
    if (model == "sh") rc.model = vps::LightModel::SH;
    else if (model == "pls") rc.model = vps::LightModel::PLS;
    else throw vps::cli::ConfigError("unknown refine.model '" + model + "'");

    rc.sigma_cauchy = c.get_num("refine", "sigma_cauchy", 0.2);
    rc.gn_damping = c.get_num("refine", "gn_damping", 0.1);
    rc.eikonal_weight = c.get_num("refine", "eikonal_weight", 1.0);
    rc.convergence_tol = c.get_num("refine", "convergence_tol", 1e-3);
    rc.max_iters = c.get_int("refine", "max_iters", 20);
    rc.upsample_at_iter = c.get_int("refine", "upsample_at_iter", 5);

    std::string eval_at = c.get_str("refine", "eval_at", "surface_point");
    if (!opt.eval_at_flag.empty()) eval_at = opt.eval_at_flag;
    if (eval_at == "surface_point") rc.eval_at = vps::EvalAt::SurfacePoint;
    else if (eval_at == "voxel_center") rc.eval_at = vps::EvalAt::VoxelCenter;
    else throw vps::cli::ConfigError("unknown eval_at '" + eval_at + "'");

    rc.eikonal = c.get_flag("refine", "eikonal", true);
    if (!opt.eikonal_flag.empty()) rc.eikonal = opt.eikonal_flag == "on";
    rc.refine_poses = c.get_flag("refine", "refine_poses", true);
    if (!opt.refine_poses_flag.empty()) rc.refine_poses = opt.refine_poses_flag == "on";
    rc.per_channel_light = c.get_flag("refine", "per_channel_light", false);
    return rc;
}

int run_refine(const Options& opt) {
    const auto index = open_dataset(opt);
    const fs::path out(opt.out_dir);
    fs::create_directories(out);

    std::string grid_path = opt.grid_path;
    if (grid_path.empty()) grid_path = (out / "grid.gsdf").string();
    std::string traj_path = opt.trajectory_path;
    if (traj_path.empty()) traj_path = (out / "trajectory.txt").string();

    vps::VoxelGrid grid = vps::load_grid(grid_path);
    const auto traj = vps::load_trajectory_tum(traj_path);
    if (traj.size() != index.entries.size() && traj.size() > index.entries.size())
        std::cerr << "refine: trajectory has more poses than dataset frames\n";

    // Sharpness-based keyframe selection over the tracked frames.
    const size_t n = std::min(index.entries.size(), traj.size());
    std::vector<double> scores(n);
    for (size_t i = 0; i < n; ++i)
        scores[i] = vps::sharpness(vps::load_color_png(index.entries[i].rgb_path));
    double fraction = opt.cfg.get_num("refine", "keyframe_fraction", 0.1);
    if (opt.keyframe_fraction_flag > 0) fraction = opt.keyframe_fraction_flag;
    const auto keyframe_ids = vps::select_keyframes(scores, fraction);

    std::vector<vps::Frame> keyframes;
    keyframes.reserve(keyframe_ids.size());
    for (int id : keyframe_ids) {
        vps::Frame f;
        f.timestamp = index.entries[id].t_rgb;
        f.color = vps::load_color_png(index.entries[id].rgb_path);
        f.pose = traj[id].pose;
        f.has_pose = true;
        keyframes.push_back(std::move(f));
    }

    const vps::RefineConfig rc = refine_config(opt);
    vps::Refiner refiner(grid, keyframes, index.K, rc);
    const vps::EnergyReport report = refiner.run();

    // Refined trajectory: keyframe poses replaced, others kept.
    std::vector<vps::TrajectoryEntry> refined = traj;
    for (size_t k = 0; k < keyframe_ids.size(); ++k)
        refined[keyframe_ids[k]].pose = keyframes[k].pose;

    vps::save_grid(grid, (out / "grid_refined.gsdf").string());
    vps::save_trajectory_tum(refined, (out / "trajectory_refined.txt").string());
    vps::write_energy_csv(report, (out / "energy.csv").string());
    vps::write_lights_csv(keyframes, rc.model, (out / "lights.csv").string());
    vps::save_ply(vps::export_surface_points(grid), (out / "cloud_refined.ply").string());
    std::cout << "refine: " << report.entries.size() - 1 << " iterations, final energy "
              << report.entries.back().total << ", " << grid.size() << " voxels\n";
    if (report.degenerate_light_warnings > 0)
        std::cerr << "refine: " << report.degenerate_light_warnings
                  << " degenerate-lighting warnings\n";
    if (report.frozen_pose_warnings > 0)
        std::cerr << "refine: " << report.frozen_pose_warnings
                  << " frozen-pose warnings\n";
    return 0;
}

int run_mesh(const Options& opt) {
    std::string grid_path = opt.grid_path;
    const fs::path out(opt.out_dir);
    if (grid_path.empty()) {
        grid_path = (out / "grid_refined.gsdf").string();
        if (!fs::exists(grid_path)) grid_path = (out / "grid.gsdf").string();
    }
    const vps::VoxelGrid grid = vps::load_grid(grid_path);
    if (grid.empty()) throw vps::Error("mesh: empty grid " + grid_path);
    fs::create_directories(out);
    const vps::TriangleMesh mesh = vps::marching_cubes(grid);
    vps::save_ply(mesh, (out / "mesh.ply").string());
    std::cout << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.faces.size()
              << " triangles -> " << (out / "mesh.ply") << "\n";
    return 0;
}

struct EvalArgs {
    std::string est_traj, gt_traj, est_cloud, gt_cloud;
};

int run_eval(const Options& opt, const EvalArgs& args) {
    const fs::path out(opt.out_dir);
    fs::create_directories(out);
    json summary;
    if (!args.est_traj.empty() && !args.gt_traj.empty()) {
        const double ate = vps::ate_rmse(vps::load_trajectory_tum(args.est_traj),
                                         vps::load_trajectory_tum(args.gt_traj));
        summary["ate_rmse_m"] = ate;
        std::cout << "eval: ATE RMSE " << ate * 100.0 << " cm\n";
    }
    if (!args.est_cloud.empty() && !args.gt_cloud.empty()) {
        const int n_bins = opt.cfg.get_int("eval", "n_bins", 30);
        const auto curve = vps::error_cdf(vps::load_ply_points(args.est_cloud),
                                          vps::load_ply_points(args.gt_cloud), n_bins);
        vps::write_cdf_csv(curve, (out / "cdf.csv").string());
        summary["mean_error"] = curve.mean_error;
        summary["d_max_m"] = curve.d_max;
        summary["curve_at"] = {{"0.005", curve.value_at(0.005)},
                               {"0.010", curve.value_at(0.010)},
                               {"0.015", curve.value_at(0.015)},
                               {"0.020", curve.value_at(0.020)}};
        std::cout << "eval: CDF@0.010 = " << curve.value_at(0.010) << "%\n";
    }
    std::ofstream os(out / "summary.json");
    os << summary.dump(2) << "\n";
    return 0;
}

int run_pipeline(const Options& opt) {
    run_synth(opt);
    Options stage = opt;
    stage.dataset_dir = (fs::path(opt.out_dir) / "dataset").string();
    run_track(stage);
    run_refine(stage);
    run_mesh(stage);

    const fs::path out(opt.out_dir);
    json summary;
    const auto gt = vps::load_trajectory_tum((out / "dataset" / "groundtruth.txt").string());
    summary["ate_rmse_tracked_m"] =
        vps::ate_rmse(vps::load_trajectory_tum((out / "trajectory.txt").string()), gt);
    summary["ate_rmse_refined_m"] = vps::ate_rmse(
        vps::load_trajectory_tum((out / "trajectory_refined.txt").string()), gt);

    const auto gt_cloud = vps::load_ply_points((out / "gt_cloud.ply").string());
    const int n_bins = opt.cfg.get_int("eval", "n_bins", 30);
    const auto c0 =
        vps::error_cdf(vps::load_ply_points((out / "cloud_initial.ply").string()),
                       gt_cloud, n_bins);
    const auto c1 =
        vps::error_cdf(vps::load_ply_points((out / "cloud_refined.ply").string()),
                       gt_cloud, n_bins);
    vps::write_cdf_csv(c0, (out / "cdf_initial.csv").string());
    vps::write_cdf_csv(c1, (out / "cdf_refined.csv").string());
    summary["cdf_initial_at_0.010"] = c0.value_at(0.010);
    summary["cdf_refined_at_0.010"] = c1.value_at(0.010);
    summary["improvement_pp_at_0.010"] = c1.value_at(0.010) - c0.value_at(0.010);
    summary["mean_error_initial"] = c0.mean_error;
    summary["mean_error_refined"] = c1.mean_error;

    std::ofstream os(out / "summary.json");
    os << summary.dump(2) << "\n";
    std::cout << "pipeline: CDF@0.010 " << c0.value_at(0.010) << "% -> "
              << c1.value_at(0.010) << "%\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"voxelps: RGB-D reconstruction with gradient-SDF photometric refinement"};
    app.require_subcommand(1);

    Options opt;
    std::string config_path;
    app.add_option("--config", config_path, "TOML-style config file")
        ->envname("VOXELPS_CONFIG");
    app.add_option("--out", opt.out_dir, "output directory");
    app.add_option("--threads", opt.threads, "worker thread cap (1 = deterministic reference)");
    app.add_option("--seed", opt.seed_flag, "override [synth] seed");
    app.add_option("--model", opt.model_flag, "light model: sh | pls")
        ->check(CLI::IsMember({"sh", "pls"}));
    app.add_option("--eval-at", opt.eval_at_flag, "surface_point | voxel_center")
        ->check(CLI::IsMember({"surface_point", "voxel_center"}));
    app.add_option("--eikonal", opt.eikonal_flag, "on | off")
        ->check(CLI::IsMember({"on", "off"}));
    app.add_option("--refine-poses", opt.refine_poses_flag, "on | off")
        ->check(CLI::IsMember({"on", "off"}));
    app.add_option("--max-frames", opt.max_frames_flag, "cap on dataset frames");
    app.add_option("--keyframe-fraction", opt.keyframe_fraction_flag,
                   "keyframe selection fraction");

    auto* synth = app.add_subcommand("synth", "render a synthetic TUM-format dataset");
    auto* track = app.add_subcommand("track", "depth tracking + fusion -> grid checkpoint");
    track->add_option("--dataset", opt.dataset_dir, "TUM dataset directory");
    auto* refine = app.add_subcommand("refine", "joint photometric refinement");
    refine->add_option("--dataset", opt.dataset_dir, "TUM dataset directory");
    refine->add_option("--grid", opt.grid_path, "input grid checkpoint (.gsdf)");
    refine->add_option("--trajectory", opt.trajectory_path, "input trajectory file");
    auto* mesh = app.add_subcommand("mesh", "marching-cubes mesh from a checkpoint");
    mesh->add_option("--grid", opt.grid_path, "grid checkpoint (.gsdf)");
    auto* eval = app.add_subcommand("eval", "trajectory/cloud evaluation");
    EvalArgs eval_args;
    eval->add_option("--est-traj", eval_args.est_traj, "estimated trajectory");
    eval->add_option("--gt-traj", eval_args.gt_traj, "ground-truth trajectory");
    eval->add_option("--est-cloud", eval_args.est_cloud, "estimated cloud (.ply)");
    eval->add_option("--gt-cloud", eval_args.gt_cloud, "ground-truth cloud (.ply)");
    auto* pipeline = app.add_subcommand("pipeline", "synth -> track -> refine -> mesh -> eval");
    (void)synth;
    (void)pipeline;

    CLI11_PARSE(app, argc, argv);

    try {
        if (!config_path.empty()) opt.cfg.parse_file(config_path);
        vps::worker_threads() = std::max(1, opt.threads);

        if (app.got_subcommand("synth")) return run_synth(opt);
        if (app.got_subcommand("track")) return run_track(opt);
        if (app.got_subcommand("refine")) return run_refine(opt);
        if (app.got_subcommand("mesh")) return run_mesh(opt);
        if (app.got_subcommand("eval")) return run_eval(opt, eval_args);
        if (app.got_subcommand("pipeline")) return run_pipeline(opt);
    } catch (const vps::cli::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const vps::DatasetError& e) {
        std::cerr << "dataset error: " << e.what() << "\n";
        return kExitDataset;
    } catch (const vps::TrackingLost& e) {
        std::cerr << "tracking lost: " << e.what() << "\n";
        return kExitTrackingLost;
    } catch (const vps::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
