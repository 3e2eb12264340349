#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vps/frame.h"
#include "vps/volume.h"

namespace vps {

// ---------------------------------------------------------------- TUM I/O

struct FrameEntry {
    double t_rgb = 0.0;
    std::string rgb_path;
    double t_depth = 0.0;
    std::string depth_path;
};

struct DatasetIndex {
    std::string dir;
    std::vector<FrameEntry> entries;
    Intrinsics K;
    double max_depth = 5.0;
};

// Greedy nearest-timestamp association: candidate pairs within max_dt are
// taken in order of |dt| (ties by timestamps), each entry used at most once.
// Symmetric in the two lists.
std::vector<std::pair<int, int>> associate_timestamps(const std::vector<double>& a,
                                                      const std::vector<double>& b,
                                                      double max_dt = 0.02);

// Reads rgb.txt/depth.txt, associates, resolves intrinsics (intrinsics.txt
// sidecar, else fr1/fr2/fr3 defaults inferred from the path, else K_override).
// Throws DatasetError on missing files or zero associations.
DatasetIndex load_tum_index(const std::string& dir, int max_frames = 0,
                            const Intrinsics* K_override = nullptr);

ColorImage load_color_png(const std::string& path);
DepthImage load_depth_png(const std::string& path, double depth_scale,
                          double max_depth = 5.0);
void save_color_png(const ColorImage& img, const std::string& path);
void save_depth_png(const DepthImage& depth, const std::string& path,
                    double depth_scale);

// Full in-memory load of an associated dataset (images included).
std::vector<Frame> load_tum(const DatasetIndex& index);

// Writes a TUM-layout directory: rgb/, depth/, rgb.txt, depth.txt,
// groundtruth.txt (from frame poses) and an intrinsics.txt sidecar.
void write_tum_dataset(const std::string& dir, const std::vector<Frame>& frames,
                       const Intrinsics& K);

struct TrajectoryEntry {
    double timestamp = 0.0;
    Pose pose; // camera-to-world
};

// TUM trajectory lines: timestamp tx ty tz qx qy qz qw.
void save_trajectory_tum(const std::vector<TrajectoryEntry>& traj,
                         const std::string& path);
std::vector<TrajectoryEntry> load_trajectory_tum(const std::string& path);

// ------------------------------------------------------------ cloud / mesh

struct PointCloud {
    std::vector<Vec3f> points;
    std::vector<std::array<uint8_t, 3>> colors;
};

struct TriangleMesh {
    std::vector<Vec3f> vertices;
    std::vector<Vec3f> normals;
    std::vector<std::array<uint8_t, 3>> colors;
    std::vector<std::array<uint32_t, 3>> faces;
};

// Surface point + albedo per near-surface voxel (|psi| < band, default the
// voxel size).
PointCloud export_surface_points(const VoxelGrid& grid, double band = 0.0);

// Standard 256-case marching cubes over the sparse grid; cells need all 8
// corner voxels populated. Vertices by linear psi interpolation, color by
// albedo interpolation, normals from interpolated gradients.
TriangleMesh marching_cubes(const VoxelGrid& grid);

void save_ply(const PointCloud& cloud, const std::string& path, bool binary = true);
void save_ply(const TriangleMesh& mesh, const std::string& path, bool binary = true);
PointCloud load_ply_points(const std::string& path);

} // namespace vps
