#pragma once

#include <vector>

#include "vps/frame.h"
#include "vps/volume.h"

namespace vps {

// Per-pixel unit normals in the camera frame, from central differences of the
// back-projected point map, oriented toward the camera. valid(x,y) is false
// wherever a needed depth neighbor is missing.
struct NormalMap {
    int width = 0, height = 0;
    std::vector<Vec3f> normals;
    std::vector<uint8_t> valid_mask;

    bool valid(int x, int y) const { return valid_mask[static_cast<size_t>(y) * width + x] != 0; }
    Vec3 at(int x, int y) const {
        return normals[static_cast<size_t>(y) * width + x].cast<double>();
    }
};

NormalMap depth_normals(const DepthImage& depth, const Intrinsics& K);

// Projective TSDF update of one posed frame. Allocates voxels on their first
// in-band observation (|d_i| <= T); existing voxels keep receiving clamped
// free-space updates. Distance and gradient are fused by weighted averaging,
// color accumulates into intensity_sum within the truncation band, and the
// frame's visibility bit is set when |d_i| < T.
void integrate_frame(VoxelGrid& grid, const Frame& frame, const Intrinsics& K,
                     int frame_index);

// albedo = intensity_sum / obs_count, clamped to [0,1]; untouched voxels keep
// the 0.5 gray default.
void init_albedo(VoxelGrid& grid);

} // namespace vps
