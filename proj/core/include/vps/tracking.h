#pragma once

#include <vector>

#include "vps/frame.h"
#include "vps/volume.h"

namespace vps {

struct TrackConfig {
    int max_iterations = 20;
    double step_tol = 1e-6;
    double damping_init = 1e-4;
    double damping_max = 1e6;
    int stride = 2;          // depth pixel subsampling
    int min_inliers = 100;   // below this, tracking is lost
};

struct TrackResult {
    Pose pose;
    int inliers = 0;
    std::vector<double> energies; // per accepted iteration, non-increasing
};

// Frame-to-model alignment of one depth frame against the grid by damped
// Gauss-Newton on the truncated SDF energy. Throws TrackingLost when fewer
// than min_inliers points land inside the populated volume.
TrackResult track_frame(const VoxelGrid& grid, const DepthImage& depth,
                        const Intrinsics& K, const Pose& init,
                        const TrackConfig& cfg = {});

struct SequenceResult {
    std::vector<Pose> poses;          // one per frame
    std::vector<uint8_t> tracked;     // 0 = frame skipped (tracking lost)
};

// Depth-only initialization: alternates track_frame (previous pose as init)
// and integrate_frame, first frame pinned to identity. Caps at max_frames.
SequenceResult track_sequence(VoxelGrid& grid, std::vector<Frame>& frames,
                              const Intrinsics& K, const TrackConfig& cfg = {},
                              int max_frames = 300);

} // namespace vps
