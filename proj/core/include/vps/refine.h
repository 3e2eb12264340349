#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vps/frame.h"
#include "vps/volume.h"

namespace vps {

enum class EvalAt { SurfacePoint, VoxelCenter };

struct RefineConfig {
    LightModel model = LightModel::SH;
    double sigma_cauchy = 0.2;
    double gn_damping = 0.1;      // multiplicative damping on the J^T W J diagonal
    double eikonal_weight = 1.0;
    double convergence_tol = 1e-3;
    int max_iters = 20;
    int upsample_at_iter = 5;     // 0 disables
    EvalAt eval_at = EvalAt::SurfacePoint;
    bool eikonal = true;
    bool refine_poses = true;
    bool per_channel_light = false;
    double surface_band = 0.0;    // 0: defaults to voxel size
    double upsample_band = 0.0;   // 0: defaults to 2x voxel size
    double min_z = 0.05;
    int min_visible_voxels = 50;  // pose frozen below this
};

// IRLS weight of the Cauchy estimator, w = 1/(1 + r^2/sigma^2).
inline double cauchy_weight(double r, double sigma) {
    const double u = r / sigma;
    return 1.0 / (1.0 + u * u);
}

// Cauchy loss as printed in the energy, Phi = log(1 + r^2/sigma^2).
inline double cauchy_loss(double r, double sigma) {
    const double u = r / sigma;
    return std::log1p(u * u);
}

struct EnergyEntry {
    int iteration = 0;
    double data = 0.0;
    double eikonal = 0.0; // raw regularizer sum; 0 when the regularizer is off
    double total = 0.0;   // data + eikonal_weight * eikonal
    double step_albedo = 0.0;
    double step_light = 0.0;
    double step_distance = 0.0;
    double step_pose = 0.0;
    double wall_time_s = 0.0;
    bool upsampled = false; // energy not comparable to the previous row
};

struct EnergyReport {
    std::vector<EnergyEntry> entries;
    int degenerate_light_warnings = 0;
    int frozen_pose_warnings = 0;
};

// Joint alternating optimizer over albedo, lighting, voxel distances and
// camera poses (block order fixed: rho, l, psi+grad, pose). Keyframes carry
// poses and color images; lights live in Frame::light, SH lights in the
// world-frame parameterization l_hat = R l.
class Refiner {
public:
    Refiner(VoxelGrid& grid, std::vector<Frame>& keyframes, const Intrinsics& K,
            const RefineConfig& cfg);

    double step_albedo();
    double step_light();
    double step_distance();
    double step_pose();

    EnergyEntry total_energy();

    EnergyReport run();

    const std::vector<Vec3i>& surface() const { return surface_; }
    // Geometric visibility: front-facing + projecting inside the sampling
    // domain. With intersect_existing the recompute can only clear bits,
    // which keeps the reported energy non-increasing across pose blocks.
    void recompute_visibility(bool intersect_existing = false);
    // Replaces the grid by its subdivision within upsample_band and rebuilds
    // the surface set.
    void upsample();

    int degenerate_light_warnings() const { return degenerate_light_warnings_; }
    int frozen_pose_warnings() const { return frozen_pose_warnings_; }

private:
    VoxelGrid& grid_;
    std::vector<Frame>& frames_;
    Intrinsics K_;
    RefineConfig cfg_;
    std::vector<Vec3i> surface_;
    int degenerate_light_warnings_ = 0;
    int frozen_pose_warnings_ = 0;

    double surface_band() const;
    void sync_gradients();
};

// Central finite-difference validation of the analytic Jacobians on random
// non-degenerate configurations with a smooth analytic image in place of
// bilinear sampling. Reports the max relative error per parameter block.
struct JacobianCheckResult {
    double rho = 0.0;
    double light = 0.0;   // l_hat (SH) or Psi (PLS)
    double psi = 0.0;     // diagonal term, lagged attenuation frozen
    double omega = 0.0;
    double translation = 0.0;
    double max() const;
};

JacobianCheckResult jacobians_fd_check(LightModel model, int n_configs, uint64_t seed);

void write_energy_csv(const EnergyReport& report, const std::string& path);
void write_lights_csv(const std::vector<Frame>& frames, LightModel model,
                      const std::string& path);

} // namespace vps
