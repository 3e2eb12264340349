#pragma once

#include <string>
#include <vector>

#include "vps/dataset_io.h"

namespace vps {

// Closed-form rigid alignment (no scale) of est positions to gt, then RMSE of
// residual position errors. Trajectories are timestamp-associated (0.02 s);
// throws Error with fewer than 3 pairs.
double ate_rmse(const std::vector<TrajectoryEntry>& est,
                const std::vector<TrajectoryEntry>& gt);

struct CdfCurve {
    std::vector<double> thresholds; // e = d_cc / d_max
    std::vector<double> percent;    // cumulative % of est points below e
    double d_max = 0.0;             // gt bounding-box diagonal
    double mean_error = 0.0;        // mean normalized error

    // Interpolated curve value at threshold e.
    double value_at(double e) const;
};

// Nearest-neighbor distance of every est point to the gt cloud (exact k-d
// search), normalized by the gt bounding-box diagonal, accumulated at n_bins
// thresholds spanning [0, 0.03].
CdfCurve error_cdf(const PointCloud& est, const PointCloud& gt, int n_bins = 30);

void write_cdf_csv(const CdfCurve& curve, const std::string& path);

} // namespace vps
