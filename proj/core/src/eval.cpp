#include "vps/eval.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "vps/parallel.h"

namespace vps {

double ate_rmse(const std::vector<TrajectoryEntry>& est,
                const std::vector<TrajectoryEntry>& gt) {
    std::vector<double> te(est.size()), tg(gt.size());
    for (size_t i = 0; i < est.size(); ++i) te[i] = est[i].timestamp;
    for (size_t i = 0; i < gt.size(); ++i) tg[i] = gt[i].timestamp;
    const auto pairs = associate_timestamps(te, tg);
    if (pairs.size() < 3)
        throw Error("ate_rmse: fewer than 3 associated pose pairs");

    const size_t n = pairs.size();
    Vec3 mu_e = Vec3::Zero(), mu_g = Vec3::Zero();
    for (const auto& [i, j] : pairs) {
        mu_e += est[i].pose.t;
        mu_g += gt[j].pose.t;
    }
    mu_e /= double(n);
    mu_g /= double(n);

    Mat3 W = Mat3::Zero();
    for (const auto& [i, j] : pairs)
        W += (gt[j].pose.t - mu_g) * (est[i].pose.t - mu_e).transpose();
    Eigen::JacobiSVD<Mat3> svd(W, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 S = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) S(2, 2) = -1;
    const Mat3 R = svd.matrixU() * S * svd.matrixV().transpose();
    const Vec3 t = mu_g - R * mu_e;

    double se = 0.0;
    for (const auto& [i, j] : pairs)
        se += (R * est[i].pose.t + t - gt[j].pose.t).squaredNorm();
    return std::sqrt(se / double(n));
}

namespace {

// Compact exact 3-d k-d tree over float points.
class KdTree {
public:
    explicit KdTree(const std::vector<Vec3f>& pts) : pts_(pts) {
        order_.resize(pts.size());
        std::iota(order_.begin(), order_.end(), 0u);
        build(0, order_.size(), 0);
    }

    double nearest_dist(const Vec3f& q) const {
        double best = std::numeric_limits<double>::infinity();
        search(q, 0, order_.size(), 0, best);
        return std::sqrt(best);
    }

    static double dist2(const Vec3f& a, const Vec3f& b) {
        return (a - b).cast<double>().squaredNorm();
    }

private:
    const std::vector<Vec3f>& pts_;
    std::vector<uint32_t> order_;

    void build(size_t lo, size_t hi, int depth) {
        if (hi - lo <= 1) return;
        const size_t mid = (lo + hi) / 2;
        const int axis = depth % 3;
        std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                         [&](uint32_t a, uint32_t b) {
                             return pts_[a][axis] < pts_[b][axis];
                         });
        build(lo, mid, depth + 1);
        build(mid + 1, hi, depth + 1);
    }

    void search(const Vec3f& q, size_t lo, size_t hi, int depth, double& best) const {
        if (lo >= hi) return;
        const size_t mid = (lo + hi) / 2;
        const Vec3f& p = pts_[order_[mid]];
        best = std::min(best, dist2(p, q));
        const int axis = depth % 3;
        const double dx = double(q[axis]) - double(p[axis]);
        if (dx < 0) {
            search(q, lo, mid, depth + 1, best);
            if (dx * dx < best) search(q, mid + 1, hi, depth + 1, best);
        } else {
            search(q, mid + 1, hi, depth + 1, best);
            if (dx * dx < best) search(q, lo, mid, depth + 1, best);
        }
    }
};

} // namespace

double CdfCurve::value_at(double e) const {
    if (thresholds.empty()) return 0.0;
    if (e <= thresholds.front()) return percent.front();
    for (size_t i = 1; i < thresholds.size(); ++i) {
        if (e <= thresholds[i]) {
            const double a = (e - thresholds[i - 1]) / (thresholds[i] - thresholds[i - 1]);
            return percent[i - 1] + a * (percent[i] - percent[i - 1]);
        }
    }
    return percent.back();
}

CdfCurve error_cdf(const PointCloud& est, const PointCloud& gt, int n_bins) {
    if (est.points.empty() || gt.points.empty())
        throw Error("error_cdf: empty point cloud");

    Vec3f lo = gt.points.front(), hi = gt.points.front();
    for (const Vec3f& p : gt.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const double d_max = (hi - lo).cast<double>().norm();
    if (d_max <= 0.0) throw Error("error_cdf: degenerate gt bounding box");

    const KdTree tree(gt.points);
    std::vector<double> err(est.points.size());
    parallel_for(est.points.size(), [&](size_t i) {
        err[i] = tree.nearest_dist(est.points[i]) / d_max;
    }, worker_threads());

    CdfCurve curve;
    curve.d_max = d_max;
    curve.mean_error = std::accumulate(err.begin(), err.end(), 0.0) / err.size();
    curve.thresholds.resize(n_bins);
    curve.percent.resize(n_bins);
    for (int b = 0; b < n_bins; ++b) {
        const double e = 0.03 * (b + 1) / n_bins;
        curve.thresholds[b] = e;
        size_t count = 0;
        for (double v : err)
            if (v <= e) ++count;
        curve.percent[b] = 100.0 * double(count) / double(err.size());
    }
    return curve;
}

void write_cdf_csv(const CdfCurve& curve, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("write_cdf_csv: cannot open " + path);
    os << "e,percent\n";
    os.precision(17);
    for (size_t i = 0; i < curve.thresholds.size(); ++i)
        os << curve.thresholds[i] << ',' << curve.percent[i] << '\n';
}

} // namespace vps
