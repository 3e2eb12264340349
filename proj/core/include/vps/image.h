#pragma once

#include <optional>
#include <vector>

#include "vps/types.h"

namespace vps {

// 3-channel intensity image, values in [0,1], row-major interleaved RGB.
struct ColorImage {
    int width = 0, height = 0;
    std::vector<float> data; // width*height*3

    ColorImage() = default;
    ColorImage(int w, int h, float fill = 0.f)
        : width(w), height(h), data(static_cast<size_t>(w) * h * 3, fill) {}

    float* px(int x, int y) { return &data[3 * (static_cast<size_t>(y) * width + x)]; }
    const float* px(int x, int y) const {
        return &data[3 * (static_cast<size_t>(y) * width + x)];
    }
    Vec3 at(int x, int y) const {
        const float* p = px(x, y);
        return Vec3(p[0], p[1], p[2]);
    }
    void set(int x, int y, const Vec3& v) {
        float* p = px(x, y);
        p[0] = static_cast<float>(v[0]);
        p[1] = static_cast<float>(v[1]);
        p[2] = static_cast<float>(v[2]);
    }
};

// Metric depth image; 0 encodes invalid.
struct DepthImage {
    int width = 0, height = 0;
    std::vector<float> data;

    DepthImage() = default;
    DepthImage(int w, int h, float fill = 0.f)
        : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

    float at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
    float& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    bool valid(int x, int y) const { return at(x, y) > 0.f; }
};

struct PixelSample {
    Vec3 value;
    // grad(k, c) = d value[c] / d px[k]; central differences of the
    // interpolated field with 1px step.
    Eigen::Matrix<double, 2, 3> grad;
};

// Bilinear sample with gradient. Valid domain is [1, w-2] x [1, h-2]
// (1-pixel border excluded); outside returns nullopt and the caller marks the
// voxel invisible in that frame.
std::optional<PixelSample> sample_bilinear(const ColorImage& img, const Vec2& px);

// Value-only bilinear lookup on the full [0, w-1] x [0, h-1] domain.
std::optional<Vec3> sample_bilinear_value(const ColorImage& img, const Vec2& px);

// Variance of the 3x3 Laplacian of the grayscale image (gray = channel mean).
double sharpness(const ColorImage& img);

// Picks ceil(n*fraction) keyframes, the sharpest one per equal time window;
// ties break to the lowest index. Output is strictly increasing.
std::vector<int> select_keyframes(const std::vector<double>& sharpness_scores,
                                  double fraction);

} // namespace vps
