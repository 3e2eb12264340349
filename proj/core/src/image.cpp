#include "vps/image.h"

#include <cmath>
#include <stdexcept>

namespace vps {

namespace {

inline Vec3 bilinear(const ColorImage& img, double x, double y) {
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    // Clamp the base cell so exact boundary coordinates stay in range.
    x0 = std::min(std::max(x0, 0), img.width - 2);
    y0 = std::min(std::max(y0, 0), img.height - 2);
    const double fx = x - x0;
    const double fy = y - y0;
    const Vec3 v00 = img.at(x0, y0), v10 = img.at(x0 + 1, y0);
    const Vec3 v01 = img.at(x0, y0 + 1), v11 = img.at(x0 + 1, y0 + 1);
    return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
}

} // namespace

std::optional<Vec3> sample_bilinear_value(const ColorImage& img, const Vec2& px) {
    if (img.width < 2 || img.height < 2) return std::nullopt;
    if (px.x() < 0 || px.x() > img.width - 1 || px.y() < 0 || px.y() > img.height - 1)
        return std::nullopt;
    return bilinear(img, px.x(), px.y());
}

std::optional<PixelSample> sample_bilinear(const ColorImage& img, const Vec2& px) {
    if (img.width < 3 || img.height < 3) return std::nullopt;
    if (px.x() < 1 || px.x() > img.width - 2 || px.y() < 1 || px.y() > img.height - 2)
        return std::nullopt;
    PixelSample s;
    s.value = bilinear(img, px.x(), px.y());
    const Vec3 gx = 0.5 * (bilinear(img, px.x() + 1, px.y()) - bilinear(img, px.x() - 1, px.y()));
    const Vec3 gy = 0.5 * (bilinear(img, px.x(), px.y() + 1) - bilinear(img, px.x(), px.y() - 1));
    s.grad.row(0) = gx.transpose();
    s.grad.row(1) = gy.transpose();
    return s;
}

double sharpness(const ColorImage& img) {
    if (img.width < 3 || img.height < 3) return 0.0;
    double sum = 0.0, sum2 = 0.0;
    size_t n = 0;
    for (int y = 1; y < img.height - 1; ++y) {
        for (int x = 1; x < img.width - 1; ++x) {
            auto gray = [&](int xx, int yy) {
                const float* p = img.px(xx, yy);
                return (static_cast<double>(p[0]) + p[1] + p[2]) / 3.0;
            };
            const double lap = gray(x - 1, y) + gray(x + 1, y) + gray(x, y - 1) +
                               gray(x, y + 1) - 4.0 * gray(x, y);
            sum += lap;
            sum2 += lap * lap;
            ++n;
        }
    }
    const double mean = sum / n;
    return sum2 / n - mean * mean;
}

std::vector<int> select_keyframes(const std::vector<double>& scores, double fraction) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw std::invalid_argument("select_keyframes: fraction must be in (0,1]");
    const int n = static_cast<int>(scores.size());
    if (n == 0) return {};
    const int k = static_cast<int>(std::ceil(n * fraction));
    std::vector<int> out;
    out.reserve(k);
    for (int w = 0; w < k; ++w) {
        const int begin = static_cast<int>((static_cast<int64_t>(w) * n) / k);
        const int end = static_cast<int>((static_cast<int64_t>(w + 1) * n) / k);
        int best = begin;
        for (int i = begin + 1; i < end; ++i)
            if (scores[i] > scores[best]) best = i;
        out.push_back(best);
    }
    return out;
}

} // namespace vps
