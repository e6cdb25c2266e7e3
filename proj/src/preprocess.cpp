#include "histostack/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace histostack {

Image2D downscale_area(const Image2D& image, int factor) {
    if (factor < 1) throw std::invalid_argument("downscale factor must be >= 1");
    if (factor > image.width() || factor > image.height())
        throw std::invalid_argument("downscale factor is larger than the image");
    if (factor == 1) return image;
    const int w = image.width() / factor;
    const int h = image.height() / factor;
    Geometry<2> g{{w, h}, {image.spacing()[0] * factor, image.spacing()[1] * factor}};
    std::vector<double> v(g.count());
    const double norm = 1.0 / (factor * factor);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx) acc += image(x * factor + dx, y * factor + dy);
            v[g.index(x, y)] = std::clamp(acc * norm, 0.0, 1.0);
        }
    }
    return Image2D(g, std::move(v));
}

Image2D median_filter(const Image2D& image, int radius) {
    if (radius < 0) throw std::invalid_argument("median radius must be >= 0");
    if (radius == 0) return image;
    const int w = image.width(), h = image.height();
    Image2D out(image.geometry());
    std::vector<double> window;
    window.reserve(static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1)));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            window.clear();
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx)
                    window.push_back(image(std::clamp(x + dx, 0, w - 1), std::clamp(y + dy, 0, h - 1)));
            auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
            std::nth_element(window.begin(), mid, window.end());
            out(x, y) = *mid;
        }
    }
    return out;
}

double otsu_threshold(const Image2D& image) {
    constexpr int kBins = 256;
    std::array<double, kBins> hist{};
    for (double v : image.values()) hist[std::min(kBins - 1, static_cast<int>(v * kBins))] += 1.0;
    const double total = static_cast<double>(image.count());
    double sum_all = 0.0;
    for (int i = 0; i < kBins; ++i) sum_all += i * hist[i];

    double best = -1.0;
    int best_t = -1;
    double w0 = 0.0, sum0 = 0.0;
    for (int t = 0; t < kBins - 1; ++t) {
        w0 += hist[t];
        sum0 += t * hist[t];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double m0 = sum0 / w0;
        const double m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_t = t;
        }
    }
    if (best_t < 0) return -1.0;
    // Voxels in bins above best_t are foreground.
    return static_cast<double>(best_t + 1) / kBins;
}

namespace {

std::vector<std::array<int, 2>> disk_offsets(int radius) {
    std::vector<std::array<int, 2>> off;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius) off.push_back({dx, dy});
    return off;
}

// Erosion treats out-of-grid as foreground and dilation as background, so
// opening and closing do not eat into tissue that touches the border.
SegmentationMask2D morph(const SegmentationMask2D& mask, int radius, bool erode) {
    if (radius < 0) throw std::invalid_argument("structuring element radius must be >= 0");
    if (radius == 0) return mask;
    const int w = mask.size()[0], h = mask.size()[1];
    const auto off = disk_offsets(radius);
    SegmentationMask2D out(mask.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            bool v = erode;
            for (const auto& o : off) {
                const int xx = x + o[0], yy = y + o[1];
                if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
                const bool b = mask(xx, yy) != 0;
                if (erode && !b) {
                    v = false;
                    break;
                }
                if (!erode && b) {
                    v = true;
                    break;
                }
            }
            out(x, y) = v ? 1 : 0;
        }
    }
    return out;
}

Image2D despeckle_pass(const Image2D& image, const PreprocessConfig& cfg) {
    Image2D filtered = median_filter(image, cfg.median_radius);
    const double t = otsu_threshold(filtered);
    SegmentationMask2D fg({filtered.width(), filtered.height()});
    for (int y = 0; y < filtered.height(); ++y)
        for (int x = 0; x < filtered.width(); ++x) fg(x, y) = filtered(x, y) >= t ? 1 : 0;
    fg = binary_close(binary_open(fg, cfg.morphology_radius), cfg.morphology_radius);
    for (int y = 0; y < filtered.height(); ++y)
        for (int x = 0; x < filtered.width(); ++x)
            if (!fg(x, y)) filtered(x, y) = 0.0;
    return filtered;
}

}  // namespace

SegmentationMask2D binary_erode(const SegmentationMask2D& mask, int radius) { return morph(mask, radius, true); }
SegmentationMask2D binary_dilate(const SegmentationMask2D& mask, int radius) { return morph(mask, radius, false); }
SegmentationMask2D binary_open(const SegmentationMask2D& mask, int radius) {
    return binary_dilate(binary_erode(mask, radius), radius);
}
SegmentationMask2D binary_close(const SegmentationMask2D& mask, int radius) {
    return binary_erode(binary_dilate(mask, radius), radius);
}

Image2D preprocess_section(const Image2D& image, const PreprocessConfig& cfg) {
    if (cfg.downscale_factor < 1) throw std::invalid_argument("downscale factor must be >= 1");
    if (cfg.median_radius < 0 || cfg.morphology_radius < 0)
        throw std::invalid_argument("filter radii must be >= 0");
    Image2D current = downscale_area(image, cfg.downscale_factor);
    for (int pass = 0; pass < std::max(1, cfg.max_passes); ++pass) {
        Image2D next = despeckle_pass(current, cfg);
        if (next == current) break;
        current = std::move(next);
    }
    return current;
}

}  // namespace histostack
