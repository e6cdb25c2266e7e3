#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "histostack/image.hpp"
#include "histostack/random.hpp"
#include "histostack/transform.hpp"

namespace testing {

using namespace histostack;

// Smooth textured 2D image: a soft disk plus a few Gaussian bumps.
inline Image2D blob_image(int w, int h, double spacing = 1.0, std::uint64_t seed = 3) {
    Rng rng(seed);
    struct Bump {
        double x, y, s, a;
    };
    std::vector<Bump> bumps;
    for (int k = 0; k < 6; ++k)
        bumps.push_back({rng.uniform(0.3, 0.7) * w, rng.uniform(0.3, 0.7) * h, rng.uniform(0.05, 0.12) * w,
                         rng.uniform(-0.25, 0.3)});
    Image2D img(Geometry<2>{{w, h}, {spacing, spacing}});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double r = std::hypot((x - 0.5 * w) / (0.32 * w), (y - 0.5 * h) / (0.27 * h));
            double v = 0.5 / (1.0 + std::exp((r - 1.0) * 12.0));
            for (const auto& b : bumps)
                v += b.a * std::exp(-((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y)) / (2 * b.s * b.s)) *
                     (r < 1.0 ? 1.0 : 0.0);
            img(x, y) = std::clamp(v, 0.0, 1.0);
        }
    return img;
}

inline Image3D blob_volume(int n, double spacing = 1.0, std::uint64_t seed = 5) {
    Rng rng(seed);
    struct Bump {
        double x, y, z, s, a;
    };
    std::vector<Bump> bumps;
    for (int k = 0; k < 8; ++k)
        bumps.push_back({rng.uniform(0.3, 0.7) * n, rng.uniform(0.3, 0.7) * n, rng.uniform(0.3, 0.7) * n,
                         rng.uniform(0.06, 0.12) * n, rng.uniform(-0.25, 0.3)});
    Image3D vol(Geometry<3>{{n, n, n}, {spacing, spacing, spacing}});
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double r = std::hypot((x - 0.5 * n) / (0.33 * n), (y - 0.5 * n) / (0.3 * n), (z - 0.5 * n) / (0.36 * n));
                double v = 0.5 / (1.0 + std::exp((r - 1.0) * 12.0));
                for (const auto& b : bumps) {
                    const double d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y) + (z - b.z) * (z - b.z);
                    v += b.a * std::exp(-d2 / (2 * b.s * b.s)) * (r < 1.0 ? 1.0 : 0.0);
                }
                vol(x, y, z) = std::clamp(v, 0.0, 1.0);
            }
    return vol;
}

template <int D>
double mse(const Image<D>& a, const Image<D>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.count(); ++i) acc += (a.values()[i] - b.values()[i]) * (a.values()[i] - b.values()[i]);
    return acc / static_cast<double>(a.count());
}

// Mean absolute difference over nodes at least `margin` nodes from every edge.
inline double interior_mae(const Image2D& a, const Image2D& b, int margin) {
    double acc = 0.0;
    int n = 0;
    for (int y = margin; y < a.height() - margin; ++y)
        for (int x = margin; x < a.width() - margin; ++x) {
            acc += std::abs(a(x, y) - b(x, y));
            ++n;
        }
    return acc / n;
}

inline double distance(const Point& a, const Point& b) {
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Fresh scratch directory below the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("histostack_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
