#include "histostack/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace histostack {

namespace {

// Coordinates this close to a grid node are treated as on the node, so
// identity and integer-shift resampling reproduce stored values exactly.
constexpr double kSnap = 1e-9;

double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < kSnap ? r : v;
}

}  // namespace

template <int D>
void Geometry<D>::validate() const {
    for (int d = 0; d < D; ++d) {
        if (size[d] <= 0) throw std::invalid_argument("image size must be positive on every axis");
        if (!(spacing[d] > 0.0) || !std::isfinite(spacing[d]))
            throw std::invalid_argument("image spacing must be positive on every axis");
    }
}

template <int D>
Image<D>::Image(Geometry<D> geometry, double fill) : geometry_(geometry) {
    geometry_.validate();
    if (!std::isfinite(fill) || fill < 0.0 || fill > 1.0)
        throw std::invalid_argument("fill intensity must lie in [0,1]");
    values_.assign(geometry_.count(), fill);
}

template <int D>
Image<D>::Image(Geometry<D> geometry, std::vector<double> values) : geometry_(geometry), values_(std::move(values)) {
    geometry_.validate();
    if (values_.size() != geometry_.count())
        throw std::invalid_argument("pixel count " + std::to_string(values_.size()) + " does not match grid size " +
                                    std::to_string(geometry_.count()));
    validate();
}

template <int D>
void Image<D>::validate() const {
    for (double v : values_) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
            throw std::invalid_argument("image intensities must be finite and in [0,1]");
    }
}

template <int D>
Mask<D>::Mask(std::array<int, D> size, std::uint8_t fill) : size_(size) {
    std::size_t n = 1;
    for (int s : size_) {
        if (s <= 0) throw std::invalid_argument("mask size must be positive on every axis");
        n *= static_cast<std::size_t>(s);
    }
    bits_.assign(n, fill ? 1 : 0);
}

template <int D>
Mask<D>::Mask(std::array<int, D> size, std::vector<std::uint8_t> bits) : size_(size), bits_(std::move(bits)) {
    std::size_t n = 1;
    for (int s : size_) {
        if (s <= 0) throw std::invalid_argument("mask size must be positive on every axis");
        n *= static_cast<std::size_t>(s);
    }
    if (bits_.size() != n) throw std::invalid_argument("mask bit count does not match its size");
    for (auto b : bits_)
        if (b > 1) throw std::invalid_argument("mask values must be 0 or 1");
}

template <int D>
std::size_t Mask<D>::popcount() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

template <int D>
bool is_inside(const Geometry<D>& geometry, const ContinuousIndex<D>& position) {
    for (int d = 0; d < D; ++d) {
        const double p = position[d];
        if (!(p >= -kSnap) || !(p <= geometry.size[d] - 1 + kSnap)) return false;
    }
    return true;
}

namespace {

template <int D>
double interpolate(std::span<const double> values, const Geometry<D>& g, const ContinuousIndex<D>& position) {
    std::array<int, D> lo{};
    std::array<double, D> frac{};
    for (int d = 0; d < D; ++d) {
        const double p = std::clamp(snap(position[d]), 0.0, static_cast<double>(g.size[d] - 1));
        int i = static_cast<int>(std::floor(p));
        if (i >= g.size[d] - 1) i = std::max(0, g.size[d] - 2);
        lo[d] = i;
        frac[d] = (g.size[d] == 1) ? 0.0 : p - i;
    }
    if constexpr (D == 2) {
        const int x1 = std::min(lo[0] + 1, g.size[0] - 1);
        const int y1 = std::min(lo[1] + 1, g.size[1] - 1);
        const double fx = frac[0], fy = frac[1];
        const double v00 = values[g.index(lo[0], lo[1])];
        const double v10 = values[g.index(x1, lo[1])];
        const double v01 = values[g.index(lo[0], y1)];
        const double v11 = values[g.index(x1, y1)];
        if (fx == 0.0 && fy == 0.0) return v00;
        return (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy;
    } else {
        const int x1 = std::min(lo[0] + 1, g.size[0] - 1);
        const int y1 = std::min(lo[1] + 1, g.size[1] - 1);
        const int z1 = std::min(lo[2] + 1, g.size[2] - 1);
        const double fx = frac[0], fy = frac[1], fz = frac[2];
        const double c000 = values[g.index(lo[0], lo[1], lo[2])];
        if (fx == 0.0 && fy == 0.0 && fz == 0.0) return c000;
        const double c100 = values[g.index(x1, lo[1], lo[2])];
        const double c010 = values[g.index(lo[0], y1, lo[2])];
        const double c110 = values[g.index(x1, y1, lo[2])];
        const double c001 = values[g.index(lo[0], lo[1], z1)];
        const double c101 = values[g.index(x1, lo[1], z1)];
        const double c011 = values[g.index(lo[0], y1, z1)];
        const double c111 = values[g.index(x1, y1, z1)];
        const double c00 = c000 * (1.0 - fx) + c100 * fx;
        const double c10 = c010 * (1.0 - fx) + c110 * fx;
        const double c01 = c001 * (1.0 - fx) + c101 * fx;
        const double c11 = c011 * (1.0 - fx) + c111 * fx;
        const double c0 = c00 * (1.0 - fy) + c10 * fy;
        const double c1 = c01 * (1.0 - fy) + c11 * fy;
        return c0 * (1.0 - fz) + c1 * fz;
    }
}

}  // namespace

template <int D>
double sample_linear(std::span<const double> values, const Geometry<D>& geometry, const ContinuousIndex<D>& position) {
    if (!is_inside<D>(geometry, position)) return 0.0;
    return interpolate<D>(values, geometry, position);
}

template <int D>
double sample_linear_clamped(std::span<const double> values, const Geometry<D>& geometry,
                             const ContinuousIndex<D>& position) {
    return interpolate<D>(values, geometry, position);
}

template <int D>
double sample_linear(const Image<D>& image, const ContinuousIndex<D>& position) {
    return sample_linear<D>(image.values(), image.geometry(), position);
}

double sample_bilinear(const Image2D& image, double x, double y) { return sample_linear<2>(image, {x, y}); }

double sample_trilinear(const Image3D& image, double x, double y, double z) {
    return sample_linear<3>(image, {x, y, z});
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("gaussian sigma must be non-negative");
    if (sigma == 0.0) return {1.0};
    const int radius = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[i + radius] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

template <int D>
void gaussian_smooth_values(std::span<double> values, const Geometry<D>& g, const std::array<double, D>& sigma) {
    if (values.size() != g.count()) throw std::invalid_argument("buffer does not match geometry");
    std::vector<double> line;
    std::vector<double> out_line;
    for (int axis = 0; axis < D; ++axis) {
        if (sigma[axis] < 0.0) throw std::invalid_argument("gaussian sigma must be non-negative");
        if (sigma[axis] == 0.0 || g.size[axis] == 1) continue;
        const auto kernel = gaussian_kernel(sigma[axis]);
        const int radius = static_cast<int>(kernel.size() / 2);
        const int n = g.size[axis];
        std::size_t stride = 1;
        for (int d = 0; d < axis; ++d) stride *= static_cast<std::size_t>(g.size[d]);
        const std::size_t lines = g.count() / static_cast<std::size_t>(n);
        line.resize(n);
        out_line.resize(n);
        for (std::size_t l = 0; l < lines; ++l) {
            // Decompose the line number into the base offset of that line.
            const std::size_t inner = l % stride;
            const std::size_t outer = l / stride;
            const std::size_t base = inner + outer * stride * static_cast<std::size_t>(n);
            for (int i = 0; i < n; ++i) line[i] = values[base + i * stride];
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const int j = std::clamp(i + k, 0, n - 1);
                    acc += kernel[k + radius] * line[j];
                }
                out_line[i] = acc;
            }
            for (int i = 0; i < n; ++i) values[base + i * stride] = out_line[i];
        }
    }
}

template <int D>
Image<D> gaussian_smooth(const Image<D>& image, double sigma) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("gaussian sigma must be non-negative");
    Image<D> out = image;
    if (sigma == 0.0) return out;
    std::array<double, D> s{};
    s.fill(sigma);
    gaussian_smooth_values<D>(out.values(), out.geometry(), s);
    // Convex combinations stay in [0,1] up to rounding.
    for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

Image3D gaussian_smooth_3d(const Image3D& volume, double sigma) { return gaussian_smooth<3>(volume, sigma); }

template <int D>
Geometry<D> decimated(const Geometry<D>& geometry) {
    Geometry<D> g = geometry;
    for (int d = 0; d < D; ++d) {
        g.size[d] = (geometry.size[d] + 1) / 2;
        g.spacing[d] = geometry.spacing[d] * 2.0;
    }
    return g;
}

template <int D>
std::vector<Image<D>> pyramid(const Image<D>& image, int levels) {
    if (levels < 1) throw std::invalid_argument("pyramid needs at least one level");
    Geometry<D> g = image.geometry();
    for (int l = 1; l < levels; ++l) g = decimated(g);
    for (int d = 0; d < D; ++d) {
        if (levels > 1 && g.size[d] < 8)
            throw std::invalid_argument("too many pyramid levels: coarsest level would be smaller than 8 voxels");
    }
    std::vector<Image<D>> out;
    out.reserve(levels);
    out.push_back(image);
    for (int l = 1; l < levels; ++l) {
        const Image<D> smooth = gaussian_smooth(out.back(), 1.0);
        const Geometry<D> fine = smooth.geometry();
        const Geometry<D> coarse = decimated(fine);
        std::vector<double> v(coarse.count());
        if constexpr (D == 2) {
            for (int y = 0; y < coarse.size[1]; ++y)
                for (int x = 0; x < coarse.size[0]; ++x) v[coarse.index(x, y)] = smooth(2 * x, 2 * y);
        } else {
            for (int z = 0; z < coarse.size[2]; ++z)
                for (int y = 0; y < coarse.size[1]; ++y)
                    for (int x = 0; x < coarse.size[0]; ++x) v[coarse.index(x, y, z)] = smooth(2 * x, 2 * y, 2 * z);
        }
        out.emplace_back(coarse, std::move(v));
    }
    return out;
}

template <int D>
std::array<double, D> center_of_mass(const Image<D>& image) {
    const auto& g = image.geometry();
    std::array<double, D> acc{};
    double mass = 0.0;
    const auto v = image.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::size_t rem = i;
        for (int d = 0; d < D; ++d) {
            const auto c = static_cast<double>(rem % static_cast<std::size_t>(g.size[d]));
            rem /= static_cast<std::size_t>(g.size[d]);
            acc[d] += v[i] * c * g.spacing[d];
        }
        mass += v[i];
    }
    if (mass <= 0.0) {
        // Empty image: geometric centre.
        for (int d = 0; d < D; ++d) acc[d] = 0.5 * (g.size[d] - 1) * g.spacing[d];
        return acc;
    }
    for (auto& a : acc) a /= mass;
    return acc;
}

Image2D slice(const Image3D& volume, int z) {
    if (z < 0 || z >= volume.depth()) throw std::out_of_range("slice index out of range");
    const auto& g = volume.geometry();
    Geometry<2> sg{{g.size[0], g.size[1]}, {g.spacing[0], g.spacing[1]}};
    const std::size_t n = sg.count();
    const auto begin = volume.values().begin() + static_cast<std::ptrdiff_t>(n * static_cast<std::size_t>(z));
    Image2D out(sg);
    std::copy(begin, begin + static_cast<std::ptrdiff_t>(n), out.values().begin());
    return out;
}

Image3D stack_slices(const std::vector<Image2D>& slices, double slice_thickness_um) {
    if (slices.empty()) throw std::invalid_argument("cannot stack an empty slice list");
    const auto& sg = slices.front().geometry();
    Geometry<3> g{{sg.size[0], sg.size[1], static_cast<int>(slices.size())},
                  {sg.spacing[0], sg.spacing[1], slice_thickness_um}};
    Image3D out(g);
    auto dst = out.values().begin();
    for (const auto& s : slices) {
        if (s.geometry() != sg) throw std::invalid_argument("all slices must share one grid");
        dst = std::copy(s.values().begin(), s.values().end(), dst);
    }
    return out;
}

template struct Geometry<2>;
template struct Geometry<3>;
template class Image<2>;
template class Image<3>;
template class Mask<2>;
template class Mask<3>;
template bool is_inside<2>(const Geometry<2>&, const ContinuousIndex<2>&);
template bool is_inside<3>(const Geometry<3>&, const ContinuousIndex<3>&);
template double sample_linear<2>(const Image<2>&, const ContinuousIndex<2>&);
template double sample_linear<3>(const Image<3>&, const ContinuousIndex<3>&);
template double sample_linear<2>(std::span<const double>, const Geometry<2>&, const ContinuousIndex<2>&);
template double sample_linear<3>(std::span<const double>, const Geometry<3>&, const ContinuousIndex<3>&);
template double sample_linear_clamped<2>(std::span<const double>, const Geometry<2>&, const ContinuousIndex<2>&);
template double sample_linear_clamped<3>(std::span<const double>, const Geometry<3>&, const ContinuousIndex<3>&);
template void gaussian_smooth_values<2>(std::span<double>, const Geometry<2>&, const std::array<double, 2>&);
template void gaussian_smooth_values<3>(std::span<double>, const Geometry<3>&, const std::array<double, 3>&);
template Image<2> gaussian_smooth<2>(const Image<2>&, double);
template Image<3> gaussian_smooth<3>(const Image<3>&, double);
template Geometry<2> decimated<2>(const Geometry<2>&);
template Geometry<3> decimated<3>(const Geometry<3>&);
template std::vector<Image<2>> pyramid<2>(const Image<2>&, int);
template std::vector<Image<3>> pyramid<3>(const Image<3>&, int);
template std::array<double, 2> center_of_mass<2>(const Image<2>&);
template std::array<double, 3> center_of_mass<3>(const Image<3>&);

}  // namespace histostack
