#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace histostack {

// Regular grid with origin at physical (0,0[,0]); voxel i sits at i * spacing.
// Spacing is in micrometres. Storage order is x-fastest.
template <int D>
struct Geometry {
    static_assert(D == 2 || D == 3);

    std::array<int, D> size{};
    std::array<double, D> spacing{};

    std::size_t count() const {
        std::size_t n = 1;
        for (int s : size) n *= static_cast<std::size_t>(s);
        return n;
    }

    std::size_t index(int x, int y) const requires(D == 2) {
        return static_cast<std::size_t>(x) + static_cast<std::size_t>(size[0]) * static_cast<std::size_t>(y);
    }
    std::size_t index(int x, int y, int z) const requires(D == 3) {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(size[0]) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(size[1]) * static_cast<std::size_t>(z));
    }

    void validate() const;

    bool operator==(const Geometry&) const = default;
};

// Grayscale intensity grid. Intensities are finite and in [0,1]; the
// constructors check this, mutable accessors leave it to the caller.
template <int D>
class Image {
public:
    Image() = default;
    explicit Image(Geometry<D> geometry, double fill = 0.0);
    Image(Geometry<D> geometry, std::vector<double> values);

    const Geometry<D>& geometry() const { return geometry_; }
    const std::array<int, D>& size() const { return geometry_.size; }
    const std::array<double, D>& spacing() const { return geometry_.spacing; }
    int width() const { return geometry_.size[0]; }
    int height() const { return geometry_.size[1]; }
    int depth() const requires(D == 3) { return geometry_.size[2]; }
    std::size_t count() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double operator()(int x, int y) const requires(D == 2) { return values_[geometry_.index(x, y)]; }
    double& operator()(int x, int y) requires(D == 2) { return values_[geometry_.index(x, y)]; }
    double operator()(int x, int y, int z) const requires(D == 3) { return values_[geometry_.index(x, y, z)]; }
    double& operator()(int x, int y, int z) requires(D == 3) { return values_[geometry_.index(x, y, z)]; }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

    // Throws if any intensity is non-finite or outside [0,1].
    void validate() const;

    bool operator==(const Image&) const = default;

private:
    Geometry<D> geometry_{};
    std::vector<double> values_;
};

using Image2D = Image<2>;
using Image3D = Image<3>;

template <int D>
class Mask {
public:
    Mask() = default;
    explicit Mask(std::array<int, D> size, std::uint8_t fill = 0);
    Mask(std::array<int, D> size, std::vector<std::uint8_t> bits);

    const std::array<int, D>& size() const { return size_; }
    std::size_t count() const { return bits_.size(); }

    std::uint8_t operator()(int x, int y) const requires(D == 2) { return bits_[index(x, y)]; }
    std::uint8_t& operator()(int x, int y) requires(D == 2) { return bits_[index(x, y)]; }
    std::uint8_t operator()(int x, int y, int z) const requires(D == 3) { return bits_[index(x, y, z)]; }
    std::uint8_t& operator()(int x, int y, int z) requires(D == 3) { return bits_[index(x, y, z)]; }

    std::span<const std::uint8_t> bits() const { return bits_; }
    std::span<std::uint8_t> bits() { return bits_; }
    std::size_t popcount() const;

    bool operator==(const Mask&) const = default;

private:
    std::size_t index(int x, int y) const { return static_cast<std::size_t>(x) + static_cast<std::size_t>(size_[0]) * y; }
    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(size_[0]) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(size_[1]) * z);
    }

    std::array<int, D> size_{};
    std::vector<std::uint8_t> bits_;
};

using SegmentationMask2D = Mask<2>;
using SegmentationMask3D = Mask<3>;

// Continuous index (not physical) for sampling.
template <int D>
using ContinuousIndex = std::array<double, D>;

template <int D>
bool is_inside(const Geometry<D>& geometry, const ContinuousIndex<D>& position);

// Bi/trilinear interpolation. Positions outside [0, n-1] on any axis return 0.
template <int D>
double sample_linear(const Image<D>& image, const ContinuousIndex<D>& position);

double sample_bilinear(const Image2D& image, double x, double y);
double sample_trilinear(const Image3D& image, double x, double y, double z);

// Same as sample_linear but on a raw buffer laid out on `geometry`.
template <int D>
double sample_linear(std::span<const double> values, const Geometry<D>& geometry, const ContinuousIndex<D>& position);

// Like sample_linear, but positions outside the grid take the nearest edge value.
template <int D>
double sample_linear_clamped(std::span<const double> values, const Geometry<D>& geometry,
                             const ContinuousIndex<D>& position);

// Normalized sampled Gaussian, truncated at ceil(4 sigma).
std::vector<double> gaussian_kernel(double sigma);

// Separable Gaussian over every axis with per-axis sigma in voxels; clamp-to-edge.
template <int D>
void gaussian_smooth_values(std::span<double> values, const Geometry<D>& geometry, const std::array<double, D>& sigma);

template <int D>
Image<D> gaussian_smooth(const Image<D>& image, double sigma);

Image3D gaussian_smooth_3d(const Image3D& volume, double sigma);

// Level 0 is the input; each further level is smoothed (sigma 1) then decimated by 2.
template <int D>
std::vector<Image<D>> pyramid(const Image<D>& image, int levels);

// Geometry of the decimated grid used by pyramid().
template <int D>
Geometry<D> decimated(const Geometry<D>& geometry);

template <int D>
std::array<double, D> center_of_mass(const Image<D>& image);

Image2D slice(const Image3D& volume, int z);
Image3D stack_slices(const std::vector<Image2D>& slices, double slice_thickness_um);

}  // namespace histostack
