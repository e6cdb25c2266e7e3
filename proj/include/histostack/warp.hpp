#pragma once

#include <cstdint>
#include <vector>

#include "histostack/image.hpp"
#include "histostack/transform.hpp"

namespace histostack {

template <int D>
struct WarpResult {
    Image<D> image;
    std::vector<std::uint8_t> support;  // 1 where chain(x) landed inside the source grid
};

// Backward warping: out(x) = image(chain(x)) for every node x of `out_grid`,
// linear interpolation, 0 outside the source grid.
template <int D>
WarpResult<D> warp_with_support(const Image<D>& image, const TransformChain& chain, const Geometry<D>& out_grid);

template <int D>
Image<D> warp_image(const Image<D>& image, const TransformChain& chain, const Geometry<D>& out_grid);

template <int D>
Image<D> warp_image(const Image<D>& image, const TransformChain& chain) {
    return warp_image<D>(image, chain, image.geometry());
}

// Nearest-neighbour warp for binary masks; the mask is taken to live on `source`.
template <int D>
Mask<D> warp_mask(const Mask<D>& mask, const Geometry<D>& source, const TransformChain& chain,
                  const Geometry<D>& out_grid);

// Physical position of grid node i (x-fastest linear index).
template <int D>
Point node_position(const Geometry<D>& grid, std::size_t index);

}  // namespace histostack
