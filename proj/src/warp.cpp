#include "histostack/warp.hpp"

#include <cmath>
#include <stdexcept>
#include <variant>

namespace histostack {

template <int D>
Point node_position(const Geometry<D>& grid, std::size_t index) {
    Point p{};
    std::size_t rem = index;
    for (int d = 0; d < D; ++d) {
        const auto n = static_cast<std::size_t>(grid.size[d]);
        p[d] = static_cast<double>(rem % n) * grid.spacing[d];
        rem /= n;
    }
    return p;
}

template <int D>
WarpResult<D> warp_with_support(const Image<D>& image, const TransformChain& chain, const Geometry<D>& out_grid) {
    if (chain.dim() != D) throw std::invalid_argument("transform chain dimension does not match the image");
    out_grid.validate();
    const auto& src = image.geometry();
    std::vector<double> values(out_grid.count(), 0.0);
    std::vector<std::uint8_t> support(out_grid.count(), 0);
    const bool identity = chain.empty() && src == out_grid;
    if (chain.elements().size() == 1 && std::holds_alternative<Affine>(chain.elements().front())) {
        // Index-space form of a single affine: q = A x + b.
        const auto& a = std::get<Affine>(chain.elements().front());
        const auto& l = a.linear();
        double m[3][3]{};
        double b[3]{};
        for (int r = 0; r < D; ++r) {
            double off = a.center()[r] + a.translation()[r];
            for (int c = 0; c < D; ++c) {
                m[r][c] = l[r][c] * out_grid.spacing[c] / src.spacing[r];
                off -= l[r][c] * a.center()[c];
            }
            b[r] = off / src.spacing[r];
        }
        std::array<int, 3> n{1, 1, 1};
        for (int d = 0; d < D; ++d) n[d] = out_grid.size[d];
        std::size_t i = 0;
        for (int z = 0; z < n[2]; ++z)
            for (int y = 0; y < n[1]; ++y)
                for (int x = 0; x < n[0]; ++x, ++i) {
                    const double xs[3] = {double(x), double(y), double(z)};
                    ContinuousIndex<D> ci{};
                    for (int r = 0; r < D; ++r) {
                        double v = b[r];
                        for (int c = 0; c < D; ++c) v += m[r][c] * xs[c];
                        ci[r] = v;
                    }
                    if (is_inside<D>(src, ci)) {
                        values[i] = sample_linear<D>(image, ci);
                        support[i] = 1;
                    }
                }
        return {Image<D>(out_grid, std::move(values)), std::move(support)};
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (identity) {
            values[i] = image.values()[i];
            support[i] = 1;
            continue;
        }
        const Point q = chain.apply(node_position(out_grid, i));
        ContinuousIndex<D> ci{};
        for (int d = 0; d < D; ++d) ci[d] = q[d] / src.spacing[d];
        if (is_inside<D>(src, ci)) {
            values[i] = sample_linear<D>(image, ci);
            support[i] = 1;
        }
    }
    return {Image<D>(out_grid, std::move(values)), std::move(support)};
}

template <int D>
Image<D> warp_image(const Image<D>& image, const TransformChain& chain, const Geometry<D>& out_grid) {
    return warp_with_support<D>(image, chain, out_grid).image;
}

template <int D>
Mask<D> warp_mask(const Mask<D>& mask, const Geometry<D>& source, const TransformChain& chain,
                  const Geometry<D>& out_grid) {
    if (mask.size() != source.size) throw std::invalid_argument("mask does not match its source grid");
    if (chain.dim() != D) throw std::invalid_argument("transform chain dimension does not match the mask");
    Mask<D> out(out_grid.size);
    auto dst = out.bits();
    const auto bits = mask.bits();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        const Point q = chain.apply(node_position(out_grid, i));
        std::array<int, D> n{};
        bool inside = true;
        for (int d = 0; d < D; ++d) {
            n[d] = static_cast<int>(std::lround(q[d] / source.spacing[d]));
            if (n[d] < 0 || n[d] >= source.size[d]) inside = false;
        }
        if (!inside) continue;
        std::size_t j = 0;
        if constexpr (D == 2)
            j = source.index(n[0], n[1]);
        else
            j = source.index(n[0], n[1], n[2]);
        dst[i] = bits[j];
    }
    return out;
}

template Point node_position<2>(const Geometry<2>&, std::size_t);
template Point node_position<3>(const Geometry<3>&, std::size_t);
template WarpResult<2> warp_with_support<2>(const Image<2>&, const TransformChain&, const Geometry<2>&);
template WarpResult<3> warp_with_support<3>(const Image<3>&, const TransformChain&, const Geometry<3>&);
template Image<2> warp_image<2>(const Image<2>&, const TransformChain&, const Geometry<2>&);
template Image<3> warp_image<3>(const Image<3>&, const TransformChain&, const Geometry<3>&);
template Mask<2> warp_mask<2>(const Mask<2>&, const Geometry<2>&, const TransformChain&, const Geometry<2>&);
template Mask<3> warp_mask<3>(const Mask<3>&, const Geometry<3>&, const TransformChain&, const Geometry<3>&);

}  // namespace histostack
