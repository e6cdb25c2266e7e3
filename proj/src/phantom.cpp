#include "histostack/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "histostack/random.hpp"
#include "histostack/warp.hpp"

namespace histostack {

void PhantomSpec::validate() const {
    for (int d = 0; d < 3; ++d) {
        if (dims[d] < 32) throw std::invalid_argument("phantom dims must be >= 32 per axis");
        if (!(spacing_um[d] > 0.0)) throw std::invalid_argument("phantom spacing must be positive");
    }
    if (structures < 0 || expression_blobs < 0 || annotators < 0)
        throw std::invalid_argument("phantom counts must be >= 0");
    for (double r : {max_translation_px, max_rotation_deg, max_shear, warp_amplitude_px, ish_max_translation_px,
                     ish_max_rotation_deg, ish_warp_amplitude_px, ish_contrast_jitter, annotator_jitter_um})
        if (!(r >= 0.0) || !std::isfinite(r)) throw std::invalid_argument("phantom ranges must be >= 0");
    if (!(warp_period_px > 0.0)) throw std::invalid_argument("warp period must be positive");
    if (!(ish_gamma > 0.0)) throw std::invalid_argument("ISH gamma must be positive");
    if (max_shear >= 0.5) throw std::invalid_argument("shear range too large");
}

namespace {

struct Blob {
    std::array<double, 3> center;
    std::array<double, 3> sigma;
    double amplitude;
};

double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// Tissue ellipsoid: semi-axes as fractions of the extent; z is cut by the block faces.
std::array<double, 3> semi_axes(const std::array<int, 3>& dims) {
    return {0.33 * dims[0], 0.30 * dims[1], 0.55 * dims[2]};
}

std::array<double, 3> centre(const std::array<int, 3>& dims) {
    return {0.5 * (dims[0] - 1), 0.5 * (dims[1] - 1), 0.5 * (dims[2] - 1)};
}

std::array<double, 3> point_inside(Rng& rng, const std::array<int, 3>& dims, double max_r) {
    const auto a = semi_axes(dims);
    const auto c = centre(dims);
    for (;;) {
        std::array<double, 3> u{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const double r2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
        if (r2 > 1.0) continue;
        std::array<double, 3> p{};
        bool ok = true;
        for (int d = 0; d < 3; ++d) {
            p[d] = c[d] + max_r * u[d] * a[d];
            if (p[d] < 0 || p[d] > dims[d] - 1) ok = false;
        }
        if (ok) return p;
    }
}

Affine rigid_perturbation(Rng& rng, const Geometry<2>& g, double max_t_px, double max_rot_deg, double max_shear) {
    const double theta = rng.uniform(-1, 1) * max_rot_deg * std::numbers::pi / 180.0;
    const double r = max_t_px * std::sqrt(rng.uniform());
    const double phi = rng.uniform(0, 2 * std::numbers::pi);
    const double shear = rng.uniform(-1, 1) * max_shear;
    const double c = std::cos(theta), s = std::sin(theta);
    Matrix3 l = identity_matrix();
    l[0][0] = c;
    l[0][1] = -s + c * shear;
    l[1][0] = s;
    l[1][1] = c - s * shear;
    const Point centre_um{0.5 * (g.size[0] - 1) * g.spacing[0], 0.5 * (g.size[1] - 1) * g.spacing[1], 0.0};
    const Point t{r * std::cos(phi) * g.spacing[0], r * std::sin(phi) * g.spacing[1], 0.0};
    return Affine(2, l, t, centre_um);
}

}  // namespace

DisplacementField sinusoidal_field(const Geometry<2>& grid, double amplitude_px, double period_px, double phase_x,
                                   double phase_y) {
    std::array<std::vector<double>, 2> c;
    c[0].resize(grid.count());
    c[1].resize(grid.count());
    const double k = 2.0 * std::numbers::pi / period_px;
    for (int y = 0; y < grid.size[1]; ++y)
        for (int x = 0; x < grid.size[0]; ++x) {
            const auto i = grid.index(x, y);
            c[0][i] = amplitude_px * grid.spacing[0] * std::sin(k * y + phase_x);
            c[1][i] = amplitude_px * grid.spacing[1] * std::sin(k * x + phase_y);
        }
    return DisplacementField::from_components<2>(grid, std::move(c));
}

PhantomVolume phantom_volume(const PhantomSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const auto& n = spec.dims;
    const Geometry<3> g{n, spec.spacing_um};
    const auto a = semi_axes(n);
    const auto c = centre(n);

    std::vector<Blob> blobs;
    for (int k = 0; k < spec.structures; ++k) {
        Blob b;
        b.center = point_inside(rng, n, 0.85);
        b.sigma = {rng.uniform(3, 10) * n[0] / 128.0, rng.uniform(3, 10) * n[1] / 128.0, rng.uniform(2, 8) * n[2] / 60.0};
        for (auto& s : b.sigma) s = std::max(s, 1.5);
        b.amplitude = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.15, 0.3);
        blobs.push_back(b);
    }
    std::vector<Blob> expression;
    for (int k = 0; k < spec.expression_blobs; ++k) {
        Blob b;
        b.center = point_inside(rng, n, 0.6);
        b.sigma = {rng.uniform(4, 9) * n[0] / 128.0, rng.uniform(4, 9) * n[1] / 128.0, rng.uniform(2, 5) * n[2] / 60.0};
        for (auto& s : b.sigma) s = std::max(s, 1.5);
        b.amplitude = 1.0;
        expression.push_back(b);
    }

    PhantomVolume out{Image3D(g), Image3D(g), Image3D(g), Mask<3>(n), Image3D(g)};
    for (int z = 0; z < n[2]; ++z)
        for (int y = 0; y < n[1]; ++y)
            for (int x = 0; x < n[0]; ++x) {
                const double px[3] = {double(x), double(y), double(z)};
                double r2 = 0.0;
                for (int d = 0; d < 3; ++d) r2 += (px[d] - c[d]) * (px[d] - c[d]) / (a[d] * a[d]);
                const double r = std::sqrt(r2);
                const double support = smoothstep((1.05 - r) / 0.1);
                double v = 0.35 + 0.35 * std::exp(-std::pow((r - 0.88) / 0.06, 2.0));
                for (const auto& b : blobs) {
                    double e = 0.0;
                    for (int d = 0; d < 3; ++d) e += std::pow((px[d] - b.center[d]) / b.sigma[d], 2.0);
                    if (e < 32.0) v += b.amplitude * std::exp(-0.5 * e);
                }
                const double inner = std::clamp(v, 0.05, 1.0);
                out.inner(x, y, z) = inner;
                out.support(x, y, z) = support;
                out.volume(x, y, z) = support * inner;
                double best = 1e9;
                for (const auto& b : expression) {
                    double e = 0.0;
                    for (int d = 0; d < 3; ++d) e += std::pow((px[d] - b.center[d]) / b.sigma[d], 2.0);
                    best = std::min(best, e);
                }
                if (best <= 1.0 && support >= 1.0) {
                    out.expression(x, y, z) = 1;
                    out.expression_level(x, y, z) = 1.0 - 0.15 * best;
                }
            }
    return out;
}

Image2D ish_intensity(const Image2D& inner, const Image2D& support, const Image2D& expression_level, double jitter,
                      double gamma) {
    Image2D out(inner.geometry());
    for (std::size_t i = 0; i < out.count(); ++i) {
        const double e = expression_level.values()[i];
        const double tissue = std::clamp(jitter * std::pow(1.0 - inner.values()[i], gamma), 0.05, 0.75);
        out.values()[i] = e > 0.0 ? e : support.values()[i] * tissue;
    }
    return out;
}

Phantom generate_phantom(const PhantomSpec& spec) {
    Phantom ph;
    ph.truth_volume = phantom_volume(spec);
    ph.slice_thickness_um = spec.spacing_um[2];
    // Perturbations come from a second stream so volume content does not shift
    // when perturbation ranges change.
    Rng rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    const auto& vol = ph.truth_volume;
    const int depth = spec.dims[2];
    for (int j = 0; j < depth; ++j) {
        const Image2D bf = slice(vol.volume, j);
        const Geometry<2> g = bf.geometry();

        TransformChain p(2);
        p.append(rigid_perturbation(rng, g, spec.max_translation_px, spec.max_rotation_deg, spec.max_shear));
        const double wpx = rng.uniform(0, 2 * std::numbers::pi), wpy = rng.uniform(0, 2 * std::numbers::pi);
        if (spec.warp_amplitude_px > 0.0) p.append(sinusoidal_field(g, spec.warp_amplitude_px, spec.warp_period_px, wpx, wpy));

        TransformChain q(2);
        q.append(rigid_perturbation(rng, g, spec.ish_max_translation_px, spec.ish_max_rotation_deg, 0.0));
        const double qpx = rng.uniform(0, 2 * std::numbers::pi), qpy = rng.uniform(0, 2 * std::numbers::pi);
        if (spec.ish_warp_amplitude_px > 0.0)
            q.append(sinusoidal_field(g, spec.ish_warp_amplitude_px, spec.warp_period_px, qpx, qpy));
        const double jitter = 1.0 + rng.uniform(-1, 1) * spec.ish_contrast_jitter;

        // BL(x) = S(P(x)); ISH(x) = C(P(Q(x))).
        const TransformChain ish_chain = compose(p, q);
        ph.blockface.push_back(bf);
        ph.backlit.push_back(warp_image<2>(bf, p, g));
        const Image2D clean = ish_intensity(slice(vol.inner, j), slice(vol.support, j), slice(vol.expression_level, j),
                                            jitter, spec.ish_gamma);
        ph.ish.push_back(warp_image<2>(clean, ish_chain, g));
        Mask<2> m({g.size[0], g.size[1]});
        const auto bits = vol.expression.bits();
        std::copy(bits.begin() + static_cast<std::ptrdiff_t>(g.count() * j),
                  bits.begin() + static_cast<std::ptrdiff_t>(g.count() * (j + 1)), m.bits().begin());
        ph.ish_masks.push_back(warp_mask<2>(m, g, ish_chain, g));
        ph.backlit_truth.push_back(invert(p));
        ph.ish_truth.push_back(invert(ish_chain));
    }

    ph.landmarks = canonical_landmarks(vol.volume.geometry(), "truth");
    Rng lrng(spec.seed ^ 0x51ed2701f3a5c7b9ULL);
    for (int k = 0; k < spec.annotators; ++k) {
        LandmarkSet s = ph.landmarks;
        s.annotator = "annotator" + std::to_string(k + 1);
        for (auto& lm : s.landmarks)
            for (auto& p : lm.points)
                for (auto& coord : p) coord += spec.annotator_jitter_um * lrng.normal();
        ph.annotations.push_back(std::move(s));
    }
    return ph;
}

}  // namespace histostack
