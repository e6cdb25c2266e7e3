#include "histostack/deformable_registration.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "histostack/warp.hpp"

namespace histostack {

void DeformableRegParams::validate() const {
    if (levels < 1) throw std::invalid_argument("deformable registration needs at least one level");
    if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
    if (!(sigma_fluid >= 0.0) || !(sigma_diffusion >= 0.0)) throw std::invalid_argument("smoothing sigmas must be >= 0");
    if (!(max_step_voxels > 0.0)) throw std::invalid_argument("max step must be > 0");
    if (!(convergence_voxels >= 0.0)) throw std::invalid_argument("convergence threshold must be >= 0");
    if (max_halvings < 0) throw std::invalid_argument("max halvings must be >= 0");
}

namespace {

template <int D>
using Components = std::array<std::vector<double>, D>;

template <int D>
struct Target {
    Image<D> image;
    std::vector<std::uint8_t> support;
    double weight;
};

template <int D>
std::array<int, D> node_of(const Geometry<D>& g, std::size_t i) {
    std::array<int, D> n{};
    for (int d = 0; d < D; ++d) {
        n[d] = static_cast<int>(i % static_cast<std::size_t>(g.size[d]));
        i /= static_cast<std::size_t>(g.size[d]);
    }
    return n;
}

// W(y) = moving(y + u(y)), border values extended past the grid.
template <int D>
Image<D> warp_by(const Image<D>& moving, const Components<D>& u) {
    const auto& g = moving.geometry();
    std::vector<double> out(g.count(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto n = node_of(g, i);
        ContinuousIndex<D> ci{};
        for (int d = 0; d < D; ++d) ci[d] = n[d] + u[d][i] / g.spacing[d];
        out[i] = sample_linear_clamped<D>(moving.values(), g, ci);
    }
    return Image<D>(g, std::move(out));
}

template <int D>
Components<D> gradient(const Image<D>& w) {
    const auto& g = w.geometry();
    const auto v = w.values();
    Components<D> grad;
    for (auto& c : grad) c.assign(g.count(), 0.0);
    std::size_t stride = 1;
    for (int d = 0; d < D; ++d) {
        const int n = g.size[d];
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (n == 1) continue;
            const int k = static_cast<int>((i / stride) % static_cast<std::size_t>(n));
            const std::size_t lo = k > 0 ? i - stride : i;
            const std::size_t hi = k < n - 1 ? i + stride : i;
            const double h = static_cast<double>((k < n - 1) + (k > 0)) * g.spacing[d];
            grad[d][i] = (v[hi] - v[lo]) / h;
        }
        stride *= static_cast<std::size_t>(n);
    }
    return grad;
}

template <int D>
double blend_energy(const Image<D>& w, const std::vector<Target<D>>& targets) {
    double acc = 0.0;
    std::size_t count = 0;
    const auto wv = w.values();
    for (std::size_t i = 0; i < wv.size(); ++i) {
        double ws = 0.0, b = 0.0;
        for (const auto& t : targets) {
            if (!t.support[i]) continue;
            ws += t.weight;
            b += t.weight * t.image.values()[i];
        }
        if (ws <= 0.0) continue;
        const double r = b / ws - wv[i];
        acc += r * r;
        ++count;
    }
    return count ? acc / static_cast<double>(count) : 0.0;
}

template <int D>
Components<D> demons_update(const Image<D>& w, const std::vector<Target<D>>& targets, double kappa) {
    const auto grad = gradient(w);
    const auto wv = w.values();
    Components<D> v;
    for (auto& c : v) c.assign(wv.size(), 0.0);
    for (std::size_t i = 0; i < wv.size(); ++i) {
        double g2 = 0.0;
        for (int d = 0; d < D; ++d) g2 += grad[d][i] * grad[d][i];
        double ws = 0.0;
        std::array<double, D> f{};
        for (const auto& t : targets) {
            if (!t.support[i]) continue;
            ws += t.weight;
            const double diff = t.image.values()[i] - wv[i];
            const double denom = g2 + kappa * diff * diff;
            if (denom <= 1e-12) continue;
            for (int d = 0; d < D; ++d) f[d] += t.weight * diff * grad[d][i] / denom;
        }
        if (ws <= 0.0) continue;
        for (int d = 0; d < D; ++d) v[d][i] = f[d] / ws;
    }
    return v;
}

template <int D>
void smooth(Components<D>& c, const Geometry<D>& g, double sigma) {
    if (sigma <= 0.0) return;
    std::array<double, D> s{};
    s.fill(sigma);
    for (auto& comp : c) gaussian_smooth_values<D>(comp, g, s);
}

// u_new(y) = step * v(y) + u(y + step * v(y))
template <int D>
Components<D> compose_update(const Components<D>& u, const Components<D>& v, double step, const Geometry<D>& g) {
    Components<D> out;
    for (auto& c : out) c.resize(g.count());
    for (std::size_t i = 0; i < g.count(); ++i) {
        const auto n = node_of(g, i);
        ContinuousIndex<D> ci{};
        for (int d = 0; d < D; ++d) ci[d] = n[d] + step * v[d][i] / g.spacing[d];
        for (int d = 0; d < D; ++d) out[d][i] = step * v[d][i] + sample_linear_clamped<D>(u[d], g, ci);
    }
    return out;
}

template <int D>
Components<D> upsample(const Components<D>& coarse, const Geometry<D>& cg, const Geometry<D>& fg) {
    Components<D> out;
    for (auto& c : out) c.resize(fg.count());
    for (std::size_t i = 0; i < fg.count(); ++i) {
        const auto n = node_of(fg, i);
        ContinuousIndex<D> ci{};
        for (int d = 0; d < D; ++d) ci[d] = n[d] * fg.spacing[d] / cg.spacing[d];
        for (int d = 0; d < D; ++d) out[d][i] = sample_linear_clamped<D>(coarse[d], cg, ci);
    }
    return out;
}

template <int D>
std::vector<std::uint8_t> decimate_support(const std::vector<std::uint8_t>& s, const Geometry<D>& fine) {
    const Geometry<D> coarse = decimated(fine);
    std::vector<std::uint8_t> out(coarse.count());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto n = node_of(coarse, i);
        std::size_t j = 0, stride = 1;
        for (int d = 0; d < D; ++d) {
            j += static_cast<std::size_t>(2 * n[d]) * stride;
            stride *= static_cast<std::size_t>(fine.size[d]);
        }
        out[i] = s[j];
    }
    return out;
}

// Mean step length in voxels over the nodes the update moves at all.
template <int D>
double mean_voxel_magnitude(const Components<D>& v, const Geometry<D>& g, double step) {
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < g.count(); ++i) {
        double m2 = 0.0;
        for (int d = 0; d < D; ++d) {
            const double x = step * v[d][i] / g.spacing[d];
            m2 += x * x;
        }
        if (m2 <= 1e-12 * step * step) continue;
        acc += std::sqrt(m2);
        ++count;
    }
    return count ? acc / static_cast<double>(count) : 0.0;
}

template <int D>
DeformableRegResult run_demons(const Image<D>& moving, const std::vector<Target<D>>& targets,
                               const DeformableRegParams& params) {
    params.validate();
    const auto moving_levels = pyramid(moving, params.levels);
    // targets_by_level[l][m]
    std::vector<std::vector<Target<D>>> target_levels(params.levels);
    for (const auto& t : targets) {
        const auto images = pyramid(t.image, params.levels);
        std::vector<std::uint8_t> support = t.support;
        for (int l = 0; l < params.levels; ++l) {
            if (l > 0) support = decimate_support<D>(support, images[l - 1].geometry());
            target_levels[l].push_back({images[l], support, t.weight});
        }
    }

    DeformableRegResult result;
    result.converged = params.iterations == 0;
    Components<D> u;
    Geometry<D> ug = moving_levels.back().geometry();
    for (auto& c : u) c.assign(ug.count(), 0.0);

    for (int level = params.levels - 1; level >= 0; --level) {
        const Image<D>& m = moving_levels[level];
        const Geometry<D>& g = m.geometry();
        const auto& tl = target_levels[level];
        if (g != ug) {
            u = upsample<D>(u, ug, g);
            ug = g;
        }
        double mean_s2 = 0.0;
        for (int d = 0; d < D; ++d) mean_s2 += g.spacing[d] * g.spacing[d] / D;
        const double kappa = 1.0 / mean_s2;

        Image<D> w = warp_by<D>(m, u);
        double energy = blend_energy(w, tl);
        result.energy.push_back(energy);
        result.energy_level.push_back(level);
        result.converged = params.iterations == 0;
        for (int it = 0; it < params.iterations; ++it) {
            Components<D> v = demons_update(w, tl, kappa);
            for (std::size_t i = 0; i < g.count(); ++i) {
                double m2 = 0.0;
                for (int d = 0; d < D; ++d) m2 += (v[d][i] / g.spacing[d]) * (v[d][i] / g.spacing[d]);
                const double mag = std::sqrt(m2);
                if (mag > params.max_step_voxels)
                    for (int d = 0; d < D; ++d) v[d][i] *= params.max_step_voxels / mag;
            }
            smooth<D>(v, g, params.sigma_fluid);

            double step = 1.0;
            bool accepted = false;
            Components<D> trial;
            Image<D> trial_w;
            double trial_energy = energy;
            for (int h = 0; h <= params.max_halvings; ++h, step *= 0.5) {
                trial = compose_update<D>(u, v, step, g);
                smooth<D>(trial, g, params.sigma_diffusion);
                if (jacobian_min_det(DisplacementField::from_components<D>(g, trial)) <= 0.0) {
                    if (h == params.max_halvings) throw std::runtime_error("diffeomorphism violated");
                    continue;
                }
                trial_w = warp_by<D>(m, trial);
                trial_energy = blend_energy(trial_w, tl);
                if (trial_energy <= energy) {
                    accepted = true;
                    break;
                }
            }
            if (!accepted) break;
            const double mean_step = mean_voxel_magnitude<D>(v, g, step);
            u = std::move(trial);
            w = std::move(trial_w);
            energy = trial_energy;
            result.energy.push_back(energy);
            result.energy_level.push_back(level);
            ++result.iterations;
            if (mean_step < params.convergence_voxels) {
                result.converged = true;
                break;
            }
        }
    }
    result.field = DisplacementField::from_components<D>(ug, std::move(u));
    return result;
}

template <int D>
Target<D> pull_back(const Image<D>& target, const TransformChain& init, const Geometry<D>& grid, double weight) {
    auto r = warp_with_support<D>(target, invert(init), grid);
    return {std::move(r.image), std::move(r.support), weight};
}

template <int D>
void require_nonconstant(const Image<D>& image) {
    const auto v = image.values();
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    if (*lo == *hi) throw std::invalid_argument("deformable registration needs non-constant images");
}

}  // namespace

template <int D>
DeformableRegResult register_deformable(const Image<D>& moving, const Image<D>& fixed, const DeformableRegParams& params,
                                        const TransformChain& init) {
    if (init.dim() != D) throw std::invalid_argument("initial chain dimension does not match the images");
    require_nonconstant(moving);
    require_nonconstant(fixed);
    std::vector<Target<D>> targets{pull_back<D>(fixed, init, moving.geometry(), 1.0)};
    return run_demons<D>(moving, targets, params);
}

DeformableRegResult register_deformable_multiterm(const Image2D& moving_section, const TransformChain& tk,
                                                  const WeightedTargets<2>& targets, const DeformableRegParams& params) {
    if (tk.dim() != 2) throw std::invalid_argument("Tk must be a 2D chain");
    if (targets.empty()) throw std::invalid_argument("multi-term objective needs at least one target");
    require_nonconstant(moving_section);
    std::vector<Target<2>> pulled;
    for (const auto& t : targets) {
        if (t.weight < 0.0 || !std::isfinite(t.weight)) throw std::invalid_argument("term weights must be >= 0");
        if (t.weight == 0.0) continue;
        pulled.push_back(pull_back<2>(t.image, tk, moving_section.geometry(), t.weight));
    }
    if (pulled.empty()) throw std::invalid_argument("all term weights are zero");
    return run_demons<2>(moving_section, pulled, params);
}

template DeformableRegResult register_deformable<2>(const Image<2>&, const Image<2>&, const DeformableRegParams&,
                                                    const TransformChain&);
template DeformableRegResult register_deformable<3>(const Image<3>&, const Image<3>&, const DeformableRegParams&,
                                                    const TransformChain&);

}  // namespace histostack
