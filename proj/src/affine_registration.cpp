#include "histostack/affine_registration.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "histostack/metrics.hpp"
#include "histostack/optimizer.hpp"
#include "histostack/warp.hpp"

namespace histostack {

DegreesOfFreedom parse_dof(const std::string& s) {
    if (s == "rigid") return DegreesOfFreedom::rigid;
    if (s == "similarity") return DegreesOfFreedom::similarity;
    if (s == "affine") return DegreesOfFreedom::affine;
    throw std::invalid_argument("unknown degrees of freedom '" + s + "'");
}

std::string to_string(DegreesOfFreedom dof) {
    switch (dof) {
        case DegreesOfFreedom::rigid: return "rigid";
        case DegreesOfFreedom::similarity: return "similarity";
        case DegreesOfFreedom::affine: return "affine";
    }
    return "affine";
}

namespace {

// Layout: rotation[3] | log isotropic scale | log axis scale[3] | shear[3] | translation[3]
constexpr int kRot = 0, kIso = 3, kLogScale = 4, kShear = 7, kTrans = 10, kParams = 13;
using Params = std::array<double, kParams>;

template <int D>
std::vector<int> active_parameters(DegreesOfFreedom dof) {
    std::vector<int> p;
    if constexpr (D == 2) {
        p = {kRot};
        if (dof == DegreesOfFreedom::similarity) p.push_back(kIso);
        if (dof == DegreesOfFreedom::affine) p.insert(p.end(), {kLogScale, kLogScale + 1, kShear});
        p.insert(p.end(), {kTrans, kTrans + 1});
    } else {
        p = {kRot, kRot + 1, kRot + 2};
        if (dof == DegreesOfFreedom::similarity) p.push_back(kIso);
        if (dof == DegreesOfFreedom::affine)
            p.insert(p.end(), {kLogScale, kLogScale + 1, kLogScale + 2, kShear, kShear + 1, kShear + 2});
        p.insert(p.end(), {kTrans, kTrans + 1, kTrans + 2});
    }
    return p;
}

template <int D>
Affine delta_transform(const Params& p, const Point& center) {
    Matrix3 r = identity_matrix();
    Matrix3 sh = identity_matrix();
    Matrix3 s = identity_matrix();
    if constexpr (D == 2) {
        const double c = std::cos(p[kRot]), sn = std::sin(p[kRot]);
        r[0][0] = c;
        r[0][1] = -sn;
        r[1][0] = sn;
        r[1][1] = c;
        sh[0][1] = p[kShear];
        s[0][0] = std::exp(p[kIso] + p[kLogScale]);
        s[1][1] = std::exp(p[kIso] + p[kLogScale + 1]);
        return Affine(2, matmul(matmul(r, sh), s), {p[kTrans], p[kTrans + 1], 0.0}, {center[0], center[1], 0.0});
    } else {
        const double cx = std::cos(p[kRot]), sx = std::sin(p[kRot]);
        const double cy = std::cos(p[kRot + 1]), sy = std::sin(p[kRot + 1]);
        const double cz = std::cos(p[kRot + 2]), sz = std::sin(p[kRot + 2]);
        const Matrix3 rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
        const Matrix3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
        const Matrix3 rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
        r = matmul(rz, matmul(ry, rx));
        sh[0][1] = p[kShear];
        sh[0][2] = p[kShear + 1];
        sh[1][2] = p[kShear + 2];
        for (int i = 0; i < 3; ++i) s[i][i] = std::exp(p[kIso] + p[kLogScale + i]);
        return Affine(3, matmul(matmul(r, sh), s), {p[kTrans], p[kTrans + 1], p[kTrans + 2]}, center);
    }
}

template <int D>
Point grid_center(const Geometry<D>& g) {
    Point c{};
    for (int d = 0; d < D; ++d) c[d] = 0.5 * (g.size[d] - 1) * g.spacing[d];
    return c;
}

// Pyramids of the moving image and of every positively weighted target.
template <int D>
struct Problem {
    std::vector<Image<D>> moving;
    std::vector<std::vector<Image<D>>> targets;  // [term][level]
    std::vector<double> weights;
    TransformChain tk;
    Affine t0;
    Point center;
    int bins = 64;
    double min_overlap = 0.25;
    int evaluations = 0;

    // T = delta(p) o t0, applied after tk.
    Affine transform(const Params& p) const { return multiply(delta_transform<D>(p, center), t0); }

    double cost(int level, const Params& p) {
        ++evaluations;
        TransformChain chain = compose(TransformChain(transform(p)), tk);
        const auto& grid = targets.front()[level].geometry();
        const auto warped = warp_with_support<D>(moving[level], chain, grid);
        std::size_t covered = 0;
        for (auto s : warped.support) covered += s;
        if (static_cast<double>(covered) < min_overlap * static_cast<double>(warped.support.size())) return 0.0;
        double total = 0.0;
        try {
            for (std::size_t m = 0; m < targets.size(); ++m)
                total -= weights[m] * nmi(warped.image.values(), targets[m][level].values(), warped.support, bins);
        } catch (const DegenerateEntropyError&) {
            return 0.0;
        }
        return total;
    }
};

template <int D>
AffineRegResult optimize(Problem<D>& problem, const AffineRegParams& params) {
    const int levels = static_cast<int>(problem.moving.size());
    Params p{};
    const Params start = p;
    AffineRegResult result;
    result.initial_objective = problem.cost(0, start);

    for (int level = levels - 1; level >= 0; --level) {
        const bool coarsest = level == levels - 1;
        const DegreesOfFreedom dof = (coarsest && levels > 1) ? DegreesOfFreedom::rigid : params.dof;
        const auto& grid = problem.targets.front()[level].geometry();

        double mean_spacing = 0.0;
        for (int d = 0; d < D; ++d) mean_spacing += grid.spacing[d] / D;
        const double translation_step =
            params.translation_scale_um > 0.0 ? params.translation_scale_um * std::pow(2.0, level) : 2.0 * mean_spacing;

        if (coarsest && params.grid_search) {
            static constexpr std::array<double, 5> kOffsets{0.0, -0.25, -0.125, 0.125, 0.25};
            Params best = p;
            double best_cost = problem.cost(level, p);
            std::array<int, D> k{};
            const int total = static_cast<int>(std::pow(5, D));
            for (int n = 1; n < total; ++n) {
                int rem = n;
                for (int d = 0; d < D; ++d) {
                    k[d] = rem % 5;
                    rem /= 5;
                }
                Params q = p;
                for (int d = 0; d < D; ++d) q[kTrans + d] += kOffsets[k[d]] * grid.size[d] * grid.spacing[d];
                const double c = problem.cost(level, q);
                if (c < best_cost) {
                    best_cost = c;
                    best = q;
                }
            }
            p = best;
        }

        // Rigid first at every level; the wider model then starts near the rigid optimum.
        std::vector<DegreesOfFreedom> stages{DegreesOfFreedom::rigid};
        if (dof != DegreesOfFreedom::rigid) stages.push_back(dof);
        for (const auto stage : stages) {
            const auto active = active_parameters<D>(stage);
            std::vector<double> scale(active.size());
            for (std::size_t i = 0; i < active.size(); ++i) {
                const int a = active[i];
                if (a >= kTrans) scale[i] = translation_step;
                else if (a >= kShear) scale[i] = params.shear_scale;
                else if (a >= kIso) scale[i] = params.log_scale_scale;
                else scale[i] = params.rotation_scale;
            }
            std::vector<double> x0(active.size());
            for (std::size_t i = 0; i < active.size(); ++i) x0[i] = p[active[i]] / scale[i];
            const Params base = p;
            auto objective = [&](std::span<const double> x) {
                Params q = base;
                for (std::size_t i = 0; i < active.size(); ++i) q[active[i]] = x[i] * scale[i];
                return problem.cost(level, q);
            };
            NelderMeadOptions opts;
            opts.max_iterations = params.max_iterations;
            opts.ftol = params.tolerance;
            opts.xtol = 1e-2;
            const auto nm = nelder_mead(objective, x0, opts);
            for (std::size_t i = 0; i < active.size(); ++i) p[active[i]] = nm.x[i] * scale[i];
            result.converged = result.converged && nm.converged;
        }
    }

    const double final_cost = problem.cost(0, p);
    if (final_cost <= result.initial_objective) {
        result.transform = problem.transform(p);
        result.objective = final_cost;
    } else {
        result.transform = problem.transform(start);
        result.objective = result.initial_objective;
    }
    result.evaluations = problem.evaluations;
    return result;
}

template <int D>
void require_informative(const Image<D>& image, const char* what) {
    JointHistogram h(64);
    for (double v : image.values()) h.add(v, v);
    if (h.entropy_a() <= 0.0) throw DegenerateEntropyError();
    (void)what;
}

}  // namespace

template <int D>
Affine center_of_mass_init(const Image<D>& moving, const Image<D>& fixed) {
    const auto cm = center_of_mass(moving);
    const auto cf = center_of_mass(fixed);
    Point t{};
    for (int d = 0; d < D; ++d) t[d] = cm[d] - cf[d];
    return Affine::translation(D, t);
}

template <int D>
AffineRegResult register_affine(const Image<D>& moving, const Image<D>& fixed, const AffineRegParams& params,
                                const Affine& init) {
    if (init.dim() != D) throw std::invalid_argument("initial transform dimension does not match the images");
    if (std::abs(init.determinant()) < 1e-12) throw std::invalid_argument("initial transform is not invertible");
    require_informative(moving, "moving");
    require_informative(fixed, "fixed");
    Problem<D> problem{pyramid(moving, params.levels),
                       {pyramid(fixed, params.levels)},
                       {1.0},
                       TransformChain(D),
                       init,
                       grid_center(moving.geometry()),
                       params.bins,
                       params.min_overlap};
    return optimize(problem, params);
}

namespace {

void validate_targets(const WeightedTargets<2>& targets) {
    if (targets.empty()) throw std::invalid_argument("multi-term objective needs at least one target");
    bool positive = false;
    for (const auto& t : targets) {
        if (t.weight < 0.0 || !std::isfinite(t.weight)) throw std::invalid_argument("term weights must be >= 0");
        if (t.weight > 0.0) positive = true;
    }
    if (!positive) throw std::invalid_argument("all term weights are zero");
}

const Geometry<2>& target_grid(const WeightedTargets<2>& targets) {
    const Geometry<2>* grid = nullptr;
    for (const auto& t : targets) {
        if (t.weight <= 0.0) continue;
        if (grid && t.image.geometry() != *grid) throw std::invalid_argument("all targets must share the section grid");
        if (!grid) grid = &t.image.geometry();
    }
    return *grid;
}

}  // namespace

double eval_multiterm(const Image2D& moving_section, const Transform& t, const TransformChain& tk,
                      const WeightedTargets<2>& targets, int bins) {
    validate_targets(targets);
    const Geometry<2>& grid = target_grid(targets);
    TransformChain tchain(2);
    tchain.append(t);
    const auto warped = warp_with_support<2>(moving_section, compose(tchain, tk), grid);
    double total = 0.0;
    for (const auto& term : targets) {
        if (term.weight <= 0.0) continue;
        total -= term.weight * nmi(warped.image.values(), term.image.values(), warped.support, bins);
    }
    return total;
}

AffineRegResult register_affine_multiterm(const Image2D& moving_section, const TransformChain& tk,
                                          const WeightedTargets<2>& targets, const AffineRegParams& params) {
    validate_targets(targets);
    if (tk.dim() != 2) throw std::invalid_argument("Tk must be a 2D chain");
    (void)target_grid(targets);
    require_informative(moving_section, "moving");
    Problem<2> problem{pyramid(moving_section, params.levels), {}, {}, tk, Affine::identity(2),
                       grid_center(moving_section.geometry()), params.bins, params.min_overlap};
    for (const auto& term : targets) {
        if (term.weight <= 0.0) continue;
        problem.targets.push_back(pyramid(term.image, params.levels));
        problem.weights.push_back(term.weight);
    }
    return optimize(problem, params);
}

template Affine center_of_mass_init<2>(const Image<2>&, const Image<2>&);
template Affine center_of_mass_init<3>(const Image<3>&, const Image<3>&);
template AffineRegResult register_affine<2>(const Image<2>&, const Image<2>&, const AffineRegParams&, const Affine&);
template AffineRegResult register_affine<3>(const Image<3>&, const Image<3>&, const AffineRegParams&, const Affine&);

}  // namespace histostack
