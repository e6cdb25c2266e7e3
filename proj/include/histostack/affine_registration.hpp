#pragma once

#include <string>
#include <vector>

#include "histostack/image.hpp"
#include "histostack/transform.hpp"

namespace histostack {

enum class DegreesOfFreedom { rigid, similarity, affine };

DegreesOfFreedom parse_dof(const std::string& s);
std::string to_string(DegreesOfFreedom dof);

struct AffineRegParams {
    int levels = 3;
    int max_iterations = 200;          // Nelder-Mead iterations per level
    double tolerance = 1e-5;           // objective spread at convergence
    // Simplex step per parameter. A translation step <= 0 means two voxels of the current level.
    double rotation_scale = 0.05;      // radians
    double log_scale_scale = 0.02;
    double shear_scale = 0.02;
    double translation_scale_um = 0.0;
    DegreesOfFreedom dof = DegreesOfFreedom::affine;  // used at every level but the coarsest, which is rigid
    int bins = 64;
    bool grid_search = true;           // translation grid at the coarsest level
    double min_overlap = 0.25;         // fraction of target voxels that must receive moving support
};

template <int D>
struct WeightedTarget {
    Image<D> image;
    double weight = 0.0;
};

// One target per term of the objective; all must share one grid.
template <int D>
using WeightedTargets = std::vector<WeightedTarget<D>>;

struct AffineRegResult {
    Affine transform = Affine::identity(2);
    double objective = 0.0;          // minimisation form at the finest level
    double initial_objective = 0.0;  // same, at the initial transform
    bool converged = true;
    int evaluations = 0;
};

// Translation that aligns centres of mass, mapping fixed space onto moving space.
template <int D>
Affine center_of_mass_init(const Image<D>& moving, const Image<D>& fixed);

// Maximises nmi(warp(moving, T), fixed). Returns T with objective = -nmi.
template <int D>
AffineRegResult register_affine(const Image<D>& moving, const Image<D>& fixed, const AffineRegParams& params,
                                const Affine& init);

// sum_m weight_m * -nmi(warp(moving, T o Tk), target_m), where T acts after Tk.
// Zero-weight terms are never sampled.
double eval_multiterm(const Image2D& moving_section, const Transform& t, const TransformChain& tk,
                      const WeightedTargets<2>& targets, int bins = 64);

// Minimises eval_multiterm over affine T, starting from identity.
AffineRegResult register_affine_multiterm(const Image2D& moving_section, const TransformChain& tk,
                                          const WeightedTargets<2>& targets, const AffineRegParams& params);

}  // namespace histostack
