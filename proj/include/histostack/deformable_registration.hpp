#pragma once

#include <vector>

#include "histostack/affine_registration.hpp"
#include "histostack/image.hpp"
#include "histostack/transform.hpp"

namespace histostack {

// Diffusion-regularised demons with a Jacobian guard.
struct DeformableRegParams {
    int levels = 3;
    int iterations = 50;             // per level
    double sigma_fluid = 2.0;        // update smoothing, voxels
    double sigma_diffusion = 1.0;    // total field smoothing, voxels
    double max_step_voxels = 0.5;    // cap on the update magnitude
    double convergence_voxels = 0.01;
    int max_halvings = 5;

    void validate() const;
};

struct DeformableRegResult {
    DisplacementField field;      // on the moving grid
    // Mean squares against the target blend at the start of each level and
    // after every accepted iteration; energy_level gives the pyramid level.
    std::vector<double> energy;
    std::vector<int> energy_level;
    int iterations = 0;
    bool converged = false;
};

// Finds u on the moving grid so that warp(moving, compose(u, init)) matches
// fixed. fixed is pulled back through invert(init) before the demons loop.
template <int D>
DeformableRegResult register_deformable(const Image<D>& moving, const Image<D>& fixed, const DeformableRegParams& params,
                                        const TransformChain& init);

// Forces are computed per target and averaged with the term weights.
DeformableRegResult register_deformable_multiterm(const Image2D& moving_section, const TransformChain& tk,
                                                  const WeightedTargets<2>& targets, const DeformableRegParams& params);

}  // namespace histostack
