#pragma once

#include <array>
#include <string>
#include <vector>

#include "histostack/affine_registration.hpp"
#include "histostack/deformable_registration.hpp"
#include "histostack/image.hpp"
#include "histostack/transform.hpp"

namespace histostack {

enum class PhaseKind { reference_affine, affine, deformable };
enum class TkPolicy { previous, frozen };

std::string to_string(PhaseKind kind);
PhaseKind parse_phase_kind(const std::string& s);

struct Phase {
    int first_iteration = 0;
    int last_iteration = 0;
    PhaseKind kind = PhaseKind::affine;
    std::array<double, 3> weights{1.0, 0.5, 0.5};  // a: smoothed same slice, b: same slice, c: each neighbour
    TkPolicy tk = TkPolicy::previous;
    int frozen_at = 0;  // used when tk == frozen
};

struct IterationSchedule {
    std::vector<Phase> phases;

    // Iteration 0 against the reference; 1-2 affine (1, 0.5, 0.5) on the previous
    // chain; 3-6 deformable (0, 1, 0.25) on the chain frozen at iteration 2.
    static IterationSchedule standard();

    // Ranges contiguous from 0, iteration 0 alone is reference_affine, weights >= 0
    // and not all zero, frozen iterations precede their phase.
    void validate() const;
    int iterations() const;
    const Phase& phase_of(int iteration) const;
};

struct ReconParams {
    IterationSchedule schedule = IterationSchedule::standard();
    double sigma = 3.0;  // smoothing of the previous stack, voxels, isotropic
    AffineRegParams affine;
    DeformableRegParams deformable;
    int ish_deformable_iterations = 2;
    std::array<double, 3> ish_weights{0.0, 1.0, 0.25};
    int threads = 1;
};

struct IterationLogEntry {
    int iteration = 0;
    int slice = 0;  // section index
    std::string phase;
    double objective_before = 0.0;
    double objective_after = 0.0;
};

std::string to_json_line(const IterationLogEntry& e);

struct ReconstructionState {
    int iteration = -1;  // last completed iteration
    std::vector<int> indices;
    std::vector<TransformChain> chains;                 // current per-slice chain
    std::vector<std::vector<TransformChain>> history;   // history[i][j]: chain after iteration i
    Image3D stack;
    Image3D smoothed;
    std::vector<std::vector<double>> objective_history; // [slice][iteration]: objective after
    std::vector<IterationLogEntry> log;
    std::vector<double> min_jacobian;                   // per slice, over all deformable fields
    std::vector<std::string> warnings;
    std::vector<int> flagged;                           // section indices with a fallback
};

// Sections in one modality, ordered by index. All images share one grid.
struct SectionStack {
    std::vector<int> indices;
    std::vector<Image2D> images;
    double slice_thickness_um = 1.0;

    void validate() const;
};

// Multi-term targets for slice j of a stack: smoothed j (a), unsmoothed j (b), j-1 and
// j+1 (c each). A missing neighbour is dropped and the remaining weights scaled so
// their sum is unchanged.
WeightedTargets<2> slice_targets(const Image3D& stack, const Image3D& smoothed, int j, const std::array<double, 3>& weights);

// Each slice warped onto out_grid, stacked along z with the slice thickness.
Image3D render_stack(const std::vector<Image2D>& sections, const std::vector<TransformChain>& chains,
                     const Geometry<2>& out_grid, double slice_thickness_um, int threads = 1);

ReconstructionState reconstruct_backlit(const SectionStack& backlit, const SectionStack& blockface,
                                        const ReconParams& params);

struct IshReconstruction {
    Image3D stack;
    std::vector<TransformChain> chains;
    std::vector<Affine> stage1;  // ISH -> raw backlit affines
    std::vector<IterationLogEntry> log;
    std::vector<double> min_jacobian;
    std::vector<std::string> warnings;
    std::vector<int> flagged;
};

// backlit holds the raw sections; recon the finished backlit state.
IshReconstruction reconstruct_ish(const SectionStack& ish, const SectionStack& backlit, const ReconstructionState& recon,
                                  const Geometry<2>& out_grid, const ReconParams& params);

struct TemplateMapping {
    TransformChain chain{3};  // [affine, field], moving = reconstruction
    double nmi_affine = 0.0;
    double nmi_full = 0.0;
    bool deformable_kept = true;  // false when the field did not raise NMI and was zeroed
    double min_jacobian = 1.0;
};

// Template is the fixed image; warp(recon, chain) lands on the template grid.
TemplateMapping map_to_template(const Image3D& recon, const Image3D& templ, const AffineRegParams& affine,
                                const DeformableRegParams& deformable);

}  // namespace histostack
