#pragma once

#include <cstdint>
#include <vector>

#include "histostack/image.hpp"
#include "histostack/landmarks.hpp"
#include "histostack/transform.hpp"

namespace histostack {

struct PhantomSpec {
    std::uint64_t seed = 1;
    std::array<int, 3> dims{128, 128, 60};
    std::array<double, 3> spacing_um{10.0, 10.0, 50.0};
    int structures = 24;  // Gaussian blobs inside the brain

    // Backlit perturbation per slice (pixels, degrees).
    double max_translation_px = 15.0;
    double max_rotation_deg = 10.0;
    double max_shear = 0.0;
    double warp_amplitude_px = 0.0;
    double warp_period_px = 32.0;

    // Extra ISH perturbation on top of the backlit one.
    double ish_max_translation_px = 4.0;
    double ish_max_rotation_deg = 3.0;
    double ish_warp_amplitude_px = 0.0;

    // ISH intensity: jitter * (1 - tissue)^gamma, clipped to [0.05, 0.75].
    double ish_gamma = 1.5;
    double ish_contrast_jitter = 0.25;
    int expression_blobs = 4;

    int annotators = 3;
    double annotator_jitter_um = 30.0;

    void validate() const;
};

struct PhantomVolume {
    Image3D volume;
    Image3D support;      // soft tissue mask in [0,1]
    Image3D inner;        // tissue intensity before the support fall-off
    Mask<3> expression;
    Image3D expression_level;  // 0.85..1 inside expression, 0 elsewhere
};

PhantomVolume phantom_volume(const PhantomSpec& spec);

struct Phantom {
    PhantomVolume truth_volume;
    std::vector<Image2D> blockface;  // unperturbed slices
    std::vector<Image2D> backlit;
    std::vector<Image2D> ish;
    std::vector<Mask<2>> ish_masks;  // expression masks in ISH section space
    double slice_thickness_um = 0.0;

    // warp(backlit[j], backlit_truth[j]) ~ blockface[j]; same for ISH against the
    // intensity-mapped unperturbed slice.
    std::vector<TransformChain> backlit_truth;
    std::vector<TransformChain> ish_truth;
    LandmarkSet landmarks;                 // volume space
    std::vector<LandmarkSet> annotations;  // jittered copies, one per annotator
};

Phantom generate_phantom(const PhantomSpec& spec);

// ISH intensity mapping of an unperturbed slice.
Image2D ish_intensity(const Image2D& inner, const Image2D& support, const Image2D& expression_level, double jitter,
                      double gamma);

// Sinusoidal displacement u_x = A sin(2 pi y / P + phx), u_y = A sin(2 pi x / P + phy), in pixels.
DisplacementField sinusoidal_field(const Geometry<2>& grid, double amplitude_px, double period_px, double phase_x,
                                   double phase_y);

}  // namespace histostack
