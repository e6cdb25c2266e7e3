#pragma once

#include "histostack/image.hpp"

namespace histostack {

struct PreprocessConfig {
    int downscale_factor = 1;     // area averaging over factor x factor blocks
    int median_radius = 1;        // (2r+1)^2 window
    int morphology_radius = 1;    // disk structuring element
    int max_passes = 20;          // despeckle iterations before giving up on a fixed point
};

Image2D downscale_area(const Image2D& image, int factor);

// One pass of a square median filter, edges clamped.
Image2D median_filter(const Image2D& image, int radius);

// Otsu threshold over 256 bins on [0,1]. Returns a value every voxel of a
// constant image lies above, so constant images produce an all-true mask.
double otsu_threshold(const Image2D& image);

SegmentationMask2D binary_erode(const SegmentationMask2D& mask, int radius);
SegmentationMask2D binary_dilate(const SegmentationMask2D& mask, int radius);
SegmentationMask2D binary_open(const SegmentationMask2D& mask, int radius);
SegmentationMask2D binary_close(const SegmentationMask2D& mask, int radius);

// Downscale, then repeat {median filter; zero everything outside the
// opened-then-closed Otsu foreground mask} until the image stops changing.
// The output is a fixed point of the despeckle pass, so re-running with
// factor 1 returns it unchanged.
Image2D preprocess_section(const Image2D& image, const PreprocessConfig& cfg);

}  // namespace histostack
