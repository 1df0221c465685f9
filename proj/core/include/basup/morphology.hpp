#pragma once

#include <cstddef>

#include "basup/image.hpp"

namespace basup {

enum class Connectivity { four = 4, eight = 8 };

/// 3x3 square structuring element. Out-of-image neighbours are ignored, so
/// erosion does not eat objects touching the border.
Mask dilate3(const Mask& mask);
Mask erode3(const Mask& mask);
/// Dilation followed by erosion, `iterations` times each.
Mask close3(const Mask& mask, int iterations = 1);

/// Labels foreground components 1..count in raster-scan order of first pixel.
LabelMap connected_components(const Mask& mask, Connectivity conn, int* count = nullptr);

/// Drops components with fewer than `min_size` pixels.
Mask remove_small_components(const Mask& mask, int min_size, Connectivity conn = Connectivity::eight);

/// Sets background pixels not 4-connected to the image border.
Mask fill_holes(const Mask& mask);

}  // namespace basup
