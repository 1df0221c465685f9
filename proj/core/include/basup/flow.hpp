#pragma once

#include "basup/image.hpp"

namespace basup::flow {

/// Bilinear read of a single-channel plane at continuous coordinates.
/// Returns false (and leaves `out` untouched) when (x, y) is outside
/// [0, w-1] x [0, h-1].
template <typename T>
bool sample_bilinear(const T* plane, int w, int h, double x, double y, T& out);

/// Adjoint of sample_bilinear: adds `g` into the four neighbours of (x, y).
template <typename T>
void scatter_bilinear(T* plane, int w, int h, double x, double y, T g);

/// Area-averages a flow field onto a (width x height) grid and rescales the
/// vectors to the new pixel units.
FlowField resample_flow(const FlowField& flow, int width, int height);

/// Moves every labeled pixel p to round(p + flow(p)); later writes win and
/// targets outside the image are dropped.
LabelMap forward_warp_labels(const LabelMap& labels, const FlowField& flow);

struct BlockMatchParams {
  int block = 8;
  /// Search radius at the coarsest level and refinement radius above it.
  int coarse_radius = 4;
  int refine_radius = 2;
  /// Coarsest level is the last one whose smaller side is at least this.
  int min_level_size = 16;
};

/// Classical pyramidal block matching on luminance: exhaustive SAD search at
/// the coarsest level, then doubled and refined at each finer level. Returns
/// a dense field holding each block's vector.
FlowField estimate_flow(const Image& from, const Image& to, const BlockMatchParams& params = {});

}  // namespace basup::flow
