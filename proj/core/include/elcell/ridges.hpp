#pragma once

#include <vector>

#include "elcell/image.hpp"

namespace elcell::ridges {

struct ScaleLevel {
  int octave = 0;
  int sublevel = 0;
  double scale = 0.0;       // absolute blur scale in input pixels
  double downsample = 1.0;  // grid stride of this octave (gamma^octave)
  GrayImage image;          // stored at the octave's downsampled resolution
};

struct ScaleSpace {
  std::vector<ScaleLevel> levels;  // scale strictly increasing
};

/// Per-pixel ridge evidence. orientation is the tangent angle of the most
/// likely line, folded into [0, pi), defined where response > 0.
struct RidgeMap {
  Field response;
  Field orientation;
};

/// Tensor-voting output: stickness = difference of the tensor eigenvalues,
/// orientation from the leading eigenvector.
struct StickField {
  Field stickness;
  Field orientation;
};

/// Gaussian pyramid with sublevels: level (o, l) is blurred to
/// gamma^(o + l/P) * sigma and stored downsampled by gamma^o. Octaves whose
/// image would fall under 16 px in either dimension are dropped.
ScaleSpace build_scale_space(const GrayImage& img, int octaves, int sublevels, double sigma,
                             double gamma);

/// Hessian ridgeness of one level: 7x7 Sobel derivatives of the Sobel
/// gradient, eigen-decomposition, response = max(lambda1, 0) * s^2 with
/// s the blur scale relative to the level grid.
RidgeMap hessian_ridge(const GrayImage& level, double scale_rel);

/// Per full-resolution pixel, the max response across all levels (bilinear
/// upsampling); orientation taken from the argmax level.
RidgeMap multiscale_ridgeness(const ScaleSpace& ss);

/// One stick tensor voting pass. proximity controls the kernel reach
/// (truncated at 3*proximity), specificity the angular falloff cos^(2v).
/// Computed with the steerable/Fourier decomposition.
StickField tensor_vote(const RidgeMap& rm, double proximity, int specificity);

/// Reference direct-summation implementation (test oracle / small inputs).
StickField tensor_vote_direct(const RidgeMap& rm, double proximity, int specificity);

/// Two voting passes; the second consumes the first pass's stickness and
/// orientation. No thinning happens in between.
StickField iterate_tensor_voting(const RidgeMap& rm, double proximity1, double proximity2,
                                 int specificity);

/// Otsu threshold on normalized stickness, then thinning to an 8-connected
/// unit-width skeleton.
BinaryMask nms_skeletonize(const StickField& sf);

/// Morphological thinning to a unit-width 8-connected skeleton.
BinaryMask skeletonize(const BinaryMask& mask);

}  // namespace elcell::ridges
