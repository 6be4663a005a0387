#pragma once

#include <Eigen/Core>
#include <vector>

#include "elcell/image.hpp"
#include "elcell/ridges.hpp"

namespace elcell::curves {

using Point2 = Eigen::Vector2d;

/// Ordered run of subpixel centerline points; consecutive points are
/// 8-neighbors before refinement.
using PointChain = std::vector<Point2>;

enum class Axis { Horizontal, Vertical };

/// Second-degree polynomial curve with its supporting points. A Horizontal
/// curve evaluates y = f(x); a Vertical curve evaluates x = f(y).
struct ParabolicCurve {
  Axis axis = Axis::Horizontal;
  double a2 = 0, a1 = 0, a0 = 0;
  std::vector<Point2> support;

  double value(double t) const { return (a2 * t + a1) * t + a0; }
  /// Point on the curve at parameter t (t is x for Horizontal, y for
  /// Vertical).
  Point2 point_at(double t) const {
    return axis == Axis::Horizontal ? Point2(t, value(t)) : Point2(value(t), t);
  }
  double min_param() const;
  double max_param() const;
};

/// Partitions skeleton pixels into maximal 8-connected chains. Pixels with
/// three or more neighbors are junctions and terminate chains (they belong to
/// no chain); isolated pixels are dropped.
std::vector<PointChain> link_edges(const BinaryMask& skeleton);

/// Moves each chain point to the mean of a Gaussian fitted to the stickness
/// profile perpendicular to the local orientation. Sampling window is
/// `window` pixels with `samples_per_px` bilinear samples per pixel; the
/// correction is clamped to window/2. Points with flat or degenerate
/// profiles keep their position (or fall back to the discrete profile
/// maximum when the fit collapses).
PointChain subpixel_refine(const PointChain& chain, const ridges::StickField& sf, int window,
                           int samples_per_px);

/// Douglas-Peucker simplification at tolerance eps, then a split at every
/// simplified vertex whose turn angle exceeds split_angle_deg. The original
/// points are partitioned across the output chains.
std::vector<PointChain> split_chain(const PointChain& chain, double eps, double split_angle_deg);

/// Joins chain pairs whose extensions intersect at a tangent angle below
/// merge_angle_deg, unless one side is too short relative to the other
/// (|AB|^2 < |CD|) or both are short relative to the gap
/// (|AB|^2 < |BC| and |CD|^2 < |BC|). Nearest gaps merge first; repeats to a
/// fixpoint.
std::vector<PointChain> merge_segments(const std::vector<PointChain>& chains,
                                       double merge_angle_deg);

/// RANSAC parabola fit: 3-point minimal samples, inliers by squared residual
/// <= rho, best model by inlier count then MSE, least-squares refit on the
/// inliers, early exit at 99% inliers. Stored support is the set consistent
/// with the refit coefficients.
ParabolicCurve fit_parabola(const PointChain& chain, Axis axis, double rho, int max_iter,
                            uint64_t seed);

/// Chain axis by dominant endpoint displacement; ties go Horizontal.
Axis classify_axis(const PointChain& chain);

/// Plain least-squares parabola through all points (degenerate-RANSAC
/// fallback and refit step).
ParabolicCurve fit_parabola_least_squares(const std::vector<Point2>& pts, Axis axis);

}  // namespace elcell::curves
