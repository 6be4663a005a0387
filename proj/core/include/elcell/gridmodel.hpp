#pragma once

#include <map>
#include <utility>
#include <vector>

#include "elcell/curves.hpp"
#include "elcell/image.hpp"
#include "elcell/lens.hpp"

namespace elcell::gridmodel {

using curves::Axis;
using curves::ParabolicCurve;
using curves::Point2;
using lens::LensParams;

/// Mutually consistent curve grid: every horizontal curve intersects every
/// vertical curve exactly once inside the (10% expanded) image rectangle and
/// same-orientation curves do not intersect inside the image.
struct CurveGrid {
  std::vector<ParabolicCurve> horizontal;  // ordered by a0
  std::vector<ParabolicCurve> vertical;
  std::map<std::pair<int, int>, Point2> intersections;  // (h index, v index)

  void rebuild_intersections(int width, int height);
};

/// Inferred module structure. segment_orientation is the direction the
/// busbar lines run; segment_fractions are the relative segment sizes along
/// the subdivided dimension and are palindromic.
struct ModuleTopology {
  int rows = 0;
  int cols = 0;
  int segments_per_cell = 1;
  Axis segment_orientation = Axis::Horizontal;
  std::vector<double> segment_fractions = {1.0};
  double cell_aspect = 1.0;  // width : height
};

/// Similarity transform y -> scale * R(rotation) * y + translation.
struct RigidTransform {
  double rotation = 0.0;
  Point2 translation = Point2::Zero();
  double scale = 1.0;

  Point2 apply(const Point2& p) const {
    const double c = std::cos(rotation), s = std::sin(rotation);
    return {scale * (c * p.x() - s * p.y()) + translation.x(),
            scale * (s * p.x() + c * p.y()) + translation.y()};
  }
};

/// Greedily removes curves violating the grid rules (most violations first)
/// until none remain.
std::pair<std::vector<ParabolicCurve>, std::vector<ParabolicCurve>> filter_grid_consistency(
    std::vector<ParabolicCurve> h_curves, std::vector<ParabolicCurve> v_curves, int width,
    int height);

/// LO-RANSAC over minimal 2+2 curve grids. Inliers intersect the model
/// curves exactly once (perpendicular), never (parallel), and their
/// undistorted support points are straight to within mse <= 1 px^2. The lens
/// parameters are re-refined on each improved inlier set.
CurveGrid lo_ransac_grid(const std::vector<ParabolicCurve>& h_curves,
                         const std::vector<ParabolicCurve>& v_curves, const LensParams& params,
                         int width, int height, uint64_t seed);

/// Drops outer grid rows/columns whose enclosed strip is darker than the
/// global Otsu threshold of the contrast-normalized image.
CurveGrid filter_halo_curves(const CurveGrid& grid, const GrayImage& img);

/// Infers rows, columns and per-cell segmentation by clustering consecutive
/// curve spacings per dimension (DBSCAN, eps = 0.15 * median spacing).
ModuleTopology estimate_topology(const CurveGrid& grid, double cell_aspect);

/// All cell-boundary and busbar line intersections of the canonical planar
/// grid at cell pitch cell_px, row-major.
std::vector<Point2> synthesize_grid(const ModuleTopology& topology, double cell_px);

struct Registration {
  RigidTransform transform;  // synthetic -> observed
  /// correspondences[m] = index into the observed set for synthetic point m
  /// (-1 when unmatched).
  std::vector<int> correspondences;
  bool converged = true;
};

/// Rigid coherent point drift of the synthetic grid onto the observed
/// intersections (EM over a Gaussian mixture with a uniform outlier class).
/// When observed outnumbers synthetic, a seeded subsample of the observed
/// set is used.
Registration register_grids(const std::vector<Point2>& synthetic,
                            const std::vector<Point2>& observed, uint64_t seed);

/// One-dimensional DBSCAN labels (-1 = noise), eps-neighborhoods on values.
std::vector<int> dbscan_1d(const std::vector<double>& values, double eps, int min_pts);

}  // namespace elcell::gridmodel
