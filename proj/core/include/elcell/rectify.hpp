#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "elcell/gridmodel.hpp"
#include "elcell/image.hpp"
#include "elcell/lens.hpp"

namespace elcell::rectify {

using curves::Point2;
using gridmodel::ModuleTopology;
using lens::LensParams;

struct CellImage {
  int row = 0;
  int col = 0;
  GrayImage image;  // cell_px wide, cell_px / aspect tall
};

struct SegmentationResult {
  LensParams params;
  Eigen::Matrix3d homography = Eigen::Matrix3d::Identity();  // undistorted -> planar
  ModuleTopology topology;
  std::vector<CellImage> cells;
  GrayImage module_mask;                     // original frame, soft
  std::vector<MaskRegion> cell_masks;        // original frame, soft, cropped per cell
  GrayImage canonical_mask;                  // the estimated per-cell mask
  std::vector<std::pair<int, int>> missing;  // (row, col) of undetected cells
  int frame_width = 0;
  int frame_height = 0;
};

/// Resamples the image free of radial distortion (inverse mapping through
/// the forward distortion, bilinear, out-of-range -> 0).
GrayImage undistort_image(const GrayImage& img, const LensParams& params);

/// Exact 4-point homography by the normalized direct linear transform;
/// H maps src onto dst with H(2,2) = 1.
Eigen::Matrix3d homography_from_corners(const std::array<Point2, 4>& src,
                                        const std::array<Point2, 4>& dst);

/// Affine moving-least-squares transform interpolating control -> deformed
/// with weights 1/|p_i - v|^(2 alpha).
class MlsTransform {
 public:
  MlsTransform(std::vector<Point2> control, std::vector<Point2> deformed, double alpha);
  Point2 apply(const Point2& v) const;

 private:
  std::vector<Point2> control_;
  std::vector<Point2> deformed_;
  double alpha_;
};

/// Inverse-mapping image warp through the affine MLS transform.
GrayImage mls_affine_warp(const GrayImage& img, const std::vector<Point2>& control,
                          const std::vector<Point2>& deformed, double alpha);

/// Crops each cell of the rectified module and resamples it to a
/// cell_px-wide canonical image; row-major order.
std::vector<CellImage> extract_cells(const GrayImage& rectified, const ModuleTopology& topology,
                                     int cell_px);

/// Estimates the shared solar cell mask from the mean cell: adaptive
/// threshold, morphological cleanup, then the profile/convex-hull
/// augmentation combined through the xor corrections. Soft edges.
GrayImage estimate_cell_mask(const std::vector<CellImage>& cells, int window);

/// Renders the canonical mask of every cell back into the original image
/// frame (homography inverse followed by forward distortion) and bundles the
/// full result.
SegmentationResult assemble_result(const LensParams& params, const Eigen::Matrix3d& homography,
                                   const ModuleTopology& topology, std::vector<CellImage> cells,
                                   const GrayImage& canonical_mask, int width, int height,
                                   const std::vector<std::pair<int, int>>& missing = {});

}  // namespace elcell::rectify
