#pragma once

#include <Eigen/Core>
#include <vector>

#include "elcell/curves.hpp"
#include "elcell/image.hpp"

namespace elcell::lens {

using curves::ParabolicCurve;
using curves::Point2;

/// One-parameter field-of-view radial distortion model, decoupled from the
/// projection: distortion center c in pixels, horizontal aspect ratio s_x,
/// opening angle omega in radians. omega = 0 is the identity.
struct LensParams {
  double cx = 0, cy = 0;
  double sx = 1.0;
  double omega = 0.0;
  bool valid = true;
};

/// Dimensionless coordinates ((x - cx) / (sx M), (y - cy) / N).
struct NormalizedPoint {
  double x = 0, y = 0;
  double radius() const { return std::hypot(x, y); }
};

NormalizedPoint normalize_point(const Point2& p, const LensParams& params, int width, int height);
Point2 denormalize_point(const NormalizedPoint& p, const LensParams& params, int width,
                         int height);

/// L(r) = arctan(2 r tan(omega/2)) / omega; the identity for omega -> 0.
double radial_displacement(double r, double omega);

/// L^-1(r) = tan(r omega) / (2 tan(omega/2)). Throws near the tangent pole
/// (r * omega >= pi/2).
double inverse_displacement(double r, double omega);

/// Removes the radial distortion from a pixel coordinate.
Point2 undistort_point(const Point2& p, const LensParams& params, int width, int height);

/// Applies the forward radial distortion to a pixel coordinate.
Point2 distort_point(const Point2& p, const LensParams& params, int width, int height);

/// Real intersections (x, f_h(x)) of a horizontal and a vertical parabola:
/// roots of the quartic obtained by substituting one polynomial into the
/// other, kept within the image rectangle expanded by 10%.
std::vector<Point2> intersect_curves(const ParabolicCurve& h, const ParabolicCurve& v, int width,
                                     int height);

/// Least-squares scalar k relating stacked point coordinates q = k p.
double estimate_distortion_factor(const std::vector<Point2>& p, const std::vector<Point2>& q);

/// Largest positive real root of Q(omega) = k with
/// Q(omega) = 1 + omega^2/12 + omega^4/120. Throws for k < 1.
double omega_from_factor(double k);

/// Taylor expansion Q(omega) of L(r)/r around r = 0.
double taylor_factor(double omega);

/// Initial parameters: s_x = 1, center at the intersection of the flattest
/// horizontal/vertical curve pair, omega from the chord distortion factor
/// (the measured factor is matched against the factor the model predicts for
/// the same chord construction, then inverted through the Taylor polynomial).
LensParams initial_lens_params(const std::vector<ParabolicCurve>& h_curves,
                               const std::vector<ParabolicCurve>& v_curves, int width, int height);

/// Total-least-squares line residual of a point set (sum of squared
/// orthogonal distances to the best line).
double line_fit_error(const std::vector<Point2>& points);

struct RefineResult {
  LensParams params;
  double initial_error = 0;
  double final_error = 0;
  bool converged = true;
};

/// Staged Levenberg-Marquardt refinement of (omega) -> (omega, c) ->
/// (omega, c, s_x), minimizing the summed line-fit error of the undistorted
/// curve support points. Outer iterations stop when the relative error
/// change falls below epsilon.
RefineResult refine_lens_params(const std::vector<ParabolicCurve>& curves, const LensParams& init,
                                double epsilon, int width, int height);

}  // namespace elcell::lens
