#include <doctest.h>

#include <cmath>
#include <random>

#include "elcell/imgproc.hpp"
#include "elcell/lens.hpp"
#include "elcell/metrics.hpp"
#include "elcell/rectify.hpp"
#include "oracles.hpp"

using namespace elcell;
using namespace elcell::rectify;
using curves::Point2;
using lens::LensParams;

namespace {

LensParams params_of(double cx, double cy, double sx, double omega) {
  LensParams p;
  p.cx = cx;
  p.cy = cy;
  p.sx = sx;
  p.omega = omega;
  return p;
}

// Independent affine MLS evaluation (row-vector convention of the
// moving-least-squares construction).
Point2 direct_mls(const std::vector<Point2>& ctrl, const std::vector<Point2>& def, double alpha,
                  const Point2& v) {
  const size_t n = ctrl.size();
  std::vector<double> w(n);
  double wsum = 0;
  Point2 ps = Point2::Zero(), qs = Point2::Zero();
  for (size_t i = 0; i < n; ++i) {
    const double d2 = (ctrl[i] - v).squaredNorm();
    if (d2 < 1e-18) return def[i];
    w[i] = 1.0 / std::pow(d2, alpha);
    wsum += w[i];
    ps += w[i] * ctrl[i];
    qs += w[i] * def[i];
  }
  ps /= wsum;
  qs /= wsum;
  double a00 = 0, a01 = 0, a11 = 0;
  double b00 = 0, b01 = 0, b10 = 0, b11 = 0;
  for (size_t i = 0; i < n; ++i) {
    const Point2 ph = ctrl[i] - ps, qh = def[i] - qs;
    a00 += w[i] * ph.x() * ph.x();
    a01 += w[i] * ph.x() * ph.y();
    a11 += w[i] * ph.y() * ph.y();
    b00 += w[i] * ph.x() * qh.x();
    b01 += w[i] * ph.x() * qh.y();
    b10 += w[i] * ph.y() * qh.x();
    b11 += w[i] * ph.y() * qh.y();
  }
  const double det = a00 * a11 - a01 * a01;
  const Point2 d = v - ps;
  // inv(A) * d, then dot with B columns.
  const double ix = (a11 * d.x() - a01 * d.y()) / det;
  const double iy = (-a01 * d.x() + a00 * d.y()) / det;
  return qs + Point2(ix * b00 + iy * b10, ix * b01 + iy * b11);
}

}  // namespace

TEST_CASE("undistort_image with zero omega is the identity") {
  std::mt19937 rng(6);
  GrayImage img(64, 48);
  for (auto& v : img.data) v = std::uniform_real_distribution<float>(0.f, 1.f)(rng);
  const GrayImage out = undistort_image(img, params_of(32, 24, 1.0, 0.0));
  for (size_t i = 0; i < img.data.size(); ++i) CHECK(out.data[i] == doctest::Approx(img.data[i]));
}

TEST_CASE("undistort_image straightens synthetically distorted lines") {
  const int w = 400, h = 300;
  const LensParams th = params_of(200, 150, 1.0, 0.35);
  // Render the distorted image of straight dark lines analytically: sample
  // the planar line field at the undistorted position of each pixel.
  GrayImage img(w, h);
  const std::vector<double> line_ys = {75, 150, 225};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Point2 u = lens::undistort_point(Point2(x, y), th, w, h);
      double v = 1.0;
      for (double ly : line_ys) {
        const double d = u.y() - ly;
        v = std::min(v, 1.0 - std::exp(-d * d / (2 * 1.5 * 1.5)));
      }
      img.at(x, y) = static_cast<float>(v);
    }

  const GrayImage out = undistort_image(img, th);
  // The line minima now sit on straight rows: find the darkest pixel per
  // column near each expected line and fit the deviation.
  for (double ly : line_ys) {
    std::vector<std::pair<double, double>> pts;
    for (int x = 40; x < w - 40; x += 4) {
      int best_y = 0;
      float best_v = 2.f;
      for (int y = static_cast<int>(ly) - 8; y <= static_cast<int>(ly) + 8; ++y) {
        if (out.at(x, y) < best_v) {
          best_v = out.at(x, y);
          best_y = y;
        }
      }
      pts.emplace_back(x, best_y);
    }
    const double chi2 = oracles::scatter_min_eigenvalue(pts);
    CHECK(std::sqrt(chi2 / pts.size()) < 0.5);
  }
}

TEST_CASE("undistort of a distorted render approximates the original") {
  const int w = 240, h = 200;
  GrayImage planar(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      planar.at(x, y) = 0.5f + 0.4f * std::sin(x * 0.11f) * std::cos(y * 0.07f);
  const LensParams th = params_of(120, 100, 1.0, 0.3);
  // Distorted render: sample planar at the undistorted position.
  GrayImage distorted(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Point2 u = lens::undistort_point(Point2(x, y), th, w, h);
      distorted.at(x, y) = planar.sample(u.x(), u.y());
    }
  const GrayImage restored = undistort_image(distorted, th);
  double sse = 0;
  size_t n = 0;
  for (int y = 20; y < h - 20; ++y)
    for (int x = 20; x < w - 20; ++x) {
      const double d = restored.at(x, y) - planar.at(x, y);
      sse += d * d;
      ++n;
    }
  CHECK(std::sqrt(sse / n) < 0.02);
}

TEST_CASE("homography_from_corners identity and translation") {
  const std::array<Point2, 4> quad = {Point2(0, 0), Point2(10, 0), Point2(0, 10), Point2(10, 10)};
  const Eigen::Matrix3d I = homography_from_corners(quad, quad);
  CHECK((I - Eigen::Matrix3d::Identity()).norm() < 1e-9);

  std::array<Point2, 4> shifted;
  for (int i = 0; i < 4; ++i) shifted[i] = quad[i] + Point2(5, -3);
  const Eigen::Matrix3d T = homography_from_corners(quad, shifted);
  CHECK(T(0, 2) == doctest::Approx(5.0));
  CHECK(T(1, 2) == doctest::Approx(-3.0));
  CHECK(T(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("homography_from_corners maps random quads exactly") {
  std::mt19937 rng(12);
  std::uniform_real_distribution<double> u(0, 500);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<Point2, 4> src = {Point2(u(rng), u(rng)), Point2(500 + u(rng), u(rng)),
                                 Point2(u(rng), 500 + u(rng)),
                                 Point2(500 + u(rng), 500 + u(rng))};
    std::array<Point2, 4> dst = {Point2(u(rng), u(rng)), Point2(500 + u(rng), u(rng)),
                                 Point2(u(rng), 500 + u(rng)),
                                 Point2(500 + u(rng), 500 + u(rng))};
    const Eigen::Matrix3d H = homography_from_corners(src, dst);
    for (int i = 0; i < 4; ++i) {
      const Eigen::Vector3d p = H * Eigen::Vector3d(src[i].x(), src[i].y(), 1.0);
      CHECK(std::abs(p.x() / p.z() - dst[i].x()) < 1e-9);
      CHECK(std::abs(p.y() / p.z() - dst[i].y()) < 1e-9);
    }
  }
}

TEST_CASE("homography_from_corners rejects collinear corners") {
  const std::array<Point2, 4> degenerate = {Point2(0, 0), Point2(1, 1), Point2(2, 2),
                                            Point2(3, 3)};
  const std::array<Point2, 4> fine = {Point2(0, 0), Point2(10, 0), Point2(0, 10),
                                      Point2(10, 10)};
  CHECK_THROWS_AS(homography_from_corners(degenerate, fine), Error);
}

TEST_CASE("mls transform interpolates its control points") {
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(0, 100);
  std::vector<Point2> ctrl, def;
  for (int i = 0; i < 12; ++i) {
    ctrl.emplace_back(u(rng), u(rng));
    def.emplace_back(u(rng), u(rng));
  }
  const MlsTransform mls(ctrl, def, 1.0);
  for (size_t i = 0; i < ctrl.size(); ++i)
    CHECK((mls.apply(ctrl[i]) - def[i]).norm() < 1e-9);
}

TEST_CASE("mls transform reproduces a global affine map") {
  std::vector<Point2> ctrl = {{10, 10}, {90, 12}, {15, 85}, {88, 82}, {50, 45}};
  Eigen::Matrix2d A;
  A << 1.1, 0.2, -0.1, 0.95;
  const Point2 b(7, -4);
  std::vector<Point2> def;
  for (const auto& p : ctrl) def.push_back(A * p + b);
  const MlsTransform mls(ctrl, def, 1.0);
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(0, 100);
  for (int i = 0; i < 100; ++i) {
    const Point2 v(u(rng), u(rng));
    const Point2 expect = A * v + b;
    CHECK((mls.apply(v) - expect).norm() < 1e-6);
  }
}

TEST_CASE("mls transform matches the direct evaluation oracle") {
  std::mt19937 rng(44);
  std::uniform_real_distribution<double> u(0, 200);
  std::vector<Point2> ctrl, def;
  for (int i = 0; i < 9; ++i) {
    const Point2 c(u(rng), u(rng));
    ctrl.push_back(c);
    def.push_back(c + Point2(u(rng) * 0.02 - 2, u(rng) * 0.02 - 2));
  }
  const MlsTransform mls(ctrl, def, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Point2 v(u(rng), u(rng));
    CHECK((mls.apply(v) - direct_mls(ctrl, def, 1.0, v)).norm() < 1e-9);
  }
}

TEST_CASE("mls displacement decays away from a moved control point") {
  std::vector<Point2> ctrl, def;
  for (int y = 0; y <= 4; ++y)
    for (int x = 0; x <= 4; ++x) ctrl.emplace_back(x * 25.0, y * 25.0);
  def = ctrl;
  def[12] += Point2(3.0, 0.0);  // center point moved 3 px
  const MlsTransform mls(ctrl, def, 1.0);
  CHECK((mls.apply(ctrl[12]) - def[12]).norm() < 1e-9);
  // Monotone decay along a ray.
  double prev = 3.0;
  for (double d = 4.0; d <= 40.0; d += 4.0) {
    const Point2 v = ctrl[12] + Point2(0.0, d);
    const double disp = (mls.apply(v) - v).norm();
    CHECK(disp <= prev + 1e-9);
    prev = disp;
  }
}

TEST_CASE("mls_affine_warp with identical point sets keeps the image") {
  std::mt19937 rng(7);
  GrayImage img(80, 60);
  for (auto& v : img.data) v = std::uniform_real_distribution<float>(0.f, 1.f)(rng);
  std::vector<Point2> ctrl = {{10, 10}, {70, 10}, {10, 50}, {70, 50}, {40, 30}};
  const GrayImage out = mls_affine_warp(img, ctrl, ctrl, 1.0);
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK(out.data[i] == doctest::Approx(img.data[i]).epsilon(1e-9));
}

TEST_CASE("mls_affine_warp rejects collinear controls") {
  GrayImage img(20, 20, 0.5f);
  const std::vector<Point2> ctrl = {{1, 1}, {5, 5}, {9, 9}};
  CHECK_THROWS_AS(mls_affine_warp(img, ctrl, ctrl, 1.0), Error);
}

TEST_CASE("extract_cells crops a 2x2 module in row-major order") {
  gridmodel::ModuleTopology topo;
  topo.rows = 2;
  topo.cols = 2;
  const int cell = 40;
  GrayImage rectified(2 * cell, 2 * cell);
  // Distinct intensity per cell.
  for (int y = 0; y < rectified.height; ++y)
    for (int x = 0; x < rectified.width; ++x)
      rectified.at(x, y) = 0.2f + 0.2f * ((y / cell) * 2 + (x / cell));

  const auto cells = extract_cells(rectified, topo, cell);
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].row == 0);
  CHECK(cells[0].col == 0);
  CHECK(cells[1].col == 1);
  CHECK(cells[2].row == 1);
  for (int i = 0; i < 4; ++i) {
    CHECK(cells[i].image.width == cell);
    CHECK(cells[i].image.height == cell);
    // Median equals the source cell intensity.
    std::vector<float> vals = cells[i].image.data;
    std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
    CHECK(vals[vals.size() / 2] == doctest::Approx(0.2f + 0.2f * i).epsilon(0.01));
  }
}

TEST_CASE("extract_cells honors the configured cell size") {
  gridmodel::ModuleTopology topo;
  topo.rows = 1;
  topo.cols = 1;
  GrayImage rectified(300, 300, 0.5f);
  const auto cells = extract_cells(rectified, topo, 300);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].image.width == 300);
  CHECK(cells[0].image.height == 300);
}

TEST_CASE("estimate_cell_mask of bright square cells is a full square") {
  std::vector<CellImage> cells;
  for (int i = 0; i < 6; ++i) {
    CellImage c;
    c.image = GrayImage(120, 120, 0.02f);
    for (int y = 4; y < 116; ++y)
      for (int x = 4; x < 116; ++x) c.image.at(x, y) = 0.9f;
    cells.push_back(std::move(c));
  }
  const GrayImage mask = estimate_cell_mask(cells, 25);
  double area = 0;
  for (float v : mask.data) area += v;
  const double expected = 112.0 * 112.0;
  CHECK(area / expected > 0.99);
  CHECK(area / expected < 1.1);
}

TEST_CASE("estimate_cell_mask recovers rounded corners") {
  // Cells with rounded corners of radius 20 on a 150 px cell.
  const int n = 150;
  const double r = 20.0;
  auto corner_dist = [&](double x, double y) {
    const double ex = n / 2.0 - 4, ey = n / 2.0 - 4;
    const double qx = std::abs(x - n / 2.0) - (ex - r), qy = std::abs(y - n / 2.0) - (ey - r);
    return std::hypot(std::max(qx, 0.0), std::max(qy, 0.0)) + std::min(std::max(qx, qy), 0.0) - r;
  };
  GrayImage gt(n, n);
  std::vector<CellImage> cells;
  for (int i = 0; i < 5; ++i) {
    CellImage c;
    c.image = GrayImage(n, n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double d = corner_dist(x, y);
        const float inside = d < 0 ? 0.85f : 0.02f;
        c.image.at(x, y) = inside;
        if (i == 0) gt.at(x, y) = d < 0 ? 1.f : 0.f;
      }
    cells.push_back(std::move(c));
  }
  const GrayImage mask = estimate_cell_mask(cells, 25);
  CHECK(metrics::weighted_jaccard(mask, gt) >= 0.98);
}

TEST_CASE("assemble_result places masks consistently with the warp chain") {
  // Identity lens, translation-only homography: cell masks land at the grid
  // positions.
  const int w = 260, h = 200;
  gridmodel::ModuleTopology topo;
  topo.rows = 2;
  topo.cols = 3;
  const int cell = 50;
  GrayImage canonical(cell, cell);
  for (int y = 5; y < 45; ++y)
    for (int x = 5; x < 45; ++x) canonical.at(x, y) = 1.f;

  Eigen::Matrix3d H = Eigen::Matrix3d::Identity();
  H(0, 2) = -30;  // planar = original - (30, 20)
  H(1, 2) = -20;
  const LensParams id = params_of(w / 2.0, h / 2.0, 1.0, 0.0);

  std::vector<CellImage> cells(6);
  for (int i = 0; i < 6; ++i) {
    cells[i].row = i / 3;
    cells[i].col = i % 3;
    cells[i].image = GrayImage(cell, cell, 0.5f);
  }
  const SegmentationResult result =
      assemble_result(id, H, topo, std::move(cells), canonical, w, h);

  REQUIRE(result.cell_masks.size() == 6);
  // Cell (1, 2) occupies planar [100..150)x[50..100): original-frame pixel
  // (135, 95) maps to planar (105, 75) and canonical-local (5, 25): on.
  const auto& m = result.cell_masks[5];
  CHECK(m.image.at(135 - m.x0, 95 - m.y0) > 0.9f);
  CHECK(result.module_mask.at(135, 95) > 0.9f);
  // Border of the canonical mask is off.
  CHECK(result.module_mask.at(131, 71) < 0.1f);

  // Round trip: the mask warped to the original frame, sampled back at the
  // planar position, matches the canonical mask almost everywhere.
  double inter = 0, uni = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double px = x - 30, py = y - 20;
      const int c = static_cast<int>(std::floor(px / cell));
      const int r = static_cast<int>(std::floor(py / cell));
      if (r < 0 || r >= 2 || c < 0 || c >= 3) continue;
      const float expect = canonical.sample(px - c * cell, py - r * cell);
      const float got = result.module_mask.at(x, y);
      inter += std::min(expect, got);
      uni += std::max(expect, got);
    }
  CHECK(inter / uni > 0.99);
}

TEST_CASE("assemble_result flags missing cells with empty masks") {
  gridmodel::ModuleTopology topo;
  topo.rows = 1;
  topo.cols = 2;
  GrayImage canonical(30, 30, 1.f);
  std::vector<CellImage> cells(2);
  cells[0].image = cells[1].image = GrayImage(30, 30, 0.5f);
  cells[1].col = 1;
  const LensParams id = params_of(30, 15, 1.0, 0.0);
  const SegmentationResult result =
      assemble_result(id, Eigen::Matrix3d::Identity(), topo, std::move(cells), canonical, 60, 30,
                      {{0, 1}});
  REQUIRE(result.missing.size() == 1);
  CHECK(result.cell_masks[1].image.empty());
}
