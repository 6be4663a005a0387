#include "elcell/rectify.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>

#include "elcell/imgproc.hpp"
#include "elcell/parallel.hpp"

namespace elcell::rectify {

GrayImage undistort_image(const GrayImage& img, const LensParams& params) {
  GrayImage out(img.width, img.height);
  parallel_for(0, img.height, [&](int y) {
    for (int x = 0; x < img.width; ++x) {
      const Point2 src = lens::distort_point(Point2(x, y), params, img.width, img.height);
      if (src.x() < 0 || src.y() < 0 || src.x() > img.width - 1 || src.y() > img.height - 1)
        continue;
      out.at(x, y) = img.sample(src.x(), src.y());
    }
  });
  return out;
}

Eigen::Matrix3d homography_from_corners(const std::array<Point2, 4>& src,
                                        const std::array<Point2, 4>& dst) {
  auto collinear = [](const std::array<Point2, 4>& q) {
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j)
        for (int k = j + 1; k < 4; ++k) {
          const Point2 u = q[j] - q[i], v = q[k] - q[i];
          if (std::abs(u.x() * v.y() - u.y() * v.x()) < 1e-9 * (u.norm() * v.norm() + 1e-12))
            return true;
        }
    return false;
  };
  if (collinear(src) || collinear(dst)) throw Error("homography_from_corners: degenerate quad");

  // Hartley normalization of both quads.
  auto normalizer = [](const std::array<Point2, 4>& q) {
    Point2 mean = Point2::Zero();
    for (const auto& p : q) mean += p;
    mean /= 4.0;
    double dist = 0;
    for (const auto& p : q) dist += (p - mean).norm();
    dist /= 4.0;
    const double s = dist > 1e-12 ? std::sqrt(2.0) / dist : 1.0;
    Eigen::Matrix3d T = Eigen::Matrix3d::Identity();
    T(0, 0) = T(1, 1) = s;
    T(0, 2) = -s * mean.x();
    T(1, 2) = -s * mean.y();
    return T;
  };
  const Eigen::Matrix3d Ts = normalizer(src), Td = normalizer(dst);

  Eigen::Matrix<double, 8, 9> A = Eigen::Matrix<double, 8, 9>::Zero();
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector3d s = Ts * Eigen::Vector3d(src[i].x(), src[i].y(), 1.0);
    const Eigen::Vector3d d = Td * Eigen::Vector3d(dst[i].x(), dst[i].y(), 1.0);
    A.row(2 * i) << -s.x(), -s.y(), -1, 0, 0, 0, d.x() * s.x(), d.x() * s.y(), d.x();
    A.row(2 * i + 1) << 0, 0, 0, -s.x(), -s.y(), -1, d.y() * s.x(), d.y() * s.y(), d.y();
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 8, 9>> svd(A, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> hv = svd.matrixV().col(8);
  Eigen::Matrix3d Hn;
  Hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  Eigen::Matrix3d H = Td.inverse() * Hn * Ts;
  if (std::abs(H(2, 2)) < 1e-15) throw Error("homography_from_corners: degenerate quad");
  H /= H(2, 2);
  return H;
}

MlsTransform::MlsTransform(std::vector<Point2> control, std::vector<Point2> deformed, double alpha)
    : control_(std::move(control)), deformed_(std::move(deformed)), alpha_(alpha) {
  if (control_.size() != deformed_.size() || control_.size() < 3)
    throw Error("mls_affine_warp: need >= 3 matching control points");
  Point2 mean = Point2::Zero();
  for (const auto& p : control_) mean += p;
  mean /= static_cast<double>(control_.size());
  double cross = 0;
  Point2 dir = Point2::Zero();
  bool have_dir = false;
  for (const auto& p : control_) {
    const Point2 d = p - mean;
    if (!have_dir && d.norm() > 1e-9) {
      dir = d.normalized();
      have_dir = true;
    }
    cross += std::abs(dir.x() * d.y() - dir.y() * d.x());
  }
  if (!have_dir || cross < 1e-9) throw Error("mls_affine_warp: rank-deficient control points");
}

Point2 MlsTransform::apply(const Point2& v) const {
  const size_t n = control_.size();
  // A coincident control point pins the result exactly.
  double wsum = 0;
  Point2 pstar = Point2::Zero(), qstar = Point2::Zero();
  std::vector<double> w(n);
  for (size_t i = 0; i < n; ++i) {
    const double d2 = (control_[i] - v).squaredNorm();
    if (d2 < 1e-18) return deformed_[i];
    w[i] = 1.0 / std::pow(d2, alpha_);
    wsum += w[i];
    pstar += w[i] * control_[i];
    qstar += w[i] * deformed_[i];
  }
  pstar /= wsum;
  qstar /= wsum;

  Eigen::Matrix2d M1 = Eigen::Matrix2d::Zero(), M2 = Eigen::Matrix2d::Zero();
  for (size_t i = 0; i < n; ++i) {
    const Point2 ph = control_[i] - pstar;
    const Point2 qh = deformed_[i] - qstar;
    M1 += w[i] * ph * ph.transpose();
    M2 += w[i] * ph * qh.transpose();
  }
  const double det = M1.determinant();
  if (std::abs(det) < 1e-18) return qstar + (v - pstar);
  const Eigen::Matrix2d A = M1.inverse() * M2;
  return qstar + (A.transpose() * (v - pstar));
}

GrayImage mls_affine_warp(const GrayImage& img, const std::vector<Point2>& control,
                          const std::vector<Point2>& deformed, double alpha) {
  const MlsTransform mls(control, deformed, alpha);
  GrayImage out(img.width, img.height);
  parallel_for(0, img.height, [&](int y) {
    for (int x = 0; x < img.width; ++x) {
      const Point2 src = mls.apply(Point2(x, y));
      if (src.x() < 0 || src.y() < 0 || src.x() > img.width - 1 || src.y() > img.height - 1)
        continue;
      out.at(x, y) = img.sample(src.x(), src.y());
    }
  });
  return out;
}

std::vector<CellImage> extract_cells(const GrayImage& rectified, const ModuleTopology& topology,
                                     int cell_px) {
  const double cw = cell_px * topology.cell_aspect;
  const double ch = cell_px;
  const int out_w = cell_px;
  const int out_h = static_cast<int>(std::lround(cell_px / topology.cell_aspect));

  std::vector<CellImage> cells;
  cells.reserve(static_cast<size_t>(topology.rows) * topology.cols);
  for (int r = 0; r < topology.rows; ++r) {
    for (int c = 0; c < topology.cols; ++c) {
      CellImage cell;
      cell.row = r;
      cell.col = c;
      cell.image = GrayImage(out_w, out_h);
      for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
          const double sx = c * cw + (x + 0.5) * cw / out_w - 0.5;
          const double sy = r * ch + (y + 0.5) * ch / out_h - 0.5;
          cell.image.at(x, y) = rectified.sample(sx, sy);
        }
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

GrayImage estimate_cell_mask(const std::vector<CellImage>& cells, int window) {
  if (cells.empty()) throw Error("estimate_cell_mask: no cells");
  const int w = cells.front().image.width, h = cells.front().image.height;

  GrayImage mean(w, h);
  for (const auto& c : cells)
    for (size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += c.image.data[i];
  for (auto& v : mean.data) v /= static_cast<float>(cells.size());

  BinaryMask initial = imgproc::adaptive_threshold_mean(mean, window);
  initial = imgproc::binary_cleanup(initial, 2);

  // Row/column majority profiles, backprojected as an axis-aligned core.
  std::vector<uint8_t> row_on(h, 0), col_on(w, 0);
  for (int y = 0; y < h; ++y) {
    int cnt = 0;
    for (int x = 0; x < w; ++x) cnt += initial.at(x, y);
    row_on[y] = cnt * 2 >= w;
  }
  for (int x = 0; x < w; ++x) {
    int cnt = 0;
    for (int y = 0; y < h; ++y) cnt += initial.at(x, y);
    col_on[x] = cnt * 2 >= h;
  }
  BinaryMask profiles(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) profiles.at(x, y) = row_on[y] && col_on[x];

  BinaryMask hull = initial.count() > 0 ? imgproc::convex_hull_mask(initial) : initial;
  BinaryMask augmented(w, h);
  for (size_t i = 0; i < augmented.data.size(); ++i)
    augmented.data[i] = profiles.data[i] & hull.data[i];

  // The extra geometry is what augmentation changes; folding it back in via
  // xor yields the final mask.
  BinaryMask extra(w, h), final_mask(w, h);
  for (size_t i = 0; i < extra.data.size(); ++i)
    extra.data[i] = initial.data[i] ^ augmented.data[i];
  for (size_t i = 0; i < final_mask.data.size(); ++i)
    final_mask.data[i] = initial.data[i] ^ extra.data[i];

  GrayImage soft(w, h);
  for (size_t i = 0; i < soft.data.size(); ++i) soft.data[i] = final_mask.data[i] ? 1.f : 0.f;
  return imgproc::gaussian_blur(soft, 0.7);
}

SegmentationResult assemble_result(const LensParams& params, const Eigen::Matrix3d& homography,
                                   const ModuleTopology& topology, std::vector<CellImage> cells,
                                   const GrayImage& canonical_mask, int width, int height,
                                   const std::vector<std::pair<int, int>>& missing) {
  if (std::abs(homography.determinant()) < 1e-12)
    throw Error("assemble_result: homography not invertible");

  SegmentationResult result;
  result.params = params;
  result.homography = homography;
  result.topology = topology;
  result.cells = std::move(cells);
  result.canonical_mask = canonical_mask;
  result.missing = missing;

  result.frame_width = width;
  result.frame_height = height;
  const double cw = canonical_mask.width;
  const double ch = canonical_mask.height;
  const int n_cells = topology.rows * topology.cols;

  // Planar coordinates of every original pixel, shared by all cells.
  result.module_mask = GrayImage(width, height);
  std::vector<float> planar_x(static_cast<size_t>(width) * height, -1e9f);
  std::vector<float> planar_y(planar_x.size(), -1e9f);
  parallel_for(0, height, [&](int y) {
    for (int x = 0; x < width; ++x) {
      Point2 u;
      try {
        u = lens::undistort_point(Point2(x, y), params, width, height);
      } catch (const Error&) {
        continue;
      }
      const Eigen::Vector3d p = homography * Eigen::Vector3d(u.x(), u.y(), 1.0);
      if (std::abs(p.z()) < 1e-12) continue;
      planar_x[static_cast<size_t>(y) * width + x] = static_cast<float>(p.x() / p.z());
      planar_y[static_cast<size_t>(y) * width + x] = static_cast<float>(p.y() / p.z());
    }
  });

  // Bounding boxes per cell in the original frame.
  struct Box {
    int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
  };
  std::vector<Box> boxes(n_cells);
  auto cell_of = [&](size_t i) -> int {
    const float px = planar_x[i], py = planar_y[i];
    if (px < -1e8f) return -1;
    const int c = static_cast<int>(std::floor(px / cw));
    const int r = static_cast<int>(std::floor(py / ch));
    if (r < 0 || r >= topology.rows || c < 0 || c >= topology.cols) return -1;
    return r * topology.cols + c;
  };
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int idx = cell_of(static_cast<size_t>(y) * width + x);
      if (idx < 0) continue;
      Box& b = boxes[idx];
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x);
      b.y1 = std::max(b.y1, y);
    }
  }

  result.cell_masks.reserve(n_cells);
  for (int r = 0; r < topology.rows; ++r) {
    for (int c = 0; c < topology.cols; ++c) {
      const Box& b = boxes[static_cast<size_t>(r) * topology.cols + c];
      MaskRegion m;
      m.row = r;
      m.col = c;
      if (b.x1 >= b.x0) {
        m.x0 = std::max(0, b.x0 - 2);
        m.y0 = std::max(0, b.y0 - 2);
        m.image = GrayImage(std::min(width - 1, b.x1 + 2) - m.x0 + 1,
                            std::min(height - 1, b.y1 + 2) - m.y0 + 1);
      }
      result.cell_masks.push_back(std::move(m));
    }
  }
  parallel_for(0, height, [&](int y) {
    for (int x = 0; x < width; ++x) {
      const size_t i = static_cast<size_t>(y) * width + x;
      const int idx = cell_of(i);
      if (idx < 0) continue;
      const float px = planar_x[i], py = planar_y[i];
      const int c = idx % topology.cols, r = idx / topology.cols;
      const float v = canonical_mask.sample(px - c * cw, py - r * ch);
      if (v <= 0.f) continue;
      MaskRegion& m = result.cell_masks[idx];
      if (m.image.empty()) continue;
      m.image.at(x - m.x0, y - m.y0) = v;
      result.module_mask.at(x, y) = std::max(result.module_mask.at(x, y), v);
    }
  });

  // Missing cells carry empty masks.
  for (const auto& [r, c] : result.missing) {
    const size_t idx = static_cast<size_t>(r) * topology.cols + c;
    if (idx < result.cell_masks.size()) result.cell_masks[idx].image = GrayImage();
  }
  return result;
}

}  // namespace elcell::rectify
