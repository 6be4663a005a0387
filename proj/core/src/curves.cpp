#include "elcell/curves.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace elcell::curves {
namespace {

constexpr double kPi = std::numbers::pi;

double param_of(const Point2& p, Axis axis) { return axis == Axis::Horizontal ? p.x() : p.y(); }
double ordinate_of(const Point2& p, Axis axis) { return axis == Axis::Horizontal ? p.y() : p.x(); }

double residual_sq(const ParabolicCurve& c, const Point2& p) {
  const double d = c.value(param_of(p, c.axis)) - ordinate_of(p, c.axis);
  return d * d;
}

// Exact parabola through three points; false if the parameter values repeat.
bool solve_three(const Point2& p0, const Point2& p1, const Point2& p2, Axis axis,
                 double* coeffs) {
  const double x0 = param_of(p0, axis), x1 = param_of(p1, axis), x2 = param_of(p2, axis);
  const double y0 = ordinate_of(p0, axis), y1 = ordinate_of(p1, axis), y2 = ordinate_of(p2, axis);
  const double d01 = x0 - x1, d02 = x0 - x2, d12 = x1 - x2;
  if (std::abs(d01) < 1e-9 || std::abs(d02) < 1e-9 || std::abs(d12) < 1e-9) return false;
  // Lagrange form expanded to monomial coefficients.
  const double l0 = y0 / (d01 * d02);
  const double l1 = -y1 / (d01 * d12);
  const double l2 = y2 / (d02 * d12);
  coeffs[2] = l0 + l1 + l2;
  coeffs[1] = -(l0 * (x1 + x2) + l1 * (x0 + x2) + l2 * (x0 + x1));
  coeffs[0] = l0 * x1 * x2 + l1 * x0 * x2 + l2 * x0 * x1;
  return true;
}

double turn_angle(const Point2& a, const Point2& b, const Point2& c) {
  const Point2 u = b - a, v = c - b;
  const double nu = u.norm(), nv = v.norm();
  if (nu < 1e-12 || nv < 1e-12) return 0.0;
  const double cosang = std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
  return std::acos(cosang);
}

void douglas_peucker(const PointChain& pts, size_t lo, size_t hi, double eps,
                     std::vector<size_t>* keep) {
  if (hi <= lo + 1) return;
  const Point2 a = pts[lo], b = pts[hi];
  const Point2 ab = b - a;
  const double len = ab.norm();
  double worst = -1;
  size_t worst_i = lo;
  for (size_t i = lo + 1; i < hi; ++i) {
    double d;
    if (len < 1e-12) {
      d = (pts[i] - a).norm();
    } else {
      const Point2 ap = pts[i] - a;
      d = std::abs(ab.x() * ap.y() - ab.y() * ap.x()) / len;
    }
    if (d > worst) {
      worst = d;
      worst_i = i;
    }
  }
  if (worst > eps) {
    keep->push_back(worst_i);
    douglas_peucker(pts, lo, worst_i, eps, keep);
    douglas_peucker(pts, worst_i, hi, eps, keep);
  }
}

}  // namespace

double ParabolicCurve::min_param() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& p : support) m = std::min(m, axis == Axis::Horizontal ? p.x() : p.y());
  return m;
}

double ParabolicCurve::max_param() const {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& p : support) m = std::max(m, axis == Axis::Horizontal ? p.x() : p.y());
  return m;
}

std::vector<PointChain> link_edges(const BinaryMask& skeleton) {
  const int w = skeleton.width, h = skeleton.height;
  static const int dx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
  static const int dy[8] = {0, 1, 1, 1, 0, -1, -1, -1};

  auto degree = [&](int x, int y) {
    int d = 0;
    for (int i = 0; i < 8; ++i) {
      const int xx = x + dx[i], yy = y + dy[i];
      if (xx >= 0 && xx < w && yy >= 0 && yy < h && skeleton.at(xx, yy)) ++d;
    }
    return d;
  };

  std::vector<uint8_t> deg(static_cast<size_t>(w) * h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (skeleton.at(x, y)) deg[static_cast<size_t>(y) * w + x] = static_cast<uint8_t>(degree(x, y));

  std::vector<uint8_t> used(static_cast<size_t>(w) * h, 0);
  auto is_junction = [&](int x, int y) { return deg[static_cast<size_t>(y) * w + x] >= 3; };
  std::vector<PointChain> chains;

  auto trace = [&](int sx, int sy) {
    PointChain chain;
    int cx = sx, cy = sy;
    int px = -1, py = -1;
    while (true) {
      used[static_cast<size_t>(cy) * w + cx] = 1;
      chain.emplace_back(cx, cy);
      int nx = -1, ny = -1;
      for (int i = 0; i < 8; ++i) {
        const int xx = cx + dx[i], yy = cy + dy[i];
        if (xx < 0 || xx >= w || yy < 0 || yy >= h || !skeleton.at(xx, yy)) continue;
        if (xx == px && yy == py) continue;
        if (used[static_cast<size_t>(yy) * w + xx]) continue;
        if (is_junction(xx, yy)) continue;  // junctions terminate chains
        nx = xx;
        ny = yy;
        break;
      }
      if (nx < 0) break;
      px = cx;
      py = cy;
      cx = nx;
      cy = ny;
    }
    if (chain.size() >= 2) chains.push_back(std::move(chain));
  };

  // Start from free endpoints and from pixels adjacent to junctions, then
  // sweep any leftover closed loops.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!skeleton.at(x, y) || used[static_cast<size_t>(y) * w + x]) continue;
      const int d = deg[static_cast<size_t>(y) * w + x];
      if (d >= 3) {
        used[static_cast<size_t>(y) * w + x] = 1;  // junction: not part of any chain
        continue;
      }
      if (d == 0) {
        used[static_cast<size_t>(y) * w + x] = 1;  // isolated: dropped
        continue;
      }
      bool endpoint = d == 1;
      if (!endpoint) {
        for (int i = 0; i < 8 && !endpoint; ++i) {
          const int xx = x + dx[i], yy = y + dy[i];
          if (xx >= 0 && xx < w && yy >= 0 && yy < h && skeleton.at(xx, yy) && is_junction(xx, yy))
            endpoint = true;  // chain stub next to a junction
        }
      }
      if (endpoint) trace(x, y);
    }
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (skeleton.at(x, y) && !used[static_cast<size_t>(y) * w + x]) trace(x, y);  // loops
  return chains;
}

PointChain subpixel_refine(const PointChain& chain, const ridges::StickField& sf, int window,
                           int samples_per_px) {
  if (window < 1 || window % 2 == 0) throw Error("subpixel_refine: window must be odd");
  if (samples_per_px < 1) throw Error("subpixel_refine: samples_per_px must be >= 1");

  const int n_samples = window * samples_per_px + 1;
  const double half = window / 2.0;
  PointChain out;
  out.reserve(chain.size());

  std::vector<double> t(n_samples), v(n_samples);
  for (int i = 0; i < n_samples; ++i)
    t[i] = -half + static_cast<double>(i) * window / (n_samples - 1);

  for (const Point2& p : chain) {
    const int ix = std::clamp(static_cast<int>(std::lround(p.x())), 0, sf.orientation.width - 1);
    const int iy = std::clamp(static_cast<int>(std::lround(p.y())), 0, sf.orientation.height - 1);
    const double beta = sf.orientation.at(ix, iy);
    const double nx = std::cos(beta + kPi / 2.0), ny = std::sin(beta + kPi / 2.0);

    double vmax = -1, vmin = std::numeric_limits<double>::infinity();
    int imax = 0;
    for (int i = 0; i < n_samples; ++i) {
      v[i] = sf.stickness.sample(p.x() + t[i] * nx, p.y() + t[i] * ny);
      if (v[i] > vmax) {
        vmax = v[i];
        imax = i;
      }
      vmin = std::min(vmin, v[i]);
    }
    if (vmax <= 0 || vmax - vmin < 1e-12 * std::max(1.0, vmax)) {
      out.push_back(p);  // flat profile
      continue;
    }

    // Weighted moments initialize the Gaussian.
    double wsum = 0, mean = 0;
    for (int i = 0; i < n_samples; ++i) {
      wsum += v[i];
      mean += v[i] * t[i];
    }
    mean /= wsum;
    double var = 0;
    for (int i = 0; i < n_samples; ++i) var += v[i] * (t[i] - mean) * (t[i] - mean);
    var /= wsum;
    double sigma = std::sqrt(std::max(var, 0.25));
    double amp = sf.stickness.sample(p.x() + mean * nx, p.y() + mean * ny);
    if (amp <= 0) amp = vmax;

    // Gauss-Newton on (amp, mean, sigma).
    bool ok = true;
    for (int it = 0; it < 30; ++it) {
      Eigen::Matrix3d JtJ = Eigen::Matrix3d::Zero();
      Eigen::Vector3d Jtr = Eigen::Vector3d::Zero();
      double cost = 0;
      for (int i = 0; i < n_samples; ++i) {
        const double d = t[i] - mean;
        const double g = std::exp(-d * d / (2 * sigma * sigma));
        const double r = amp * g - v[i];
        Eigen::Vector3d J(g, amp * g * d / (sigma * sigma),
                          amp * g * d * d / (sigma * sigma * sigma));
        JtJ += J * J.transpose();
        Jtr += J * r;
        cost += r * r;
      }
      Eigen::Vector3d step = JtJ.ldlt().solve(-Jtr);
      if (!step.allFinite()) {
        ok = false;
        break;
      }
      amp += step(0);
      mean += step(1);
      sigma += step(2);
      if (!std::isfinite(mean) || !std::isfinite(sigma) || sigma < 0.05 || amp <= 0 ||
          std::abs(mean) > half * 2) {
        ok = false;
        break;
      }
      if (step.cwiseAbs().maxCoeff() < 1e-10) break;
      (void)cost;
    }
    double shift;
    if (ok && std::abs(mean) <= half) {
      shift = mean;
    } else if (ok) {
      shift = std::clamp(mean, -half, half);
    } else {
      shift = t[imax];  // degenerate fit: discrete profile maximum
      shift = std::clamp(shift, -half, half);
    }
    out.emplace_back(p.x() + shift * nx, p.y() + shift * ny);
  }
  return out;
}

std::vector<PointChain> split_chain(const PointChain& chain, double eps, double split_angle_deg) {
  if (eps <= 0) throw Error("split_chain: eps must be positive");
  if (chain.size() < 2) return {chain};

  std::vector<size_t> keep = {0, chain.size() - 1};
  douglas_peucker(chain, 0, chain.size() - 1, eps, &keep);
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());

  const double thr = split_angle_deg * kPi / 180.0;
  std::vector<size_t> cuts;
  for (size_t i = 1; i + 1 < keep.size(); ++i) {
    if (turn_angle(chain[keep[i - 1]], chain[keep[i]], chain[keep[i + 1]]) > thr)
      cuts.push_back(keep[i]);
  }
  std::vector<PointChain> parts;
  size_t start = 0;
  for (size_t cut : cuts) {
    parts.emplace_back(chain.begin() + start, chain.begin() + cut + 1);
    start = cut + 1;  // the cut vertex stays with the left part
  }
  parts.emplace_back(chain.begin() + start, chain.end());
  // Fold lone points into their neighbor so the point multiset is preserved.
  std::vector<PointChain> out;
  for (auto& p : parts) {
    if (p.size() < 2 && !out.empty()) {
      out.back().insert(out.back().end(), p.begin(), p.end());
    } else if (p.size() < 2 && &p != &parts.back()) {
      (&p)[1].insert((&p)[1].begin(), p.begin(), p.end());
    } else {
      out.push_back(std::move(p));
    }
  }
  if (out.empty()) out.push_back(chain);
  return out;
}

namespace {

struct MergeCandidate {
  size_t i, j;       // chain indices
  bool flip_i, flip_j;  // orient so i's back faces j's front
  double gap;
};

// Finds the facing-endpoint arrangement with the smallest gap.
MergeCandidate facing(const PointChain& a, const PointChain& b, size_t i, size_t j) {
  MergeCandidate best{i, j, false, false, std::numeric_limits<double>::infinity()};
  const Point2 ends_a[2] = {a.front(), a.back()};
  const Point2 ends_b[2] = {b.front(), b.back()};
  for (int ea = 0; ea < 2; ++ea) {
    for (int eb = 0; eb < 2; ++eb) {
      const double d = (ends_a[ea] - ends_b[eb]).norm();
      if (d < best.gap) {
        best.gap = d;
        best.flip_i = (ea == 0);  // facing end must be a's back
        best.flip_j = (eb == 1);  // and b's front
      }
    }
  }
  return best;
}

bool merge_conditions(const PointChain& ab, const PointChain& cd, double gap, double thr_rad) {
  const Point2 A = ab.front(), B = ab.back();
  const Point2 C = cd.front(), D = cd.back();
  const double len_ab = (B - A).norm();
  const double len_cd = (D - C).norm();
  if (len_ab < 1e-9 || len_cd < 1e-9) return false;

  // Too short with respect to the opposite segment, or both short with
  // respect to the gap (lengths in pixels, as the construction states).
  if (len_ab * len_ab < len_cd || len_cd * len_cd < len_ab) return false;
  if (len_ab * len_ab < gap && len_cd * len_cd < gap) return false;

  const Point2 u = (B - A) / len_ab;
  const Point2 v = (D - C) / len_cd;
  double cosang = std::clamp(u.dot(v), -1.0, 1.0);
  const double ang = std::acos(std::abs(cosang));  // tangent angle between lines
  if (ang > thr_rad) return false;
  if (u.dot(v) < 0) return false;  // must point into the same direction

  // Extensions must meet between the facing ends (collinear pairs pass by a
  // lateral-offset test instead).
  const double cross = u.x() * v.y() - u.y() * v.x();
  if (std::abs(cross) < 1e-6) {
    const Point2 bc = C - B;
    const double lateral = std::abs(u.x() * bc.y() - u.y() * bc.x());
    return lateral <= 2.0;
  }
  const Point2 ac = C - A;
  const double t = (ac.x() * v.y() - ac.y() * v.x()) / cross;   // along AB from A
  const double s = (ac.x() * u.y() - ac.y() * u.x()) / cross;   // along CD from C
  return t >= len_ab * 0.5 && s <= len_cd * 0.5;
}

}  // namespace

std::vector<PointChain> merge_segments(const std::vector<PointChain>& chains,
                                       double merge_angle_deg) {
  std::vector<PointChain> cur = chains;
  const double thr = merge_angle_deg * kPi / 180.0;
  bool merged_any = true;
  while (merged_any && cur.size() > 1) {
    merged_any = false;
    std::vector<MergeCandidate> cands;
    for (size_t i = 0; i < cur.size(); ++i) {
      for (size_t j = i + 1; j < cur.size(); ++j) {
        MergeCandidate c = facing(cur[i], cur[j], i, j);
        PointChain a = cur[i], b = cur[j];
        if (c.flip_i) std::reverse(a.begin(), a.end());
        if (c.flip_j) std::reverse(b.begin(), b.end());
        if (merge_conditions(a, b, c.gap, thr)) cands.push_back(c);
      }
    }
    std::sort(cands.begin(), cands.end(),
              [](const MergeCandidate& a, const MergeCandidate& b) { return a.gap < b.gap; });
    std::vector<uint8_t> taken(cur.size(), 0);
    std::vector<PointChain> next;
    for (const auto& c : cands) {
      if (taken[c.i] || taken[c.j]) continue;
      PointChain a = cur[c.i], b = cur[c.j];
      if (c.flip_i) std::reverse(a.begin(), a.end());
      if (c.flip_j) std::reverse(b.begin(), b.end());
      a.insert(a.end(), b.begin(), b.end());
      next.push_back(std::move(a));
      taken[c.i] = taken[c.j] = 1;
      merged_any = true;
    }
    for (size_t i = 0; i < cur.size(); ++i)
      if (!taken[i]) next.push_back(std::move(cur[i]));
    cur = std::move(next);
  }
  return cur;
}

Axis classify_axis(const PointChain& chain) {
  const Point2 d = chain.back() - chain.front();
  return std::abs(d.y()) > std::abs(d.x()) ? Axis::Vertical : Axis::Horizontal;
}

ParabolicCurve fit_parabola_least_squares(const std::vector<Point2>& pts, Axis axis) {
  if (pts.size() < 3) throw Error("fit_parabola: underdetermined");
  // Centered normal equations for numerical stability.
  double mx = 0;
  for (const auto& p : pts) mx += param_of(p, axis);
  mx /= static_cast<double>(pts.size());

  Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
  for (const auto& p : pts) {
    const double x = param_of(p, axis) - mx;
    const double y = ordinate_of(p, axis);
    const Eigen::Vector3d phi(x * x, x, 1.0);
    A += phi * phi.transpose();
    b += phi * y;
  }
  const Eigen::Vector3d c = A.ldlt().solve(b);
  ParabolicCurve out;
  out.axis = axis;
  // Undo the centering: a2 (x-mx)^2 + a1 (x-mx) + a0.
  out.a2 = c(0);
  out.a1 = c(1) - 2.0 * c(0) * mx;
  out.a0 = c(0) * mx * mx - c(1) * mx + c(2);
  out.support = pts;
  return out;
}

ParabolicCurve fit_parabola(const PointChain& chain, Axis axis, double rho, int max_iter,
                            uint64_t seed) {
  if (chain.size() < 3) throw Error("fit_parabola: underdetermined");
  if (rho <= 0) throw Error("fit_parabola: rho must be positive");
  const size_t n = chain.size();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, n - 1);

  ParabolicCurve best;
  best.axis = axis;
  size_t best_inliers = 0;
  double best_mse = std::numeric_limits<double>::infinity();
  bool found = false;

  for (int it = 0; it < max_iter; ++it) {
    const size_t i0 = pick(rng), i1 = pick(rng), i2 = pick(rng);
    if (i0 == i1 || i0 == i2 || i1 == i2) continue;
    double coeffs[3];
    if (!solve_three(chain[i0], chain[i1], chain[i2], axis, coeffs)) continue;
    ParabolicCurve cand;
    cand.axis = axis;
    cand.a0 = coeffs[0];
    cand.a1 = coeffs[1];
    cand.a2 = coeffs[2];

    size_t inliers = 0;
    double sse = 0;
    for (const auto& p : chain) {
      const double r2 = residual_sq(cand, p);
      if (r2 <= rho) {
        ++inliers;
        sse += r2;
      }
    }
    if (inliers < 3) continue;
    const double mse = sse / static_cast<double>(inliers);
    if (inliers > best_inliers || (inliers == best_inliers && mse < best_mse)) {
      best = cand;
      best_inliers = inliers;
      best_mse = mse;
      found = true;
    }
    if (static_cast<double>(best_inliers) >= 0.99 * static_cast<double>(n)) break;
  }

  if (!found) {
    // Every sample was degenerate; fall back to a direct least squares fit.
    return fit_parabola_least_squares(chain, axis);
  }

  std::vector<Point2> inlier_pts;
  inlier_pts.reserve(best_inliers);
  for (const auto& p : chain)
    if (residual_sq(best, p) <= rho) inlier_pts.push_back(p);

  ParabolicCurve refit = fit_parabola_least_squares(inlier_pts, axis);
  refit.support.clear();
  for (const auto& p : chain)
    if (residual_sq(refit, p) <= rho) refit.support.push_back(p);
  if (refit.support.size() < 3) refit.support = inlier_pts;
  return refit;
}

}  // namespace elcell::curves
