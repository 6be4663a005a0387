#include "elcell/gridmodel.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "elcell/imgproc.hpp"

namespace elcell::gridmodel {
namespace {

// Intersections of two same-orientation parabolas inside the image
// rectangle: roots of the quadratic difference.
bool parallel_intersect_in_image(const ParabolicCurve& a, const ParabolicCurve& b, int width,
                                 int height) {
  const double d2 = a.a2 - b.a2, d1 = a.a1 - b.a1, d0 = a.a0 - b.a0;
  std::vector<double> roots;
  if (std::abs(d2) < 1e-14) {
    if (std::abs(d1) < 1e-14) return std::abs(d0) < 1e-9;  // identical curves collide
    roots.push_back(-d0 / d1);
  } else {
    const double disc = d1 * d1 - 4.0 * d2 * d0;
    if (disc < 0) return false;
    const double sq = std::sqrt(disc);
    roots.push_back((-d1 - sq) / (2.0 * d2));
    roots.push_back((-d1 + sq) / (2.0 * d2));
  }
  const double limit = a.axis == Axis::Horizontal ? width : height;
  const double lo = 0, hi = limit;
  for (double t : roots) {
    if (t < lo || t > hi) continue;
    const double other = a.value(t);
    const double other_limit = a.axis == Axis::Horizontal ? height : width;
    if (other >= 0 && other <= other_limit) return true;
  }
  return false;
}

int count_perpendicular_intersections(const ParabolicCurve& h, const ParabolicCurve& v, int width,
                                      int height) {
  try {
    return static_cast<int>(lens::intersect_curves(h, v, width, height).size());
  } catch (const Error&) {
    return 0;
  }
}

double support_straightness_mse(const ParabolicCurve& c, const LensParams& th, int width,
                                int height) {
  if (c.support.size() < 2) return std::numeric_limits<double>::infinity();
  std::vector<Point2> und(c.support.size());
  for (size_t i = 0; i < c.support.size(); ++i) {
    try {
      und[i] = lens::undistort_point(c.support[i], th, width, height);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return lens::line_fit_error(und) / static_cast<double>(und.size());
}

double curve_position(const ParabolicCurve& c, double at) { return c.value(at); }

}  // namespace

void CurveGrid::rebuild_intersections(int width, int height) {
  intersections.clear();
  for (size_t i = 0; i < horizontal.size(); ++i) {
    for (size_t j = 0; j < vertical.size(); ++j) {
      const auto pts = lens::intersect_curves(horizontal[i], vertical[j], width, height);
      if (pts.size() == 1)
        intersections[{static_cast<int>(i), static_cast<int>(j)}] = pts.front();
    }
  }
}

std::pair<std::vector<ParabolicCurve>, std::vector<ParabolicCurve>> filter_grid_consistency(
    std::vector<ParabolicCurve> h_curves, std::vector<ParabolicCurve> v_curves, int width,
    int height) {
  if (h_curves.empty() && v_curves.empty()) return {h_curves, v_curves};
  while (true) {
    const size_t nh = h_curves.size(), nv = v_curves.size();
    std::vector<int> viol(nh + nv, 0);
    for (size_t i = 0; i < nh; ++i) {
      for (size_t j = 0; j < nv; ++j) {
        if (count_perpendicular_intersections(h_curves[i], v_curves[j], width, height) != 1) {
          viol[i]++;
          viol[nh + j]++;
        }
      }
    }
    for (size_t i = 0; i < nh; ++i)
      for (size_t j = i + 1; j < nh; ++j)
        if (parallel_intersect_in_image(h_curves[i], h_curves[j], width, height)) {
          viol[i]++;
          viol[j]++;
        }
    for (size_t i = 0; i < nv; ++i)
      for (size_t j = i + 1; j < nv; ++j)
        if (parallel_intersect_in_image(v_curves[i], v_curves[j], width, height)) {
          viol[nh + i]++;
          viol[nh + j]++;
        }
    const auto it = std::max_element(viol.begin(), viol.end());
    if (it == viol.end() || *it == 0) break;
    const size_t worst = static_cast<size_t>(it - viol.begin());
    if (worst < nh)
      h_curves.erase(h_curves.begin() + worst);
    else
      v_curves.erase(v_curves.begin() + worst - nh);
  }
  return {std::move(h_curves), std::move(v_curves)};
}

CurveGrid lo_ransac_grid(const std::vector<ParabolicCurve>& h_curves,
                         const std::vector<ParabolicCurve>& v_curves, const LensParams& params,
                         int width, int height, uint64_t seed) {
  if (h_curves.size() < 2 || v_curves.size() < 2) throw Error("lo_ransac_grid: insufficient curves");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick_h(0, h_curves.size() - 1);
  std::uniform_int_distribution<size_t> pick_v(0, v_curves.size() - 1);

  auto consistent_with_model = [&](const ParabolicCurve& c, const std::vector<const ParabolicCurve*>& mh,
                                   const std::vector<const ParabolicCurve*>& mv,
                                   const LensParams& th) {
    const auto& perp = c.axis == Axis::Horizontal ? mv : mh;
    const auto& par = c.axis == Axis::Horizontal ? mh : mv;
    for (const ParabolicCurve* m : perp) {
      const int n = c.axis == Axis::Horizontal
                        ? count_perpendicular_intersections(c, *m, width, height)
                        : count_perpendicular_intersections(*m, c, width, height);
      if (n != 1) return false;
    }
    for (const ParabolicCurve* m : par) {
      if (m == &c) continue;
      if (parallel_intersect_in_image(c, *m, width, height)) return false;
    }
    return support_straightness_mse(c, th, width, height) <= 1.0;
  };

  auto collect_inliers = [&](const std::vector<const ParabolicCurve*>& mh,
                             const std::vector<const ParabolicCurve*>& mv, const LensParams& th) {
    std::pair<std::vector<const ParabolicCurve*>, std::vector<const ParabolicCurve*>> in;
    for (const auto& c : h_curves)
      if (consistent_with_model(c, mh, mv, th)) in.first.push_back(&c);
    for (const auto& c : v_curves)
      if (consistent_with_model(c, mh, mv, th)) in.second.push_back(&c);
    return in;
  };

  size_t best_count = 0;
  double best_mse = std::numeric_limits<double>::infinity();
  std::pair<std::vector<const ParabolicCurve*>, std::vector<const ParabolicCurve*>> best;
  LensParams best_params = params;

  const int max_iter = 50;
  for (int it = 0; it < max_iter; ++it) {
    size_t h1 = pick_h(rng), h2 = pick_h(rng);
    size_t v1 = pick_v(rng), v2 = pick_v(rng);
    if (h1 == h2 || v1 == v2) continue;
    std::vector<const ParabolicCurve*> mh = {&h_curves[h1], &h_curves[h2]};
    std::vector<const ParabolicCurve*> mv = {&v_curves[v1], &v_curves[v2]};

    // The minimal model must itself be a valid grid.
    bool ok = !parallel_intersect_in_image(*mh[0], *mh[1], width, height) &&
              !parallel_intersect_in_image(*mv[0], *mv[1], width, height);
    for (const auto* h : mh)
      for (const auto* v : mv)
        ok = ok && count_perpendicular_intersections(*h, *v, width, height) == 1;
    if (!ok) continue;

    auto inliers = collect_inliers(mh, mv, params);
    size_t count = inliers.first.size() + inliers.second.size();
    LensParams th = params;

    if (count > best_count) {
      // Local optimization: refine the lens on the inlier support and
      // re-collect.
      std::vector<ParabolicCurve> all;
      for (const auto* c : inliers.first) all.push_back(*c);
      for (const auto* c : inliers.second) all.push_back(*c);
      if (all.size() >= 3) {
        const auto refined = lens::refine_lens_params(all, params, 1e-6, width, height);
        if (refined.params.valid) {
          auto in2 = collect_inliers(mh, mv, refined.params);
          if (in2.first.size() + in2.second.size() >= count) {
            inliers = std::move(in2);
            count = inliers.first.size() + inliers.second.size();
            th = refined.params;
          }
        }
      }
    }
    if (count < 4) continue;
    double mse = 0;
    for (const auto* c : inliers.first) mse += support_straightness_mse(*c, th, width, height);
    for (const auto* c : inliers.second) mse += support_straightness_mse(*c, th, width, height);
    if (count > best_count || (count == best_count && mse < best_mse)) {
      best_count = count;
      best_mse = mse;
      best = inliers;
      best_params = th;
    }
    if (best.first.size() == h_curves.size() && best.second.size() == v_curves.size()) break;
  }
  if (best_count < 4) throw Error("lo_ransac_grid: no consistent grid found");

  // Clean residual pairwise violations among the inliers themselves.
  std::vector<ParabolicCurve> hs, vs;
  for (const auto* c : best.first) hs.push_back(*c);
  for (const auto* c : best.second) vs.push_back(*c);
  auto [fh, fv] = filter_grid_consistency(std::move(hs), std::move(vs), width, height);

  CurveGrid grid;
  grid.horizontal = std::move(fh);
  grid.vertical = std::move(fv);
  const double midx = width / 2.0, midy = height / 2.0;
  std::sort(grid.horizontal.begin(), grid.horizontal.end(),
            [&](const auto& a, const auto& b) { return a.value(midx) < b.value(midx); });
  std::sort(grid.vertical.begin(), grid.vertical.end(),
            [&](const auto& a, const auto& b) { return a.value(midy) < b.value(midy); });
  grid.rebuild_intersections(width, height);
  return grid;
}

CurveGrid filter_halo_curves(const CurveGrid& grid, const GrayImage& img) {
  CurveGrid g = grid;
  const auto [otsu, mask] = imgproc::otsu_threshold(img);
  (void)mask;

  auto strip_mean = [&](const ParabolicCurve& a, const ParabolicCurve& b, Axis axis) {
    // Mean intensity sampled between two same-orientation curves across the
    // perpendicular extent of the grid.
    double lo_t, hi_t;
    if (axis == Axis::Horizontal) {
      lo_t = std::max(a.min_param(), b.min_param());
      hi_t = std::min(a.max_param(), b.max_param());
    } else {
      lo_t = std::max(a.min_param(), b.min_param());
      hi_t = std::min(a.max_param(), b.max_param());
    }
    if (hi_t <= lo_t) return 0.0;
    double sum = 0;
    int n = 0;
    const int steps_t = 160, steps_s = 12;
    for (int i = 0; i <= steps_t; ++i) {
      const double t = lo_t + (hi_t - lo_t) * i / steps_t;
      const double pa = curve_position(a, t), pb = curve_position(b, t);
      for (int j = 1; j < steps_s; ++j) {
        const double s = pa + (pb - pa) * j / steps_s;
        const double x = axis == Axis::Horizontal ? t : s;
        const double y = axis == Axis::Horizontal ? s : t;
        if (x < 0 || y < 0 || x > img.width - 1 || y > img.height - 1) continue;
        sum += img.sample(x, y);
        ++n;
      }
    }
    return n > 0 ? sum / n : 0.0;
  };

  auto prune = [&](std::vector<ParabolicCurve>& cs, Axis axis) {
    bool removed = true;
    while (removed && cs.size() > 2) {
      removed = false;
      if (strip_mean(cs[0], cs[1], axis) < otsu) {
        cs.erase(cs.begin());
        removed = true;
        continue;
      }
      if (strip_mean(cs[cs.size() - 2], cs.back(), axis) < otsu) {
        cs.pop_back();
        removed = true;
      }
    }
  };
  prune(g.horizontal, Axis::Horizontal);
  prune(g.vertical, Axis::Vertical);
  g.rebuild_intersections(img.width, img.height);
  return g;
}

std::vector<int> dbscan_1d(const std::vector<double>& values, double eps, int min_pts) {
  const size_t n = values.size();
  std::vector<int> labels(n, -2);  // -2 unvisited, -1 noise
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return values[a] < values[b]; });

  auto neighbors = [&](size_t i) {
    std::vector<size_t> out;
    for (size_t j = 0; j < n; ++j)
      if (std::abs(values[j] - values[i]) <= eps) out.push_back(j);
    return out;
  };

  int cluster = 0;
  for (size_t oi = 0; oi < n; ++oi) {
    const size_t i = order[oi];
    if (labels[i] != -2) continue;
    auto nb = neighbors(i);
    if (static_cast<int>(nb.size()) < min_pts) {
      labels[i] = -1;
      continue;
    }
    labels[i] = cluster;
    std::vector<size_t> frontier = nb;
    while (!frontier.empty()) {
      const size_t j = frontier.back();
      frontier.pop_back();
      if (labels[j] == -1) labels[j] = cluster;
      if (labels[j] != -2) continue;
      labels[j] = cluster;
      auto nj = neighbors(j);
      if (static_cast<int>(nj.size()) >= min_pts)
        frontier.insert(frontier.end(), nj.begin(), nj.end());
    }
    ++cluster;
  }
  return labels;
}

namespace {

struct SpacingClusters {
  std::vector<double> medians;  // cluster medians, descending by count
  std::vector<int> counts;
};

SpacingClusters cluster_spacings(const std::vector<double>& spacings) {
  SpacingClusters out;
  if (spacings.empty()) return out;
  std::vector<double> sorted = spacings;
  std::sort(sorted.begin(), sorted.end());
  const double med = sorted[sorted.size() / 2];
  const double eps = 0.15 * med;
  const auto labels = dbscan_1d(spacings, eps, 2);

  const int n_clusters = *std::max_element(labels.begin(), labels.end()) + 1;
  for (int c = 0; c < n_clusters; ++c) {
    std::vector<double> members;
    for (size_t i = 0; i < spacings.size(); ++i)
      if (labels[i] == c) members.push_back(spacings[i]);
    if (members.empty()) continue;
    std::sort(members.begin(), members.end());
    out.medians.push_back(members[members.size() / 2]);
    out.counts.push_back(static_cast<int>(members.size()));
  }
  // Order by member count, largest clusters first.
  std::vector<size_t> idx(out.medians.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return out.counts[a] > out.counts[b]; });
  SpacingClusters sorted_out;
  for (size_t i : idx) {
    sorted_out.medians.push_back(out.medians[i]);
    sorted_out.counts.push_back(out.counts[i]);
  }
  return sorted_out;
}

struct DimensionLayout {
  int segments = 1;
  double cell_side = 0;
  int count = 0;  // rows or cols
  std::vector<double> fractions = {1.0};
};

DimensionLayout layout_dimension(const std::vector<double>& positions) {
  DimensionLayout out;
  if (positions.size() < 2) throw Error("estimate_topology: too few curves");
  std::vector<double> spacings(positions.size() - 1);
  for (size_t i = 0; i + 1 < positions.size(); ++i) spacings[i] = positions[i + 1] - positions[i];

  auto clusters = cluster_spacings(spacings);
  if (clusters.medians.empty()) {
    // Everything is noise to DBSCAN; treat the median spacing as the cell.
    std::vector<double> sorted = spacings;
    std::sort(sorted.begin(), sorted.end());
    clusters.medians = {sorted[sorted.size() / 2]};
    clusters.counts = {static_cast<int>(sorted.size())};
  }

  const double extent = positions.back() - positions.front();
  if (clusters.medians.size() == 1) {
    out.segments = 1;
    out.cell_side = clusters.medians[0];
    out.fractions = {1.0};
  } else {
    // Two largest clusters describe a symmetric segment layout. Equal
    // multiplicities mean an even segment count (outer, inner, inner,
    // outer); a 2:1 ratio means the odd layout (outer, inner, outer).
    const double m0 = clusters.medians[0], m1 = clusters.medians[1];
    const int c0 = clusters.counts[0], c1 = clusters.counts[1];
    const double outer = std::min(m0, m1), inner = std::max(m0, m1);
    const int outer_count = outer == m0 ? c0 : c1;
    const int inner_count = outer == m0 ? c1 : c0;
    if (outer_count >= inner_count * 3 / 2) {
      out.segments = 3;
      out.cell_side = 2 * outer + inner;
      out.fractions = {outer / out.cell_side, inner / out.cell_side, outer / out.cell_side};
    } else {
      out.segments = 4;
      out.cell_side = 2 * outer + 2 * inner;
      out.fractions = {outer / out.cell_side, inner / out.cell_side, inner / out.cell_side,
                       outer / out.cell_side};
    }
  }
  out.segments = std::min(out.segments, 4);

  const double ratio = extent / out.cell_side;
  out.count = std::max(1, static_cast<int>(std::lround(ratio)));
  if (std::abs(ratio - out.count) > 0.15 * std::max(1.0, ratio))
    throw Error("estimate_topology: topology inference failed");
  return out;
}

}  // namespace

ModuleTopology estimate_topology(const CurveGrid& grid, double cell_aspect) {
  if (grid.horizontal.size() < 2 || grid.vertical.size() < 2)
    throw Error("estimate_topology: grid must be at least 2x2");

  // Curve positions at the grid midpoint.
  double midx = 0, midy = 0;
  int n = 0;
  for (const auto& [key, p] : grid.intersections) {
    midx += p.x();
    midy += p.y();
    ++n;
  }
  if (n == 0) throw Error("estimate_topology: grid has no intersections");
  midx /= n;
  midy /= n;

  std::vector<double> hpos, vpos;
  for (const auto& c : grid.horizontal) hpos.push_back(c.value(midx));
  for (const auto& c : grid.vertical) vpos.push_back(c.value(midy));
  std::sort(hpos.begin(), hpos.end());
  std::sort(vpos.begin(), vpos.end());

  const DimensionLayout ydim = layout_dimension(hpos);  // rows / horizontal busbars
  const DimensionLayout xdim = layout_dimension(vpos);  // cols / vertical busbars

  ModuleTopology topo;
  topo.cell_aspect = cell_aspect;
  if (ydim.segments > 1 && xdim.segments > 1)
    throw Error("estimate_topology: both dimensions subdivided");
  if (ydim.segments > 1 || xdim.segments == 1) {
    topo.segment_orientation = Axis::Horizontal;
    topo.segments_per_cell = ydim.segments;
    topo.segment_fractions = ydim.fractions;
  } else {
    topo.segment_orientation = Axis::Vertical;
    topo.segments_per_cell = xdim.segments;
    topo.segment_fractions = xdim.fractions;
  }
  topo.rows = ydim.count;
  topo.cols = xdim.count;
  return topo;
}

std::vector<Point2> synthesize_grid(const ModuleTopology& topology, double cell_px) {
  if (topology.rows < 1 || topology.cols < 1) throw Error("synthesize_grid: bad topology");
  const double cw = cell_px * topology.cell_aspect;
  const double ch = cell_px;

  auto line_positions = [&](int count, double side, bool subdivided) {
    std::vector<double> pos;
    for (int i = 0; i < count; ++i) {
      pos.push_back(i * side);
      if (subdivided) {
        double acc = 0;
        for (size_t s = 0; s + 1 < topology.segment_fractions.size(); ++s) {
          acc += topology.segment_fractions[s];
          pos.push_back(i * side + acc * side);
        }
      }
    }
    pos.push_back(count * side);
    return pos;
  };

  const bool horiz_busbars = topology.segment_orientation == Axis::Horizontal &&
                             topology.segments_per_cell > 1;
  const bool vert_busbars = topology.segment_orientation == Axis::Vertical &&
                            topology.segments_per_cell > 1;
  const auto ys = line_positions(topology.rows, ch, horiz_busbars);
  const auto xs = line_positions(topology.cols, cw, vert_busbars);

  std::vector<Point2> pts;
  pts.reserve(xs.size() * ys.size());
  for (double y : ys)
    for (double x : xs) pts.emplace_back(x, y);
  return pts;
}

Registration register_grids(const std::vector<Point2>& synthetic,
                            const std::vector<Point2>& observed, uint64_t seed) {
  if (synthetic.size() < 3 || observed.size() < 3)
    throw Error("register_grids: need at least 3 points per set");

  std::vector<Point2> obs = observed;
  std::vector<int> obs_index(observed.size());
  std::iota(obs_index.begin(), obs_index.end(), 0);
  if (obs.size() > synthetic.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(obs_index.begin(), obs_index.end(), rng);
    obs_index.resize(synthetic.size());
    std::sort(obs_index.begin(), obs_index.end());
    std::vector<Point2> sub;
    for (int i : obs_index) sub.push_back(observed[i]);
    obs = std::move(sub);
  }

  const size_t M = synthetic.size(), N = obs.size();
  const double w_out = std::clamp(1.0 - static_cast<double>(synthetic.size()) /
                                            static_cast<double>(observed.size()),
                                  0.05, 0.9);

  // Rigid CPD (Myronenko & Song) with scaling.
  Eigen::MatrixXd X(N, 2), Y(M, 2);
  for (size_t i = 0; i < N; ++i) X.row(i) = obs[i].transpose();
  for (size_t i = 0; i < M; ++i) Y.row(i) = synthetic[i].transpose();

  double rot = 0, scale = 1;
  Eigen::Vector2d t = Eigen::Vector2d::Zero();
  // Init: centroid shift + RMS scale.
  const Eigen::RowVector2d mx = X.colwise().mean(), my = Y.colwise().mean();
  {
    const double sx = std::sqrt((X.rowwise() - mx).squaredNorm() / N);
    const double sy = std::sqrt((Y.rowwise() - my).squaredNorm() / M);
    scale = sy > 1e-12 ? sx / sy : 1.0;
    t = (mx - my * scale).transpose();
  }

  auto transform_Y = [&]() -> Eigen::MatrixXd {
    Eigen::Matrix2d R;
    R << std::cos(rot), -std::sin(rot), std::sin(rot), std::cos(rot);
    return ((Y * R.transpose()) * scale).rowwise() + t.transpose();
  };
  const double scale_init = scale;

  // Grid pitch of the model set, for the spread floor below.
  double pitch2 = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < M; ++i)
    for (size_t j = i + 1; j < M; ++j)
      pitch2 = std::min(pitch2, (Y.row(i) - Y.row(j)).squaredNorm());
  pitch2 *= scale_init * scale_init;

  // Initialize the mixture spread from nearest-neighbor residuals under the
  // centroid alignment. The classic all-pairs initialization is far wider
  // than the grid pitch and lets EM collapse every centroid onto the data
  // centroid (scale -> 0) for periodic point sets.
  Eigen::MatrixXd TY = transform_Y();
  double sigma2 = 0;
  for (size_t n_i = 0; n_i < N; ++n_i) {
    double nn = std::numeric_limits<double>::infinity();
    for (size_t m_i = 0; m_i < M; ++m_i)
      nn = std::min(nn, (X.row(n_i) - TY.row(m_i)).squaredNorm());
    sigma2 += nn;
  }
  sigma2 = std::max(sigma2 / (2.0 * N), 0.0025 * pitch2);

  Eigen::MatrixXd P(M, N);
  bool converged = false;
  for (int it = 0; it < 150; ++it) {
    TY = transform_Y();
    // E-step.
    const double c_uniform =
        std::pow(2.0 * M_PI * sigma2, 1.0) * (w_out / (1.0 - w_out)) * static_cast<double>(M) /
        static_cast<double>(N);
    for (size_t n_i = 0; n_i < N; ++n_i) {
      double denom = c_uniform;
      for (size_t m_i = 0; m_i < M; ++m_i)
        denom += std::exp(-(X.row(n_i) - TY.row(m_i)).squaredNorm() / (2.0 * sigma2));
      for (size_t m_i = 0; m_i < M; ++m_i)
        P(m_i, n_i) =
            std::exp(-(X.row(n_i) - TY.row(m_i)).squaredNorm() / (2.0 * sigma2)) / denom;
    }
    // M-step (similarity transform).
    const double Np = P.sum();
    if (Np < 1e-9) break;
    const Eigen::RowVector2d mu_x = (P.transpose().colwise().sum() * X).eval() / Np;
    // mu_x = sum_n (sum_m P_mn) x_n / Np
    Eigen::RowVector2d mux = Eigen::RowVector2d::Zero(), muy = Eigen::RowVector2d::Zero();
    for (size_t n_i = 0; n_i < N; ++n_i) {
      const double pn = P.col(n_i).sum();
      mux += pn * X.row(n_i);
    }
    mux /= Np;
    for (size_t m_i = 0; m_i < M; ++m_i) {
      const double pm = P.row(m_i).sum();
      muy += pm * Y.row(m_i);
    }
    muy /= Np;
    (void)mu_x;

    Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
    double yPy = 0;
    for (size_t m_i = 0; m_i < M; ++m_i) {
      const Eigen::RowVector2d yc = Y.row(m_i) - muy;
      yPy += P.row(m_i).sum() * yc.squaredNorm();
      for (size_t n_i = 0; n_i < N; ++n_i) {
        if (P(m_i, n_i) < 1e-15) continue;
        A += P(m_i, n_i) * (X.row(n_i) - mux).transpose() * yc;
      }
    }
    Eigen::JacobiSVD<Eigen::Matrix2d> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix2d C = Eigen::Matrix2d::Identity();
    C(1, 1) = (svd.matrixU() * svd.matrixV().transpose()).determinant();
    const Eigen::Matrix2d R = svd.matrixU() * C * svd.matrixV().transpose();
    const double new_scale = (svd.singularValues().asDiagonal() * C).trace() / std::max(yPy, 1e-12);

    double xPx = 0;
    for (size_t n_i = 0; n_i < N; ++n_i)
      xPx += P.col(n_i).sum() * (X.row(n_i) - mux).squaredNorm();

    rot = std::atan2(R(1, 0), R(0, 0));
    scale = std::clamp(new_scale, 0.25 * scale_init, 4.0 * scale_init);
    t = (mux - muy * scale * R.transpose()).transpose();

    const double new_sigma2 =
        std::max((xPx - new_scale * (svd.singularValues().asDiagonal() * C).trace()) /
                     (2.0 * Np),
                 1e-12);
    if (std::abs(new_sigma2 - sigma2) < 1e-10 * sigma2 || new_sigma2 < 1e-8 * pitch2) {
      sigma2 = new_sigma2;
      converged = true;
      break;
    }
    sigma2 = new_sigma2;
  }

  // Maximum-responsibility correspondences per synthetic point, from a final
  // E-step over the full observed set (the subsample only drives the EM).
  TY = transform_Y();
  Registration reg;
  reg.converged = converged;
  reg.transform.rotation = rot;
  reg.transform.scale = scale;
  reg.transform.translation = Point2(t.x(), t.y());
  reg.correspondences.assign(M, -1);

  const double s2 = std::max(sigma2, 1e-4 * pitch2);
  const size_t n_full = observed.size();
  const double c_uniform = 2.0 * M_PI * s2 * (w_out / (1.0 - w_out)) * static_cast<double>(M) /
                           static_cast<double>(n_full);
  std::vector<double> denom(n_full, c_uniform);
  for (size_t n_i = 0; n_i < n_full; ++n_i)
    for (size_t m_i = 0; m_i < M; ++m_i)
      denom[n_i] +=
          std::exp(-(observed[n_i] - Point2(TY(m_i, 0), TY(m_i, 1))).squaredNorm() / (2.0 * s2));
  for (size_t m_i = 0; m_i < M; ++m_i) {
    int best = -1;
    double best_p = 0;
    const Point2 ty(TY(m_i, 0), TY(m_i, 1));
    for (size_t n_i = 0; n_i < n_full; ++n_i) {
      const double p =
          std::exp(-(observed[n_i] - ty).squaredNorm() / (2.0 * s2)) / denom[n_i];
      if (p > best_p) {
        best_p = p;
        best = static_cast<int>(n_i);
      }
    }
    if (best >= 0 && best_p > 0.3) reg.correspondences[m_i] = best;
  }
  return reg;
}

}  // namespace elcell::gridmodel
