#include "elcell/lens.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace elcell::lens {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kOmegaEps = 1e-8;

/// Real roots of a polynomial (ascending coefficients) via the companion
/// matrix; leading zeros are trimmed first.
std::vector<double> real_roots(std::vector<double> coeffs) {
  while (!coeffs.empty() && std::abs(coeffs.back()) < 1e-14) coeffs.pop_back();
  if (coeffs.size() <= 1) {
    if (coeffs.empty()) throw Error("intersect_curves: degenerate pair");
    return {};  // nonzero constant: no roots
  }
  const int deg = static_cast<int>(coeffs.size()) - 1;
  if (deg == 1) return {-coeffs[0] / coeffs[1]};

  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(deg, deg);
  for (int i = 0; i < deg; ++i) comp(i, deg - 1) = -coeffs[i] / coeffs[deg];
  for (int i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
  std::vector<double> roots;
  for (int i = 0; i < deg; ++i) {
    const auto ev = es.eigenvalues()(i);
    if (std::abs(ev.imag()) < 1e-8 * (1.0 + std::abs(ev.real()))) roots.push_back(ev.real());
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

}  // namespace

NormalizedPoint normalize_point(const Point2& p, const LensParams& params, int width, int height) {
  if (width <= 0 || height <= 0) throw Error("normalize_point: bad dimensions");
  return {(p.x() - params.cx) / (params.sx * width), (p.y() - params.cy) / height};
}

Point2 denormalize_point(const NormalizedPoint& p, const LensParams& params, int width,
                         int height) {
  return {p.x * params.sx * width + params.cx, p.y * height + params.cy};
}

double radial_displacement(double r, double omega) {
  if (r < 0) throw Error("radial_displacement: r must be non-negative");
  if (omega < kOmegaEps) return r;
  return std::atan(2.0 * r * std::tan(omega / 2.0)) / omega;
}

double inverse_displacement(double r, double omega) {
  if (omega < kOmegaEps) return r;
  if (r * omega >= kPi / 2.0 - 1e-6) throw Error("inverse_displacement: outside invertible range");
  return std::tan(r * omega) / (2.0 * std::tan(omega / 2.0));
}

Point2 undistort_point(const Point2& p, const LensParams& params, int width, int height) {
  const NormalizedPoint nd = normalize_point(p, params, width, height);
  const double rd = nd.radius();
  if (rd < 1e-14 || params.omega < kOmegaEps) return p;
  const double factor = inverse_displacement(rd, params.omega) / rd;
  return denormalize_point({nd.x * factor, nd.y * factor}, params, width, height);
}

Point2 distort_point(const Point2& p, const LensParams& params, int width, int height) {
  const NormalizedPoint nu = normalize_point(p, params, width, height);
  const double ru = nu.radius();
  if (ru < 1e-14 || params.omega < kOmegaEps) return p;
  const double factor = radial_displacement(ru, params.omega) / ru;
  return denormalize_point({nu.x * factor, nu.y * factor}, params, width, height);
}

std::vector<Point2> intersect_curves(const ParabolicCurve& h, const ParabolicCurve& v, int width,
                                     int height) {
  if (h.axis != curves::Axis::Horizontal || v.axis != curves::Axis::Vertical)
    throw Error("intersect_curves: needs one horizontal and one vertical curve");
  const double a2 = h.a2, a1 = h.a1, a0 = h.a0;
  const double b2 = v.a2, b1 = v.a1, b0 = v.a0;

  // Substituting y = f_h(x) into x = f_v(y) yields a quartic in x.
  std::vector<double> poly = {
      a0 * a0 * b2 + a0 * b1 + b0,
      2.0 * a0 * a1 * b2 + a1 * b1 - 1.0,
      2.0 * a0 * a2 * b2 + a1 * a1 * b2 + a2 * b1,
      2.0 * a1 * a2 * b2,
      a2 * a2 * b2,
  };
  bool all_zero = true;
  for (double c : poly) all_zero &= std::abs(c) < 1e-14;
  if (all_zero) throw Error("intersect_curves: degenerate pair");

  const double margin_x = 0.1 * width, margin_y = 0.1 * height;
  std::vector<Point2> out;
  for (double x : real_roots(poly)) {
    const double y = h.value(x);
    if (x >= -margin_x && x <= width + margin_x && y >= -margin_y && y <= height + margin_y)
      out.emplace_back(x, y);
  }
  return out;
}

double estimate_distortion_factor(const std::vector<Point2>& p, const std::vector<Point2>& q) {
  if (p.empty() || p.size() != q.size())
    throw Error("estimate_distortion_factor: point sets must match and be non-empty");
  double pq = 0, pp = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    pq += p[i].dot(q[i]);
    pp += p[i].squaredNorm();
  }
  if (pp < 1e-300) throw Error("estimate_distortion_factor: degenerate reference points");
  return pq / pp;
}

double taylor_factor(double omega) {
  const double w2 = omega * omega;
  return 1.0 + w2 / 12.0 + w2 * w2 / 120.0;
}

double omega_from_factor(double k) {
  if (!std::isfinite(k)) throw Error("omega_from_factor: non-finite factor");
  if (k < 1.0) throw Error("omega_from_factor: no real solution");
  const double z = -5.0 + std::sqrt(25.0 + 120.0 * (k - 1.0));
  return std::sqrt(std::max(z, 0.0));
}

namespace {

struct ChordSystem {
  std::vector<Point2> p;  // chord points, normalized
  std::vector<Point2> q;  // curve points, normalized
};

constexpr int kChordSamples = 32;

// The measurement construction: per curve, q = samples of the polynomial
// over its support range, p = same-index points on the chord through the
// first and last sample, both in normalized coordinates.
void append_chord_pairs(const ParabolicCurve& c, const LensParams& params, int width, int height,
                        ChordSystem* sys) {
  const double t0 = c.min_param(), t1 = c.max_param();
  if (!(t1 > t0)) return;
  std::vector<Point2> q(kChordSamples);
  for (int i = 0; i < kChordSamples; ++i)
    q[i] = c.point_at(t0 + (t1 - t0) * i / (kChordSamples - 1));
  const Point2 e0 = q.front(), e1 = q.back();
  for (int i = 0; i < kChordSamples; ++i) {
    const double t = static_cast<double>(i) / (kChordSamples - 1);
    const Point2 chord = e0 + t * (e1 - e0);
    const NormalizedPoint pn = normalize_point(chord, params, width, height);
    const NormalizedPoint qn = normalize_point(q[i], params, width, height);
    sys->p.emplace_back(pn.x, pn.y);
    sys->q.emplace_back(qn.x, qn.y);
  }
}

// The factor the same construction would measure if the true parameter were
// omega: undistort each curve's endpoints, treat their connecting line as
// the world line, distort it and rebuild the chord system from a parabola
// fitted to the result.
double predicted_chord_factor(const std::vector<const ParabolicCurve*>& curves,
                              const LensParams& base, double omega, int width, int height) {
  LensParams trial = base;
  trial.omega = omega;
  ChordSystem sys;
  for (const ParabolicCurve* c : curves) {
    const Point2 e0 = c->point_at(c->min_param());
    const Point2 e1 = c->point_at(c->max_param());
    Point2 u0, u1;
    try {
      u0 = undistort_point(e0, trial, width, height);
      u1 = undistort_point(e1, trial, width, height);
    } catch (const Error&) {
      continue;
    }
    std::vector<Point2> sim(64);
    for (size_t i = 0; i < sim.size(); ++i) {
      const double t = static_cast<double>(i) / (sim.size() - 1);
      sim[i] = distort_point(u0 + t * (u1 - u0), trial, width, height);
    }
    ParabolicCurve fit = curves::fit_parabola_least_squares(sim, c->axis);
    append_chord_pairs(fit, base, width, height, &sys);
  }
  if (sys.p.empty()) return 1.0;
  return estimate_distortion_factor(sys.p, sys.q);
}

}  // namespace

LensParams initial_lens_params(const std::vector<ParabolicCurve>& h_curves,
                               const std::vector<ParabolicCurve>& v_curves, int width,
                               int height) {
  if (h_curves.empty() || v_curves.empty())
    throw Error("initial_lens_params: need curves of both orientations");

  LensParams params;
  params.sx = 1.0;
  params.cx = width / 2.0;
  params.cy = height / 2.0;

  // Center: intersection of the flattest pair (smallest |a2|).
  const auto flattest = [](const std::vector<ParabolicCurve>& cs) {
    const ParabolicCurve* best = &cs.front();
    for (const auto& c : cs)
      if (std::abs(c.a2) < std::abs(best->a2)) best = &c;
    return best;
  };
  const ParabolicCurve* h0 = flattest(h_curves);
  const ParabolicCurve* v0 = flattest(v_curves);
  try {
    const auto pts = intersect_curves(*h0, *v0, width, height);
    if (!pts.empty()) {
      // Closest intersection to the image center.
      const Point2 mid(width / 2.0, height / 2.0);
      Point2 best = pts.front();
      for (const auto& p : pts)
        if ((p - mid).norm() < (best - mid).norm()) best = p;
      params.cx = best.x();
      params.cy = best.y();
    }
  } catch (const Error&) {
    // fall back to the image center
  }

  // Distortion factor from the chord construction.
  std::vector<const ParabolicCurve*> all;
  for (const auto& c : h_curves) all.push_back(&c);
  for (const auto& c : v_curves) all.push_back(&c);
  ChordSystem sys;
  for (const ParabolicCurve* c : all) append_chord_pairs(*c, params, width, height, &sys);
  if (sys.p.empty()) {
    params.omega = 0.0;
    return params;
  }
  const double k_meas = estimate_distortion_factor(sys.p, sys.q);
  if (k_meas <= 1.0) {
    params.omega = 0.0;  // curves already straight
    return params;
  }

  // The raw Taylor inversion sees only the curve-vs-chord factor, which
  // understates the distortion; match the measurement against the factor the
  // model predicts for the identical construction and invert that instead.
  // omega_from_factor supplies the bracket's seed.
  double hi = kPi / 2.0;
  try {
    hi = std::clamp(4.0 * omega_from_factor(k_meas), 0.2, kPi / 2.0);
  } catch (const Error&) {
  }
  double lo = 0.0;
  if (predicted_chord_factor(all, params, hi, width, height) < k_meas) {
    params.omega = hi;
    return params;
  }
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (predicted_chord_factor(all, params, mid, width, height) < k_meas)
      lo = mid;
    else
      hi = mid;
  }
  params.omega = 0.5 * (lo + hi);
  return params;
}

double line_fit_error(const std::vector<Point2>& points) {
  const size_t m = points.size();
  if (m < 2) throw Error("line_fit_error: underdetermined");
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (const auto& p : points) {
    sx += p.x();
    sy += p.y();
    sxx += p.x() * p.x();
    sxy += p.x() * p.y();
    syy += p.y() * p.y();
  }
  const double t1 = sxx - sx * sx / static_cast<double>(m);
  const double t2 = sxy - sx * sy / static_cast<double>(m);
  const double t3 = syy - sy * sy / static_cast<double>(m);

  const double denom = 2.0 * std::sqrt((t1 - t3) * (t1 - t3) + 4.0 * t2 * t2);
  const double alpha = denom < 1e-300 ? 0.0 : (t1 - t3) / denom;
  const double sin_phi = std::sqrt(std::max(0.0, 0.5 - alpha));
  const double cos_phi = std::sqrt(std::max(0.0, 0.5 + alpha));
  return t1 * sin_phi * sin_phi - 2.0 * std::abs(t2) * sin_phi * cos_phi +
         t3 * cos_phi * cos_phi;
}

namespace {

// Per-point orthogonal distances to each curve's total-least-squares line;
// the summed squares equal the summed line-fit errors, but the residuals
// stay smooth near zero which the staged optimizer needs.
void tls_residuals(const std::vector<ParabolicCurve>& curvs, const LensParams& th, int width,
                   int height, Eigen::VectorXd* out) {
  int total = 0;
  for (const auto& c : curvs) total += static_cast<int>(c.support.size());
  out->resize(total);
  int idx = 0;
  for (const auto& c : curvs) {
    const size_t m = c.support.size();
    std::vector<Point2> und(m);
    double mx = 0, my = 0;
    for (size_t i = 0; i < m; ++i) {
      und[i] = undistort_point(c.support[i], th, width, height);
      mx += und[i].x();
      my += und[i].y();
    }
    mx /= static_cast<double>(m);
    my /= static_cast<double>(m);
    double t1 = 0, t2 = 0, t3 = 0;
    for (const auto& p : und) {
      t1 += (p.x() - mx) * (p.x() - mx);
      t2 += (p.x() - mx) * (p.y() - my);
      t3 += (p.y() - my) * (p.y() - my);
    }
    const double tr = t1 + t3, det = t1 * t3 - t2 * t2;
    const double lam = tr / 2.0 - std::sqrt(std::max(tr * tr / 4.0 - det, 0.0));
    double nx_, ny_;
    if (std::abs(t1 - lam) > std::abs(t3 - lam)) {
      nx_ = t2;
      ny_ = lam - t1;
    } else {
      nx_ = lam - t3;
      ny_ = t2;
    }
    const double nn = std::hypot(nx_, ny_);
    if (nn < 1e-30) {
      nx_ = 1;
      ny_ = 0;
    } else {
      nx_ /= nn;
      ny_ /= nn;
    }
    for (const auto& p : und) (*out)(idx++) = (p.x() - mx) * nx_ + (p.y() - my) * ny_;
  }
}

double total_error(const std::vector<ParabolicCurve>& curvs, const LensParams& th, int width,
                   int height) {
  double e = 0;
  for (const auto& c : curvs) {
    std::vector<Point2> und(c.support.size());
    for (size_t i = 0; i < c.support.size(); ++i)
      und[i] = undistort_point(c.support[i], th, width, height);
    e += line_fit_error(und);
  }
  return e;
}

void apply_step(LensParams* th, const std::vector<int>& free_idx, const Eigen::VectorXd& dx) {
  for (size_t j = 0; j < free_idx.size(); ++j) {
    switch (free_idx[j]) {
      case 0: th->omega += dx(j); break;
      case 1: th->cx += dx(j); break;
      case 2: th->cy += dx(j); break;
      case 3: th->sx += dx(j); break;
    }
  }
  th->omega = std::clamp(th->omega, 0.0, kPi * 0.49);
  th->sx = std::max(th->sx, 1e-3);
}

double param_of(const LensParams& th, int idx) {
  switch (idx) {
    case 0: return th.omega;
    case 1: return th.cx;
    case 2: return th.cy;
    default: return th.sx;
  }
}

// One Levenberg-Marquardt run over the given parameter subset.
bool lm_minimize(const std::vector<ParabolicCurve>& curvs, LensParams* th,
                 const std::vector<int>& free_idx, int width, int height, int max_iter) {
  Eigen::VectorXd f;
  tls_residuals(curvs, *th, width, height, &f);
  if (!f.allFinite()) return false;
  double cost = 0.5 * f.squaredNorm();
  double lambda = 1e-3;

  for (int it = 0; it < max_iter; ++it) {
    Eigen::MatrixXd J(f.size(), free_idx.size());
    for (size_t j = 0; j < free_idx.size(); ++j) {
      const int idx = free_idx[j];
      const double h = idx >= 1 && idx <= 2 ? 1e-2 : 1e-6 * std::max(1.0, std::abs(param_of(*th, idx)));
      LensParams tp = *th, tm = *th;
      Eigen::VectorXd step = Eigen::VectorXd::Zero(free_idx.size());
      step(j) = h;
      apply_step(&tp, free_idx, step);
      step(j) = -h;
      apply_step(&tm, free_idx, step);
      Eigen::VectorXd fp, fm;
      tls_residuals(curvs, tp, width, height, &fp);
      tls_residuals(curvs, tm, width, height, &fm);
      if (!fp.allFinite() || !fm.allFinite()) return false;
      J.col(j) = (fp - fm) / (2.0 * h);
    }
    const Eigen::VectorXd g = J.transpose() * f;
    const Eigen::MatrixXd H = J.transpose() * J;

    bool improved = false;
    for (int attempt = 0; attempt < 25; ++attempt) {
      Eigen::MatrixXd damped = H;
      for (int d = 0; d < damped.rows(); ++d)
        damped(d, d) += lambda * std::max(H(d, d), 1e-12);
      const Eigen::VectorXd dx = damped.ldlt().solve(-g);
      LensParams next = *th;
      apply_step(&next, free_idx, dx);
      Eigen::VectorXd fn;
      tls_residuals(curvs, next, width, height, &fn);
      if (fn.allFinite()) {
        const double cn = 0.5 * fn.squaredNorm();
        if (cn < cost) {
          *th = next;
          f = fn;
          cost = cn;
          lambda = std::max(lambda / 10.0, 1e-14);
          improved = true;
          break;
        }
      }
      lambda *= 10.0;
    }
    if (!improved || cost < 1e-28) break;
  }
  return true;
}

}  // namespace

RefineResult refine_lens_params(const std::vector<ParabolicCurve>& curves, const LensParams& init,
                                double epsilon, int width, int height) {
  RefineResult result;
  result.params = init;
  result.initial_error = total_error(curves, init, width, height);
  if (!std::isfinite(result.initial_error)) {
    result.params.valid = false;
    result.converged = false;
    result.final_error = result.initial_error;
    return result;
  }

  LensParams th = init;
  const std::vector<std::vector<int>> stages = {{0}, {0, 1, 2}, {0, 1, 2, 3}};
  for (const auto& stage : stages) {
    double prev = std::numeric_limits<double>::infinity();
    for (int outer = 0; outer < 50; ++outer) {
      if (!lm_minimize(curves, &th, stage, width, height, 200)) {
        result.params = init;
        result.params.valid = false;
        result.converged = false;
        result.final_error = result.initial_error;
        return result;
      }
      const double err = total_error(curves, th, width, height);
      if (prev < std::numeric_limits<double>::infinity() &&
          (prev - err) / std::max(err, 1e-300) < epsilon)
        break;
      prev = err;
    }
  }
  result.final_error = total_error(curves, th, width, height);
  if (result.final_error <= result.initial_error) {
    result.params = th;
  } else {
    result.params = init;  // never worse than the start
  }
  return result;
}

}  // namespace elcell::lens
