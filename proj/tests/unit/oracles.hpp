#pragma once

// Independent reference implementations used to pin expected test values.
// Everything here recomputes results from first principles and must stay
// decoupled from the library code paths it checks.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "elcell/image.hpp"

namespace oracles {

using elcell::BinaryMask;
using elcell::GrayImage;

// Exhaustive Otsu: tries every histogram split and recomputes the class
// statistics from scratch each time.
inline int brute_force_otsu_bin(const GrayImage& img) {
  auto bin_of = [](float v) { return std::clamp(static_cast<int>(v * 256.f), 0, 255); };
  std::array<size_t, 256> hist{};
  for (float v : img.data) hist[bin_of(v)]++;

  int tie_first = -1, tie_last = -1;
  double best = -1;
  for (int k = 0; k < 256; ++k) {
    double w0 = 0, w1 = 0, s0 = 0, s1 = 0;
    for (int i = 0; i <= k; ++i) {
      w0 += static_cast<double>(hist[i]);
      s0 += static_cast<double>(hist[i]) * i;
    }
    for (int i = k + 1; i < 256; ++i) {
      w1 += static_cast<double>(hist[i]);
      s1 += static_cast<double>(hist[i]) * i;
    }
    if (w0 == 0 || w1 == 0) continue;
    const double mu0 = s0 / w0, mu1 = s1 / w1;
    const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (var > best) {
      best = var;
      tie_first = tie_last = k;
    } else if (var == best) {
      tie_last = k;
    }
  }
  return (tie_first + tie_last) / 2;
}

// Dense Gaussian blur by direct 2-D summation with clipped renormalized
// windows.
inline GrayImage direct_gaussian_blur(const GrayImage& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0, wsum = 0;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || xx >= img.width || yy < 0 || yy >= img.height) continue;
          const double w = std::exp(-(double(dx) * dx + double(dy) * dy) / (2 * sigma * sigma));
          acc += w * img.at(xx, yy);
          wsum += w;
        }
      }
      out.at(x, y) = static_cast<float>(acc / wsum);
    }
  }
  return out;
}

// Smallest eigenvalue of the centered 2x2 scatter matrix: the analytic
// total-least-squares residual.
inline double scatter_min_eigenvalue(const std::vector<std::pair<double, double>>& pts) {
  const double m = static_cast<double>(pts.size());
  double sx = 0, sy = 0;
  for (auto [x, y] : pts) {
    sx += x;
    sy += y;
  }
  const double mx = sx / m, my = sy / m;
  double a = 0, b = 0, c = 0;
  for (auto [x, y] : pts) {
    a += (x - mx) * (x - mx);
    b += (x - mx) * (y - my);
    c += (y - my) * (y - my);
  }
  const double tr = a + c;
  const double det = a * c - b * b;
  return tr / 2.0 - std::sqrt(std::max(tr * tr / 4.0 - det, 0.0));
}

// Brute-force line-fit residual: scan the line angle, then polish the best
// bracket by golden-section search. Minimizes the summed squared orthogonal
// distances to the best offset line at each angle.
inline double line_scan_residual(const std::vector<std::pair<double, double>>& pts, int steps) {
  auto at_angle = [&](double phi) {
    const double nx = std::cos(phi), ny = std::sin(phi);
    double mean = 0;
    for (auto [x, y] : pts) mean += nx * x + ny * y;
    mean /= static_cast<double>(pts.size());
    double sse = 0;
    for (auto [x, y] : pts) {
      const double d = nx * x + ny * y - mean;
      sse += d * d;
    }
    return sse;
  };
  double best = std::numeric_limits<double>::infinity();
  int best_i = 0;
  for (int i = 0; i < steps; ++i) {
    const double v = at_angle(M_PI * i / steps);
    if (v < best) {
      best = v;
      best_i = i;
    }
  }
  double lo = M_PI * (best_i - 1) / steps, hi = M_PI * (best_i + 1) / steps;
  const double gr = (std::sqrt(5.0) - 1) / 2;
  double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
  double fa = at_angle(a), fb = at_angle(b);
  for (int it = 0; it < 200; ++it) {
    if (fa < fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - gr * (hi - lo);
      fa = at_angle(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + gr * (hi - lo);
      fb = at_angle(b);
    }
  }
  return std::min({best, fa, fb});
}

// Sign-change scan + bisection for polynomial roots on [lo, hi].
inline std::vector<double> bracketed_roots(const std::vector<double>& coeffs, double lo, double hi,
                                           int steps = 40000) {
  auto eval = [&](double x) {
    double v = 0;
    for (size_t i = coeffs.size(); i-- > 0;) v = v * x + coeffs[i];
    return v;
  };
  std::vector<double> roots;
  double prev_x = lo, prev_v = eval(lo);
  for (int i = 1; i <= steps; ++i) {
    const double x = lo + (hi - lo) * i / steps;
    const double v = eval(x);
    if (prev_v == 0.0) roots.push_back(prev_x);
    if (prev_v * v < 0) {
      double a = prev_x, b = x;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (a + b);
        if (eval(a) * eval(mid) <= 0)
          b = mid;
        else
          a = mid;
      }
      roots.push_back(0.5 * (a + b));
    }
    prev_x = x;
    prev_v = v;
  }
  return roots;
}

// Rasterized polygon area of a convex hull of integer points (shoelace over
// the hull polygon).
inline double polygon_area(std::vector<std::pair<int, int>> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  auto cross = [](auto& o, auto& a, auto& b) {
    return static_cast<long long>(a.first - o.first) * (b.second - o.second) -
           static_cast<long long>(a.second - o.second) * (b.first - o.first);
  };
  std::vector<std::pair<int, int>> hull(2 * pts.size());
  size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  const size_t lower = k + 1;
  for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0) --k;
    hull[k++] = *it;
  }
  hull.resize(k > 1 ? k - 1 : k);
  double area = 0;
  for (size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    area += static_cast<double>(a.first) * b.second - static_cast<double>(b.first) * a.second;
  }
  return std::abs(area) / 2.0;
}

// Renders a blurred line y = y0 + slope * x of Gaussian cross profile.
inline GrayImage render_line(int w, int h, double y0, double slope, double width_sigma,
                              double amplitude = 1.0) {
  GrayImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d = y - (y0 + slope * x);
      img.at(x, y) =
          static_cast<float>(amplitude * std::exp(-d * d / (2 * width_sigma * width_sigma)));
    }
  return img;
}

}  // namespace oracles
