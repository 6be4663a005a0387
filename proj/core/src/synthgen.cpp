#include "elcell/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "elcell/parallel.hpp"

namespace elcell::synthgen {
namespace {

constexpr double kPi = std::numbers::pi;

constexpr float kBackground = 0.045f;
constexpr float kGapLevel = 0.02f;
constexpr float kBusbarLevel = 0.03f;
constexpr float kCellBase = 0.82f;

double smoothstep(double lo, double hi, double v) {
  const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

uint64_t hash_mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double lattice_value(int ix, int iy, uint64_t seed) {
  const uint64_t h = hash_mix(seed ^ hash_mix((uint64_t(uint32_t(ix)) << 32) | uint32_t(iy)));
  return static_cast<double>(h >> 11) / static_cast<double>(1ull << 53);
}

// Smooth deterministic value noise in [0, 1].
double value_noise(double x, double y, double cell, uint64_t seed) {
  const double u = x / cell, v = y / cell;
  const int ix = static_cast<int>(std::floor(u)), iy = static_cast<int>(std::floor(v));
  const double fx = u - ix, fy = v - iy;
  const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
  const double v00 = lattice_value(ix, iy, seed), v10 = lattice_value(ix + 1, iy, seed);
  const double v01 = lattice_value(ix, iy + 1, seed), v11 = lattice_value(ix + 1, iy + 1, seed);
  return (v00 * (1 - sx) + v10 * sx) * (1 - sy) + (v01 * (1 - sx) + v11 * sx) * sy;
}

// Signed distance to a rounded rectangle centered at c with half extents e
// and corner radius r (negative inside).
double rounded_rect_sdf(double px, double py, double cx, double cy, double ex, double ey,
                        double r) {
  const double qx = std::abs(px - cx) - (ex - r);
  const double qy = std::abs(py - cy) - (ey - r);
  const double ax = std::max(qx, 0.0), ay = std::max(qy, 0.0);
  return std::hypot(ax, ay) + std::min(std::max(qx, qy), 0.0) - r;
}

struct CrackPath {
  std::vector<curves::Point2> pts;
  double width = 3.0;
};

double dist_to_polyline(double x, double y, const CrackPath& path) {
  double best = 1e30;
  for (size_t i = 0; i + 1 < path.pts.size(); ++i) {
    const auto& a = path.pts[i];
    const auto& b = path.pts[i + 1];
    const curves::Point2 ab = b - a;
    const double len2 = ab.squaredNorm();
    double t = len2 > 1e-12 ? ((curves::Point2(x, y) - a).dot(ab)) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const curves::Point2 proj = a + t * ab;
    best = std::min(best, std::hypot(x - proj.x(), y - proj.y()));
  }
  return best;
}

struct PlanarModel {
  const ModuleSpec* spec;
  double margin, pitch_x, pitch_y;
  double corner_radius;
  std::vector<double> busbar_centers;  // offsets within a cell pitch
  std::vector<std::vector<CrackPath>> cracks;  // per cell
  std::vector<uint8_t> dark;                   // per cell
  uint64_t noise_seed;

  double origin_x() const { return margin; }
  double origin_y() const { return margin; }

  // Cell geometry coverage at a planar point: cell body (no busbars) in
  // [0,1] for a given cell, with ~1.5 px soft edges.
  double cell_coverage(int row, int col, double px, double py) const {
    const double gap = spec->gap_px;
    const double cx = origin_x() + (col + 0.5) * pitch_x;
    const double cy = origin_y() + (row + 0.5) * pitch_y;
    const double ex = (pitch_x - gap) / 2.0, ey = (pitch_y - gap) / 2.0;
    const double d = rounded_rect_sdf(px, py, cx, cy, ex, ey, corner_radius);
    return smoothstep(0.75, -0.75, d);
  }

  double busbar_coverage(int row, int col, double px, double py) const {
    if (busbar_centers.empty()) return 0.0;
    const double half = spec->busbar_px / 2.0;
    double cover = 0.0;
    for (double offset : busbar_centers) {
      double d;
      if (spec->segment_orientation == curves::Axis::Horizontal) {
        const double line_y = origin_y() + row * pitch_y + offset * pitch_y;
        d = std::abs(py - line_y) - half;
      } else {
        const double line_x = origin_x() + col * pitch_x + offset * pitch_x;
        d = std::abs(px - line_x) - half;
      }
      cover = std::max(cover, smoothstep(0.75, -0.75, d));
    }
    return cover;
  }

  // Full rendered intensity at a planar point.
  float intensity(double px, double py) const {
    const int col = static_cast<int>(std::floor((px - origin_x()) / pitch_x));
    const int row = static_cast<int>(std::floor((py - origin_y()) / pitch_y));
    if (col < 0 || col >= spec->cols || row < 0 || row >= spec->rows) {
      // Border strip around the module renders as a gap-dark line.
      const double bx = origin_x() + spec->cols * pitch_x;
      const double by = origin_y() + spec->rows * pitch_y;
      const double d = std::max({origin_x() - px, px - bx, origin_y() - py, py - by});
      if (d < spec->gap_px / 2.0) return kGapLevel;
      return kBackground;
    }
    const double cov = cell_coverage(row, col, px, py);
    if (cov <= 0.0) return kGapLevel;

    double tex;
    if (spec->texture == Texture::Mono) {
      const double cx = origin_x() + (col + 0.5) * pitch_x;
      const double cy = origin_y() + (row + 0.5) * pitch_y;
      const double rr = (std::pow(px - cx, 2) + std::pow(py - cy, 2)) /
                        (0.25 * (pitch_x * pitch_x + pitch_y * pitch_y));
      tex = 1.0 - 0.10 * rr;
    } else {
      tex = 0.78 + 0.32 * value_noise(px, py, 26.0, noise_seed);
    }
    double cell_value = kCellBase * tex;
    const size_t ci = static_cast<size_t>(row) * spec->cols + col;
    if (dark[ci]) cell_value *= 0.16;
    for (const auto& crack : cracks[ci]) {
      const double d = dist_to_polyline(px, py, crack) - crack.width / 2.0;
      const double cw = smoothstep(0.75, -0.75, d);
      cell_value = cell_value * (1.0 - 0.85 * cw);
    }
    double v = kGapLevel + (cell_value - kGapLevel) * cov;
    const double bb = busbar_coverage(row, col, px, py);
    v = v * (1.0 - bb) + kBusbarLevel * bb;
    return static_cast<float>(v);
  }

  // Ground-truth mask value of one cell (cell body minus busbars).
  float mask_value(int row, int col, double px, double py) const {
    const double cov = cell_coverage(row, col, px, py);
    if (cov <= 0.0) return 0.f;
    return static_cast<float>(cov * (1.0 - busbar_coverage(row, col, px, py)));
  }
};

}  // namespace

GeneratedModule generate_module(const ModuleSpec& spec) {
  if (spec.rows < 1 || spec.cols < 1 || spec.cell_px < 16 || spec.segments < 1 ||
      spec.segments > 4 || spec.omega < 0 || spec.omega > kPi / 2)
    throw Error("generate_module: invalid spec");

  PlanarModel model;
  model.spec = &spec;
  model.pitch_x = spec.cell_px + spec.gap_px;
  model.pitch_y = spec.cell_px + spec.gap_px;
  model.margin = std::max(80.0, 0.08 * std::max(spec.cols * model.pitch_x, spec.rows * model.pitch_y));
  model.corner_radius = spec.cell_px / 14.0;
  model.noise_seed = hash_mix(spec.seed ^ 0xa0a0ull);

  // Busbar centerline offsets (fractions of the pitch), symmetric.
  if (spec.segments == 2) {
    model.busbar_centers = {0.5};
  } else if (spec.segments == 3) {
    model.busbar_centers = {0.2, 0.8};
  } else if (spec.segments == 4) {
    model.busbar_centers = {0.2, 0.5, 0.8};
  }

  // Defects.
  model.cracks.assign(static_cast<size_t>(spec.rows) * spec.cols, {});
  model.dark.assign(static_cast<size_t>(spec.rows) * spec.cols, 0);
  for (const auto& d : spec.defects) {
    if (d.row < 0 || d.row >= spec.rows || d.col < 0 || d.col >= spec.cols) continue;
    const size_t ci = static_cast<size_t>(d.row) * spec.cols + d.col;
    if (d.type == DefectType::Dark) {
      model.dark[ci] = 1;
    } else {
      std::mt19937_64 rng(hash_mix(spec.seed ^ (ci * 0x51ull + 7)));
      std::uniform_real_distribution<double> uni(0.15, 0.85);
      CrackPath path;
      path.width = 2.0 + 2.0 * (rng() % 1000) / 1000.0;
      const double x0 = model.origin_x() + d.col * model.pitch_x;
      const double y0 = model.origin_y() + d.row * model.pitch_y;
      const int n_pts = 4;
      const bool across_x = rng() % 2 == 0;
      for (int i = 0; i < n_pts; ++i) {
        const double t = 0.1 + 0.8 * i / (n_pts - 1);
        if (across_x)
          path.pts.emplace_back(x0 + t * model.pitch_x, y0 + uni(rng) * model.pitch_y);
        else
          path.pts.emplace_back(x0 + uni(rng) * model.pitch_x, y0 + t * model.pitch_y);
      }
      model.cracks[ci].push_back(std::move(path));
    }
  }

  const int width = static_cast<int>(std::lround(spec.cols * model.pitch_x + 2 * model.margin));
  const int height = static_cast<int>(std::lround(spec.rows * model.pitch_y + 2 * model.margin));

  GeneratedModule out;
  out.width = width;
  out.height = height;
  out.gt_params.cx = width / 2.0 + spec.center_offset_x;
  out.gt_params.cy = height / 2.0 + spec.center_offset_y;
  out.gt_params.sx = 1.0;
  out.gt_params.omega = spec.omega;

  out.gt_topology.rows = spec.rows;
  out.gt_topology.cols = spec.cols;
  out.gt_topology.segments_per_cell = spec.segments;
  out.gt_topology.segment_orientation = spec.segment_orientation;
  out.gt_topology.cell_aspect = 1.0;
  if (spec.segments == 1) {
    out.gt_topology.segment_fractions = {1.0};
  } else {
    out.gt_topology.segment_fractions.clear();
    double prev = 0;
    for (double b : model.busbar_centers) {
      out.gt_topology.segment_fractions.push_back(b - prev);
      prev = b;
    }
    out.gt_topology.segment_fractions.push_back(1.0 - prev);
  }

  // Inverse geometric chain: output pixel -> undistort -> rotate back ->
  // planar coordinates.
  const double rot = spec.rotation_deg * kPi / 180.0;
  const double cr = std::cos(-rot), sr = std::sin(-rot);
  const double rcx = width / 2.0, rcy = height / 2.0;
  auto to_planar = [&](double x, double y, double* px, double* py) {
    curves::Point2 u(x, y);
    if (spec.omega > 0) u = lens::undistort_point(u, out.gt_params, width, height);
    const double dx = u.x() - rcx, dy = u.y() - rcy;
    *px = rcx + cr * dx - sr * dy;
    *py = rcy + sr * dx + cr * dy;
  };

  out.image = GrayImage(width, height);
  parallel_for(0, height, [&](int y) {
    for (int x = 0; x < width; ++x) {
      double px, py;
      to_planar(x, y, &px, &py);
      out.image.at(x, y) = model.intensity(px, py);
    }
  });

  // Sensor noise, deterministic row hashing so the render parallelizes.
  if (spec.noise_sigma > 0) {
    parallel_for(0, height, [&](int y) {
      std::mt19937_64 rng(hash_mix(spec.seed ^ (0x9d2c5680ull + y)));
      std::normal_distribution<float> noise(0.f, static_cast<float>(spec.noise_sigma));
      for (int x = 0; x < width; ++x) {
        float& v = out.image.at(x, y);
        v = std::clamp(v + noise(rng), 0.f, 1.f);
      }
    });
  }

  // Ground-truth masks through the same chain, cropped per cell.
  out.gt_module_mask = GrayImage(width, height);
  const double fr = std::cos(rot), fs = std::sin(rot);
  auto to_frame = [&](double px, double py) {
    const double dx = px - rcx, dy = py - rcy;
    curves::Point2 r(rcx + fr * dx - fs * dy, rcy + fs * dx + fr * dy);
    if (spec.omega > 0) r = lens::distort_point(r, out.gt_params, width, height);
    return r;
  };
  for (int row = 0; row < spec.rows; ++row) {
    for (int col = 0; col < spec.cols; ++col) {
      // Bounding box from forward-mapped cell corners.
      const double x0 = model.origin_x() + col * model.pitch_x;
      const double y0 = model.origin_y() + row * model.pitch_y;
      double bx0 = 1e30, by0 = 1e30, bx1 = -1e30, by1 = -1e30;
      for (int i = 0; i <= 4; ++i) {
        for (int j = 0; j <= 4; ++j) {
          const auto p = to_frame(x0 + i * model.pitch_x / 4.0, y0 + j * model.pitch_y / 4.0);
          bx0 = std::min(bx0, p.x());
          bx1 = std::max(bx1, p.x());
          by0 = std::min(by0, p.y());
          by1 = std::max(by1, p.y());
        }
      }
      MaskRegion m;
      m.row = row;
      m.col = col;
      m.x0 = std::clamp(static_cast<int>(std::floor(bx0)) - 3, 0, width - 1);
      m.y0 = std::clamp(static_cast<int>(std::floor(by0)) - 3, 0, height - 1);
      const int x1 = std::clamp(static_cast<int>(std::ceil(bx1)) + 3, 0, width - 1);
      const int y1 = std::clamp(static_cast<int>(std::ceil(by1)) + 3, 0, height - 1);
      m.image = GrayImage(x1 - m.x0 + 1, y1 - m.y0 + 1);
      for (int y = m.y0; y <= y1; ++y) {
        for (int x = m.x0; x <= x1; ++x) {
          double px, py;
          to_planar(x, y, &px, &py);
          const float v = model.mask_value(row, col, px, py);
          if (v > 0.f) {
            m.image.at(x - m.x0, y - m.y0) = v;
            out.gt_module_mask.at(x, y) = std::max(out.gt_module_mask.at(x, y), v);
          }
        }
      }
      out.gt_masks.push_back(std::move(m));
    }
  }
  return out;
}

std::vector<ModuleSpec> paper_shape_suite() {
  std::vector<ModuleSpec> suite;
  const double omegas[8] = {0.05, 0.12, 0.2, 0.3, 0.08, 0.15, 0.25, 0.1};
  for (int i = 0; i < 8; ++i) {
    ModuleSpec s;
    s.seed = 1000 + i * 17;
    s.omega = omegas[i];
    s.noise_sigma = 0.012;
    s.rotation_deg = (i % 2 == 0 ? 1.0 : -1.0) * (0.4 + 0.3 * i);
    s.center_offset_x = (i % 3 - 1) * 25.0;
    s.center_offset_y = (i % 2) * -20.0;
    if (i < 3) {
      s.rows = 4;
      s.cols = 9;
      s.cell_px = 240;
      s.segments = 3;
      s.texture = Texture::Mono;
    } else if (i == 3) {
      s.rows = 6;
      s.cols = 10;
      s.cell_px = 210;
      s.segments = 3;
      s.texture = Texture::Mono;
    } else {
      s.rows = 6;
      s.cols = 10;
      s.cell_px = 210;
      s.segments = (i >= 6) ? 4 : 3;
      s.texture = Texture::Poly;
    }
    s.defects.push_back({1, 2, i % 2 == 0 ? DefectType::Crack : DefectType::Dark});
    if (i % 2 == 1) s.defects.push_back({s.rows - 2, s.cols - 3, DefectType::Crack});
    suite.push_back(std::move(s));
  }
  return suite;
}

ModuleSpec spec_from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  ModuleSpec s;
  s.rows = j.value("rows", s.rows);
  s.cols = j.value("cols", s.cols);
  s.segments = j.value("segments", s.segments);
  s.segment_orientation = j.value("segment_orientation", std::string("horizontal")) == "vertical"
                              ? curves::Axis::Vertical
                              : curves::Axis::Horizontal;
  s.cell_px = j.value("cell_px", s.cell_px);
  s.gap_px = j.value("gap_px", s.gap_px);
  s.busbar_px = j.value("busbar_px", s.busbar_px);
  s.omega = j.value("omega", s.omega);
  s.center_offset_x = j.value("center_offset_x", s.center_offset_x);
  s.center_offset_y = j.value("center_offset_y", s.center_offset_y);
  s.rotation_deg = j.value("rotation_deg", s.rotation_deg);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.texture = j.value("texture", std::string("mono")) == "poly" ? Texture::Poly : Texture::Mono;
  s.seed = j.value("seed", s.seed);
  if (j.contains("defects")) {
    for (const auto& d : j["defects"]) {
      Defect defect;
      defect.row = d.value("row", 0);
      defect.col = d.value("col", 0);
      defect.type = d.value("type", std::string("dark")) == "crack" ? DefectType::Crack
                                                                    : DefectType::Dark;
      s.defects.push_back(defect);
    }
  }
  return s;
}

std::string spec_to_json(const ModuleSpec& s) {
  nlohmann::ordered_json j;
  j["rows"] = s.rows;
  j["cols"] = s.cols;
  j["segments"] = s.segments;
  j["segment_orientation"] =
      s.segment_orientation == curves::Axis::Vertical ? "vertical" : "horizontal";
  j["cell_px"] = s.cell_px;
  j["gap_px"] = s.gap_px;
  j["busbar_px"] = s.busbar_px;
  j["omega"] = s.omega;
  j["center_offset_x"] = s.center_offset_x;
  j["center_offset_y"] = s.center_offset_y;
  j["rotation_deg"] = s.rotation_deg;
  j["noise_sigma"] = s.noise_sigma;
  j["texture"] = s.texture == Texture::Poly ? "poly" : "mono";
  j["seed"] = s.seed;
  j["defects"] = nlohmann::ordered_json::array();
  for (const auto& d : s.defects) {
    nlohmann::ordered_json dj;
    dj["row"] = d.row;
    dj["col"] = d.col;
    dj["type"] = d.type == DefectType::Crack ? "crack" : "dark";
    j["defects"].push_back(dj);
  }
  return j.dump(2);
}

}  // namespace elcell::synthgen
