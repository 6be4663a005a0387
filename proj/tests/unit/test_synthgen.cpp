#include <doctest.h>

#include <cmath>

#include "elcell/imgproc.hpp"
#include "elcell/lens.hpp"
#include "elcell/metrics.hpp"
#include "elcell/synthgen.hpp"
#include "oracles.hpp"

using namespace elcell;
using namespace elcell::synthgen;

namespace {

ModuleSpec small_spec() {
  ModuleSpec s;
  s.rows = 3;
  s.cols = 4;
  s.cell_px = 80;
  s.gap_px = 4;
  s.busbar_px = 3;
  s.segments = 3;
  s.omega = 0.0;
  s.noise_sigma = 0.0;
  s.rotation_deg = 0.0;
  s.seed = 7;
  return s;
}

}  // namespace

TEST_CASE("generate_module is deterministic") {
  ModuleSpec s = small_spec();
  s.noise_sigma = 0.01;
  s.omega = 0.2;
  s.texture = Texture::Poly;
  s.defects.push_back({1, 1, DefectType::Crack});
  const GeneratedModule a = generate_module(s);
  const GeneratedModule b = generate_module(s);
  CHECK(a.image.data == b.image.data);
  CHECK(a.gt_module_mask.data == b.gt_module_mask.data);
}

TEST_CASE("undistorted render has straight grid lines at spec positions") {
  ModuleSpec s = small_spec();
  const GeneratedModule m = generate_module(s);
  // Gap centerlines are the darkest rows between cells; find the minimum
  // row around each expected line position.
  const double pitch = s.cell_px + s.gap_px;
  const double margin = std::max(80.0, 0.08 * std::max(s.cols * pitch, s.rows * pitch));
  for (int r = 0; r <= s.rows; ++r) {
    const double expect_y = margin + r * pitch;
    // Column-wise darkest position near the line.
    double mean_y = 0;
    int n = 0;
    for (int x = static_cast<int>(margin) + 10; x < m.width - margin - 10; x += 7) {
      double best_v = 1e9;
      double best_y = 0;
      for (int y = static_cast<int>(expect_y) - 3; y <= static_cast<int>(expect_y) + 3; ++y) {
        if (m.image.at(x, y) < best_v) {
          best_v = m.image.at(x, y);
          best_y = y;
        }
      }
      mean_y += best_y;
      ++n;
    }
    mean_y /= n;
    CHECK(std::abs(mean_y - expect_y) < 0.75);
  }
}

TEST_CASE("gt masks align with bright pixels in the distorted frame") {
  ModuleSpec s = small_spec();
  s.omega = 0.25;
  s.rotation_deg = 1.5;
  const GeneratedModule m = generate_module(s);

  const auto [thr, bright] = imgproc::otsu_threshold(m.image);
  (void)thr;
  size_t covered = 0, total = 0;
  for (const auto& region : m.gt_masks) {
    for (int y = 0; y < region.image.height; ++y)
      for (int x = 0; x < region.image.width; ++x) {
        if (region.image.at(x, y) > 0.5f) {
          ++total;
          if (bright.at(x + region.x0, y + region.y0)) ++covered;
        }
      }
  }
  // Busbars are excluded from masks, so bright cell area dominates.
  CHECK(static_cast<double>(covered) / total > 0.97);
}

TEST_CASE("gt params undistort the rendered grid straight") {
  ModuleSpec s = small_spec();
  s.omega = 0.3;
  const GeneratedModule m = generate_module(s);

  // Trace one inner gap line in the distorted frame, undistort its points
  // with the ground-truth parameters, and fit a line.
  const double pitch = s.cell_px + s.gap_px;
  const double margin = std::max(80.0, 0.08 * std::max(s.cols * pitch, s.rows * pitch));
  const double line_y = margin + 2 * pitch;
  std::vector<lens::Point2> und;
  for (int x = static_cast<int>(margin); x < m.width - margin; x += 4) {
    // The rendered line is displaced by the distortion; search for it.
    double best_v = 1e9;
    int best_y = 0;
    for (int y = static_cast<int>(line_y) - 12; y <= static_cast<int>(line_y) + 12; ++y) {
      if (m.image.at(x, y) < best_v) {
        best_v = m.image.at(x, y);
        best_y = y;
      }
    }
    und.push_back(lens::undistort_point(lens::Point2(x, best_y), m.gt_params, m.width, m.height));
  }
  const double chi2 = lens::line_fit_error(und);
  CHECK(chi2 / und.size() < 0.25);
}

TEST_CASE("defects render visibly but keep the gt mask shape") {
  ModuleSpec s = small_spec();
  ModuleSpec sd = s;
  sd.defects.push_back({1, 1, DefectType::Dark});
  sd.defects.push_back({0, 2, DefectType::Crack});
  const GeneratedModule clean = generate_module(s);
  const GeneratedModule defective = generate_module(sd);

  // Dark cell: intensity drops inside cell (1,1).
  const auto& region = clean.gt_masks[1 * s.cols + 1];
  double clean_sum = 0, defect_sum = 0;
  for (int y = 0; y < region.image.height; ++y)
    for (int x = 0; x < region.image.width; ++x) {
      if (region.image.at(x, y) > 0.5f) {
        clean_sum += clean.image.at(x + region.x0, y + region.y0);
        defect_sum += defective.image.at(x + region.x0, y + region.y0);
      }
    }
  CHECK(defect_sum < 0.5 * clean_sum);

  // Masks unchanged by defects.
  for (size_t i = 0; i < clean.gt_masks.size(); ++i)
    CHECK(clean.gt_masks[i].image.data == defective.gt_masks[i].image.data);
}

TEST_CASE("paper shape suite has the expected configurations") {
  const auto suite = paper_shape_suite();
  REQUIRE(suite.size() == 8);
  int mono = 0, poly = 0, four_seg = 0, shape_4x9 = 0, shape_6x10 = 0;
  for (const auto& s : suite) {
    mono += s.texture == Texture::Mono;
    poly += s.texture == Texture::Poly;
    four_seg += s.segments == 4;
    shape_4x9 += (s.rows == 4 && s.cols == 9);
    shape_6x10 += (s.rows == 6 && s.cols == 10);
    CHECK(s.omega >= 0.05);
    CHECK(s.omega <= 0.3);
    CHECK(!s.defects.empty());
    CHECK(s.defects.size() <= 2);
  }
  CHECK(mono == 4);
  CHECK(poly == 4);
  CHECK(four_seg == 2);
  CHECK(shape_4x9 == 3);
  CHECK(shape_6x10 == 5);
}

TEST_CASE("module spec JSON round-trips") {
  ModuleSpec s = small_spec();
  s.texture = Texture::Poly;
  s.omega = 0.123;
  s.defects.push_back({2, 3, DefectType::Crack});
  const ModuleSpec back = spec_from_json(spec_to_json(s));
  CHECK(back.rows == s.rows);
  CHECK(back.cols == s.cols);
  CHECK(back.segments == s.segments);
  CHECK(back.cell_px == s.cell_px);
  CHECK(back.omega == doctest::Approx(s.omega));
  CHECK(back.texture == s.texture);
  REQUIRE(back.defects.size() == 1);
  CHECK(back.defects[0].row == 2);
  CHECK(back.defects[0].type == DefectType::Crack);
}
