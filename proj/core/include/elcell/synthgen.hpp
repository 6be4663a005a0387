#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elcell/gridmodel.hpp"
#include "elcell/image.hpp"
#include "elcell/lens.hpp"

namespace elcell::synthgen {

enum class Texture { Mono, Poly };
enum class DefectType { Dark, Crack };

struct Defect {
  int row = 0;
  int col = 0;
  DefectType type = DefectType::Dark;
};

/// Full description of a synthetic EL module render; identical specs produce
/// byte-identical output.
struct ModuleSpec {
  int rows = 6;
  int cols = 10;
  int segments = 3;  // 1..4
  curves::Axis segment_orientation = curves::Axis::Horizontal;
  int cell_px = 200;    // cell side before distortion
  int gap_px = 6;       // inter-cell gap (and border line) width
  int busbar_px = 5;    // busbar line width
  double omega = 0.15;  // lens opening angle, radians
  double center_offset_x = 0.0;  // distortion center offset from image center
  double center_offset_y = 0.0;
  double rotation_deg = 0.0;  // in-plane rotation
  double noise_sigma = 0.0;   // additive Gaussian sensor noise
  Texture texture = Texture::Mono;
  std::vector<Defect> defects;
  uint64_t seed = 42;
};

struct GeneratedModule {
  GrayImage image;
  std::vector<MaskRegion> gt_masks;  // per-cell soft masks, original frame
  GrayImage gt_module_mask;
  lens::LensParams gt_params;
  gridmodel::ModuleTopology gt_topology;
  int width = 0;
  int height = 0;
};

/// Renders the module: planar cells with rounded corners, gaps, busbars and
/// defects, then in-plane rotation, forward lens distortion and sensor
/// noise. Ground-truth masks go through the identical geometric chain.
GeneratedModule generate_module(const ModuleSpec& spec);

/// The eight module configurations used by the integration fixtures (four
/// monocrystalline, four polycrystalline; shapes 4x9 and 6x10 with 3- and
/// 4-segment cells).
std::vector<ModuleSpec> paper_shape_suite();

ModuleSpec spec_from_json(const std::string& json_text);
std::string spec_to_json(const ModuleSpec& spec);

}  // namespace elcell::synthgen
