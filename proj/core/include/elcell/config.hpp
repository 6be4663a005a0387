#pragma once

#include <cstdint>
#include <string>

namespace elcell {

/// Every pipeline parameter with its default. The defaults follow the
/// published operating point for ~2500x2000 EL images; deviations for other
/// setups go through the JSON config file.
struct PipelineConfig {
  // Gaussian scale space
  int octaves = 8;              // O
  int sublevels = 5;            // P
  double sigma = 1.6180339887;  // base scale (golden ratio)
  double gamma = 2.0;           // octave downsampling factor
  int sobel_size = 7;           // Hessian derivative operator

  // Tensor voting
  int nu = 2;               // angular specificity
  double varsigma1 = 15.0;  // proximity, first pass
  double varsigma2 = 10.0;  // proximity, second pass

  // Subpixel ridge extraction
  int subpixel_window = 21;
  int subpixel_samples_per_px = 4;

  // Curve segment handling
  double epsilon_dp = 1.0;     // Douglas-Peucker tolerance
  double theta_s_deg = 5.0;    // split angle
  double theta_m_deg = 10.0;   // merge angle
  int min_chain_points = 24;   // discard shorter chains before fitting

  // Parabola fit / refinement
  double rho = 1.5;              // max squared curve-point error
  int ransac_max_iter = 100;
  double epsilon_refine = 1e-6;  // minimal relative error change

  // Topology / masks
  double cell_aspect = 1.0;
  int adaptive_window = 25;

  // Declared defaults not fixed by the published table
  uint64_t seed = 42;
  int cell_px = 300;
  double dbscan_eps_factor = 0.15;
  int dbscan_min_pts = 2;
  double mls_alpha = 1.0;
  double bg_blur_sigma = 5.0;
  int bg_disk_radius = 21;
};

PipelineConfig config_from_json(const std::string& json_text);
std::string config_to_json(const PipelineConfig& config);
PipelineConfig load_config(const std::string& path);

}  // namespace elcell
