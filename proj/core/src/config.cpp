#include "elcell/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "elcell/image.hpp"

namespace elcell {

PipelineConfig config_from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  PipelineConfig c;
  c.octaves = j.value("O", c.octaves);
  c.sublevels = j.value("P", c.sublevels);
  c.sigma = j.value("sigma", c.sigma);
  c.gamma = j.value("gamma", c.gamma);
  c.sobel_size = j.value("sobel_size", c.sobel_size);
  c.nu = j.value("nu", c.nu);
  c.varsigma1 = j.value("varsigma1", c.varsigma1);
  c.varsigma2 = j.value("varsigma2", c.varsigma2);
  c.subpixel_window = j.value("subpixel_window", c.subpixel_window);
  c.subpixel_samples_per_px = j.value("subpixel_samples_per_px", c.subpixel_samples_per_px);
  c.epsilon_dp = j.value("epsilon_dp", c.epsilon_dp);
  c.theta_s_deg = j.value("theta_s_deg", c.theta_s_deg);
  c.theta_m_deg = j.value("theta_m_deg", c.theta_m_deg);
  c.min_chain_points = j.value("min_chain_points", c.min_chain_points);
  c.rho = j.value("rho", c.rho);
  c.ransac_max_iter = j.value("ransac_max_iter", c.ransac_max_iter);
  c.epsilon_refine = j.value("epsilon_refine", c.epsilon_refine);
  c.cell_aspect = j.value("cell_aspect", c.cell_aspect);
  c.adaptive_window = j.value("adaptive_window", c.adaptive_window);
  c.seed = j.value("seed", c.seed);
  c.cell_px = j.value("cell_px", c.cell_px);
  c.dbscan_eps_factor = j.value("dbscan_eps_factor", c.dbscan_eps_factor);
  c.dbscan_min_pts = j.value("dbscan_min_pts", c.dbscan_min_pts);
  c.mls_alpha = j.value("mls_alpha", c.mls_alpha);
  c.bg_blur_sigma = j.value("bg_blur_sigma", c.bg_blur_sigma);
  c.bg_disk_radius = j.value("bg_disk_radius", c.bg_disk_radius);
  return c;
}

std::string config_to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["O"] = c.octaves;
  j["P"] = c.sublevels;
  j["sigma"] = c.sigma;
  j["gamma"] = c.gamma;
  j["sobel_size"] = c.sobel_size;
  j["nu"] = c.nu;
  j["varsigma1"] = c.varsigma1;
  j["varsigma2"] = c.varsigma2;
  j["subpixel_window"] = c.subpixel_window;
  j["subpixel_samples_per_px"] = c.subpixel_samples_per_px;
  j["epsilon_dp"] = c.epsilon_dp;
  j["theta_s_deg"] = c.theta_s_deg;
  j["theta_m_deg"] = c.theta_m_deg;
  j["min_chain_points"] = c.min_chain_points;
  j["rho"] = c.rho;
  j["ransac_max_iter"] = c.ransac_max_iter;
  j["epsilon_refine"] = c.epsilon_refine;
  j["cell_aspect"] = c.cell_aspect;
  j["adaptive_window"] = c.adaptive_window;
  j["seed"] = c.seed;
  j["cell_px"] = c.cell_px;
  j["dbscan_eps_factor"] = c.dbscan_eps_factor;
  j["dbscan_min_pts"] = c.dbscan_min_pts;
  j["mls_alpha"] = c.mls_alpha;
  j["bg_blur_sigma"] = c.bg_blur_sigma;
  j["bg_disk_radius"] = c.bg_disk_radius;
  return j.dump(2);
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json(ss.str());
}

}  // namespace elcell
