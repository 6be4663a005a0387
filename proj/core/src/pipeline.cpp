#include "elcell/pipeline.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>

#include "elcell/curves.hpp"
#include "elcell/imgproc.hpp"
#include "elcell/lens.hpp"
#include "elcell/metrics.hpp"
#include "elcell/parallel.hpp"
#include "elcell/ridges.hpp"

namespace elcell {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct ModelEstimate {
  gridmodel::CurveGrid grid;
  lens::LensParams params;
};

std::vector<curves::ParabolicCurve> extract_curves(const GrayImage& equalized,
                                                   const PipelineConfig& cfg,
                                                   PipelineArtifacts* artifacts) {
  ridges::ScaleSpace ss =
      ridges::build_scale_space(equalized, cfg.octaves, cfg.sublevels, cfg.sigma, cfg.gamma);
  ridges::RidgeMap rm = ridges::multiscale_ridgeness(ss);
  ss.levels.clear();

  ridges::StickField sf = ridges::iterate_tensor_voting(rm, cfg.varsigma1, cfg.varsigma2, cfg.nu);
  if (artifacts) artifacts->ridgeness = rm.response;
  rm.response = Field();
  rm.orientation = Field();

  BinaryMask skeleton = ridges::nms_skeletonize(sf);
  if (artifacts) {
    artifacts->stickness = sf.stickness;
    artifacts->skeleton = skeleton;
  }

  std::vector<curves::PointChain> chains = curves::link_edges(skeleton);
  chains.erase(std::remove_if(chains.begin(), chains.end(),
                              [](const auto& c) { return c.size() < 4; }),
               chains.end());

  std::vector<curves::PointChain> refined(chains.size());
  parallel_for(0, static_cast<int>(chains.size()), [&](int i) {
    refined[i] =
        curves::subpixel_refine(chains[i], sf, cfg.subpixel_window, cfg.subpixel_samples_per_px);
  });

  std::vector<curves::PointChain> split;
  for (const auto& c : refined) {
    auto parts = curves::split_chain(c, cfg.epsilon_dp, cfg.theta_s_deg);
    split.insert(split.end(), parts.begin(), parts.end());
  }
  std::vector<curves::PointChain> merged = curves::merge_segments(split, cfg.theta_m_deg);
  merged.erase(std::remove_if(merged.begin(), merged.end(),
                              [&](const auto& c) {
                                return static_cast<int>(c.size()) < cfg.min_chain_points;
                              }),
               merged.end());

  std::vector<curves::ParabolicCurve> fitted(merged.size());
  parallel_for(0, static_cast<int>(merged.size()), [&](int i) {
    const curves::Axis axis = curves::classify_axis(merged[i]);
    fitted[i] = curves::fit_parabola(merged[i], axis, cfg.rho, cfg.ransac_max_iter,
                                     cfg.seed ^ static_cast<uint64_t>(i));
  });
  return fitted;
}

ModelEstimate estimate_model(const std::vector<curves::ParabolicCurve>& fitted,
                             const GrayImage& stretched, const PipelineConfig& cfg) {
  std::vector<curves::ParabolicCurve> h_curves, v_curves;
  for (const auto& c : fitted)
    (c.axis == curves::Axis::Horizontal ? h_curves : v_curves).push_back(c);
  if (h_curves.size() < 2 || v_curves.size() < 2)
    throw StageError("model", "insufficient curves for a grid");

  const int w = stretched.width, h = stretched.height;
  auto [fh, fv] = gridmodel::filter_grid_consistency(std::move(h_curves), std::move(v_curves), w, h);
  if (fh.size() < 2 || fv.size() < 2)
    throw StageError("model", "insufficient curves after consistency filtering");

  lens::LensParams init = lens::initial_lens_params(fh, fv, w, h);
  gridmodel::CurveGrid grid = gridmodel::lo_ransac_grid(fh, fv, init, w, h, cfg.seed + 1000);
  grid = gridmodel::filter_halo_curves(grid, stretched);
  if (grid.horizontal.size() < 2 || grid.vertical.size() < 2)
    throw StageError("model", "grid collapsed after halo filtering");

  std::vector<curves::ParabolicCurve> all = grid.horizontal;
  all.insert(all.end(), grid.vertical.begin(), grid.vertical.end());
  const auto refined = lens::refine_lens_params(all, init, cfg.epsilon_refine, w, h);
  return {std::move(grid), refined.params.valid ? refined.params : init};
}

}  // namespace

rectify::SegmentationResult run_pipeline(const GrayImage& img, const PipelineConfig& config,
                                         const std::optional<gridmodel::ModuleTopology>& prior_topology,
                                         PipelineArtifacts* artifacts) {
  if (img.empty()) throw StageError("preprocess", "empty image");
  const int w = img.width, h = img.height;
  auto t0 = Clock::now();

  // Preprocessing.
  GrayImage stretched = imgproc::stretch_contrast(img);
  GrayImage equalized =
      imgproc::equalize_background(stretched, config.bg_blur_sigma, config.bg_disk_radius);
  if (artifacts) artifacts->timings_ms["preprocess"] = ms_since(t0);

  // Curve extraction.
  t0 = Clock::now();
  std::vector<curves::ParabolicCurve> fitted;
  try {
    fitted = extract_curves(equalized, config, artifacts);
  } catch (const Error& e) {
    throw StageError("curves", e.what());
  }
  equalized = GrayImage();
  if (artifacts) {
    artifacts->curves_fitted = fitted;
    artifacts->timings_ms["curves"] = ms_since(t0);
  }

  // Model estimation.
  t0 = Clock::now();
  ModelEstimate model;
  try {
    model = estimate_model(fitted, stretched, config);
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError("model", e.what());
  }
  if (artifacts) {
    artifacts->grid = model.grid;
    artifacts->timings_ms["model"] = ms_since(t0);
  }

  // Cell extraction.
  t0 = Clock::now();
  try {
    const gridmodel::ModuleTopology topo =
        prior_topology ? *prior_topology
                       : gridmodel::estimate_topology(model.grid, config.cell_aspect);

    const std::vector<curves::Point2> synth = gridmodel::synthesize_grid(topo, config.cell_px);
    std::vector<curves::Point2> observed;
    observed.reserve(model.grid.intersections.size());
    for (const auto& [key, p] : model.grid.intersections)
      observed.push_back(lens::undistort_point(p, model.params, w, h));
    if (observed.size() < 4) throw Error("too few grid intersections");

    const gridmodel::Registration reg =
        gridmodel::register_grids(synth, observed, config.seed + 2000);

    // Matched pairs in the undistorted frame.
    std::vector<curves::Point2> matched_synth, matched_obs;
    for (size_t m = 0; m < synth.size(); ++m) {
      if (reg.correspondences[m] >= 0) {
        matched_synth.push_back(synth[m]);
        matched_obs.push_back(observed[reg.correspondences[m]]);
      }
    }
    if (matched_synth.size() < 4) throw Error("grid registration failed");

    // Homography from the four extreme grid corners.
    double min_x = 1e30, max_x = -1e30, min_y = 1e30, max_y = -1e30;
    for (const auto& p : synth) {
      min_x = std::min(min_x, p.x());
      max_x = std::max(max_x, p.x());
      min_y = std::min(min_y, p.y());
      max_y = std::max(max_y, p.y());
    }
    const std::array<curves::Point2, 4> corners = {curves::Point2(min_x, min_y),
                                                   curves::Point2(max_x, min_y),
                                                   curves::Point2(min_x, max_y),
                                                   curves::Point2(max_x, max_y)};
    std::array<curves::Point2, 4> corner_obs;
    for (int i = 0; i < 4; ++i) {
      // Prefer the registered correspondence of the corner lattice point,
      // otherwise the observed point nearest to its transformed position.
      int match = -1;
      for (size_t m = 0; m < synth.size(); ++m) {
        if ((synth[m] - corners[i]).norm() < 1e-6) {
          match = reg.correspondences[m];
          break;
        }
      }
      if (match >= 0) {
        corner_obs[i] = observed[match];
      } else {
        const curves::Point2 guess = reg.transform.apply(corners[i]);
        double best = 1e30;
        for (const auto& o : observed) {
          const double d = (o - guess).norm();
          if (d < best) {
            best = d;
            corner_obs[i] = o;
          }
        }
        if (best > 0.45 * config.cell_px * reg.transform.scale)
          throw Error("grid corners not registered");
      }
    }
    const Eigen::Matrix3d H = rectify::homography_from_corners(corner_obs, corners);

    // Planar canvas warped in one resampling through the composed inverse
    // chain: moving least-squares residual correction, homography inverse,
    // forward distortion.
    const double cw = config.cell_px * topo.cell_aspect;
    const double ch = config.cell_px;
    const int planar_w = static_cast<int>(std::lround(topo.cols * cw));
    const int planar_h = static_cast<int>(std::lround(topo.rows * ch));

    std::vector<curves::Point2> deformed;  // observed mapped into the planar frame
    deformed.reserve(matched_obs.size());
    for (const auto& o : matched_obs) {
      const Eigen::Vector3d p = H * Eigen::Vector3d(o.x(), o.y(), 1.0);
      deformed.emplace_back(p.x() / p.z(), p.y() / p.z());
    }
    const rectify::MlsTransform mls(matched_synth, deformed, config.mls_alpha);
    const Eigen::Matrix3d Hinv = H.inverse();

    GrayImage planar(planar_w, planar_h);
    parallel_for(0, planar_h, [&](int y) {
      for (int x = 0; x < planar_w; ++x) {
        const curves::Point2 v = mls.apply(curves::Point2(x, y));
        const Eigen::Vector3d u = Hinv * Eigen::Vector3d(v.x(), v.y(), 1.0);
        if (std::abs(u.z()) < 1e-12) continue;
        curves::Point2 src(u.x() / u.z(), u.y() / u.z());
        try {
          src = lens::distort_point(src, model.params, w, h);
        } catch (const Error&) {
          continue;
        }
        if (src.x() < 0 || src.y() < 0 || src.x() > w - 1 || src.y() > h - 1) continue;
        planar.at(x, y) = stretched.sample(src.x(), src.y());
      }
    });

    std::vector<rectify::CellImage> cells = rectify::extract_cells(planar, topo, config.cell_px);
    const GrayImage canonical = rectify::estimate_cell_mask(cells, config.adaptive_window);

    rectify::SegmentationResult result = rectify::assemble_result(
        model.params, H, topo, std::move(cells), canonical, w, h);
    if (artifacts) artifacts->timings_ms["cells"] = ms_since(t0);
    return result;
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError("cells", e.what());
  }
}

lens::LensParams calibrate(const GrayImage& img, const PipelineConfig& config) {
  if (img.empty()) throw StageError("preprocess", "empty image");
  GrayImage stretched = imgproc::stretch_contrast(img);
  GrayImage equalized =
      imgproc::equalize_background(stretched, config.bg_blur_sigma, config.bg_disk_radius);
  std::vector<curves::ParabolicCurve> fitted;
  try {
    fitted = extract_curves(equalized, config, nullptr);
  } catch (const Error& e) {
    throw StageError("curves", e.what());
  }
  ModelEstimate model = estimate_model(fitted, stretched, config);
  return model.params;
}

}  // namespace elcell
