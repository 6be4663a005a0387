#pragma once

#include <map>
#include <optional>
#include <string>

#include "elcell/config.hpp"
#include "elcell/gridmodel.hpp"
#include "elcell/image.hpp"
#include "elcell/rectify.hpp"

namespace elcell {

/// Stage failure with the stage name baked into the message.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& msg)
      : Error(stage + ": " + msg), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PipelineArtifacts {
  Field ridgeness;
  Field stickness;
  BinaryMask skeleton;
  std::vector<curves::ParabolicCurve> curves_fitted;
  gridmodel::CurveGrid grid;
  std::map<std::string, double> timings_ms;
};

/// Runs preprocessing, curve extraction, model estimation and cell
/// extraction on one image. A prior topology skips the estimation step.
/// artifacts, when given, receives intermediate stages for debugging.
rectify::SegmentationResult run_pipeline(const GrayImage& img, const PipelineConfig& config,
                                         const std::optional<gridmodel::ModuleTopology>& prior_topology = {},
                                         PipelineArtifacts* artifacts = nullptr);

/// Runs the pipeline up to the lens refinement only.
lens::LensParams calibrate(const GrayImage& img, const PipelineConfig& config);

}  // namespace elcell
