#pragma once

#include <optional>
#include <vector>

#include "elcell/image.hpp"

namespace elcell::metrics {

struct CellScore {
  int row = 0, col = 0;
  double precision = 0, recall = 0, f1 = 0;
  double weighted_jaccard = 0;
  int matched_pred = -1;  // index into the prediction list, -1 = missed
};

struct EvalReport {
  std::vector<CellScore> cells;
  double precision = 0, recall = 0, f1 = 0;  // module level, over the union
  double weighted_jaccard = 0;
  double ap = 0;
  double baseline = 0;  // prevalence of positives (random-guess precision)
  int matched = 0;
  int missed = 0;
};

/// Pairs each ground-truth mask with the prediction of largest intersection
/// area, one-to-one, resolving conflicts greedily by descending
/// intersection. Returns per-GT prediction indices (-1 = unmatched).
std::vector<int> match_predictions(const std::vector<GrayImage>& pred_masks,
                                   const std::vector<GrayImage>& gt_masks);

/// Pixel precision/recall/F1 between binary masks. With no predicted and no
/// actual positives precision is 1; recall is 1 when there are no actual
/// positives.
struct Prf {
  double precision = 0, recall = 0, f1 = 0;
};
Prf pixel_prf(const BinaryMask& pred, const BinaryMask& gt);

/// Weighted Jaccard similarity sum(min) / sum(max) of soft masks; two empty
/// masks compare as 1.
double weighted_jaccard(const GrayImage& a, const GrayImage& b);

struct PrCurve {
  std::vector<double> recall;
  std::vector<double> precision;
  std::vector<double> threshold;
  double ap = 0;
  double baseline = 0;
};

/// Threshold sweep over [0, 1]; average precision is the area under the
/// precision-recall points. Throws when the ground truth has no positives.
PrCurve pr_curve(const GrayImage& pred_soft, const BinaryMask& gt, int steps);

/// Binarize a soft mask at a threshold.
BinaryMask binarize(const GrayImage& img, float threshold = 0.5f);

/// Full evaluation of predicted soft cell masks against ground-truth soft
/// masks sharing one frame.
EvalReport evaluate(const std::vector<GrayImage>& pred_masks,
                    const std::vector<GrayImage>& gt_masks,
                    const std::vector<std::pair<int, int>>& gt_cells, int pr_steps = 64);

/// Same evaluation over bounding-box-cropped masks; frame dimensions bound
/// the module-level union. Matching, per-cell metrics and module metrics are
/// identical to the dense form.
EvalReport evaluate_regions(const std::vector<MaskRegion>& pred_masks,
                            const std::vector<MaskRegion>& gt_masks, int frame_width,
                            int frame_height, int pr_steps = 64);

}  // namespace elcell::metrics
