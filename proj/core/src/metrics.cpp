#include "elcell/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace elcell::metrics {
namespace {

double soft_intersection(const GrayImage& a, const GrayImage& b) {
  double s = 0;
  for (size_t i = 0; i < a.data.size(); ++i) s += std::min(a.data[i], b.data[i]);
  return s;
}

struct RegionStats {
  double sum = 0;       // integral of the soft mask
  size_t area = 0;      // pixels above 0.5
};

RegionStats region_stats(const MaskRegion& m) {
  RegionStats s;
  for (float v : m.image.data) {
    s.sum += v;
    s.area += v > 0.5f;
  }
  return s;
}

// min-overlap integral and binarized true-positive count over the crop
// intersection; everything outside either crop contributes zero.
void region_overlap(const MaskRegion& a, const MaskRegion& b, double* min_sum, size_t* tp) {
  *min_sum = 0;
  *tp = 0;
  if (a.image.empty() || b.image.empty()) return;
  const int x0 = std::max(a.x0, b.x0);
  const int y0 = std::max(a.y0, b.y0);
  const int x1 = std::min(a.x0 + a.image.width, b.x0 + b.image.width);
  const int y1 = std::min(a.y0 + a.image.height, b.y0 + b.image.height);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const float va = a.image.at(x - a.x0, y - a.y0);
      const float vb = b.image.at(x - b.x0, y - b.y0);
      *min_sum += std::min(va, vb);
      *tp += (va > 0.5f) && (vb > 0.5f);
    }
  }
}

}  // namespace

BinaryMask binarize(const GrayImage& img, float threshold) {
  BinaryMask m(img.width, img.height);
  for (size_t i = 0; i < img.data.size(); ++i) m.data[i] = img.data[i] > threshold;
  return m;
}

std::vector<int> match_predictions(const std::vector<GrayImage>& pred_masks,
                                   const std::vector<GrayImage>& gt_masks) {
  struct Cand {
    double inter;
    size_t gt, pred;
  };
  std::vector<Cand> cands;
  for (size_t g = 0; g < gt_masks.size(); ++g) {
    for (size_t p = 0; p < pred_masks.size(); ++p) {
      if (gt_masks[g].width != pred_masks[p].width || gt_masks[g].height != pred_masks[p].height)
        throw Error("match_predictions: masks must share one frame");
      const double inter = soft_intersection(gt_masks[g], pred_masks[p]);
      if (inter > 0) cands.push_back({inter, g, p});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.inter != b.inter) return a.inter > b.inter;
    if (a.gt != b.gt) return a.gt < b.gt;
    return a.pred < b.pred;
  });
  std::vector<int> match(gt_masks.size(), -1);
  std::vector<uint8_t> pred_taken(pred_masks.size(), 0);
  for (const auto& c : cands) {
    if (match[c.gt] >= 0 || pred_taken[c.pred]) continue;
    match[c.gt] = static_cast<int>(c.pred);
    pred_taken[c.pred] = 1;
  }
  return match;
}

Prf pixel_prf(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw Error("pixel_prf: dimension mismatch");
  size_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  Prf out;
  out.precision = (tp + fp) == 0 ? ((tp + fn) == 0 ? 1.0 : 0.0)
                                 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  out.recall = (tp + fn) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  out.f1 = (out.precision + out.recall) > 0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

double weighted_jaccard(const GrayImage& a, const GrayImage& b) {
  if (a.width != b.width || a.height != b.height)
    throw Error("weighted_jaccard: dimension mismatch");
  double num = 0, den = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    num += std::min(a.data[i], b.data[i]);
    den += std::max(a.data[i], b.data[i]);
  }
  return den == 0 ? 1.0 : num / den;
}

PrCurve pr_curve(const GrayImage& pred_soft, const BinaryMask& gt, int steps) {
  if (steps < 2) throw Error("pr_curve: steps must be >= 2");
  if (pred_soft.width != gt.width || pred_soft.height != gt.height)
    throw Error("pr_curve: dimension mismatch");
  size_t positives = gt.count();
  if (positives == 0) throw Error("pr_curve: no positives");

  PrCurve out;
  out.baseline = static_cast<double>(positives) / static_cast<double>(gt.data.size());

  struct Pt {
    double r, p, t;
  };
  std::vector<Pt> pts;
  for (int i = 0; i < steps; ++i) {
    const float thr = static_cast<float>(i) / (steps - 1);
    size_t tp = 0, fp = 0;
    for (size_t j = 0; j < pred_soft.data.size(); ++j) {
      if (pred_soft.data[j] > thr) {
        if (gt.data[j])
          ++tp;
        else
          ++fp;
      }
    }
    if (tp + fp == 0) continue;  // nothing predicted at this threshold
    pts.push_back({static_cast<double>(tp) / positives,
                   static_cast<double>(tp) / static_cast<double>(tp + fp), thr});
  }
  std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) { return a.r < b.r; });

  double ap = 0, prev_r = 0;
  for (const auto& pt : pts) {
    ap += (pt.r - prev_r) * pt.p;
    prev_r = pt.r;
    out.recall.push_back(pt.r);
    out.precision.push_back(pt.p);
    out.threshold.push_back(pt.t);
  }
  out.ap = ap;
  return out;
}

EvalReport evaluate(const std::vector<GrayImage>& pred_masks,
                    const std::vector<GrayImage>& gt_masks,
                    const std::vector<std::pair<int, int>>& gt_cells, int pr_steps) {
  if (gt_masks.empty()) throw Error("evaluate: no ground truth masks");
  EvalReport report;
  const auto match = match_predictions(pred_masks, gt_masks);

  for (size_t g = 0; g < gt_masks.size(); ++g) {
    CellScore score;
    if (g < gt_cells.size()) {
      score.row = gt_cells[g].first;
      score.col = gt_cells[g].second;
    }
    score.matched_pred = match[g];
    if (match[g] >= 0) {
      const GrayImage& pred = pred_masks[match[g]];
      const Prf prf = pixel_prf(binarize(pred), binarize(gt_masks[g]));
      score.precision = prf.precision;
      score.recall = prf.recall;
      score.f1 = prf.f1;
      score.weighted_jaccard = weighted_jaccard(pred, gt_masks[g]);
      ++report.matched;
    } else {
      ++report.missed;
    }
    report.cells.push_back(score);
  }

  // Module level: union (max) of all masks on each side.
  const int w = gt_masks.front().width, h = gt_masks.front().height;
  GrayImage pred_union(w, h), gt_union(w, h);
  for (const auto& m : pred_masks)
    for (size_t i = 0; i < pred_union.data.size(); ++i)
      pred_union.data[i] = std::max(pred_union.data[i], m.data[i]);
  for (const auto& m : gt_masks)
    for (size_t i = 0; i < gt_union.data.size(); ++i)
      gt_union.data[i] = std::max(gt_union.data[i], m.data[i]);

  const Prf prf = pixel_prf(binarize(pred_union), binarize(gt_union));
  report.precision = prf.precision;
  report.recall = prf.recall;
  report.f1 = prf.f1;
  report.weighted_jaccard = weighted_jaccard(pred_union, gt_union);
  const PrCurve curve = pr_curve(pred_union, binarize(gt_union), pr_steps);
  report.ap = curve.ap;
  report.baseline = curve.baseline;
  return report;
}

EvalReport evaluate_regions(const std::vector<MaskRegion>& pred_masks,
                            const std::vector<MaskRegion>& gt_masks, int frame_width,
                            int frame_height, int pr_steps) {
  if (gt_masks.empty()) throw Error("evaluate: no ground truth masks");
  EvalReport report;

  std::vector<RegionStats> ps(pred_masks.size()), gs(gt_masks.size());
  for (size_t i = 0; i < pred_masks.size(); ++i) ps[i] = region_stats(pred_masks[i]);
  for (size_t i = 0; i < gt_masks.size(); ++i) gs[i] = region_stats(gt_masks[i]);

  // Largest-intersection matching, one-to-one, descending intersection.
  struct Cand {
    double inter;
    size_t gt, pred;
    size_t tp;
  };
  std::vector<Cand> cands;
  for (size_t g = 0; g < gt_masks.size(); ++g) {
    for (size_t p = 0; p < pred_masks.size(); ++p) {
      double inter;
      size_t tp;
      region_overlap(gt_masks[g], pred_masks[p], &inter, &tp);
      if (inter > 0) cands.push_back({inter, g, p, tp});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.inter != b.inter) return a.inter > b.inter;
    if (a.gt != b.gt) return a.gt < b.gt;
    return a.pred < b.pred;
  });
  std::vector<int> match(gt_masks.size(), -1);
  std::vector<size_t> match_tp(gt_masks.size(), 0);
  std::vector<double> match_min(gt_masks.size(), 0);
  std::vector<uint8_t> taken(pred_masks.size(), 0);
  for (const auto& c : cands) {
    if (match[c.gt] >= 0 || taken[c.pred]) continue;
    match[c.gt] = static_cast<int>(c.pred);
    match_tp[c.gt] = c.tp;
    match_min[c.gt] = c.inter;
    taken[c.pred] = 1;
  }

  for (size_t g = 0; g < gt_masks.size(); ++g) {
    CellScore score;
    score.row = gt_masks[g].row;
    score.col = gt_masks[g].col;
    score.matched_pred = match[g];
    if (match[g] >= 0) {
      const auto& pstat = ps[match[g]];
      const auto& gstat = gs[g];
      const double tp = static_cast<double>(match_tp[g]);
      score.precision = pstat.area == 0 ? (gstat.area == 0 ? 1.0 : 0.0) : tp / pstat.area;
      score.recall = gstat.area == 0 ? 1.0 : tp / gstat.area;
      score.f1 = (score.precision + score.recall) > 0
                     ? 2 * score.precision * score.recall / (score.precision + score.recall)
                     : 0;
      const double denom = pstat.sum + gstat.sum - match_min[g];
      score.weighted_jaccard = denom <= 0 ? 1.0 : match_min[g] / denom;
      ++report.matched;
    } else {
      ++report.missed;
    }
    report.cells.push_back(score);
  }

  // Module level over the frame-wide unions.
  GrayImage pred_union(frame_width, frame_height), gt_union(frame_width, frame_height);
  auto accumulate = [](GrayImage* u, const MaskRegion& m) {
    for (int y = 0; y < m.image.height; ++y)
      for (int x = 0; x < m.image.width; ++x) {
        float& dst = u->at(x + m.x0, y + m.y0);
        dst = std::max(dst, m.image.at(x, y));
      }
  };
  for (const auto& m : pred_masks) accumulate(&pred_union, m);
  for (const auto& m : gt_masks) accumulate(&gt_union, m);

  const Prf prf = pixel_prf(binarize(pred_union), binarize(gt_union));
  report.precision = prf.precision;
  report.recall = prf.recall;
  report.f1 = prf.f1;
  report.weighted_jaccard = weighted_jaccard(pred_union, gt_union);
  const PrCurve curve = pr_curve(pred_union, binarize(gt_union), pr_steps);
  report.ap = curve.ap;
  report.baseline = curve.baseline;
  return report;
}

}  // namespace elcell::metrics
