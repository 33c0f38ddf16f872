#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "modir/hypervolume.hpp"
#include "modir/model.hpp"
#include "modir/registration.hpp"

namespace modir::metrics {

struct TreResult {
  std::vector<double> distances;  // NaN for excluded landmarks
  std::vector<bool> out_of_bounds;
  std::size_t excluded = 0;
  double mean = 0.0;
};

/// Bilinear sample of one DVF component at a non-integer site.
inline double sample_component(const Tensor& dvf, std::size_t component, double x, double y) {
  const std::size_t h = dvf.dim(2), w = dvf.dim(3);
  const auto x0 = static_cast<std::size_t>(std::floor(x)), y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  const auto at = [&](std::size_t yy, std::size_t xx) { return dvf[(component * h + yy) * w + xx]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

/// Maps each target landmark through t + u(t) and measures the distance to
/// its source landmark. Landmarks outside the DVF domain are flagged and
/// left out of the mean.
inline TreResult tre(const Tensor& dvf, const std::vector<Landmark>& landmarks) {
  const double h = static_cast<double>(dvf.dim(2)), w = static_cast<double>(dvf.dim(3));
  TreResult r;
  double sum = 0.0;
  for (const auto& lm : landmarks) {
    const bool oob = !(lm.target_x >= 0.0 && lm.target_y >= 0.0 && lm.target_x <= w - 1 && lm.target_y <= h - 1);
    r.out_of_bounds.push_back(oob);
    if (oob) {
      r.distances.push_back(std::numeric_limits<double>::quiet_NaN());
      ++r.excluded;
      continue;
    }
    const double mx = lm.target_x + sample_component(dvf, 0, lm.target_x, lm.target_y);
    const double my = lm.target_y + sample_component(dvf, 1, lm.target_x, lm.target_y);
    const double d = std::hypot(mx - lm.source_x, my - lm.source_y);
    r.distances.push_back(d);
    sum += d;
  }
  const std::size_t used = landmarks.size() - r.excluded;
  r.mean = used ? sum / static_cast<double>(used) : 0.0;
  return r;
}

/// Percentage of forward-difference stencil sites ((H-1)(W-1) of them) where
/// the Jacobian determinant of x + u(x) is <= 0.
inline double folding_percent(const Tensor& dvf) {
  const std::size_t h = dvf.dim(2), w = dvf.dim(3);
  const auto ux = [&](std::size_t y, std::size_t x) { return dvf[y * w + x]; };
  const auto uy = [&](std::size_t y, std::size_t x) { return dvf[h * w + y * w + x]; };
  std::size_t folded = 0;
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x) {
      const double dxx = ux(y, x + 1) - ux(y, x), dxy = ux(y + 1, x) - ux(y, x);
      const double dyx = uy(y, x + 1) - uy(y, x), dyy = uy(y + 1, x) - uy(y, x);
      const double det = (1.0 + dxx) * (1.0 + dyy) - dxy * dyx;
      if (det <= 0.0) ++folded;
    }
  return 100.0 * static_cast<double>(folded) / static_cast<double>((h - 1) * (w - 1));
}

struct DiceResult {
  std::vector<double> per_organ;  // percent
  std::vector<bool> both_empty;
  double mean = 0.0;
};

/// Hard Dice in percent after thresholding both masks at `threshold`. A
/// channel empty in both masks scores 100 and is flagged.
inline DiceResult dice_score(const Tensor& a, const Tensor& b, double threshold = 0.5) {
  if (a.shape() != b.shape()) throw ShapeError("dice_score: shape mismatch");
  const std::size_t k = a.dim(1), hw = a.dim(2) * a.dim(3);
  DiceResult r;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < hw; ++i) {
      const bool ia = a[c * hw + i] >= threshold, ib = b[c * hw + i] >= threshold;
      na += ia;
      nb += ib;
      both += ia && ib;
    }
    const bool empty = na + nb == 0;
    r.both_empty.push_back(empty);
    r.per_organ.push_back(empty ? 100.0 : 100.0 * 2.0 * static_cast<double>(both) / static_cast<double>(na + nb));
  }
  for (double d : r.per_organ) r.mean += d;
  r.mean /= static_cast<double>(k);
  return r;
}

struct SolutionMetrics {
  double mean_tre = 0.0;
  double folding_pct = 0.0;
  double dice_pct = 0.0;
  std::vector<double> losses;
};

/// Everything computed for one head on one pair; the rasters are kept for
/// bundle export.
struct SolutionOutput {
  Tensor dvf;
  Tensor warped_image;
  Tensor warped_mask;
  SolutionMetrics metrics;
};

/// Metrics of an arbitrary DVF on a pair (losses use the same definitions as
/// training; guidance selects 2 or 3 objectives).
inline SolutionOutput evaluate_dvf(const RegistrationPair& pair, const Tensor& dvf, bool guidance) {
  Tape tape(false);
  SolutionOutput out;
  out.dvf = dvf.detach();
  out.warped_image = warp(tape, pair.source_image, out.dvf);
  out.warped_mask = warp(tape, pair.source_mask, out.dvf);
  out.metrics.losses.push_back(loss_ncc(tape, out.warped_image, pair.target_image).item());
  out.metrics.losses.push_back(loss_smooth(tape, out.dvf).item());
  if (guidance) out.metrics.losses.push_back(loss_dice(tape, out.warped_mask, pair.target_mask).item());
  out.metrics.mean_tre = tre(out.dvf, pair.landmarks).mean;
  out.metrics.folding_pct = folding_percent(out.dvf);
  out.metrics.dice_pct = dice_score(out.warped_mask, pair.target_mask).mean;
  return out;
}

inline std::vector<SolutionOutput> evaluate_pair(const ModelParams& params, const RegistrationPair& pair, bool guidance) {
  Tape tape(false);
  std::vector<SolutionOutput> out;
  for (const auto& dvf : forward_multi_head(tape, params, pair)) out.push_back(evaluate_dvf(pair, dvf, guidance));
  return out;
}

/// Summary statistics of one approximation set.
struct SetSummary {
  double hv = 0.0;
  std::size_t min_tre_solution = 0;  // best TRE and that
  double min_tre = 0.0;              // same solution's folding
  double min_tre_folding = 0.0;
  std::size_t max_dice_solution = 0;
  double max_dice = 0.0;
  double max_dice_folding = 0.0;
  double spread = 0.0;  // mean nearest-neighbour distance on front 0
  std::vector<std::size_t> front0;
};

inline SetSummary summarize(const std::vector<SolutionMetrics>& sols, const hv::Point& ref) {
  SetSummary s;
  hv::PointSet losses;
  for (const auto& m : sols) losses.push_back(m.losses);
  s.hv = hv::hypervolume(losses, ref);
  for (std::size_t i = 0; i < sols.size(); ++i) {
    if (i == 0 || sols[i].mean_tre < sols[s.min_tre_solution].mean_tre) s.min_tre_solution = i;
    if (i == 0 || sols[i].dice_pct > sols[s.max_dice_solution].dice_pct) s.max_dice_solution = i;
  }
  s.min_tre = sols[s.min_tre_solution].mean_tre;
  s.min_tre_folding = sols[s.min_tre_solution].folding_pct;
  s.max_dice = sols[s.max_dice_solution].dice_pct;
  s.max_dice_folding = sols[s.max_dice_solution].folding_pct;
  s.front0 = hv::nondominated_sort(losses).fronts.front();
  hv::PointSet front;
  for (std::size_t i : s.front0) front.push_back(losses[i]);
  s.spread = hv::mean_nearest_neighbor_distance(front);
  return s;
}

struct PairReport {
  double pre_tre = 0.0;  // TRE of the identity transform
  std::vector<SolutionMetrics> solutions;
  SetSummary summary;
};

struct SetReport {
  std::vector<PairReport> pairs;
  std::vector<SolutionMetrics> mean_solutions;  // per head, averaged over pairs
  SetSummary aggregate;
  double mean_pre_tre = 0.0;
};

inline double pre_registration_tre(const RegistrationPair& pair) {
  return tre(Tensor::zeros({1, 2, pair.height(), pair.width()}), pair.landmarks).mean;
}

inline SetReport set_report_from(const std::vector<std::vector<SolutionMetrics>>& per_pair,
                                 const std::vector<double>& pre_tre, const hv::Point& ref) {
  SetReport r;
  for (std::size_t i = 0; i < per_pair.size(); ++i) {
    PairReport pr{pre_tre[i], per_pair[i], summarize(per_pair[i], ref)};
    r.pairs.push_back(std::move(pr));
    r.mean_pre_tre += pre_tre[i];
  }
  r.mean_pre_tre /= static_cast<double>(per_pair.size());
  const std::size_t p = per_pair.front().size(), n = per_pair.front().front().losses.size();
  r.mean_solutions.assign(p, SolutionMetrics{0, 0, 0, std::vector<double>(n, 0.0)});
  for (const auto& sols : per_pair)
    for (std::size_t h = 0; h < p; ++h) {
      auto& m = r.mean_solutions[h];
      m.mean_tre += sols[h].mean_tre;
      m.folding_pct += sols[h].folding_pct;
      m.dice_pct += sols[h].dice_pct;
      for (std::size_t k = 0; k < n; ++k) m.losses[k] += sols[h].losses[k];
    }
  const double inv = 1.0 / static_cast<double>(per_pair.size());
  for (auto& m : r.mean_solutions) {
    m.mean_tre *= inv;
    m.folding_pct *= inv;
    m.dice_pct *= inv;
    for (double& v : m.losses) v *= inv;
  }
  r.aggregate = summarize(r.mean_solutions, ref);
  return r;
}

/// Per-pair approximation sets and metrics of a trained model, plus the
/// head-wise averages over all pairs.
template <class Pairs>
SetReport set_report(const ModelParams& params, const Pairs& pairs, const hv::Point& ref, bool guidance) {
  std::vector<std::vector<SolutionMetrics>> per_pair;
  std::vector<double> pre;
  for (const RegistrationPair& pair : pairs) {
    std::vector<SolutionMetrics> sols;
    for (auto& s : evaluate_pair(params, pair, guidance)) sols.push_back(std::move(s.metrics));
    per_pair.push_back(std::move(sols));
    pre.push_back(pre_registration_tre(pair));
  }
  return set_report_from(per_pair, pre, ref);
}

}  // namespace modir::metrics
