#pragma once

#include <optional>
#include <vector>

#include "modir/ops.hpp"
#include "modir/tensor.hpp"

namespace modir {

/// A landmark correspondence in voxel units (x along W, y along H).
struct Landmark {
  double target_x = 0, target_y = 0;
  double source_x = 0, source_y = 0;
};

/// Images are [1,1,H,W] in [0,1]; masks are [1,K,H,W] with one binary channel
/// per organ. The optional ground-truth DVF is [1,2,H,W].
struct RegistrationPair {
  Tensor source_image;
  Tensor target_image;
  Tensor source_mask;
  Tensor target_mask;
  std::vector<Landmark> landmarks;
  std::optional<Tensor> gt_dvf;

  std::size_t height() const { return target_image.dim(2); }
  std::size_t width() const { return target_image.dim(3); }
  std::size_t organs() const { return target_mask.dim(1); }
};

/// Resamples image_or_mask at x + u(x). Masks are warped with the same
/// bilinear kernel and therefore come out soft.
inline Tensor warp(Tape& tape, const Tensor& image_or_mask, const Tensor& dvf) {
  if (image_or_mask.rank() != 4 || dvf.rank() != 4 || image_or_mask.dim(2) != dvf.dim(2) ||
      image_or_mask.dim(3) != dvf.dim(3))
    throw ShapeError("warp: spatial shapes differ: " + shape_str(image_or_mask.shape()) + " vs " +
                     shape_str(dvf.shape()));
  return ops::grid_sample(tape, image_or_mask, ops::displacement_to_coords(tape, dvf));
}

struct NccOptions {
  std::size_t window = 9;
  double eps = 1e-5;
};

/// 1 - mean squared local normalised cross-correlation over 9x9 windows.
inline Tensor loss_ncc(Tape& tape, const Tensor& warped, const Tensor& target, NccOptions opt = {}) {
  using namespace ops;
  if (warped.shape() != target.shape()) throw ShapeError("loss_ncc: shape mismatch");
  const Tensor& i = warped;
  const Tensor& j = target;
  // Border windows are truncated; statistics use the in-bounds pixel count.
  const Shape s = warped.shape();
  std::vector<double> inv_count = ops::detail::box_sum_values(std::vector<double>(warped.numel(), 1.0), s, opt.window);
  for (double& c : inv_count) c = 1.0 / c;
  const Tensor inv_area = Tensor::from(s, std::move(inv_count));
  Tensor i_sum = box_sum(tape, i, opt.window);
  Tensor j_sum = box_sum(tape, j, opt.window);
  Tensor ii_sum = box_sum(tape, square(tape, i), opt.window);
  Tensor jj_sum = box_sum(tape, square(tape, j), opt.window);
  Tensor ij_sum = box_sum(tape, mul(tape, i, j), opt.window);
  Tensor cross = sub(tape, ij_sum, mul(tape, mul(tape, i_sum, j_sum), inv_area));
  Tensor i_var = sub(tape, ii_sum, mul(tape, square(tape, i_sum), inv_area));
  Tensor j_var = sub(tape, jj_sum, mul(tape, square(tape, j_sum), inv_area));
  Tensor cc = div(tape, square(tape, cross), add_scalar(tape, mul(tape, i_var, j_var), opt.eps));
  return add_scalar(tape, scale(tape, reduce_mean(tape, cc), -1.0), 1.0);
}

/// Mean squared forward difference of the displacement over both components
/// and both directions.
inline Tensor loss_smooth(Tape& tape, const Tensor& dvf) {
  using namespace ops;
  if (dvf.rank() != 4) throw ShapeError("loss_smooth: expected [N,2,H,W]");
  Tensor dx = reduce_mean(tape, square(tape, diff(tape, dvf, 3)));
  Tensor dy = reduce_mean(tape, square(tape, diff(tape, dvf, 2)));
  return scale(tape, add(tape, dx, dy), 0.5);
}

/// 1 - mean over organ channels of the soft Dice 2 sum(ab) / (sum a^2 + sum b^2 + eps).
inline Tensor loss_dice(Tape& tape, const Tensor& warped_mask, const Tensor& target_mask, double eps = 1e-5) {
  using namespace ops;
  if (warped_mask.shape() != target_mask.shape()) throw ShapeError("loss_dice: shape mismatch");
  Tensor overlap = sum_spatial(tape, mul(tape, warped_mask, target_mask));
  Tensor denom = add_scalar(tape,
                            add(tape, sum_spatial(tape, square(tape, warped_mask)),
                                sum_spatial(tape, square(tape, target_mask))),
                            eps);
  Tensor dice = scale(tape, div(tape, overlap, denom), 2.0);
  return add_scalar(tape, scale(tape, reduce_mean(tape, dice), -1.0), 1.0);
}

/// The per-head objectives. seg is undefined when segmentation guidance is off.
struct LossVector {
  Tensor image;
  Tensor smooth;
  Tensor seg;

  bool guided() const { return seg.defined(); }
  std::size_t size() const { return guided() ? 3 : 2; }
  std::vector<Tensor> terms() const {
    if (guided()) return {image, smooth, seg};
    return {image, smooth};
  }
  std::vector<double> values() const {
    std::vector<double> v;
    for (const auto& t : terms()) v.push_back(t.item());
    return v;
  }
};

inline LossVector compute_losses(Tape& tape, const RegistrationPair& pair, const Tensor& dvf, bool guidance) {
  LossVector lv;
  lv.image = loss_ncc(tape, warp(tape, pair.source_image, dvf), pair.target_image);
  lv.smooth = loss_smooth(tape, dvf);
  if (guidance) lv.seg = loss_dice(tape, warp(tape, pair.source_mask, dvf), pair.target_mask);
  return lv;
}

/// sum_k weights[k] * terms[k] with the weights held constant.
inline Tensor weighted_total(Tape& tape, const LossVector& lv, const std::vector<double>& weights) {
  const auto terms = lv.terms();
  if (weights.size() != terms.size()) throw ContractError("weighted_total: weight count does not match objectives");
  Tensor total;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (weights[k] < 0.0) throw ContractError("weighted_total: weights must be nonnegative");
    Tensor term = ops::scale(tape, terms[k], weights[k]);
    total = total.defined() ? ops::add(tape, total, term) : term;
  }
  return total;
}

}  // namespace modir
