#ifndef STGD_MATCHING_HPP
#define STGD_MATCHING_HPP

#include <array>
#include <utility>
#include <vector>

#include "stgd/geometry.hpp"
#include "stgd/selection.hpp"
#include "stgd/tensor.hpp"

namespace stgd {

// One-to-one assignment between predictions and ground truths. Every ground
// truth is matched exactly once (predictions must not be fewer).
struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred, gt)
  std::vector<std::size_t> unmatched_preds;
};

struct LossWeights {
  double cls = 1.0;
  double huber = 4.0;
  double giou = 2.0;
  double reg = 1.0;
  void validate() const;
};

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

enum class IouKind { kBev, k3d };

struct GtFrame {
  std::vector<BevBox3D> boxes;
  std::vector<int> classes;
};

// Minimum-cost perfect matching of the ground-truth columns. Requires
// finite costs and n_pred >= n_gt (the caller pads queries, not this op).
Assignment hungarian(const Tensor& cost);

// (x, y, z, l, w, h, sin heading, cos heading) regression parameterization;
// the trigonometric pair avoids the angle wrap in L1-style losses.
std::array<double, 8> box_to_params(const BevBox3D& box);
BevBox3D params_to_box(const double* p8);

// cost(i,k) = cls * (-p_i[class_k]) + huber_w * L1(params) + giou_w * (1 - GIoU3D)
Tensor match_cost(const std::vector<BevBox3D>& pred_boxes, const Tensor& class_probs,
                  const GtFrame& gt, const LossWeights& weights);

// Alpha-balanced focal classification loss over sigmoid class probabilities;
// matched predictions are positives for their class, everything else is
// background. Sum over entries divided by `normalizer`.
Var focal_loss(Tape& tape, Var logits, const std::vector<int>& target_class,
               const FocalParams& fp, double normalizer);

// Scalar focal term for one probability/target pair (convenience for tests
// and score-style losses).
double focal_term(double p, bool positive, const FocalParams& fp);

// Elementwise Huber transform (delta default 1).
Var huber_elem(Tape& tape, Var x, double delta);

// Mean over matched rows of (1 - giou_3d(decode(q_i), gt_i)); box gradients
// by central differences on the 8 parameters.
Var giou_loss(Tape& tape, Var box_params, const std::vector<BevBox3D>& gt_boxes,
              double fd_step = 1e-4);

// Confidence-weighted pairwise IoU over one prediction set:
//   R_b = sum_i sum_{j != i} s_i * IoU(b_i, b_j)
double iou_regularizer(const QuerySet& qs, IouKind kind = IouKind::kBev);
double iou_regularizer(const std::vector<BevBox3D>& boxes, const std::vector<double>& scores,
                       IouKind kind = IouKind::kBev);

// Tape version: analytic gradient to scores, central differences to boxes.
Var iou_regularizer_term(Tape& tape, Var box_params, Var scores, IouKind kind,
                         double fd_step = 1e-4);

// q = base boxes refined by deltas (dx,dy,dz,dlog_l,dlog_w,dlog_h,dsin,dcos).
Var apply_box_deltas(Tape& tape, const std::vector<BevBox3D>& base, Var deltas);

struct LossBreakdown {
  double cls = 0.0;
  double huber = 0.0;
  double giou = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

struct LossConfig {
  LossWeights weights;
  FocalParams focal;
  double huber_delta = 1.0;
  IouKind reg_iou = IouKind::kBev;
};

// L = cls*focal + huber_w*Huber + giou_w*(1-GIoU) + reg*R_b. Focal runs over
// all predictions, Huber/GIoU over matched pairs, R_b over the full set.
Var total_loss(Tape& tape, Var box_params, Var logits, Var scores, const GtFrame& gt,
               const Assignment& assignment, const LossConfig& cfg,
               LossBreakdown* breakdown = nullptr);

}  // namespace stgd

#endif  // STGD_MATCHING_HPP
