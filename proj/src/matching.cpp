#include "stgd/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stgd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

BevBox3D decode_row(const double* q) { return params_to_box(q); }

// Quick reject for pairwise IoU work: footprints cannot overlap when the
// centers are farther apart than the two half-diagonals.
inline double half_diag(const BevBox3D& b) { return 0.5 * std::hypot(b.l, b.w); }

inline bool may_overlap(const BevBox3D& a, const BevBox3D& b, double slack) {
  return center_distance_bev(a, b) <= half_diag(a) + half_diag(b) + slack;
}

double iou_by_kind(const BevBox3D& a, const BevBox3D& b, IouKind kind) {
  return kind == IouKind::kBev ? iou_bev(a, b) : iou_3d(a, b);
}

}  // namespace

void LossWeights::validate() const {
  require(std::isfinite(cls) && std::isfinite(huber) && std::isfinite(giou) &&
              std::isfinite(reg),
          "LossWeights: weights must be finite");
  require(cls >= 0 && huber >= 0 && giou >= 0 && reg >= 0,
          "LossWeights: weights must be non-negative");
}

Assignment hungarian(const Tensor& cost) {
  require(cost.rank() == 2, "hungarian: cost must be a matrix");
  std::size_t n_pred = cost.dim(0), n_gt = cost.dim(1);
  require(n_pred >= n_gt, "hungarian: need n_pred >= n_gt, got " + cost.shape_str());
  for (double v : cost.data)
    require(std::isfinite(v), "hungarian: costs must be finite");

  Assignment out;
  if (n_gt == 0) {
    for (std::size_t i = 0; i < n_pred; ++i) out.unmatched_preds.push_back(i);
    return out;
  }

  // Shortest augmenting path with potentials, one row (= ground truth) at a
  // time over the transposed matrix; 1-indexed internals.
  std::size_t n = n_gt, m = n_pred;
  auto a = [&](std::size_t gt, std::size_t pred) { return cost.data[(pred - 1) * n_gt + (gt - 1)]; };
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      std::size_t i0 = p[j0], j1 = 0;
      double delta = kInf;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<char> matched(n_pred, 0);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) {
      pairs.emplace_back(j - 1, p[j] - 1);
      matched[j - 1] = 1;
    }
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const auto& x, const auto& y) { return x.second < y.second; });
  out.pairs = std::move(pairs);
  for (std::size_t i = 0; i < n_pred; ++i)
    if (!matched[i]) out.unmatched_preds.push_back(i);
  return out;
}

std::array<double, 8> box_to_params(const BevBox3D& box) {
  return {box.x, box.y, box.z, box.l, box.w, box.h, std::sin(box.heading),
          std::cos(box.heading)};
}

BevBox3D params_to_box(const double* p) {
  double l = std::max(p[3], 1e-3);
  double w = std::max(p[4], 1e-3);
  double h = std::max(p[5], 1e-3);
  double heading = (p[6] == 0.0 && p[7] == 0.0) ? 0.0 : std::atan2(p[6], p[7]);
  return BevBox3D(p[0], p[1], p[2], l, w, h, heading);
}

Tensor match_cost(const std::vector<BevBox3D>& pred_boxes, const Tensor& class_probs,
                  const GtFrame& gt, const LossWeights& weights) {
  weights.validate();
  std::size_t n = pred_boxes.size(), m = gt.boxes.size();
  require(class_probs.rank() == 2 && class_probs.dim(0) == n,
          "match_cost: class_probs rows must match predictions");
  require(gt.classes.size() == m, "match_cost: gt class/box mismatch");
  std::size_t n_classes = class_probs.dim(1);
  Tensor cost = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    auto pi = box_to_params(pred_boxes[i]);
    for (std::size_t k = 0; k < m; ++k) {
      require(gt.classes[k] >= 0 && static_cast<std::size_t>(gt.classes[k]) < n_classes,
              "match_cost: gt class out of range");
      auto pk = box_to_params(gt.boxes[k]);
      double l1 = 0.0;
      for (int d = 0; d < 8; ++d) l1 += std::abs(pi[d] - pk[d]);
      double cls = -class_probs.data[i * n_classes + static_cast<std::size_t>(gt.classes[k])];
      double giou = 1.0 - giou_3d(pred_boxes[i], gt.boxes[k]);
      cost.data[i * m + k] = weights.cls * cls + weights.huber * l1 + weights.giou * giou;
    }
  }
  return cost;
}

double focal_term(double p, bool positive, const FocalParams& fp) {
  p = std::clamp(p, 1e-12, 1.0 - 1e-12);
  if (positive) return -fp.alpha * std::pow(1.0 - p, fp.gamma) * std::log(p);
  return -(1.0 - fp.alpha) * std::pow(p, fp.gamma) * std::log1p(-p);
}

Var focal_loss(Tape& tape, Var logits, const std::vector<int>& target_class,
               const FocalParams& fp, double normalizer) {
  const Tensor& tl = tape.value(logits);
  require(tl.rank() == 2 && tl.dim(0) == target_class.size(),
          "focal_loss: target length must match logit rows");
  require(normalizer > 0, "focal_loss: normalizer must be positive");
  std::size_t n = tl.dim(0), k = tl.dim(1);
  double alpha = fp.alpha, gamma = fp.gamma;

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      double p = 1.0 / (1.0 + std::exp(-tl.data[i * k + c]));
      bool pos = target_class[i] == static_cast<int>(c);
      total += focal_term(p, pos, fp);
    }
  }
  Tensor value = Tensor::scalar(total / normalizer);
  return tape.custom_op(
      std::move(value), {logits}, "focal_loss",
      [target_class, alpha, gamma, normalizer, n, k](const Tensor& gout,
                                                     const std::vector<const Tensor*>& vals,
                                                     const std::vector<Tensor*>& grads) {
        double g = gout.data[0] / normalizer;
        const Tensor& z = *vals[0];
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t c = 0; c < k; ++c) {
            double p = 1.0 / (1.0 + std::exp(-z.data[i * k + c]));
            p = std::clamp(p, 1e-12, 1.0 - 1e-12);
            bool pos = target_class[i] == static_cast<int>(c);
            double dz;
            if (pos) {
              dz = alpha * std::pow(1.0 - p, gamma) * (gamma * p * std::log(p) - (1.0 - p));
            } else {
              dz = (1.0 - alpha) * std::pow(p, gamma) *
                   (p - gamma * (1.0 - p) * std::log1p(-p));
            }
            grads[0]->data[i * k + c] += g * dz;
          }
        }
      });
}

Var huber_elem(Tape& tape, Var x, double delta) {
  require(delta > 0, "huber_elem: delta must be positive");
  const Tensor& tx = tape.value(x);
  Tensor out = tx;
  for (auto& v : out.data) {
    double a = std::abs(v);
    v = a <= delta ? 0.5 * v * v : delta * (a - 0.5 * delta);
  }
  return tape.custom_op(std::move(out), {x}, "huber",
                        [delta](const Tensor& gout, const std::vector<const Tensor*>& vals,
                                const std::vector<Tensor*>& grads) {
                          const Tensor& in = *vals[0];
                          for (std::size_t i = 0; i < in.size(); ++i) {
                            double d = std::clamp(in.data[i], -delta, delta);
                            grads[0]->data[i] += gout.data[i] * d;
                          }
                        });
}

Var giou_loss(Tape& tape, Var box_params, const std::vector<BevBox3D>& gt_boxes,
              double fd_step) {
  const Tensor& q = tape.value(box_params);
  require(q.rank() == 2 && q.dim(1) == 8, "giou_loss: box params must be [n,8]");
  require(q.dim(0) == gt_boxes.size(), "giou_loss: row/gt count mismatch");
  std::size_t n = gt_boxes.size();
  require(n > 0, "giou_loss: no matched pairs");

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    total += 1.0 - giou_3d(decode_row(&q.data[i * 8]), gt_boxes[i]);
  Tensor value = Tensor::scalar(total / static_cast<double>(n));

  return tape.custom_op(
      std::move(value), {box_params}, "giou_loss",
      [gt_boxes, fd_step, n](const Tensor& gout, const std::vector<const Tensor*>& vals,
                             const std::vector<Tensor*>& grads) {
        double g = gout.data[0] / static_cast<double>(n);
        const Tensor& q = *vals[0];
        std::vector<double> row(8);
        for (std::size_t i = 0; i < n; ++i) {
          std::copy_n(&q.data[i * 8], 8, row.begin());
          for (int d = 0; d < 8; ++d) {
            double orig = row[d];
            row[d] = orig + fd_step;
            double fp = -giou_3d(decode_row(row.data()), gt_boxes[i]);
            row[d] = orig - fd_step;
            double fm = -giou_3d(decode_row(row.data()), gt_boxes[i]);
            row[d] = orig;
            grads[0]->data[i * 8 + d] += g * (fp - fm) / (2.0 * fd_step);
          }
        }
      });
}

double iou_regularizer(const std::vector<BevBox3D>& boxes, const std::vector<double>& scores,
                       IouKind kind) {
  require(boxes.size() == scores.size(), "iou_regularizer: box/score mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      if (i == j) continue;
      if (!may_overlap(boxes[i], boxes[j], 0.0)) continue;
      total += scores[i] * iou_by_kind(boxes[i], boxes[j], kind);
    }
  }
  return total;
}

double iou_regularizer(const QuerySet& qs, IouKind kind) {
  return iou_regularizer(qs.boxes, qs.scores, kind);
}

Var iou_regularizer_term(Tape& tape, Var box_params, Var scores, IouKind kind,
                         double fd_step) {
  const Tensor& q = tape.value(box_params);
  const Tensor& s = tape.value(scores);
  require(q.rank() == 2 && q.dim(1) == 8, "iou_regularizer_term: box params must be [n,8]");
  require(s.rank() == 1 && s.dim(0) == q.dim(0),
          "iou_regularizer_term: score length must match box rows");
  std::size_t n = q.dim(0);

  std::vector<BevBox3D> boxes;
  boxes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) boxes.push_back(decode_row(&q.data[i * 8]));

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || !may_overlap(boxes[i], boxes[j], 0.0)) continue;
      total += s.data[i] * iou_by_kind(boxes[i], boxes[j], kind);
    }

  return tape.custom_op(
      Tensor::scalar(total), {box_params, scores}, "iou_regularizer",
      [kind, fd_step, n, boxes](const Tensor& gout, const std::vector<const Tensor*>& vals,
                                const std::vector<Tensor*>& grads) {
        double g = gout.data[0];
        const Tensor& q = *vals[0];
        const Tensor& s = *vals[1];
        // d/ds_i is the plain IoU row sum
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            if (i == j || !may_overlap(boxes[i], boxes[j], 0.0)) continue;
            acc += iou_by_kind(boxes[i], boxes[j], kind);
          }
          grads[1]->data[i] += g * acc;
        }
        // boxes by central differences; only terms touching box i change
        std::vector<double> row(8);
        for (std::size_t i = 0; i < n; ++i) {
          std::copy_n(&q.data[i * 8], 8, row.begin());
          for (int d = 0; d < 8; ++d) {
            double orig = row[d];
            row[d] = orig + fd_step;
            BevBox3D hi = decode_row(row.data());
            row[d] = orig - fd_step;
            BevBox3D lo = decode_row(row.data());
            row[d] = orig;
            double diff = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              if (i == j) continue;
              if (!may_overlap(boxes[i], boxes[j], 2.0 * fd_step + 1e-6)) continue;
              double pair_w = s.data[i] + s.data[j];
              diff += pair_w * (iou_by_kind(hi, boxes[j], kind) - iou_by_kind(lo, boxes[j], kind));
            }
            grads[0]->data[i * 8 + d] += g * diff / (2.0 * fd_step);
          }
        }
      });
}

Var apply_box_deltas(Tape& tape, const std::vector<BevBox3D>& base, Var deltas) {
  const Tensor& td = tape.value(deltas);
  require(td.rank() == 2 && td.dim(1) == 8, "apply_box_deltas: deltas must be [n,8]");
  require(td.dim(0) == base.size(), "apply_box_deltas: row/base count mismatch");
  std::size_t n = base.size();
  // log-size deltas are clamped so the refined box always stays valid
  constexpr double kSizeClamp = 4.0;
  Tensor out = Tensor::zeros({n, 8});
  std::vector<char> saturated(n * 8, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto bp = box_to_params(base[i]);
    const double* d = &td.data[i * 8];
    double* o = &out.data[i * 8];
    o[0] = bp[0] + d[0];
    o[1] = bp[1] + d[1];
    o[2] = bp[2] + d[2];
    for (int k = 3; k < 6; ++k) {
      double dv = d[k];
      if (dv > kSizeClamp || dv < -kSizeClamp) {
        saturated[i * 8 + static_cast<std::size_t>(k)] = 1;
        dv = std::clamp(dv, -kSizeClamp, kSizeClamp);
      }
      o[k] = bp[static_cast<std::size_t>(k)] * std::exp(dv);
    }
    o[6] = bp[6] + d[6];
    o[7] = bp[7] + d[7];
  }
  Tensor saved = out;
  return tape.custom_op(std::move(out), {deltas}, "apply_box_deltas",
                        [saved, saturated, n](const Tensor& gout, const std::vector<const Tensor*>&,
                                              const std::vector<Tensor*>& grads) {
                          for (std::size_t i = 0; i < n; ++i) {
                            for (int d = 0; d < 8; ++d) {
                              std::size_t at = i * 8 + static_cast<std::size_t>(d);
                              double jac = (d >= 3 && d <= 5) ? saved.data[at] : 1.0;
                              if (saturated[at]) jac = 0.0;
                              grads[0]->data[at] += gout.data[at] * jac;
                            }
                          }
                        });
}

Var total_loss(Tape& tape, Var box_params, Var logits, Var scores, const GtFrame& gt,
               const Assignment& assignment, const LossConfig& cfg,
               LossBreakdown* breakdown) {
  cfg.weights.validate();
  const Tensor& q = tape.value(box_params);
  std::size_t n = q.dim(0);
  require(tape.value(logits).dim(0) == n, "total_loss: logits rows must match boxes");

  std::vector<int> targets(n, -1);
  std::vector<std::size_t> matched_rows;
  std::vector<BevBox3D> matched_gt;
  for (const auto& [pred, gtk] : assignment.pairs) {
    require(pred < n && gtk < gt.boxes.size(), "total_loss: assignment out of range");
    targets[pred] = gt.classes[gtk];
    matched_rows.push_back(pred);
    matched_gt.push_back(gt.boxes[gtk]);
  }
  double norm = std::max<std::size_t>(1, matched_rows.size());

  Var cls = focal_loss(tape, logits, targets, cfg.focal, norm);

  Var total = tape.affine(cls, cfg.weights.cls, 0.0);
  Var huber = Var{};
  Var giou = Var{};
  if (!matched_rows.empty()) {
    Var mq = tape.gather_rows(box_params, matched_rows);
    Tensor tgt = Tensor::zeros({matched_rows.size(), 8});
    for (std::size_t r = 0; r < matched_gt.size(); ++r) {
      auto p = box_to_params(matched_gt[r]);
      std::copy(p.begin(), p.end(), &tgt.data[r * 8]);
    }
    Var diff = tape.sub(mq, tape.leaf(tgt, "gt_params"));
    huber = tape.affine(tape.sum(huber_elem(tape, diff, cfg.huber_delta)), 1.0 / norm, 0.0);
    giou = giou_loss(tape, mq, matched_gt);
    total = tape.add(total, tape.affine(huber, cfg.weights.huber, 0.0));
    total = tape.add(total, tape.affine(giou, cfg.weights.giou, 0.0));
  }
  Var reg = Var{};
  if (cfg.weights.reg > 0.0) {
    reg = iou_regularizer_term(tape, box_params, scores, cfg.reg_iou);
    total = tape.add(total, tape.affine(reg, cfg.weights.reg, 0.0));
  }

  if (breakdown) {
    breakdown->cls = tape.value(cls).item();
    breakdown->huber = huber.valid() ? tape.value(huber).item() : 0.0;
    breakdown->giou = giou.valid() ? tape.value(giou).item() : 0.0;
    breakdown->reg = reg.valid() ? tape.value(reg).item() : 0.0;
    breakdown->total = tape.value(total).item();
  }
  return total;
}

}  // namespace stgd
