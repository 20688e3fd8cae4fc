#include "stgd/query_recollection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stgd {

namespace {

std::vector<std::size_t> top_scored(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(order.size(), k));
  return order;
}

}  // namespace

Tensor pe_features(const std::vector<BevBox3D>& boxes, const std::vector<double>& scores,
                   const PeConfig& cfg) {
  require(boxes.size() == scores.size(), "pe_features: box/score mismatch");
  require(cfg.frequencies > 0, "pe_features: need at least one frequency");
  std::size_t width = cfg.feature_width();
  Tensor out = Tensor::zeros({boxes.size(), width});
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const BevBox3D& b = boxes[i];
    const double u[9] = {b.x / cfg.span_xy,   b.y / cfg.span_xy,   b.z / cfg.span_z,
                         b.l / cfg.span_size, b.w / cfg.span_size, b.h / cfg.span_size,
                         std::sin(b.heading), std::cos(b.heading), scores[i]};
    double* row = &out.data[i * width];
    std::size_t at = 0;
    for (int d = 0; d < 9; ++d) {
      double omega = kPi;
      for (std::size_t f = 0; f < cfg.frequencies; ++f) {
        row[at++] = std::sin(omega * u[d]);
        row[at++] = std::cos(omega * u[d]);
        omega *= 2.0;
      }
    }
  }
  return out;
}

void init_pe_params(ParamStore& store, const PeConfig& cfg, std::size_t embed_dim) {
  store.create("pe.proj", {cfg.feature_width(), embed_dim}, cfg.feature_width());
}

Var position_encode(Tape& tape, Var pe_proj, const std::vector<BevBox3D>& boxes,
                    const std::vector<double>& scores, const PeConfig& cfg) {
  Tensor feats = pe_features(boxes, scores, cfg);
  return tape.matmul(tape.leaf(feats, "pe_features"), pe_proj);
}

QueryInit recollect(const QuerySet& prev_pred, const QuerySet& proposals, std::size_t n_p,
                    std::size_t n_res) {
  proposals.validate();
  prev_pred.validate();

  auto prop_order = top_scored(proposals.scores, proposals.size());
  auto prev_order = top_scored(prev_pred.scores, n_res);
  std::size_t padding = n_res - prev_order.size();
  if (proposals.size() < n_p + padding) {
    throw ValidationError("recollect: need " + std::to_string(n_p + padding) +
                          " proposals (n_p " + std::to_string(n_p) + " + padding " +
                          std::to_string(padding) + ") but only " +
                          std::to_string(proposals.size()) + " available");
  }

  QueryInit out;
  out.boxes.reserve(n_p + n_res);
  for (std::size_t r = 0; r < n_p + padding; ++r) {
    std::size_t i = prop_order[r];
    out.boxes.push_back(proposals.boxes[i]);
    out.scores.push_back(proposals.scores[i]);
    out.provenance.push_back(QuerySource::kEncoder);
  }
  for (std::size_t r : prev_order) {
    out.boxes.push_back(prev_pred.boxes[r]);
    out.scores.push_back(prev_pred.scores[r]);
    out.provenance.push_back(QuerySource::kRecollected);
  }
  return out;
}

}  // namespace stgd
