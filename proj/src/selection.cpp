#include "stgd/selection.hpp"

#include <algorithm>
#include <numeric>

namespace stgd {

void QuerySet::validate() const {
  require(scores.size() == boxes.size(), "QuerySet: box/score length mismatch");
  for (double s : scores)
    require(s >= 0.0 && s <= 1.0, "QuerySet: score outside [0,1]");
  if (embeddings.size() > 0) {
    require(embeddings.rank() == 2 && embeddings.dim(0) == boxes.size(),
            "QuerySet: embedding rows must match box count");
  }
}

std::vector<std::vector<std::size_t>> neighbor_sets(const std::vector<BevBox3D>& boxes,
                                                    double theta) {
  require(theta > 0.0 && theta < 1.0, "neighbor_sets: theta must be in (0,1)");
  std::size_t n = boxes.size();
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (iou_bev(boxes[i], boxes[j]) > theta) {
        adj[i].push_back(j);
        adj[j].push_back(i);
      }
    }
  }
  return adj;
}

std::vector<double> suppress_scores(const QuerySet& qs, double theta, unsigned workers) {
  qs.validate();
  std::size_t n = qs.size();
  std::vector<double> updated(qs.scores);
  if (n < 2) return updated;

  const auto& boxes = qs.boxes;
  const auto& orig = qs.scores;
  parallel_for(n, workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      // most confident neighbor under the original scores
      double best_score = -1.0;
      std::size_t best = n;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        if (iou_bev(boxes[i], boxes[j]) > theta) {
          if (orig[j] > best_score || (orig[j] == best_score && j < best)) {
            best_score = orig[j];
            best = j;
          }
        }
      }
      if (best < n && orig[i] < best_score) {
        updated[i] = orig[i] * (1.0 - iou_bev(boxes[i], boxes[best]));
      }
    }
  });
  return updated;
}

std::vector<std::size_t> select_node_indices(const QuerySet& qs, double theta,
                                             std::size_t n_keep, unsigned workers) {
  require(n_keep >= 1, "select_nodes: n_keep must be >= 1");
  std::vector<double> updated = suppress_scores(qs, theta, workers);
  std::vector<std::size_t> order(qs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return updated[a] > updated[b];
  });
  order.resize(std::min(order.size(), n_keep));
  return order;
}

QuerySet select_nodes(const QuerySet& qs, double theta, std::size_t n_keep,
                      unsigned workers) {
  auto keep = select_node_indices(qs, theta, n_keep, workers);
  QuerySet out;
  out.boxes.reserve(keep.size());
  out.scores.reserve(keep.size());
  std::size_t c = qs.embeddings.size() > 0 ? qs.embeddings.dim(1) : 0;
  out.embeddings = Tensor::zeros({keep.size(), c});
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.boxes.push_back(qs.boxes[keep[r]]);
    out.scores.push_back(qs.scores[keep[r]]);
    for (std::size_t j = 0; j < c; ++j)
      out.embeddings.data[r * c + j] = qs.embeddings.data[keep[r] * c + j];
  }
  return out;
}

}  // namespace stgd
