#ifndef STGD_SELECTION_HPP
#define STGD_SELECTION_HPP

#include <vector>

#include "stgd/geometry.hpp"
#include "stgd/tensor.hpp"

namespace stgd {

// Decoder-output surrogate: parallel arrays of boxes, confidence scores in
// [0,1] and C-dim embeddings (one row per box).
struct QuerySet {
  std::vector<BevBox3D> boxes;
  std::vector<double> scores;
  Tensor embeddings;  // [n, C]; may be empty (0 columns) before encoding

  std::size_t size() const { return boxes.size(); }
  void validate() const;
};

// j in N_i  iff  i != j and iou_bev(b_i, b_j) > theta.
std::vector<std::vector<std::size_t>> neighbor_sets(const std::vector<BevBox3D>& boxes,
                                                    double theta);

// Soft suppression: every box with a more confident neighbor gets its score
// scaled by (1 - IoU with the most confident neighbor). All reads target the
// original score array, so any index partitioning across workers yields
// bit-identical results.
std::vector<double> suppress_scores(const QuerySet& qs, double theta, unsigned workers = 1);

// Rank by suppressed score (ties to the lower index), keep min(n, n_keep)
// entries. Output rows carry the original scores; suppression only ranks.
QuerySet select_nodes(const QuerySet& qs, double theta, std::size_t n_keep,
                      unsigned workers = 1);

// Indices kept by select_nodes, in selection order.
std::vector<std::size_t> select_node_indices(const QuerySet& qs, double theta,
                                             std::size_t n_keep, unsigned workers = 1);

}  // namespace stgd

#endif  // STGD_SELECTION_HPP
