#ifndef STGD_GRAPH_ATTENTION_HPP
#define STGD_GRAPH_ATTENTION_HPP

#include <cstddef>
#include <vector>

#include "stgd/geometry.hpp"
#include "stgd/tensor.hpp"

namespace stgd {

// Directed graph in CSR form. For spatial graphs the neighbor indices point
// into the same node set (source_count == node_count, no self loops); for
// temporal graphs they point into the previous frame's node set.
struct Graph {
  std::size_t node_count = 0;
  std::size_t source_count = 0;
  std::vector<std::size_t> offsets;    // node_count + 1
  std::vector<std::size_t> neighbors;  // flattened, ordered by distance
  std::vector<double> distances;       // BEV center distance per edge

  std::size_t edge_count() const { return neighbors.size(); }
  std::size_t degree(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
  double average_degree() const {
    return node_count == 0 ? 0.0
                           : static_cast<double>(neighbors.size()) /
                                 static_cast<double>(node_count);
  }
  void validate() const;
};

enum class EdgeWeightMode { kFeature, kDistance };

struct StgaConfig {
  double d_s = 2.0;             // spatial edge distance threshold, meters
  double d_u = 2.0;             // temporal edge distance threshold, meters
  std::size_t max_neighbors = 0;  // per-node cap; 0 = no limit
  EdgeWeightMode edge_weight_mode = EdgeWeightMode::kFeature;
  double tau = 1.0;             // temperature for distance-based weights

  void validate() const;
};

// Edge (i, j), i != j, iff center distance < d_s. With a cap, the
// max_neighbors nearest survive (ties to the lower index).
Graph build_spatial_graph(const std::vector<BevBox3D>& boxes, const StgaConfig& cfg);

// Target node i links to source node j iff BEV center distance < d_u.
Graph build_temporal_edges(const std::vector<BevBox3D>& target_boxes,
                           const std::vector<BevBox3D>& source_boxes,
                           const StgaConfig& cfg);

// Distance-based ablation weights: per-node softmax of -d_ij / tau.
std::vector<double> distance_edge_weights(const Graph& graph, double tau);

struct AttentionParams {
  Var proj_self;   // projection applied to this graph's features
  Var proj_other;  // projection applied to the message source (spatial: same)
  Var attn_self;   // [C',1] half of the scoring map for the query side
  Var attn_other;  // [C',1] half for the neighbor side
  Var msg;         // message projection for aggregation
};

// Graph attention over one frame: logits from the shared projection,
// LeakyReLU(0.2), per-neighborhood softmax, ELU on the aggregated message,
// residual add. Isolated nodes pass through unchanged.
Var spatial_attention(Tape& tape, const Graph& graph, Var features,
                      const AttentionParams& params, const StgaConfig& cfg);

// Message passing from the previous frame's nodes into the current ones.
// Targets without source neighbors pass through unchanged.
Var temporal_cross_attention(Tape& tape, const Graph& tgraph, Var target_features,
                             Var source_features, const AttentionParams& params,
                             const StgaConfig& cfg);

// Graph embedding: elementwise sum of the two attention outputs.
Var stga_forward(Tape& tape, Var spatial_out, Var temporal_out);

// Closed-form multiply-accumulate predictions per phase.
struct OpCounts {
  double node_selection;
  double spatial_attention;
  double temporal_attention;
  double stga_total;
  double dense_self_attention;
};
OpCounts op_counter(std::size_t n_q, std::size_t n_g, double avg_neighbors_s,
                    double avg_neighbors_u, std::size_t c);

}  // namespace stgd

#endif  // STGD_GRAPH_ATTENTION_HPP
