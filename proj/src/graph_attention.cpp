#include "stgd/graph_attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stgd {

void Graph::validate() const {
  require(offsets.size() == node_count + 1, "Graph: offsets length mismatch");
  require(offsets.front() == 0 && offsets.back() == neighbors.size(),
          "Graph: offsets do not cover the edge list");
  require(distances.size() == neighbors.size(), "Graph: distance/edge mismatch");
  for (std::size_t i = 0; i < node_count; ++i) {
    require(offsets[i] <= offsets[i + 1], "Graph: offsets must be non-decreasing");
    for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k)
      require(neighbors[k] < source_count, "Graph: neighbor index out of range");
  }
}

void StgaConfig::validate() const {
  require(d_s > 0.0, "StgaConfig: d_s must be positive");
  require(d_u > 0.0, "StgaConfig: d_u must be positive");
  require(tau > 0.0, "StgaConfig: tau must be positive");
}

namespace {

struct Candidate {
  double dist;
  std::size_t idx;
};

void append_edges(Graph& g, std::vector<Candidate>& cands, std::size_t cap) {
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.idx < b.idx;
  });
  if (cap > 0 && cands.size() > cap) cands.resize(cap);
  for (const Candidate& c : cands) {
    g.neighbors.push_back(c.idx);
    g.distances.push_back(c.dist);
  }
  g.offsets.push_back(g.neighbors.size());
}

std::vector<double> neighbor_mask(const Graph& g) {
  std::vector<double> mask(g.node_count, 0.0);
  for (std::size_t i = 0; i < g.node_count; ++i)
    if (g.degree(i) > 0) mask[i] = 1.0;
  return mask;
}

// Per-edge CSR index arrays: the owning node of each edge slot.
std::vector<std::size_t> edge_owners(const Graph& g) {
  std::vector<std::size_t> owner(g.edge_count());
  for (std::size_t i = 0; i < g.node_count; ++i)
    for (std::size_t k = g.offsets[i]; k < g.offsets[i + 1]; ++k) owner[k] = i;
  return owner;
}

Var attention_weights(Tape& tape, const Graph& graph, Var query_feats, Var source_feats,
                      const AttentionParams& params, const StgaConfig& cfg) {
  if (cfg.edge_weight_mode == EdgeWeightMode::kDistance) {
    Tensor logits = Tensor::zeros({graph.edge_count()});
    for (std::size_t k = 0; k < graph.edge_count(); ++k)
      logits.data[k] = -graph.distances[k] / cfg.tau;
    return tape.segment_softmax(tape.leaf(logits, "distance_logits"), graph.offsets);
  }
  Var hq = tape.matmul(query_feats, params.proj_self);
  Var hs = params.proj_other.id == params.proj_self.id && query_feats.id == source_feats.id
               ? hq
               : tape.matmul(source_feats, params.proj_other);
  Var score_q = tape.flatten(tape.matmul(hq, params.attn_self));
  Var score_s = tape.flatten(tape.matmul(hs, params.attn_other));
  Var logits = tape.pair_sum_gather(score_q, score_s, edge_owners(graph), graph.neighbors);
  return tape.segment_softmax(tape.leaky_relu(logits, 0.2), graph.offsets);
}

Var aggregate_with_residual(Tape& tape, const Graph& graph, Var weights, Var residual,
                            Var source_feats, Var msg_proj) {
  Var messages = tape.matmul(source_feats, msg_proj);
  Var agg = tape.segment_weighted_sum(weights, messages, graph.neighbors, graph.offsets);
  // isolated nodes bypass the activation entirely: output = input
  return tape.add(residual, tape.scale_rows(tape.elu(agg), neighbor_mask(graph)));
}

}  // namespace

Graph build_spatial_graph(const std::vector<BevBox3D>& boxes, const StgaConfig& cfg) {
  cfg.validate();
  Graph g;
  g.node_count = boxes.size();
  g.source_count = boxes.size();
  g.offsets.push_back(0);
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    cands.clear();
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      if (i == j) continue;
      double d = center_distance_bev(boxes[i], boxes[j]);
      if (d < cfg.d_s) cands.push_back({d, j});
    }
    append_edges(g, cands, cfg.max_neighbors);
  }
  return g;
}

Graph build_temporal_edges(const std::vector<BevBox3D>& target_boxes,
                           const std::vector<BevBox3D>& source_boxes,
                           const StgaConfig& cfg) {
  cfg.validate();
  Graph g;
  g.node_count = target_boxes.size();
  g.source_count = source_boxes.size();
  g.offsets.push_back(0);
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < target_boxes.size(); ++i) {
    cands.clear();
    for (std::size_t j = 0; j < source_boxes.size(); ++j) {
      double d = center_distance_bev(target_boxes[i], source_boxes[j]);
      if (d < cfg.d_u) cands.push_back({d, j});
    }
    append_edges(g, cands, cfg.max_neighbors);
  }
  return g;
}

std::vector<double> distance_edge_weights(const Graph& graph, double tau) {
  require(tau > 0.0, "distance_edge_weights: tau must be positive");
  std::vector<double> out(graph.edge_count(), 0.0);
  for (std::size_t i = 0; i < graph.node_count; ++i) {
    std::size_t lo = graph.offsets[i], hi = graph.offsets[i + 1];
    if (lo >= hi) continue;
    double mx = -1e300;
    for (std::size_t k = lo; k < hi; ++k) mx = std::max(mx, -graph.distances[k] / tau);
    double z = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      out[k] = std::exp(-graph.distances[k] / tau - mx);
      z += out[k];
    }
    for (std::size_t k = lo; k < hi; ++k) out[k] /= z;
  }
  return out;
}

Var spatial_attention(Tape& tape, const Graph& graph, Var features,
                      const AttentionParams& params, const StgaConfig& cfg) {
  graph.validate();
  require(graph.source_count == graph.node_count,
          "spatial_attention: graph must be single-frame");
  const Tensor& feats = tape.value(features);
  require(feats.rank() == 2 && feats.dim(0) == graph.node_count,
          "spatial_attention: feature rows " + feats.shape_str() + " must match node count " +
              std::to_string(graph.node_count));
  if (graph.node_count == 0 || graph.edge_count() == 0) return features;
  Var alpha = attention_weights(tape, graph, features, features, params, cfg);
  return aggregate_with_residual(tape, graph, alpha, features, features, params.msg);
}

Var temporal_cross_attention(Tape& tape, const Graph& tgraph, Var target_features,
                             Var source_features, const AttentionParams& params,
                             const StgaConfig& cfg) {
  tgraph.validate();
  const Tensor& tf = tape.value(target_features);
  const Tensor& sf = tape.value(source_features);
  require(tf.rank() == 2 && tf.dim(0) == tgraph.node_count,
          "temporal_cross_attention: target rows must match node count");
  require(sf.rank() == 2 && sf.dim(0) == tgraph.source_count,
          "temporal_cross_attention: source rows must match source count");
  require(tf.size() == 0 || sf.size() == 0 || tf.dim(1) == sf.dim(1),
          "temporal_cross_attention: feature widths differ");
  if (tgraph.node_count == 0) return target_features;
  if (tgraph.edge_count() == 0) return target_features;
  Var beta = attention_weights(tape, tgraph, target_features, source_features, params, cfg);
  return aggregate_with_residual(tape, tgraph, beta, target_features, source_features,
                                 params.msg);
}

Var stga_forward(Tape& tape, Var spatial_out, Var temporal_out) {
  return tape.add(spatial_out, temporal_out);
}

OpCounts op_counter(std::size_t n_q, std::size_t n_g, double avg_neighbors_s,
                    double avg_neighbors_u, std::size_t c) {
  require(n_q > 0 && n_g > 0 && c > 0, "op_counter: sizes must be positive");
  require(avg_neighbors_s >= 0 && avg_neighbors_u >= 0,
          "op_counter: average degrees must be non-negative");
  OpCounts out{};
  double nq = static_cast<double>(n_q);
  double ng = static_cast<double>(n_g);
  double cd = static_cast<double>(c);
  out.node_selection = nq * nq;
  out.spatial_attention = ng * avg_neighbors_s * cd;
  out.temporal_attention = ng * avg_neighbors_u * cd;
  out.stga_total = out.node_selection + out.spatial_attention + out.temporal_attention;
  out.dense_self_attention = nq * nq * cd;
  return out;
}

}  // namespace stgd
