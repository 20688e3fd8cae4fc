#ifndef STGD_PIPELINE_HPP
#define STGD_PIPELINE_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stgd/convgru.hpp"
#include "stgd/graph_attention.hpp"
#include "stgd/matching.hpp"
#include "stgd/query_recollection.hpp"
#include "stgd/simulator.hpp"

namespace stgd {

// Everything carried from frame t-1 into frame t: the previous graph nodes
// (source graph for temporal attention), the recurrent feature state, and
// the previous predictions feeding query recollection. Empty at t = 1.
struct PipelineState {
  QuerySet prev_nodes;
  ConvGruState gru;
  QuerySet prev_predictions;
  std::size_t frames_processed = 0;
};

struct RecallResult {
  double recall = 0.0;
  bool empty_gt = false;
  std::vector<std::size_t> matched_gt;  // indices of covered ground truths
};

// Greedy one-to-one recall: each ground truth, in order, claims its best
// still-unused candidate; covered iff that IoU reaches tau. Empty ground
// truth is defined as recall 1 with the flag set.
RecallResult recall_at(const std::vector<BevBox3D>& candidates,
                       const std::vector<BevBox3D>& gt, double tau);

struct FrameMetrics {
  std::size_t t = 0;
  std::size_t n_gt = 0;
  bool empty_gt = false;
  double query_recall_05 = 0.0;  // decoder-input queries vs gt
  double query_recall_07 = 0.0;
  double pred_recall_05 = 0.0;   // confident graph-head predictions vs gt
  double pred_recall_07 = 0.0;
  double mean_pairwise_iou = 0.0;  // confident predictions, BEV IoU
  std::vector<std::size_t> class_matches;  // covered gt count per class @0.5
  std::size_t recollected_queries = 0;     // decoder-input rows recollected from t-1
  std::size_t recollected_selected = 0;    // of those, kept by node selection
  double gru_mean_abs = 0.0;
  LossBreakdown loss;  // populated when training
};

struct FrameResult {
  QuerySet predictions;  // graph-head output (all selected nodes)
  FrameMetrics metrics;
};

// Registers every learnable tensor: position encoding, spatial/temporal
// attention, the dense-attention baseline, the graph head, and the
// recurrent gates. Creation order is fixed so a seed pins all values.
void init_model_params(ParamStore& store, const Config& cfg);

// One streaming step: propose -> recollect -> position-encode (decoder
// surrogate) -> node selection -> attention -> graph head -> metrics.
// The state is advanced exactly once.
FrameResult run_frame(PipelineState& state, const FrameGt& gt, const Config& cfg,
                      ParamStore& params, std::uint64_t sequence_seed,
                      unsigned workers = 1);

struct SequenceMetrics {
  std::vector<FrameMetrics> per_frame;
  double mean_query_recall_05 = 0.0;
  double mean_query_recall_07 = 0.0;
  double mean_pred_recall_05 = 0.0;
  double mean_pred_recall_07 = 0.0;
  double mean_pairwise_iou = 0.0;
  std::size_t frames = 0;
};

SequenceMetrics aggregate_metrics(const std::vector<FrameMetrics>& frames);

// Streaming loop over a scene; returns per-frame metrics and leaves `state`
// at the final frame (resumable).
SequenceMetrics run_sequence(const SceneSequence& scene, const Config& cfg,
                             ParamStore& params, std::uint64_t seed,
                             PipelineState* state = nullptr, std::size_t from_frame = 0);

struct TrainStep {
  std::size_t step = 0;
  LossBreakdown loss;
};

// Plain gradient descent on the composite loss over the graph head,
// attention, and position-encoding parameters. Frames of each scene run in
// streaming order; proposals are regenerated deterministically per frame.
// Aborts with the step index if the loss goes non-finite.
std::vector<TrainStep> train_toy(ParamStore& params, const std::vector<SceneSequence>& scenes,
                                 const Config& cfg, std::uint64_t seed, std::size_t steps,
                                 double lr);

// Names of the tensors train_toy updates under this config.
std::vector<std::string> trainable_param_names(const ParamStore& store, const Config& cfg);

}  // namespace stgd

#endif  // STGD_PIPELINE_HPP
