#include "stgd/pipeline.hpp"

#include <algorithm>
#include <cmath>

namespace stgd {

namespace {

constexpr std::size_t kBoxParams = 8;

// Per-frame proposal stream: independent of how many frames ran before, so
// a restored state reproduces the remainder of the sequence bit-exactly.
Rng frame_rng(std::uint64_t sequence_seed, std::size_t t) {
  return Rng(Rng::mix(sequence_seed, 0xF0 + t));
}

// One tape leaf per parameter name, created on demand; the name->var map
// lets the trainer pull gradients back out.
class ParamLeaves {
 public:
  ParamLeaves(Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

  Var get(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    Var v = tape_.leaf(store_.get(name), name);
    vars_.emplace(name, v);
    return v;
  }

  const std::map<std::string, Var>& vars() const { return vars_; }

 private:
  Tape& tape_;
  const ParamStore& store_;
  std::map<std::string, Var> vars_;
};

Tensor rasterize_occupancy(const QuerySet& proposals, const Config& cfg) {
  std::size_t g = cfg.gru_grid;
  Tensor grid = Tensor::zeros({cfg.gru_channels, g, g});
  double cell = 2.0 * cfg.fov / static_cast<double>(g);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const BevBox3D& b = proposals.boxes[i];
    long cx = static_cast<long>((b.x + cfg.fov) / cell);
    long cy = static_cast<long>((b.y + cfg.fov) / cell);
    if (cx < 0 || cy < 0 || cx >= static_cast<long>(g) || cy >= static_cast<long>(g)) continue;
    grid.data[static_cast<std::size_t>(cy) * g + static_cast<std::size_t>(cx)] += 0.25;
    if (cfg.gru_channels > 1)
      grid.data[g * g + static_cast<std::size_t>(cy) * g + static_cast<std::size_t>(cx)] +=
          proposals.scores[i] * 0.25;
  }
  return grid;
}

StgaConfig stga_config(const Config& cfg) {
  StgaConfig sc;
  sc.d_s = cfg.d_s;
  sc.d_u = cfg.d_u;
  sc.tau = cfg.tau;
  sc.max_neighbors = cfg.max_neighbors;
  sc.edge_weight_mode =
      cfg.edge_weights == "distance" ? EdgeWeightMode::kDistance : EdgeWeightMode::kFeature;
  return sc;
}

struct FrameForward {
  QueryInit queries;
  QuerySet proposals;
  std::vector<std::size_t> selected;
  std::vector<BevBox3D> selected_boxes;
  Var node_embeddings;   // decoder-surrogate embeddings of the selected nodes
  Var graph_embeddings;  // after attention
  Var box_params;        // [n_sel, 8]
  Var logits;            // [n_sel, K]
  Var scores;            // [n_sel]
};

FrameForward frame_forward(Tape& tape, ParamLeaves& leaves, const PipelineState& state,
                           const FrameGt& gt, const Config& cfg, Rng& rng, unsigned workers) {
  FrameForward fwd;
  fwd.proposals = propose(gt, cfg, rng, cfg.n_p + cfg.n_res);
  fwd.queries = recollect(state.prev_predictions, fwd.proposals, cfg.n_p, cfg.n_res);

  // decoder surrogate: the query set is embedded through the position
  // encoding and refined geometry-free (identity), so query boxes pass on
  PeConfig pe;
  pe.span_xy = cfg.fov;
  pe.frequencies = cfg.pe_frequencies;
  Var embeddings =
      position_encode(tape, leaves.get("pe.proj"), fwd.queries.boxes, fwd.queries.scores, pe);
  fwd.queries.embeddings = tape.value(embeddings);

  QuerySet query_set{fwd.queries.boxes, fwd.queries.scores, Tensor{}};
  fwd.selected = select_node_indices(query_set, cfg.theta, cfg.n_g, workers);
  for (std::size_t idx : fwd.selected) fwd.selected_boxes.push_back(fwd.queries.boxes[idx]);
  fwd.node_embeddings = tape.gather_rows(embeddings, fwd.selected);

  StgaConfig sc = stga_config(cfg);
  if (cfg.attention == "dense") {
    fwd.graph_embeddings =
        tape.dense_mhsa(fwd.node_embeddings, leaves.get("mhsa.q"), leaves.get("mhsa.k"),
                        leaves.get("mhsa.v"), leaves.get("mhsa.out"), cfg.mhsa_heads);
  } else {
    AttentionParams sp;
    sp.proj_self = leaves.get("spatial.proj");
    sp.proj_other = sp.proj_self;
    sp.attn_self = leaves.get("spatial.attn_self");
    sp.attn_other = leaves.get("spatial.attn_neigh");
    sp.msg = leaves.get("spatial.msg");
    Graph spatial = build_spatial_graph(fwd.selected_boxes, sc);
    Var spatial_out = spatial_attention(tape, spatial, fwd.node_embeddings, sp, sc);

    Var temporal_out = fwd.node_embeddings;
    if (cfg.sequential_input && state.prev_nodes.size() > 0) {
      AttentionParams tp;
      tp.proj_self = leaves.get("temporal.proj_tgt");
      tp.proj_other = leaves.get("temporal.proj_src");
      tp.attn_self = leaves.get("temporal.attn_tgt");
      tp.attn_other = leaves.get("temporal.attn_src");
      tp.msg = leaves.get("temporal.msg");
      Graph tgraph = build_temporal_edges(fwd.selected_boxes, state.prev_nodes.boxes, sc);
      // previous-frame embeddings enter as constants (streaming truncation)
      Var source = tape.leaf(state.prev_nodes.embeddings, "prev_node_embeddings");
      temporal_out =
          temporal_cross_attention(tape, tgraph, fwd.node_embeddings, source, tp, sc);
    }
    fwd.graph_embeddings = stga_forward(tape, spatial_out, temporal_out);
  }

  Var h1 = tape.leaky_relu(
      tape.linear(fwd.graph_embeddings, leaves.get("head.fc1_w"), leaves.get("head.fc1_b")), 0.2);
  Var h2 = tape.leaky_relu(tape.linear(h1, leaves.get("head.fc2_w"), leaves.get("head.fc2_b")),
                           0.2);
  Var out = tape.linear(h2, leaves.get("head.out_w"), leaves.get("head.out_b"));
  Var deltas = tape.slice_cols(out, 0, kBoxParams);
  fwd.logits = tape.slice_cols(out, kBoxParams, kBoxParams + Config::kNumClasses);
  fwd.box_params = apply_box_deltas(tape, fwd.selected_boxes, deltas);
  fwd.scores = tape.sigmoid(tape.row_max(fwd.logits));
  return fwd;
}

QuerySet materialize_predictions(Tape& tape, const FrameForward& fwd) {
  QuerySet preds;
  const Tensor& q = tape.value(fwd.box_params);
  const Tensor& s = tape.value(fwd.scores);
  for (std::size_t i = 0; i < q.dim(0); ++i) {
    preds.boxes.push_back(params_to_box(&q.data[i * kBoxParams]));
    preds.scores.push_back(std::clamp(s.data[i], 0.0, 1.0));
  }
  preds.embeddings = tape.value(fwd.graph_embeddings);
  return preds;
}

void advance_state(PipelineState& state, Tape& tape, const FrameForward& fwd,
                   const QuerySet& preds, const Config& cfg, const ParamStore& params) {
  QuerySet nodes;
  nodes.boxes = fwd.selected_boxes;
  for (std::size_t idx : fwd.selected) nodes.scores.push_back(fwd.queries.scores[idx]);
  nodes.embeddings = tape.value(fwd.node_embeddings);
  state.prev_nodes = std::move(nodes);
  Tensor raster = rasterize_occupancy(fwd.proposals, cfg);
  state.gru = cfg.sequential_input ? convgru_step_value(state.gru, raster, params)
                                   : convgru_step_value(ConvGruState{}, raster, params);
  state.prev_predictions = preds;
  ++state.frames_processed;
}

double mean_pairwise_bev_iou(const QuerySet& preds, double score_threshold) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds.scores[i] > score_threshold) keep.push_back(i);
  if (keep.size() < 2) return 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < keep.size(); ++a)
    for (std::size_t b = a + 1; b < keep.size(); ++b) {
      total += iou_bev(preds.boxes[keep[a]], preds.boxes[keep[b]]);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

FrameMetrics frame_metrics(const FrameForward& fwd, const QuerySet& preds, const FrameGt& gt,
                           const Config& cfg, double gru_mean_abs) {
  FrameMetrics m;
  m.t = gt.t;
  m.n_gt = gt.boxes.size();
  m.gru_mean_abs = gru_mean_abs;

  RecallResult q05 = recall_at(fwd.queries.boxes, gt.boxes, 0.5);
  RecallResult q07 = recall_at(fwd.queries.boxes, gt.boxes, 0.7);
  m.empty_gt = q05.empty_gt;
  m.query_recall_05 = q05.recall;
  m.query_recall_07 = q07.recall;

  std::vector<BevBox3D> confident;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds.scores[i] > cfg.score_threshold) confident.push_back(preds.boxes[i]);
  RecallResult p05 = recall_at(confident, gt.boxes, 0.5);
  RecallResult p07 = recall_at(confident, gt.boxes, 0.7);
  m.pred_recall_05 = p05.recall;
  m.pred_recall_07 = p07.recall;
  m.mean_pairwise_iou = mean_pairwise_bev_iou(preds, cfg.score_threshold);

  m.class_matches.assign(Config::kNumClasses, 0);
  for (std::size_t gi : p05.matched_gt) {
    int cls = gt.classes[gi];
    if (cls >= 0 && cls < static_cast<int>(Config::kNumClasses))
      ++m.class_matches[static_cast<std::size_t>(cls)];
  }
  for (QuerySource src : fwd.queries.provenance)
    if (src == QuerySource::kRecollected) ++m.recollected_queries;
  for (std::size_t idx : fwd.selected)
    if (fwd.queries.provenance[idx] == QuerySource::kRecollected) ++m.recollected_selected;
  return m;
}

}  // namespace

RecallResult recall_at(const std::vector<BevBox3D>& candidates,
                       const std::vector<BevBox3D>& gt, double tau) {
  require(tau > 0.0 && tau < 1.0, "recall_at: tau must be in (0,1)");
  RecallResult out;
  if (gt.empty()) {
    out.recall = 1.0;
    out.empty_gt = true;
    return out;
  }
  std::vector<char> used(candidates.size(), 0);
  std::size_t covered = 0;
  for (std::size_t g = 0; g < gt.size(); ++g) {
    double best = -1.0;
    std::size_t best_i = candidates.size();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (used[i]) continue;
      double v = iou_bev(candidates[i], gt[g]);
      if (v > best) {
        best = v;
        best_i = i;
      }
    }
    if (best_i < candidates.size() && best >= tau) {
      used[best_i] = 1;
      ++covered;
      out.matched_gt.push_back(g);
    }
  }
  out.recall = static_cast<double>(covered) / static_cast<double>(gt.size());
  return out;
}

void init_model_params(ParamStore& store, const Config& cfg) {
  cfg.validate();
  std::size_t c = cfg.c;
  PeConfig pe;
  pe.span_xy = cfg.fov;
  pe.frequencies = cfg.pe_frequencies;
  init_pe_params(store, pe, c);

  store.create("spatial.proj", {c, c}, c);
  store.create("spatial.attn_self", {c, 1}, c);
  store.create("spatial.attn_neigh", {c, 1}, c);
  store.create("spatial.msg", {c, c}, c);

  store.create("temporal.proj_tgt", {c, c}, c);
  store.create("temporal.proj_src", {c, c}, c);
  store.create("temporal.attn_tgt", {c, 1}, c);
  store.create("temporal.attn_src", {c, 1}, c);
  store.create("temporal.msg", {c, c}, c);

  store.create("mhsa.q", {c, c}, c);
  store.create("mhsa.k", {c, c}, c);
  store.create("mhsa.v", {c, c}, c);
  store.create("mhsa.out", {c, c}, c);

  store.create("head.fc1_w", {c, c}, c);
  store.create_zeros("head.fc1_b", {c});
  store.create("head.fc2_w", {c, c}, c);
  store.create_zeros("head.fc2_b", {c});
  // zero-started output layer: before training the head passes the selected
  // boxes through unchanged, which keeps untrained streaming sane
  store.create_zeros("head.out_w", {c, kBoxParams + Config::kNumClasses});
  store.create_zeros("head.out_b", {kBoxParams + Config::kNumClasses});

  init_convgru_params(store, cfg.gru_channels);
}

FrameResult run_frame(PipelineState& state, const FrameGt& gt, const Config& cfg,
                      ParamStore& params, std::uint64_t sequence_seed, unsigned workers) {
  cfg.validate();
  Rng rng = frame_rng(sequence_seed, gt.t);
  Tape tape;
  ParamLeaves leaves(tape, params);
  FrameForward fwd = frame_forward(tape, leaves, state, gt, cfg, rng, workers);
  QuerySet preds = materialize_predictions(tape, fwd);

  FrameResult result;
  result.predictions = preds;
  advance_state(state, tape, fwd, preds, cfg, params);

  double gru_mean = 0.0;
  for (double v : state.gru.h.data) gru_mean += std::abs(v);
  if (!state.gru.h.data.empty()) gru_mean /= static_cast<double>(state.gru.h.data.size());
  result.metrics = frame_metrics(fwd, preds, gt, cfg, gru_mean);
  return result;
}

SequenceMetrics aggregate_metrics(const std::vector<FrameMetrics>& frames) {
  SequenceMetrics agg;
  agg.per_frame = frames;
  agg.frames = frames.size();
  if (frames.empty()) return agg;
  double n = static_cast<double>(frames.size());
  for (const FrameMetrics& m : frames) {
    agg.mean_query_recall_05 += m.query_recall_05 / n;
    agg.mean_query_recall_07 += m.query_recall_07 / n;
    agg.mean_pred_recall_05 += m.pred_recall_05 / n;
    agg.mean_pred_recall_07 += m.pred_recall_07 / n;
    agg.mean_pairwise_iou += m.mean_pairwise_iou / n;
  }
  return agg;
}

SequenceMetrics run_sequence(const SceneSequence& scene, const Config& cfg,
                             ParamStore& params, std::uint64_t seed, PipelineState* state,
                             std::size_t from_frame) {
  PipelineState local;
  PipelineState& st = state ? *state : local;
  std::vector<FrameMetrics> frames;
  for (std::size_t t = from_frame; t < scene.t_frames; ++t) {
    FrameResult r = run_frame(st, scene.frame(t), cfg, params, seed);
    frames.push_back(r.metrics);
  }
  return aggregate_metrics(frames);
}

std::vector<std::string> trainable_param_names(const ParamStore& store, const Config& cfg) {
  std::vector<std::string> names;
  for (const auto& [name, tensor] : store.all()) {
    (void)tensor;
    bool head_or_pe = name.rfind("head.", 0) == 0 || name.rfind("pe.", 0) == 0;
    bool stga = name.rfind("spatial.", 0) == 0 || name.rfind("temporal.", 0) == 0;
    bool dense = name.rfind("mhsa.", 0) == 0;
    if (head_or_pe || (cfg.attention == "stga" && stga) ||
        (cfg.attention == "dense" && dense))
      names.push_back(name);
  }
  return names;
}

std::vector<TrainStep> train_toy(ParamStore& params, const std::vector<SceneSequence>& scenes,
                                 const Config& cfg, std::uint64_t seed, std::size_t steps,
                                 double lr) {
  cfg.validate();
  require(!scenes.empty(), "train_toy: no scenes");
  LossConfig lc = cfg.loss_config();
  std::vector<TrainStep> trace;
  trace.reserve(steps);

  for (std::size_t step = 0; step < steps; ++step) {
    std::map<std::string, Tensor> grad_acc;
    LossBreakdown step_loss;
    std::size_t loss_frames = 0;

    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const SceneSequence& scene = scenes[s];
      PipelineState state;
      std::uint64_t scene_seed = Rng::mix(seed, s);
      for (std::size_t t = 0; t < scene.t_frames; ++t) {
        FrameGt gt = scene.frame(t);
        Rng rng = frame_rng(scene_seed, t);
        Tape tape;
        ParamLeaves leaves(tape, params);
        FrameForward fwd = frame_forward(tape, leaves, state, gt, cfg, rng, 1);
        QuerySet preds = materialize_predictions(tape, fwd);

        if (!gt.boxes.empty()) {
          Tensor probs = Tensor::zeros({preds.size(), Config::kNumClasses});
          const Tensor& logits = tape.value(fwd.logits);
          for (std::size_t i = 0; i < probs.size(); ++i)
            probs.data[i] = 1.0 / (1.0 + std::exp(-logits.data[i]));
          Assignment assignment =
              hungarian(match_cost(preds.boxes, probs, gt.as_gt_frame(), lc.weights));
          LossBreakdown bd;
          Var loss = total_loss(tape, fwd.box_params, fwd.logits, fwd.scores, gt.as_gt_frame(),
                                assignment, lc, &bd);
          double lv = tape.value(loss).item();
          if (!std::isfinite(lv))
            throw std::runtime_error("train_toy: non-finite loss at step " +
                                     std::to_string(step));
          step_loss.cls += bd.cls;
          step_loss.huber += bd.huber;
          step_loss.giou += bd.giou;
          step_loss.reg += bd.reg;
          step_loss.total += bd.total;
          ++loss_frames;

          auto grads = tape.backward(loss);
          for (const auto& [name, var] : leaves.vars()) {
            const Tensor& g = grads[static_cast<std::size_t>(var.id)];
            auto it = grad_acc.find(name);
            if (it == grad_acc.end()) {
              grad_acc.emplace(name, g);
            } else {
              for (std::size_t i = 0; i < g.size(); ++i) it->second.data[i] += g.data[i];
            }
          }
        }
        advance_state(state, tape, fwd, preds, cfg, params);
      }
    }

    // average over the frames that produced a loss, so the step size does
    // not scale with scene length; only query-path parameters learn
    double inv = loss_frames > 0 ? 1.0 / static_cast<double>(loss_frames) : 0.0;
    std::map<std::string, Tensor> step_grads;
    double sq_norm = 0.0;
    for (const std::string& name : trainable_param_names(params, cfg)) {
      auto it = grad_acc.find(name);
      if (it == grad_acc.end()) continue;
      for (auto& v : it->second.data) {
        v *= inv;
        sq_norm += v * v;
      }
      step_grads.emplace(name, std::move(it->second));
    }
    // clip spikes by global norm; keeps plain descent from oscillating late
    constexpr double kClipNorm = 5.0;
    double norm = std::sqrt(sq_norm);
    if (norm > kClipNorm) {
      double scale = kClipNorm / norm;
      for (auto& [name, g] : step_grads)
        for (auto& v : g.data) v *= scale;
    }
    // two-phase schedule: full rate to descend, reduced rate to settle
    double step_lr = step * 5 < steps * 3 ? lr : lr * 0.2;
    params.sgd_step(step_grads, step_lr);
    step_loss.cls *= inv;
    step_loss.huber *= inv;
    step_loss.giou *= inv;
    step_loss.reg *= inv;
    step_loss.total *= inv;
    trace.push_back(TrainStep{step, step_loss});
  }
  return trace;
}

}  // namespace stgd
