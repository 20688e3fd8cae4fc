#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "stgd/harness.hpp"
#include "stgd/json_io.hpp"
#include "stgd/pipeline.hpp"

namespace py = pybind11;

namespace {

stgd::BevBox3D box_from_seq(const std::vector<double>& v) {
  if (v.size() != 7)
    throw stgd::ValidationError("box must have 7 elements [x,y,z,l,w,h,heading]");
  return stgd::BevBox3D(v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
}

std::vector<stgd::BevBox3D> boxes_from_seq(const std::vector<std::vector<double>>& vs) {
  std::vector<stgd::BevBox3D> out;
  out.reserve(vs.size());
  for (const auto& v : vs) out.push_back(box_from_seq(v));
  return out;
}

stgd::QuerySet query_set_from(const std::vector<std::vector<double>>& boxes,
                              const std::vector<double>& scores) {
  stgd::QuerySet qs;
  qs.boxes = boxes_from_seq(boxes);
  qs.scores = scores;
  qs.validate();
  return qs;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "query-level spatial-temporal graph detection core";

  py::register_exception<stgd::ValidationError>(m, "ValidationError");

  // rotated-box geometry
  m.def("iou_bev",
        [](const std::vector<double>& a, const std::vector<double>& b) {
          return stgd::iou_bev(box_from_seq(a), box_from_seq(b));
        },
        py::arg("box_a"), py::arg("box_b"),
        "BEV IoU of two [x,y,z,l,w,h,heading] boxes");
  m.def("iou_3d",
        [](const std::vector<double>& a, const std::vector<double>& b) {
          return stgd::iou_3d(box_from_seq(a), box_from_seq(b));
        },
        py::arg("box_a"), py::arg("box_b"));
  m.def("giou_3d",
        [](const std::vector<double>& a, const std::vector<double>& b) {
          return stgd::giou_3d(box_from_seq(a), box_from_seq(b));
        },
        py::arg("box_a"), py::arg("box_b"));
  m.def("center_distance_bev",
        [](const std::vector<double>& a, const std::vector<double>& b) {
          return stgd::center_distance_bev(box_from_seq(a), box_from_seq(b));
        },
        py::arg("box_a"), py::arg("box_b"));
  m.def("bev_corners",
        [](const std::vector<double>& a) {
          std::vector<std::pair<double, double>> out;
          for (const auto& v : stgd::bev_corners(box_from_seq(a)).vertices)
            out.emplace_back(v.x, v.y);
          return out;
        },
        py::arg("box"), "CCW footprint corners");

  // graph node selection
  m.def("suppress_scores",
        [](const std::vector<std::vector<double>>& boxes, const std::vector<double>& scores,
           double theta, unsigned workers) {
          return stgd::suppress_scores(query_set_from(boxes, scores), theta, workers);
        },
        py::arg("boxes"), py::arg("scores"), py::arg("theta") = 0.5, py::arg("workers") = 1);
  m.def("select_nodes",
        [](const std::vector<std::vector<double>>& boxes, const std::vector<double>& scores,
           double theta, std::size_t n_keep) {
          return stgd::select_node_indices(query_set_from(boxes, scores), theta, n_keep);
        },
        py::arg("boxes"), py::arg("scores"), py::arg("theta") = 0.5, py::arg("n_keep") = 800,
        "Indices of the selected graph nodes, ranked by suppressed score");

  // assignment and loss pieces
  m.def("hungarian",
        [](const std::vector<std::vector<double>>& cost) {
          std::size_t n = cost.size();
          std::size_t mcols = n == 0 ? 0 : cost[0].size();
          stgd::Tensor t = stgd::Tensor::zeros({n, mcols});
          for (std::size_t i = 0; i < n; ++i) {
            if (cost[i].size() != mcols)
              throw stgd::ValidationError("hungarian: ragged cost matrix");
            for (std::size_t k = 0; k < mcols; ++k) t.data[i * mcols + k] = cost[i][k];
          }
          return stgd::hungarian(t).pairs;
        },
        py::arg("cost"), "Minimum-cost (prediction, ground-truth) pairs");
  m.def("focal_term",
        [](double p, bool positive, double alpha, double gamma) {
          return stgd::focal_term(p, positive, stgd::FocalParams{alpha, gamma});
        },
        py::arg("p"), py::arg("positive"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);
  m.def("iou_regularizer",
        [](const std::vector<std::vector<double>>& boxes, const std::vector<double>& scores,
           const std::string& kind) {
          return stgd::iou_regularizer(boxes_from_seq(boxes), scores,
                                       kind == "3d" ? stgd::IouKind::k3d : stgd::IouKind::kBev);
        },
        py::arg("boxes"), py::arg("scores"), py::arg("kind") = "bev");

  // evaluation
  m.def("recall_at",
        [](const std::vector<std::vector<double>>& candidates,
           const std::vector<std::vector<double>>& gt, double tau) {
          stgd::RecallResult r = stgd::recall_at(boxes_from_seq(candidates), boxes_from_seq(gt), tau);
          return py::make_tuple(r.recall, r.empty_gt);
        },
        py::arg("candidates"), py::arg("gt"), py::arg("tau"));

  // complexity accounting
  m.def("op_counter",
        [](std::size_t n_q, std::size_t n_g, double avg_s, double avg_u, std::size_t c) {
          stgd::OpCounts o = stgd::op_counter(n_q, n_g, avg_s, avg_u, c);
          py::dict d;
          d["node_selection"] = o.node_selection;
          d["spatial_attention"] = o.spatial_attention;
          d["temporal_attention"] = o.temporal_attention;
          d["stga_total"] = o.stga_total;
          d["dense_self_attention"] = o.dense_self_attention;
          return d;
        },
        py::arg("n_q"), py::arg("n_g"), py::arg("avg_neighbors_s"), py::arg("avg_neighbors_u"),
        py::arg("c"));

  // pipeline entry points (JSON in, JSON out)
  m.def("default_config", []() { return stgd::config_to_json_text(stgd::Config{}); });
  m.def("simulate",
        [](const std::string& config_json, std::uint64_t seed) {
          return stgd::scene_to_jsonl(stgd::simulate(
              config_json.empty() ? stgd::Config{} : stgd::config_from_json_text(config_json),
              seed));
        },
        py::arg("config_json") = "", py::arg("seed") = 0, "Scene JSONL for a seed");
  m.def("run",
        [](const std::string& config_json, std::uint64_t seed, const std::string& scene_jsonl) {
          stgd::Config cfg =
              config_json.empty() ? stgd::Config{} : stgd::config_from_json_text(config_json);
          stgd::ParamStore params(seed);
          stgd::init_model_params(params, cfg);
          std::vector<stgd::FrameGt> frames;
          if (scene_jsonl.empty()) {
            stgd::SceneSequence scene = stgd::simulate(cfg, seed);
            for (std::size_t t = 0; t < scene.t_frames; ++t) frames.push_back(scene.frame(t));
          } else {
            frames = stgd::frames_from_jsonl(scene_jsonl);
          }
          stgd::PipelineState state;
          std::vector<stgd::FrameMetrics> metrics;
          for (const auto& f : frames)
            metrics.push_back(stgd::run_frame(state, f, cfg, params, seed).metrics);
          return stgd::metrics_to_json_text(stgd::aggregate_metrics(metrics), cfg);
        },
        py::arg("config_json") = "", py::arg("seed") = 0, py::arg("scene_jsonl") = "",
        "Streaming inference; returns the metrics JSON document");
  m.def("gradcheck",
        [](std::uint64_t seed) {
          std::string out = "[";
          bool first = true;
          for (const auto& s : stgd::run_gradcheck_suites(seed)) {
            if (!first) out += ",";
            first = false;
            out += "{\"suite\":\"" + s.name + "\",\"max_rel_err\":" +
                   std::to_string(s.max_rel_err) + ",\"pass\":" + (s.pass ? "true" : "false") +
                   "}";
          }
          return out + "]";
        },
        py::arg("seed") = 0);
}
