#include "stgd/json_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace stgd {

using nlohmann::json;

namespace {

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape}, {"data", t.data}};
}

Tensor tensor_from_json(const json& j) {
  std::vector<std::size_t> shape = j.at("shape").get<std::vector<std::size_t>>();
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  return Tensor(std::move(shape), std::move(data));
}

json query_set_to_json(const QuerySet& qs) {
  json boxes = json::array();
  for (const BevBox3D& b : qs.boxes) boxes.push_back(b.as_array());
  return json{{"boxes", boxes}, {"scores", qs.scores},
              {"embeddings", tensor_to_json(qs.embeddings)}};
}

QuerySet query_set_from_json(const json& j) {
  QuerySet qs;
  for (const auto& arr : j.at("boxes")) {
    std::array<double, 7> a{};
    for (int i = 0; i < 7; ++i) a[static_cast<std::size_t>(i)] = arr.at(i).get<double>();
    qs.boxes.push_back(BevBox3D::from_array(a));
  }
  qs.scores = j.at("scores").get<std::vector<double>>();
  qs.embeddings = tensor_from_json(j.at("embeddings"));
  return qs;
}

json frame_metrics_to_json(const FrameMetrics& m) {
  return json{{"t", m.t},
              {"n_gt", m.n_gt},
              {"empty_gt", m.empty_gt},
              {"query_recall_05", m.query_recall_05},
              {"query_recall_07", m.query_recall_07},
              {"pred_recall_05", m.pred_recall_05},
              {"pred_recall_07", m.pred_recall_07},
              {"mean_pairwise_iou", m.mean_pairwise_iou},
              {"class_matches", m.class_matches},
              {"recollected_queries", m.recollected_queries},
              {"recollected_selected", m.recollected_selected},
              {"gru_mean_abs", m.gru_mean_abs},
              {"loss",
               {{"cls", m.loss.cls},
                {"huber", m.loss.huber},
                {"giou", m.loss.giou},
                {"reg", m.loss.reg},
                {"total", m.loss.total}}}};
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

Config config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: invalid JSON: ") + e.what());
  }
  require(j.is_object(), "config: top level must be an object");

  static const std::vector<std::string> known = {
      "theta",          "n_g",           "d_s",
      "d_u",            "tau",           "max_neighbors",
      "edge_weights",   "attention",     "mhsa_heads",
      "sequential_input", "n_p",         "n_res",
      "c",              "pe_frequencies", "lambda_cls",
      "lambda_h",       "lambda_giou",   "lambda_r",
      "focal_alpha",    "focal_gamma",   "huber_delta",
      "reg_iou",        "t_frames",      "dt",
      "fov",            "n_tracks",      "occlusion_prob",
      "occlusion_hold", "cluster_fraction", "miss_prob",
      "occluded_miss_prob", "clutter_rate", "jitter_xy",
      "jitter_z",       "jitter_size",   "jitter_heading",
      "score_spread",   "duplicate_prob", "axis_align_prob", "grid_heading_noise",
      "vehicle_fraction",
      "gru_channels",   "gru_grid",      "lr",
      "steps",          "score_threshold"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ValidationError("config: unknown key '" + it.key() + "'");
  }

  Config cfg;
  read_key(j, "theta", cfg.theta);
  read_key(j, "n_g", cfg.n_g);
  read_key(j, "d_s", cfg.d_s);
  read_key(j, "d_u", cfg.d_u);
  read_key(j, "tau", cfg.tau);
  read_key(j, "max_neighbors", cfg.max_neighbors);
  read_key(j, "edge_weights", cfg.edge_weights);
  read_key(j, "attention", cfg.attention);
  read_key(j, "mhsa_heads", cfg.mhsa_heads);
  read_key(j, "sequential_input", cfg.sequential_input);
  read_key(j, "n_p", cfg.n_p);
  read_key(j, "n_res", cfg.n_res);
  read_key(j, "c", cfg.c);
  read_key(j, "pe_frequencies", cfg.pe_frequencies);
  read_key(j, "lambda_cls", cfg.lambda_cls);
  read_key(j, "lambda_h", cfg.lambda_h);
  read_key(j, "lambda_giou", cfg.lambda_giou);
  read_key(j, "lambda_r", cfg.lambda_r);
  read_key(j, "focal_alpha", cfg.focal_alpha);
  read_key(j, "focal_gamma", cfg.focal_gamma);
  read_key(j, "huber_delta", cfg.huber_delta);
  read_key(j, "reg_iou", cfg.reg_iou);
  read_key(j, "t_frames", cfg.t_frames);
  read_key(j, "dt", cfg.dt);
  read_key(j, "fov", cfg.fov);
  read_key(j, "n_tracks", cfg.n_tracks);
  read_key(j, "occlusion_prob", cfg.occlusion_prob);
  read_key(j, "occlusion_hold", cfg.occlusion_hold);
  read_key(j, "cluster_fraction", cfg.cluster_fraction);
  read_key(j, "miss_prob", cfg.miss_prob);
  read_key(j, "occluded_miss_prob", cfg.occluded_miss_prob);
  read_key(j, "clutter_rate", cfg.clutter_rate);
  read_key(j, "jitter_xy", cfg.jitter_xy);
  read_key(j, "jitter_z", cfg.jitter_z);
  read_key(j, "jitter_size", cfg.jitter_size);
  read_key(j, "jitter_heading", cfg.jitter_heading);
  read_key(j, "score_spread", cfg.score_spread);
  read_key(j, "duplicate_prob", cfg.duplicate_prob);
  read_key(j, "axis_align_prob", cfg.axis_align_prob);
  read_key(j, "grid_heading_noise", cfg.grid_heading_noise);
  read_key(j, "vehicle_fraction", cfg.vehicle_fraction);
  read_key(j, "gru_channels", cfg.gru_channels);
  read_key(j, "gru_grid", cfg.gru_grid);
  read_key(j, "lr", cfg.lr);
  read_key(j, "steps", cfg.steps);
  read_key(j, "score_threshold", cfg.score_threshold);
  cfg.validate();
  return cfg;
}

std::string config_to_json_text(const Config& cfg) {
  json j{{"theta", cfg.theta},
         {"n_g", cfg.n_g},
         {"d_s", cfg.d_s},
         {"d_u", cfg.d_u},
         {"tau", cfg.tau},
         {"max_neighbors", cfg.max_neighbors},
         {"edge_weights", cfg.edge_weights},
         {"attention", cfg.attention},
         {"mhsa_heads", cfg.mhsa_heads},
         {"sequential_input", cfg.sequential_input},
         {"n_p", cfg.n_p},
         {"n_res", cfg.n_res},
         {"c", cfg.c},
         {"pe_frequencies", cfg.pe_frequencies},
         {"lambda_cls", cfg.lambda_cls},
         {"lambda_h", cfg.lambda_h},
         {"lambda_giou", cfg.lambda_giou},
         {"lambda_r", cfg.lambda_r},
         {"focal_alpha", cfg.focal_alpha},
         {"focal_gamma", cfg.focal_gamma},
         {"huber_delta", cfg.huber_delta},
         {"reg_iou", cfg.reg_iou},
         {"t_frames", cfg.t_frames},
         {"dt", cfg.dt},
         {"fov", cfg.fov},
         {"n_tracks", cfg.n_tracks},
         {"occlusion_prob", cfg.occlusion_prob},
         {"occlusion_hold", cfg.occlusion_hold},
         {"cluster_fraction", cfg.cluster_fraction},
         {"miss_prob", cfg.miss_prob},
         {"occluded_miss_prob", cfg.occluded_miss_prob},
         {"clutter_rate", cfg.clutter_rate},
         {"jitter_xy", cfg.jitter_xy},
         {"jitter_z", cfg.jitter_z},
         {"jitter_size", cfg.jitter_size},
         {"jitter_heading", cfg.jitter_heading},
         {"score_spread", cfg.score_spread},
         {"duplicate_prob", cfg.duplicate_prob},
         {"axis_align_prob", cfg.axis_align_prob},
         {"grid_heading_noise", cfg.grid_heading_noise},
         {"vehicle_fraction", cfg.vehicle_fraction},
         {"gru_channels", cfg.gru_channels},
         {"gru_grid", cfg.gru_grid},
         {"lr", cfg.lr},
         {"steps", cfg.steps},
         {"score_threshold", cfg.score_threshold}};
  return j.dump(2);
}

std::string config_hash(const Config& cfg) {
  std::string text = config_to_json_text(cfg);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

std::string scene_to_jsonl(const SceneSequence& scene) {
  std::ostringstream os;
  for (std::size_t t = 0; t < scene.t_frames; ++t) {
    FrameGt f = scene.frame(t);
    json boxes = json::array();
    for (const BevBox3D& b : f.boxes) boxes.push_back(b.as_array());
    json occ = json::array();
    for (char o : f.occluded) occ.push_back(o != 0);
    json line{{"t", f.t}, {"boxes", boxes}, {"ids", f.ids}, {"classes", f.classes},
              {"occluded", occ}};
    os << line.dump() << "\n";
  }
  return os.str();
}

std::vector<FrameGt> frames_from_jsonl(const std::string& text) {
  std::vector<FrameGt> frames;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("scene: invalid JSON line: ") + e.what());
    }
    FrameGt f;
    f.t = j.at("t").get<std::size_t>();
    for (const auto& arr : j.at("boxes")) {
      std::array<double, 7> a{};
      for (int i = 0; i < 7; ++i) a[static_cast<std::size_t>(i)] = arr.at(i).get<double>();
      f.boxes.push_back(BevBox3D::from_array(a));
    }
    f.ids = j.at("ids").get<std::vector<int>>();
    f.classes = j.at("classes").get<std::vector<int>>();
    for (const auto& o : j.at("occluded")) f.occluded.push_back(o.get<bool>() ? 1 : 0);
    require(f.boxes.size() == f.ids.size() && f.ids.size() == f.classes.size() &&
                f.classes.size() == f.occluded.size(),
            "scene: parallel arrays differ in length at t=" + std::to_string(f.t));
    frames.push_back(std::move(f));
  }
  return frames;
}

std::string params_to_json_text(const ParamStore& store) {
  json j = json::object();
  for (const auto& [name, t] : store.all()) j[name] = tensor_to_json(t);
  return j.dump(2);
}

void params_from_json_text(ParamStore& store, const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("params: invalid JSON: ") + e.what());
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    Tensor t = tensor_from_json(it.value());
    if (store.has(it.key())) {
      Tensor& dst = store.get(it.key());
      require(dst.shape == t.shape, "params: shape mismatch for '" + it.key() + "'");
      dst = std::move(t);
    } else {
      store.create_zeros(it.key(), t.shape);
      store.get(it.key()) = std::move(t);
    }
  }
}

std::string state_to_json_text(const PipelineState& state) {
  json j{{"prev_nodes", query_set_to_json(state.prev_nodes)},
         {"gru_h", tensor_to_json(state.gru.h)},
         {"prev_predictions", query_set_to_json(state.prev_predictions)},
         {"frames_processed", state.frames_processed}};
  return j.dump();
}

PipelineState state_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("state: invalid JSON: ") + e.what());
  }
  PipelineState s;
  s.prev_nodes = query_set_from_json(j.at("prev_nodes"));
  s.gru.h = tensor_from_json(j.at("gru_h"));
  s.prev_predictions = query_set_from_json(j.at("prev_predictions"));
  s.frames_processed = j.at("frames_processed").get<std::size_t>();
  return s;
}

std::string metrics_to_json_text(const SequenceMetrics& metrics, const Config& cfg) {
  json frames = json::array();
  for (const FrameMetrics& m : metrics.per_frame) frames.push_back(frame_metrics_to_json(m));
  json j{{"config_hash", config_hash(cfg)},
         {"per_frame", frames},
         {"aggregate",
          {{"frames", metrics.frames},
           {"zero_frames", metrics.frames == 0},
           {"mean_query_recall_05", metrics.mean_query_recall_05},
           {"mean_query_recall_07", metrics.mean_query_recall_07},
           {"mean_pred_recall_05", metrics.mean_pred_recall_05},
           {"mean_pred_recall_07", metrics.mean_pred_recall_07},
           {"mean_pairwise_iou", metrics.mean_pairwise_iou}}}};
  return j.dump(2);
}

std::string train_trace_to_jsonl(const std::vector<TrainStep>& trace) {
  std::ostringstream os;
  for (const TrainStep& s : trace) {
    json j{{"step", s.step},       {"L_cls", s.loss.cls},   {"L_huber", s.loss.huber},
           {"L_giou", s.loss.giou}, {"R_b", s.loss.reg},     {"total", s.loss.total}};
    os << j.dump() << "\n";
  }
  return os.str();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write file: " + path);
  out << content;
}

}  // namespace stgd
