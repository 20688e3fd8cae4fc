#ifndef STGD_SIMULATOR_HPP
#define STGD_SIMULATOR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "stgd/matching.hpp"
#include "stgd/selection.hpp"

namespace stgd {

// Flat run configuration. Field names double as the JSON config keys;
// unknown keys in a config file are rejected.
struct Config {
  // graph node selection
  double theta = 0.5;
  std::size_t n_g = 24;
  // spatial-temporal attention
  double d_s = 2.0;
  double d_u = 2.0;
  double tau = 1.0;
  std::size_t max_neighbors = 0;
  std::string edge_weights = "feature";  // feature | distance
  std::string attention = "stga";        // stga | dense
  std::size_t mhsa_heads = 8;
  bool sequential_input = true;
  // query initialization
  std::size_t n_p = 40;
  std::size_t n_res = 12;
  std::size_t c = 32;
  std::size_t pe_frequencies = 4;
  // loss
  double lambda_cls = 1.0;
  double lambda_h = 4.0;
  double lambda_giou = 2.0;
  double lambda_r = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double huber_delta = 1.0;
  std::string reg_iou = "bev";  // bev | 3d
  // simulator
  std::size_t t_frames = 16;
  double dt = 0.1;
  double fov = 40.0;  // half-extent of the square field of view, meters
  std::size_t n_tracks = 12;
  double occlusion_prob = 0.10;
  double occlusion_hold = 0.5;
  double cluster_fraction = 0.5;
  // proposal noise model
  double miss_prob = 0.12;
  double occluded_miss_prob = 0.85;
  double clutter_rate = 4.0;
  double jitter_xy = 0.22;
  double jitter_z = 0.08;
  double jitter_size = 0.06;
  double jitter_heading = 0.06;
  double score_spread = 0.15;
  double duplicate_prob = 0.35;
  double axis_align_prob = 0.55;
  double grid_heading_noise = 0.05;
  double vehicle_fraction = 0.5;
  // feature-map surrogate for the recurrent block
  std::size_t gru_channels = 2;
  std::size_t gru_grid = 12;
  // training
  double lr = 0.02;
  std::size_t steps = 300;
  // inference
  double score_threshold = 0.1;

  static constexpr std::size_t kNumClasses = 3;

  void validate() const;
  LossConfig loss_config() const;
};

// Class ids used throughout the simulator.
enum ObjectClass : int { kVehicle = 0, kPedestrian = 1, kCyclist = 2 };

struct Track {
  int id = 0;
  int cls = kVehicle;
  std::size_t spawn = 0;               // first frame present
  std::vector<BevBox3D> boxes;         // one per present frame, contiguous
  std::vector<char> occluded;          // parallel to boxes
  double vx = 0.0, vy = 0.0;

  bool present_at(std::size_t t) const { return t >= spawn && t < spawn + boxes.size(); }
};

// Ground truth of one frame, flattened from the track table.
struct FrameGt {
  std::size_t t = 0;
  std::vector<BevBox3D> boxes;
  std::vector<int> classes;
  std::vector<int> ids;
  std::vector<char> occluded;

  GtFrame as_gt_frame() const { return GtFrame{boxes, classes}; }
};

struct SceneSequence {
  std::size_t t_frames = 0;
  double dt = 0.1;
  std::vector<Track> tracks;

  FrameGt frame(std::size_t t) const;
};

// Constant-velocity tracks with spawn/despawn inside the field of view and
// Markov occlusion episodes. Deterministic per seed.
SceneSequence simulate(const Config& cfg, std::uint64_t seed);

// Encoder-proposal surrogate: jittered true boxes minus misses, plus uniform
// clutter, padded with low-score background boxes up to min_count so the
// query initializer always has enough material. Scores are higher for true
// objects. Embeddings are left empty (the decoder surrogate encodes them).
QuerySet propose(const FrameGt& gt, const Config& cfg, Rng& rng, std::size_t min_count);

}  // namespace stgd

#endif  // STGD_SIMULATOR_HPP
