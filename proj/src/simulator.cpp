#include "stgd/simulator.hpp"

#include <algorithm>
#include <cmath>

namespace stgd {

namespace {

struct ClassSpec {
  double l, w, h;
  double size_spread;
  double max_speed;
};

// vehicle / pedestrian / cyclist nominal footprints and speed caps
const ClassSpec kClassSpecs[3] = {
    {4.4, 1.9, 1.6, 0.12, 8.0},
    {0.8, 0.8, 1.7, 0.10, 1.5},
    {1.8, 0.6, 1.7, 0.10, 4.0},
};

// large, point-rich objects draw redundant proposals far more often
const double kDuplicateWeight[3] = {1.0, 0.25, 0.5};

int sample_class(Rng& rng, double vehicle_fraction) {
  double u = rng.uniform();
  if (u < vehicle_fraction) return kVehicle;
  if (u < vehicle_fraction + 0.6 * (1.0 - vehicle_fraction)) return kPedestrian;
  return kCyclist;
}

}  // namespace

void Config::validate() const {
  require(theta > 0.0 && theta < 1.0, "config: theta must be in (0,1)");
  require(n_g >= 1, "config: n_g must be >= 1");
  require(d_s > 0 && d_u > 0 && tau > 0, "config: distance thresholds must be positive");
  require(edge_weights == "feature" || edge_weights == "distance",
          "config: edge_weights must be 'feature' or 'distance'");
  require(attention == "stga" || attention == "dense",
          "config: attention must be 'stga' or 'dense'");
  require(mhsa_heads > 0 && c % mhsa_heads == 0,
          "config: c must be divisible by mhsa_heads");
  require(n_p >= 1, "config: n_p must be >= 1");
  require(c >= 8, "config: c must be >= 8");
  require(pe_frequencies >= 1, "config: pe_frequencies must be >= 1");
  require(lambda_cls >= 0 && lambda_h >= 0 && lambda_giou >= 0 && lambda_r >= 0,
          "config: loss weights must be non-negative");
  require(reg_iou == "bev" || reg_iou == "3d", "config: reg_iou must be 'bev' or '3d'");
  require(t_frames >= 1, "config: t_frames must be >= 1");
  require(dt > 0, "config: dt must be positive");
  require(fov > 1.0, "config: field of view too small");
  require(occlusion_prob >= 0 && occlusion_prob < 1, "config: occlusion_prob in [0,1)");
  require(miss_prob >= 0 && miss_prob < 1, "config: miss_prob in [0,1)");
  require(occluded_miss_prob >= 0 && occluded_miss_prob <= 1,
          "config: occluded_miss_prob in [0,1]");
  require(clutter_rate >= 0, "config: clutter_rate must be non-negative");
  require(score_spread >= 0, "config: score_spread must be non-negative");
  require(duplicate_prob >= 0 && duplicate_prob < 1, "config: duplicate_prob in [0,1)");
  require(axis_align_prob >= 0 && axis_align_prob <= 1, "config: axis_align_prob in [0,1]");
  require(grid_heading_noise >= 0, "config: grid_heading_noise must be non-negative");
  require(vehicle_fraction >= 0 && vehicle_fraction <= 1, "config: vehicle_fraction in [0,1]");
  require(gru_channels >= 1 && gru_grid >= 4, "config: feature-map surrogate too small");
  require(score_threshold >= 0 && score_threshold < 1, "config: score_threshold in [0,1)");
}

LossConfig Config::loss_config() const {
  LossConfig lc;
  lc.weights = LossWeights{lambda_cls, lambda_h, lambda_giou, lambda_r};
  lc.focal = FocalParams{focal_alpha, focal_gamma};
  lc.huber_delta = huber_delta;
  lc.reg_iou = reg_iou == "bev" ? IouKind::kBev : IouKind::k3d;
  return lc;
}

FrameGt SceneSequence::frame(std::size_t t) const {
  require(t < t_frames, "SceneSequence::frame: index out of range");
  FrameGt out;
  out.t = t;
  for (const Track& tr : tracks) {
    if (!tr.present_at(t)) continue;
    std::size_t k = t - tr.spawn;
    out.boxes.push_back(tr.boxes[k]);
    out.classes.push_back(tr.cls);
    out.ids.push_back(tr.id);
    out.occluded.push_back(tr.occluded[k]);
  }
  return out;
}

SceneSequence simulate(const Config& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(Rng::mix(seed, 0x51u));
  SceneSequence scene;
  scene.t_frames = cfg.t_frames;
  scene.dt = cfg.dt;

  double margin = 3.0;
  double span = cfg.fov - margin;
  require(span > 0, "simulate: field of view too small for the margin");

  std::vector<std::pair<double, double>> anchors;
  for (std::size_t n = 0; n < cfg.n_tracks; ++n) {
    // rejection-sample until the track never intersects an accepted one;
    // real objects do not interpenetrate, and the loss regularizer relies
    // on true boxes staying disjoint
    Track accepted;
    bool found = false;
    for (int attempt = 0; attempt < 24 && !found; ++attempt) {
      Track tr;
      tr.id = static_cast<int>(n);
      tr.cls = sample_class(rng, cfg.vehicle_fraction);
      const ClassSpec& spec = kClassSpecs[tr.cls];

      double x, y;
      if (!anchors.empty() && rng.uniform() < cfg.cluster_fraction) {
        // drop near an existing object so spatial graphs get real edges
        const auto& [ax, ay] = anchors[rng.below(anchors.size())];
        double ang = rng.uniform(0, 2 * kPi);
        double rad = rng.uniform(2.0, 5.0);
        x = std::clamp(ax + rad * std::cos(ang), -span, span);
        y = std::clamp(ay + rad * std::sin(ang), -span, span);
      } else {
        x = rng.uniform(-span, span);
        y = rng.uniform(-span, span);
      }

      double speed = rng.uniform() < 0.35 ? 0.0 : rng.uniform() * rng.uniform() * spec.max_speed;
      double heading;
      if (rng.uniform() < cfg.axis_align_prob) {
        // road-grid traffic: parked or moving, boxes follow the street axes
        heading = static_cast<double>(rng.below(4)) * kPi / 2.0 +
                  rng.normal(0, cfg.grid_heading_noise);
      } else {
        heading = rng.uniform(-kPi, kPi);
      }
      tr.vx = speed * std::cos(heading);
      tr.vy = speed * std::sin(heading);

      double l = spec.l * std::exp(rng.normal(0, spec.size_spread));
      double w = spec.w * std::exp(rng.normal(0, spec.size_spread));
      double h = spec.h * std::exp(rng.normal(0, spec.size_spread));
      double z = rng.uniform(-0.2, 0.2);

      tr.spawn = rng.uniform() < 0.8 ? 0 : rng.below(cfg.t_frames / 2 + 1);
      bool occluded = false;
      for (std::size_t t = tr.spawn; t < cfg.t_frames; ++t) {
        double px = x + tr.vx * cfg.dt * static_cast<double>(t - tr.spawn);
        double py = y + tr.vy * cfg.dt * static_cast<double>(t - tr.spawn);
        if (std::abs(px) > cfg.fov || std::abs(py) > cfg.fov) break;  // despawn at the edge
        if (occluded) {
          occluded = rng.uniform() < cfg.occlusion_hold;
        } else {
          occluded = rng.uniform() < cfg.occlusion_prob;
        }
        tr.boxes.emplace_back(px, py, z, l, w, h, heading);
        tr.occluded.push_back(occluded ? 1 : 0);
      }
      if (tr.boxes.empty()) continue;

      // narrow objects keep personal space; a sensor cannot separate two
      // pedestrians standing shoulder to shoulder anyway
      auto inflated = [](const BevBox3D& b) {
        double pad = b.w < 1.0 ? 0.8 : 0.0;
        return BevBox3D(b.x, b.y, b.z, b.l + pad, b.w + pad, b.h, b.heading);
      };
      bool collides = false;
      for (const Track& other : scene.tracks) {
        for (std::size_t t = tr.spawn; t < tr.spawn + tr.boxes.size() && !collides; ++t) {
          if (!other.present_at(t)) continue;
          if (iou_bev(inflated(tr.boxes[t - tr.spawn]), inflated(other.boxes[t - other.spawn])) >
              1e-3)
            collides = true;
        }
        if (collides) break;
      }
      if (!collides) {
        anchors.emplace_back(x, y);
        accepted = std::move(tr);
        found = true;
      }
    }
    if (found) scene.tracks.push_back(std::move(accepted));
  }
  return scene;
}

QuerySet propose(const FrameGt& gt, const Config& cfg, Rng& rng, std::size_t min_count) {
  QuerySet out;
  for (std::size_t i = 0; i < gt.boxes.size(); ++i) {
    double miss = gt.occluded.size() > i && gt.occluded[i] ? cfg.occluded_miss_prob
                                                           : cfg.miss_prob;
    if (rng.uniform() < miss) continue;
    const BevBox3D& b = gt.boxes[i];
    BevBox3D noisy(b.x + rng.normal(0, cfg.jitter_xy), b.y + rng.normal(0, cfg.jitter_xy),
                   b.z + rng.normal(0, cfg.jitter_z), b.l * std::exp(rng.normal(0, cfg.jitter_size)),
                   b.w * std::exp(rng.normal(0, cfg.jitter_size)),
                   b.h * std::exp(rng.normal(0, cfg.jitter_size)),
                   b.heading + rng.normal(0, cfg.jitter_heading));
    out.boxes.push_back(noisy);
    out.scores.push_back(std::clamp(1.0 - std::abs(rng.normal(0, cfg.score_spread)), 0.3, 1.0));
    int cls = gt.classes.size() > i ? gt.classes[i] : 0;
    double dup_rate = cfg.duplicate_prob * kDuplicateWeight[cls < 0 || cls > 2 ? 0 : cls];
    if (rng.uniform() < dup_rate) {
      // real proposal heads emit clusters of boxes per object
      BevBox3D dup(b.x + rng.normal(0, cfg.jitter_xy * 1.8),
                   b.y + rng.normal(0, cfg.jitter_xy * 1.8),
                   b.z + rng.normal(0, cfg.jitter_z),
                   b.l * std::exp(rng.normal(0, cfg.jitter_size * 1.5)),
                   b.w * std::exp(rng.normal(0, cfg.jitter_size * 1.5)),
                   b.h * std::exp(rng.normal(0, cfg.jitter_size * 1.5)),
                   b.heading + rng.normal(0, cfg.jitter_heading * 1.5));
      out.boxes.push_back(dup);
      out.scores.push_back(
          std::clamp(0.6 - std::abs(rng.normal(0, cfg.score_spread)), 0.2, 0.75));
    }
  }
  int clutter = rng.poisson(cfg.clutter_rate);
  for (int k = 0; k < clutter; ++k) {
    const ClassSpec& spec = kClassSpecs[sample_class(rng, cfg.vehicle_fraction)];
    out.boxes.emplace_back(rng.uniform(-cfg.fov, cfg.fov), rng.uniform(-cfg.fov, cfg.fov),
                           rng.uniform(-0.3, 0.3), spec.l * std::exp(rng.normal(0, 0.2)),
                           spec.w * std::exp(rng.normal(0, 0.2)),
                           spec.h * std::exp(rng.normal(0, 0.2)), rng.uniform(-kPi, kPi));
    out.scores.push_back(std::clamp(0.05 + std::abs(rng.normal(0, cfg.score_spread)), 0.02, 0.6));
  }
  while (out.size() < min_count) {
    out.boxes.emplace_back(rng.uniform(-cfg.fov, cfg.fov), rng.uniform(-cfg.fov, cfg.fov),
                           rng.uniform(-0.3, 0.3), rng.uniform(0.6, 5.0), rng.uniform(0.5, 2.2),
                           rng.uniform(1.0, 2.0), rng.uniform(-kPi, kPi));
    out.scores.push_back(rng.uniform(0.01, 0.05));
  }
  return out;
}

}  // namespace stgd
