#include "stgd/harness.hpp"

#include <chrono>
#include <cmath>

namespace stgd {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

Tensor rand_t(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(std::move(shape), rng, lo, hi);
}

Tensor rand_no_kink(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t = rand_t(std::move(shape), rng);
  for (auto& v : t.data)
    if (std::abs(v) < 1e-3) v += v < 0 ? -1e-3 : 1e-3;
  return t;
}

std::vector<BevBox3D> rand_boxes(Rng& rng, std::size_t n, double span) {
  std::vector<BevBox3D> out;
  for (std::size_t i = 0; i < n; ++i)
    out.emplace_back(rng.uniform(-span, span), rng.uniform(-span, span), rng.uniform(-0.3, 0.3),
                     rng.uniform(1.0, 4.0), rng.uniform(0.8, 2.0), rng.uniform(1.2, 1.8),
                     rng.uniform(-kPi, kPi));
  return out;
}

using Build = std::function<Var(Tape&, const std::map<std::string, Var>&)>;

GradSuiteResult run_suite(const std::string& name, double tolerance, std::uint64_t seed,
                          std::size_t n_cases,
                          const std::function<void(Rng&, std::map<std::string, Tensor>&, Build&)>& make_case) {
  GradSuiteResult res;
  res.name = name;
  res.tolerance = tolerance;
  res.cases = n_cases;
  auto start = Clock::now();
  Rng rng(Rng::mix(seed, std::hash<std::string>{}(name)));
  for (std::size_t c = 0; c < n_cases; ++c) {
    std::map<std::string, Tensor> inputs;
    Build build;
    make_case(rng, inputs, build);
    GradCheckReport rep = grad_check(inputs, build, 1e-5);
    res.max_rel_err = std::max(res.max_rel_err, rep.max_rel_err);
  }
  res.millis = ms_since(start);
  res.pass = res.max_rel_err < tolerance;
  return res;
}

AttentionParams params_from(const std::map<std::string, Var>& v, bool shared) {
  AttentionParams p;
  p.proj_self = v.at("proj");
  p.proj_other = shared ? v.at("proj") : v.at("proj2");
  p.attn_self = v.at("a1");
  p.attn_other = v.at("a2");
  p.msg = v.at("msg");
  return p;
}

ConvGruParams gru_params_from(const std::map<std::string, Var>& v) {
  ConvGruParams p;
  p.reset_h = v.at("convgru.reset_h");
  p.reset_x = v.at("convgru.reset_x");
  p.reset_b = v.at("convgru.reset_b");
  p.update_h = v.at("convgru.update_h");
  p.update_x = v.at("convgru.update_x");
  p.update_b = v.at("convgru.update_b");
  p.cand_h = v.at("convgru.cand_h");
  p.cand_x = v.at("convgru.cand_x");
  p.cand_b = v.at("convgru.cand_b");
  return p;
}

void add_gru_inputs(Rng& rng, std::map<std::string, Tensor>& inputs, std::size_t c) {
  std::size_t fan = c * 9;
  double b = std::sqrt(1.0 / static_cast<double>(fan));
  for (const char* g : {"reset", "update", "cand"}) {
    std::string gate(g);
    inputs["convgru." + gate + "_h"] = rand_t({c, c, 3, 3}, rng, -b, b);
    inputs["convgru." + gate + "_x"] = rand_t({c, c, 3, 3}, rng, -b, b);
    inputs["convgru." + gate + "_b"] = rand_t({c}, rng, -0.1, 0.1);
  }
}

}  // namespace

std::vector<GradSuiteResult> run_gradcheck_suites(std::uint64_t seed) {
  std::vector<GradSuiteResult> out;

  out.push_back(run_suite("linear", 1e-5, seed, 20,
      [](Rng& rng, std::map<std::string, Tensor>& in, Build& build) {
        in["x"] = rand_t({4, 3}, rng);
        in["w"] = rand_t({3, 2}, rng);
        in["b"] = rand_t({2}, rng);
        build = [](Tape& t, const std::map<std::string, Var>& v) {
          return t.sum(t.tanh_op(t.linear(v.at("x"), v.at("w"), v.at("b"))));
        };
      }));

  struct Act {
    const char* name;
    Var (*apply)(Tape&, Var);
  };
  const Act acts[] = {
      {"sigmoid", [](Tape& t, Var x) { return t.sigmoid(x); }},
      {"tanh", [](Tape& t, Var x) { return t.tanh_op(x); }},
      {"leaky_relu", [](Tape& t, Var x) { return t.leaky_relu(x, 0.2); }},
      {"elu", [](Tape& t, Var x) { return t.elu(x); }},
  };
  for (const Act& act : acts) {
    auto apply = act.apply;
    out.push_back(run_suite(act.name, 1e-5, seed, 20,
        [apply](Rng& rng, std::map<std::string, Tensor>& in, Build& build) {
          in["x"] = rand_no_kink({3, 5}, rng);
          in["w"] = rand_t({3, 5}, rng);
          build = [apply](Tape& t, const std::map<std::string, Var>& v) {
            return t.sum(t.mul(apply(t, v.at("x")), v.at("w")));
          };
        }));
  }

  out.push_back(run_suite("masked_softmax", 1e-5, seed, 20,
      [](Rng& rng, std::map<std::string, Tensor>& in, Build& build) {
        in["x"] = rand_t({6}, rng, -2, 2);
        in["w"] = rand_t({6}, rng);
        std::vector<char> mask(6, 0);
        std::size_t on = 1 + rng.below(5);
        for (std::size_t i = 0; i < on; ++i) mask[rng.below(6)] = 1;
        mask[rng.below(6)] = 1;
        build = [mask](Tape& t, const std::map<std::string, Var>& v) {
          return t.sum(t.mul(t.masked_softmax(v.at("x"), mask), v.at("w")));
        };
      }));

  out.push_back(run_suite("conv2d_same", 1e-5, seed, 20,
      [](Rng& rng, std::map<std::string, Tensor>& in, Build& build) {
        in["x"] = rand_t({2, 5, 5}, rng);
        in["k"] = rand_t({2, 2, 3, 3}, rng, -0.4, 0.4);
        in["b"] = rand_t({2}, rng, -0.2, 0.2);
        build = [](Tape& t, const std::map<std::string, Var>& v) {
          return t.sum(t.tanh_op(t.conv2d_same(v.at("x"), v.at("k"), v.at("b"))));
        };
      }));

  out.push_back(run_suite("dense_mhsa", 1e-5, seed, 20,
      [](Rng& rng, std::map<std::string, Tensor>& in, Build& build) {
        in["x"] = rand_t({3, 8}, rng);
        for (const char* n : {"wq", "wk", "wv", "wo"}) in[n] = rand_t({8, 8}, rng, -0.4, 0.4);
        build = [](Tape& t, const std::map<std::string, Var>& v) {
          return t.sum(t.tanh_op(
              t.dense_mhsa(v.at("x"), v.at("wq"), v.at("wk"), v.at("wv"), v.at("wo"), 2)));
        };
      }));

  out.push_back(run_suite("convgru_step", 1e-5, seed, 20,
      [](Rng& rng, std::map<std::string, Tensor>& in, Build& build) {
        add_gru_inputs(rng, in, 2);
        in["h"] = rand_t({2, 3, 3}, rng);
        in["x"] = rand_t({2, 3, 3}, rng);
        build = [](Tape& t, const std::map<std::string, Var>& v) {
          Var h = convgru_step(t, v.at("h"), v.at("x"), gru_params_from(v));
          return t.sum(t.mul(h, h));
        };
      }));

  out.push_back(run_suite("convgru_sequence", 1e-4, seed, 20,
      [](Rng& rng, std::map<std::string, Tensor>& in, Build& build) {
        add_gru_inputs(rng, in, 2);
        in["x1"] = rand_t({2, 3, 3}, rng);
        in["x2"] = rand_t({2, 3, 3}, rng);
        in["x3"] = rand_t({2, 3, 3}, rng);
        build = [](Tape& t, const std::map<std::string, Var>& v) {
          auto hs = convgru_run(t, {v.at("x1"), v.at("x2"), v.at("x3")}, Var{},
                                gru_params_from(v));
          return t.sum(t.mul(hs.back(), hs.back()));
        };
      }));

  out.push_back(run_suite("spatial_attention", 1e-5, seed, 20,
      [](Rng& rng, std::map<std::string, Tensor>& in, Build& build) {
        auto boxes = rand_boxes(rng, 5, 1.8);
        StgaConfig sc;
        sc.d_s = 2.5;
        Graph g = build_spatial_graph(boxes, sc);
        in["x"] = rand_t({5, 6}, rng);
        in["proj"] = rand_t({6, 4}, rng, -0.5, 0.5);
        in["a1"] = rand_t({4, 1}, rng, -0.5, 0.5);
        in["a2"] = rand_t({4, 1}, rng, -0.5, 0.5);
        in["msg"] = rand_t({6, 6}, rng, -0.5, 0.5);
        build = [g, sc](Tape& t, const std::map<std::string, Var>& v) {
          return t.sum(t.tanh_op(spatial_attention(t, g, v.at("x"), params_from(v, true), sc)));
        };
      }));

  out.push_back(run_suite("temporal_attention", 1e-5, seed, 20,
      [](Rng& rng, std::map<std::string, Tensor>& in, Build& build) {
        auto cur = rand_boxes(rng, 4, 1.5);
        auto prev = rand_boxes(rng, 3, 1.5);
        StgaConfig sc;
        sc.d_u = 3.0;
        Graph g = build_temporal_edges(cur, prev, sc);
        in["x"] = rand_t({4, 6}, rng);
        in["xs"] = rand_t({3, 6}, rng);
        in["proj"] = rand_t({6, 4}, rng, -0.5, 0.5);
        in["proj2"] = rand_t({6, 4}, rng, -0.5, 0.5);
        in["a1"] = rand_t({4, 1}, rng, -0.5, 0.5);
        in["a2"] = rand_t({4, 1}, rng, -0.5, 0.5);
        in["msg"] = rand_t({6, 6}, rng, -0.5, 0.5);
        build = [g, sc](Tape& t, const std::map<std::string, Var>& v) {
          return t.sum(t.tanh_op(
              temporal_cross_attention(t, g, v.at("x"), v.at("xs"), params_from(v, false), sc)));
        };
      }));

  out.push_back(run_suite("position_encode", 1e-5, seed, 20,
      [](Rng& rng, std::map<std::string, Tensor>& in, Build& build) {
        PeConfig pe;
        pe.frequencies = 2;
        auto boxes = rand_boxes(rng, 3, 30.0);
        std::vector<double> scores = {rng.uniform(), rng.uniform(), rng.uniform()};
        in["proj"] = rand_t({pe.feature_width(), 8}, rng, -0.3, 0.3);
        build = [pe, boxes, scores](Tape& t, const std::map<std::string, Var>& v) {
          return t.sum(t.tanh_op(position_encode(t, v.at("proj"), boxes, scores, pe)));
        };
      }));

  out.push_back(run_suite("graph_head", 1e-5, seed, 20,
      [](Rng& rng, std::map<std::string, Tensor>& in, Build& build) {
        std::size_t c = 8;
        auto boxes = rand_boxes(rng, 3, 4.0);
        in["x"] = rand_t({3, c}, rng);
        in["w1"] = rand_t({c, c}, rng, -0.3, 0.3);
        in["b1"] = rand_t({c}, rng, -0.1, 0.1);
        in["w2"] = rand_t({c, c}, rng, -0.3, 0.3);
        in["b2"] = rand_t({c}, rng, -0.1, 0.1);
        in["wo"] = rand_t({c, 8 + 3}, rng, -0.3, 0.3);
        in["bo"] = rand_t({8 + 3}, rng, -0.1, 0.1);
        build = [boxes, c](Tape& t, const std::map<std::string, Var>& v) {
          Var h1 = t.leaky_relu(t.linear(v.at("x"), v.at("w1"), v.at("b1")), 0.2);
          Var h2 = t.leaky_relu(t.linear(h1, v.at("w2"), v.at("b2")), 0.2);
          Var o = t.linear(h2, v.at("wo"), v.at("bo"));
          Var q = apply_box_deltas(t, boxes, t.slice_cols(o, 0, 8));
          Var logits = t.slice_cols(o, 8, 11);
          return t.add(t.sum(t.tanh_op(q)), t.sum(t.sigmoid(logits)));
        };
      }));

  out.push_back(run_suite("focal_loss", 1e-5, seed, 20,
      [](Rng& rng, std::map<std::string, Tensor>& in, Build& build) {
        in["z"] = rand_t({4, 3}, rng, -2, 2);
        std::vector<int> targets = {static_cast<int>(rng.below(3)), -1,
                                    static_cast<int>(rng.below(3)), -1};
        build = [targets](Tape& t, const std::map<std::string, Var>& v) {
          return focal_loss(t, v.at("z"), targets, FocalParams{}, 2.0);
        };
      }));

  out.push_back(run_suite("huber", 1e-5, seed, 20,
      [](Rng& rng, std::map<std::string, Tensor>& in, Build& build) {
        in["x"] = rand_t({8}, rng, -3, 3);
        for (auto& v : in["x"].data)
          if (std::abs(std::abs(v) - 1.0) < 1e-3) v += 0.01;
        build = [](Tape& t, const std::map<std::string, Var>& v) {
          return t.mean(huber_elem(t, v.at("x"), 1.0));
        };
      }));

  out.push_back(run_suite("stga_composite", 1e-4, seed, 20,
      [](Rng& rng, std::map<std::string, Tensor>& in, Build& build) {
        // full spatial + temporal + head + focal/huber loss on a 6-node graph
        std::size_t c = 6;
        auto boxes = rand_boxes(rng, 6, 2.0);
        auto prev = rand_boxes(rng, 4, 2.0);
        StgaConfig sc;
        sc.d_s = 3.0;
        sc.d_u = 3.5;
        Graph gs = build_spatial_graph(boxes, sc);
        Graph gt = build_temporal_edges(boxes, prev, sc);
        GtFrame gtf;
        gtf.boxes = {boxes[0], boxes[3]};
        gtf.classes = {0, 1};
        Assignment as;
        as.pairs = {{0, 0}, {3, 1}};
        as.unmatched_preds = {1, 2, 4, 5};

        in["x"] = rand_t({6, c}, rng);
        in["xs"] = rand_t({4, c}, rng);
        in["s.proj"] = rand_t({c, 4}, rng, -0.4, 0.4);
        in["s.a1"] = rand_t({4, 1}, rng, -0.4, 0.4);
        in["s.a2"] = rand_t({4, 1}, rng, -0.4, 0.4);
        in["s.msg"] = rand_t({c, c}, rng, -0.4, 0.4);
        in["t.pt"] = rand_t({c, 4}, rng, -0.4, 0.4);
        in["t.ps"] = rand_t({c, 4}, rng, -0.4, 0.4);
        in["t.a1"] = rand_t({4, 1}, rng, -0.4, 0.4);
        in["t.a2"] = rand_t({4, 1}, rng, -0.4, 0.4);
        in["t.msg"] = rand_t({c, c}, rng, -0.4, 0.4);
        in["wo"] = rand_t({c, 8 + 2}, rng, -0.2, 0.2);
        build = [=](Tape& t, const std::map<std::string, Var>& v) {
          AttentionParams sp{v.at("s.proj"), v.at("s.proj"), v.at("s.a1"), v.at("s.a2"),
                             v.at("s.msg")};
          AttentionParams tp{v.at("t.pt"), v.at("t.ps"), v.at("t.a1"), v.at("t.a2"),
                             v.at("t.msg")};
          Var s_out = spatial_attention(t, gs, v.at("x"), sp, sc);
          Var t_out = temporal_cross_attention(t, gt, v.at("x"), v.at("xs"), tp, sc);
          Var emb = stga_forward(t, s_out, t_out);
          Var o = t.matmul(emb, v.at("wo"));
          Var q = apply_box_deltas(t, boxes, t.slice_cols(o, 0, 8));
          Var logits = t.slice_cols(o, 8, 10);
          Var scores = t.sigmoid(t.row_max(logits));
          LossConfig lc;
          return total_loss(t, q, logits, scores, gtf, as, lc, nullptr);
        };
      }));

  return out;
}

std::vector<BenchRow> bench_attention(const std::vector<std::size_t>& sizes,
                                      const std::string& mode, std::size_t c,
                                      double target_degree, std::size_t reps,
                                      std::uint64_t seed) {
  require(mode == "stga" || mode == "dense", "bench_attention: mode must be stga or dense");
  require(target_degree >= 1.0, "bench_attention: degree must be >= 1");
  std::vector<BenchRow> rows;
  Rng rng(seed);

  for (std::size_t n : sizes) {
    // nodes on a line with spacing chosen so everyone keeps ~target_degree
    // neighbors inside d_s, independent of n
    StgaConfig sc;
    sc.d_s = 2.0;
    sc.d_u = 2.0;
    double spacing = 2.0 * sc.d_s / target_degree;
    std::vector<BevBox3D> boxes, prev_boxes;
    for (std::size_t i = 0; i < n; ++i) {
      double x = static_cast<double>(i) * spacing;
      boxes.emplace_back(x, rng.uniform(-0.2, 0.2), 0, 2.0, 1.0, 1.5, 0.0);
      prev_boxes.emplace_back(x + rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2), 0, 2.0, 1.0,
                              1.5, 0.0);
    }
    Graph gs = build_spatial_graph(boxes, sc);
    Graph gt = build_temporal_edges(boxes, prev_boxes, sc);
    double avg_degree = gs.average_degree();

    Tensor x = Tensor::uniform({n, c}, rng, -1, 1);
    Tensor xs = Tensor::uniform({n, c}, rng, -1, 1);
    Tensor proj = Tensor::uniform({c, c}, rng, -0.3, 0.3);
    Tensor a1 = Tensor::uniform({c, 1}, rng, -0.3, 0.3);
    Tensor a2 = Tensor::uniform({c, 1}, rng, -0.3, 0.3);
    Tensor msg = Tensor::uniform({c, c}, rng, -0.3, 0.3);
    Tensor pt = Tensor::uniform({c, c}, rng, -0.3, 0.3);
    Tensor ps = Tensor::uniform({c, c}, rng, -0.3, 0.3);

    double best = 1e300;
    for (std::size_t r = 0; r < reps + 2; ++r) {
      auto start = Clock::now();
      Tape tape;
      if (mode == "stga") {
        AttentionParams sp{tape.leaf(proj), tape.leaf(proj), tape.leaf(a1), tape.leaf(a2),
                           tape.leaf(msg)};
        sp.proj_other = sp.proj_self;
        AttentionParams tp{tape.leaf(pt), tape.leaf(ps), tape.leaf(a1), tape.leaf(a2),
                           tape.leaf(msg)};
        Var vx = tape.leaf(x);
        Var s_out = spatial_attention(tape, gs, vx, sp, sc);
        Var t_out = temporal_cross_attention(tape, gt, vx, tape.leaf(xs), tp, sc);
        stga_forward(tape, s_out, t_out);
      } else {
        tape.dense_mhsa(tape.leaf(x), tape.leaf(proj), tape.leaf(msg), tape.leaf(pt),
                        tape.leaf(ps), 8);
      }
      if (r >= 2) best = std::min(best, ms_since(start));  // first two warm up
    }

    OpCounts counts = op_counter(n, n, avg_degree, gt.average_degree(), c);
    BenchRow row;
    row.n = n;
    row.avg_degree = avg_degree;
    row.predicted_macs = mode == "stga"
                             ? counts.spatial_attention + counts.temporal_attention
                             : counts.dense_self_attention;
    row.measured_ms = best;
    rows.push_back(row);
  }
  return rows;
}

double loglog_slope(const std::vector<BenchRow>& rows) {
  require(rows.size() >= 2, "loglog_slope: need at least two rows");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  double n = static_cast<double>(rows.size());
  for (const BenchRow& r : rows) {
    double x = std::log(static_cast<double>(r.n));
    double y = std::log(std::max(r.measured_ms, 1e-9));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::vector<SuppressBenchRow> bench_suppress(const std::vector<std::size_t>& sizes,
                                             unsigned max_workers, std::uint64_t seed) {
  std::vector<SuppressBenchRow> rows;
  Rng rng(seed);
  for (std::size_t n : sizes) {
    QuerySet qs;
    double span = std::sqrt(static_cast<double>(n)) * 2.0;
    for (std::size_t i = 0; i < n; ++i) {
      qs.boxes.emplace_back(rng.uniform(-span, span), rng.uniform(-span, span),
                            rng.uniform(-0.3, 0.3), rng.uniform(1.0, 4.5), rng.uniform(0.8, 2.2),
                            rng.uniform(1.2, 1.9), rng.uniform(-kPi, kPi));
      qs.scores.push_back(rng.uniform());
    }
    for (unsigned w = 1; w <= max_workers; w *= 2) {
      auto start = Clock::now();
      suppress_scores(qs, 0.5, w);
      rows.push_back(SuppressBenchRow{n, w, ms_since(start)});
    }
  }
  return rows;
}

}  // namespace stgd
