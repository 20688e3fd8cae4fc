#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <sstream>

#include "stgd/harness.hpp"
#include "stgd/json_io.hpp"
#include "stgd/pipeline.hpp"

namespace {

using nlohmann::json;

stgd::Config load_config(const std::string& path) {
  if (path.empty()) return stgd::Config{};
  return stgd::config_from_json_text(stgd::read_file(path));
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty() || out_path == "-") {
    std::cout << content;
  } else {
    stgd::write_file(out_path, content);
  }
}

int cmd_simulate(const std::string& config_path, std::uint64_t seed, const std::string& out) {
  stgd::Config cfg = load_config(config_path);
  stgd::SceneSequence scene = stgd::simulate(cfg, seed);
  emit(out, stgd::scene_to_jsonl(scene));
  return 0;
}

int cmd_run(const std::string& config_path, std::uint64_t seed, const std::string& scene_path,
            const std::string& out, const std::string& params_path,
            const std::string& state_in, const std::string& state_out, unsigned workers) {
  stgd::Config cfg = load_config(config_path);
  stgd::ParamStore params(seed);
  stgd::init_model_params(params, cfg);
  if (!params_path.empty()) stgd::params_from_json_text(params, stgd::read_file(params_path));

  std::vector<stgd::FrameGt> frames;
  if (!scene_path.empty()) {
    frames = stgd::frames_from_jsonl(stgd::read_file(scene_path));
  } else {
    stgd::SceneSequence scene = stgd::simulate(cfg, seed);
    for (std::size_t t = 0; t < scene.t_frames; ++t) frames.push_back(scene.frame(t));
  }

  stgd::PipelineState state;
  if (!state_in.empty()) state = stgd::state_from_json_text(stgd::read_file(state_in));

  std::vector<stgd::FrameMetrics> metrics;
  for (const stgd::FrameGt& frame : frames) {
    if (frame.t < state.frames_processed) continue;  // resume past processed frames
    metrics.push_back(stgd::run_frame(state, frame, cfg, params, seed, workers).metrics);
  }
  emit(out, stgd::metrics_to_json_text(stgd::aggregate_metrics(metrics), cfg));
  if (!state_out.empty()) stgd::write_file(state_out, stgd::state_to_json_text(state));
  return 0;
}

int cmd_train_toy(const std::string& config_path, std::uint64_t seed, const std::string& out,
                  const std::string& params_out, std::size_t scenes_n, std::size_t steps,
                  double lr) {
  stgd::Config cfg = load_config(config_path);
  if (steps == 0) steps = cfg.steps;
  if (lr <= 0) lr = cfg.lr;
  stgd::ParamStore params(seed);
  stgd::init_model_params(params, cfg);
  std::vector<stgd::SceneSequence> scenes;
  for (std::size_t s = 0; s < scenes_n; ++s)
    scenes.push_back(stgd::simulate(cfg, stgd::Rng::mix(seed, 1000 + s)));
  auto trace = stgd::train_toy(params, scenes, cfg, seed, steps, lr);
  emit(out, stgd::train_trace_to_jsonl(trace));
  if (!params_out.empty()) stgd::write_file(params_out, stgd::params_to_json_text(params));
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& out) {
  auto suites = stgd::run_gradcheck_suites(seed);
  json arr = json::array();
  bool all_pass = true;
  for (const auto& s : suites) {
    arr.push_back(json{{"suite", s.name},
                       {"cases", s.cases},
                       {"tolerance", s.tolerance},
                       {"max_rel_err", s.max_rel_err},
                       {"pass", s.pass},
                       {"ms", s.millis}});
    all_pass = all_pass && s.pass;
  }
  json doc{{"suites", arr}, {"all_pass", all_pass}};
  emit(out, doc.dump(2) + "\n");
  return all_pass ? 0 : 1;
}

int cmd_bench_suppress(std::uint64_t seed, const std::string& out,
                       const std::vector<std::size_t>& sizes, unsigned max_workers) {
  auto rows = stgd::bench_suppress(sizes, max_workers, seed);
  std::ostringstream os;
  os << "n,workers,ms\n";
  for (const auto& r : rows) os << r.n << "," << r.workers << "," << r.measured_ms << "\n";
  emit(out, os.str());
  return 0;
}

int cmd_bench_stga(std::uint64_t seed, const std::string& out,
                   const std::vector<std::size_t>& sizes, const std::string& mode,
                   std::size_t c, double degree, std::size_t reps) {
  auto rows = stgd::bench_attention(sizes, mode, c, degree, reps, seed);
  std::ostringstream os;
  os << "n,avg_degree,predicted_macs,measured_ms\n";
  for (const auto& r : rows)
    os << r.n << "," << r.avg_degree << "," << r.predicted_macs << "," << r.measured_ms << "\n";
  emit(out, os.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"query-level spatial-temporal graph detection toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::uint64_t seed = 0;
  std::string config_path, out;
  app.add_option("--seed", seed, "global RNG seed")->capture_default_str();
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out", out, "output path ('-' for stdout)");

  auto* sim = app.add_subcommand("simulate", "generate a synthetic scene (JSONL)");

  auto* run = app.add_subcommand("run", "streaming inference over a scene");
  std::string scene_path, params_path, state_in, state_out;
  unsigned workers = 1;
  run->add_option("--scene", scene_path, "scene JSONL (simulated from seed when omitted)");
  run->add_option("--params", params_path, "parameter JSON to load");
  run->add_option("--state-in", state_in, "resume from serialized pipeline state");
  run->add_option("--state-out", state_out, "write final pipeline state");
  run->add_option("--workers", workers, "worker threads for node selection");

  auto* train = app.add_subcommand("train-toy", "gradient-descent training on synthetic scenes");
  std::size_t train_scenes = 1, train_steps = 0;
  double train_lr = 0.0;
  train->add_option("--scenes", train_scenes, "number of simulated training scenes");
  train->add_option("--steps", train_steps, "steps (config default when 0)");
  train->add_option("--lr", train_lr, "learning rate (config default when 0)");
  std::string params_out;
  train->add_option("--params-out", params_out, "write trained parameters");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference suites, pass/fail JSON");

  auto* bench = app.add_subcommand("bench", "performance measurements");
  bench->require_subcommand(1);
  auto* bsup = bench->add_subcommand("suppress", "score suppression scaling CSV");
  std::vector<std::size_t> sup_sizes = {200, 400, 800, 1600};
  unsigned max_workers = 8;
  bsup->add_option("--sizes", sup_sizes, "box counts");
  bsup->add_option("--max-workers", max_workers, "largest worker count (powers of two)");
  auto* bstga = bench->add_subcommand("stga", "attention scaling CSV");
  std::vector<std::size_t> stga_sizes = {64, 128, 256, 512};
  std::string mode = "stga";
  std::size_t bench_c = 32, reps = 5;
  double degree = 16.0;
  bstga->add_option("--n", stga_sizes, "node counts");
  bstga->add_option("--mode", mode, "stga | dense")->check(CLI::IsMember({"stga", "dense"}));
  bstga->add_option("--c", bench_c, "embedding width");
  bstga->add_option("--degree", degree, "target average degree");
  bstga->add_option("--reps", reps, "repetitions (minimum taken)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(config_path, seed, out);
    if (run->parsed())
      return cmd_run(config_path, seed, scene_path, out, params_path, state_in, state_out,
                     workers);
    if (train->parsed())
      return cmd_train_toy(config_path, seed, out, params_out, train_scenes, train_steps,
                           train_lr);
    if (grad->parsed()) return cmd_gradcheck(seed, out);
    if (bench->parsed()) {
      if (bsup->parsed()) return cmd_bench_suppress(seed, out, sup_sizes, max_workers);
      if (bstga->parsed())
        return cmd_bench_stga(seed, out, stga_sizes, mode, bench_c, degree, reps);
    }
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const stgd::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
