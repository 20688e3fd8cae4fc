#ifndef STGD_HARNESS_HPP
#define STGD_HARNESS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "stgd/pipeline.hpp"

namespace stgd {

// ---- finite-difference verification suites ----

struct GradSuiteResult {
  std::string name;
  std::size_t cases = 0;
  double tolerance = 0.0;
  double max_rel_err = 0.0;
  bool pass = false;
  double millis = 0.0;
};

// Runs every differentiable operation against central differences on seeded
// random cases (20 per suite), single ops at 1e-5, composed graphs at 1e-4.
std::vector<GradSuiteResult> run_gradcheck_suites(std::uint64_t seed);

// ---- scaling benchmark ----

struct BenchRow {
  std::size_t n = 0;
  double avg_degree = 0.0;
  double predicted_macs = 0.0;
  double measured_ms = 0.0;
};

// Forward-pass timing at fixed average degree. mode: "stga" times the two
// graph attention phases on prebuilt graphs; "dense" times multi-head
// self-attention over the same node count.
std::vector<BenchRow> bench_attention(const std::vector<std::size_t>& sizes,
                                      const std::string& mode, std::size_t c,
                                      double target_degree, std::size_t reps,
                                      std::uint64_t seed);

// Least-squares slope of log(ms) against log(n).
double loglog_slope(const std::vector<BenchRow>& rows);

struct SuppressBenchRow {
  std::size_t n = 0;
  unsigned workers = 0;
  double measured_ms = 0.0;
};

std::vector<SuppressBenchRow> bench_suppress(const std::vector<std::size_t>& sizes,
                                             unsigned max_workers, std::uint64_t seed);

}  // namespace stgd

#endif  // STGD_HARNESS_HPP
