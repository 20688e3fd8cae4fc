#ifndef STGD_TENSOR_HPP
#define STGD_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stgd/common.hpp"

namespace stgd {

// Dense row-major f64 tensor.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor uniform(std::vector<std::size_t> shape, Rng& rng, double lo, double hi);

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  double item() const;

  std::string shape_str() const;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);

// Handle to a recorded value on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Record of a forward computation supporting one reverse sweep.
// Each primitive appends a node whose backward closure scatters the
// output gradient into its parents. Nodes are append-only, so the
// graph is acyclic by construction. A Tape is confined to one thread.
class Tape {
 public:
  Var leaf(const Tensor& value, const std::string& name = "leaf");

  const Tensor& value(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }

  // --- elementwise ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var affine(Var a, double scale, double shift);  // scale*x + shift
  Var exp_op(Var a);
  Var sigmoid(Var a);
  Var tanh_op(Var a);
  Var leaky_relu(Var a, double slope);
  Var elu(Var a);

  // --- linear algebra ---
  Var matmul(Var a, Var b);                        // [n,k] x [k,m]
  Var linear(Var x, Var w, std::optional<Var> b);  // x*w (+ row-broadcast b)
  Var transpose(Var a);                            // 2-d only
  Var flatten(Var a);                              // view as rank-1
  Var slice_cols(Var a, std::size_t lo, std::size_t hi);
  Var concat_cols(const std::vector<Var>& parts);
  Var gather_rows(Var a, const std::vector<std::size_t>& rows);
  Var row_max(Var a);    // [n,k] -> [n], gradient to first argmax
  Var sum(Var a);        // -> [1]
  Var mean(Var a);       // -> [1]
  Var softmax_rows(Var a);

  // Softmax over the unmasked entries of a vector; masked outputs are 0.
  // Throws if every entry is masked.
  Var masked_softmax(Var logits, const std::vector<char>& mask);

  // Per-segment softmax of a flat edge-value vector in CSR order.
  // offsets has n+1 entries; empty segments produce no outputs.
  Var segment_softmax(Var edge_vals, const std::vector<std::size_t>& offsets);

  // out[k] = a[ia[k]] + b[ib[k]] for parallel index arrays.
  Var pair_sum_gather(Var a, Var b, const std::vector<std::size_t>& ia,
                      const std::vector<std::size_t>& ib);

  // out[i,:] = sum over k in segment i of weights[k] * feats[src[k],:].
  Var segment_weighted_sum(Var weights, Var feats,
                           const std::vector<std::size_t>& src,
                           const std::vector<std::size_t>& offsets);

  // Scale each row i of x by the constant mask[i] (not differentiated
  // w.r.t. the mask).
  Var scale_rows(Var x, const std::vector<double>& row_scales);

  // 3x3 same-padding convolution: x [Cin,H,W], k [Cout,Cin,3,3], b [Cout].
  Var conv2d_same(Var x, Var k, Var b);

  // Standard multi-head self-attention with residual: x [n,C] plus
  // projections wq,wk,wv,wo each [C,C].
  Var dense_mhsa(Var x, Var wq, Var wk, Var wv, Var wo, std::size_t heads);

  // Extension point for ops with bespoke derivatives (e.g. the
  // finite-difference-backed geometry losses). The callback receives the
  // output gradient plus parent values and gradient accumulators, in the
  // order the parents were passed.
  using CustomBackward =
      std::function<void(const Tensor& gout, const std::vector<const Tensor*>& parent_values,
                         const std::vector<Tensor*>& parent_grads)>;
  Var custom_op(Tensor value, const std::vector<Var>& parents, std::string op,
                CustomBackward bw);

  std::vector<Tensor> backward(Var scalar_out) const;

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    std::string op;
    std::function<void(const Tape&, const Tensor&, std::vector<Tensor>&)> backward;
  };

  Var record(Tensor value, std::vector<int> parents, std::string op,
             std::function<void(const Tape&, const Tensor&, std::vector<Tensor>&)> bw);

  std::vector<Node> nodes_;
};

// Named learnable tensors plus the RNG that initializes them.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed), rng_(seed) {}

  // uniform(-sqrt(1/fan_in), +sqrt(1/fan_in))
  Tensor& create(const std::string& name, std::vector<std::size_t> shape,
                 std::size_t fan_in);
  Tensor& create_zeros(const std::string& name, std::vector<std::size_t> shape);

  bool has(const std::string& name) const { return params_.count(name) > 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  std::map<std::string, Tensor>& all() { return params_; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::uint64_t seed() const { return seed_; }

  void sgd_step(const std::map<std::string, Tensor>& grads, double lr);

 private:
  std::uint64_t seed_;
  Rng rng_;
  std::map<std::string, Tensor> params_;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_input;
};

// Compare reverse-mode gradients of a scalar computation against central
// finite differences over every element of `inputs` (mutated during the
// sweep, restored afterwards).
GradCheckReport grad_check(
    std::map<std::string, Tensor>& inputs,
    const std::function<Var(Tape&, const std::map<std::string, Var>&)>& build,
    double step = 1e-5);

}  // namespace stgd

#endif  // STGD_TENSOR_HPP
