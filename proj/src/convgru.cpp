#include "stgd/convgru.hpp"

namespace stgd {

void init_convgru_params(ParamStore& store, std::size_t channels) {
  std::size_t fan_in = channels * 9;
  for (const char* gate : {"reset", "update", "cand"}) {
    std::string g(gate);
    store.create("convgru." + g + "_h", {channels, channels, 3, 3}, fan_in);
    store.create("convgru." + g + "_x", {channels, channels, 3, 3}, fan_in);
    store.create_zeros("convgru." + g + "_b", {channels});
  }
}

ConvGruParams convgru_leaves(Tape& tape, const ParamStore& store) {
  ConvGruParams p;
  p.reset_h = tape.leaf(store.get("convgru.reset_h"), "convgru.reset_h");
  p.reset_x = tape.leaf(store.get("convgru.reset_x"), "convgru.reset_x");
  p.reset_b = tape.leaf(store.get("convgru.reset_b"), "convgru.reset_b");
  p.update_h = tape.leaf(store.get("convgru.update_h"), "convgru.update_h");
  p.update_x = tape.leaf(store.get("convgru.update_x"), "convgru.update_x");
  p.update_b = tape.leaf(store.get("convgru.update_b"), "convgru.update_b");
  p.cand_h = tape.leaf(store.get("convgru.cand_h"), "convgru.cand_h");
  p.cand_x = tape.leaf(store.get("convgru.cand_x"), "convgru.cand_x");
  p.cand_b = tape.leaf(store.get("convgru.cand_b"), "convgru.cand_b");
  return p;
}

Var convgru_step(Tape& tape, Var h_prev, Var x, const ConvGruParams& params) {
  const Tensor& th = tape.value(h_prev);
  const Tensor& tx = tape.value(x);
  require(th.shape == tx.shape, "convgru_step: H_prev " + th.shape_str() +
                                    " and X " + tx.shape_str() + " must be congruent");
  Var zero_b = tape.leaf(Tensor::zeros({th.dim(0)}), "zero_bias");
  Var r = tape.sigmoid(tape.add(tape.conv2d_same(h_prev, params.reset_h, zero_b),
                                tape.conv2d_same(x, params.reset_x, params.reset_b)));
  Var z = tape.sigmoid(tape.add(tape.conv2d_same(h_prev, params.update_h, zero_b),
                                tape.conv2d_same(x, params.update_x, params.update_b)));
  Var cand = tape.tanh_op(tape.add(tape.conv2d_same(tape.mul(r, h_prev), params.cand_h, zero_b),
                                   tape.conv2d_same(x, params.cand_x, params.cand_b)));
  return tape.add(tape.mul(z, h_prev), tape.mul(tape.affine(z, -1.0, 1.0), cand));
}

std::vector<Var> convgru_run(Tape& tape, const std::vector<Var>& xs, Var h0,
                             const ConvGruParams& params) {
  require(!xs.empty(), "convgru_run: empty sequence");
  Var h = h0.valid() ? h0 : tape.leaf(Tensor::zeros(tape.value(xs[0]).shape), "h0");
  std::vector<Var> out;
  out.reserve(xs.size());
  for (Var x : xs) {
    h = convgru_step(tape, h, x, params);
    out.push_back(h);
  }
  return out;
}

ConvGruState convgru_step_value(const ConvGruState& prev, const Tensor& x,
                                const ParamStore& store) {
  Tape tape;
  ConvGruParams params = convgru_leaves(tape, store);
  Tensor h = prev.h.size() == 0 ? Tensor::zeros(x.shape) : prev.h;
  Var out = convgru_step(tape, tape.leaf(h, "h_prev"), tape.leaf(x, "x"), params);
  return ConvGruState{tape.value(out)};
}

}  // namespace stgd
