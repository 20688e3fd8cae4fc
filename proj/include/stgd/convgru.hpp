#ifndef STGD_CONVGRU_HPP
#define STGD_CONVGRU_HPP

#include <vector>

#include "stgd/tensor.hpp"

namespace stgd {

// Hidden feature map carried across frames; shape is fixed over a sequence.
struct ConvGruState {
  Tensor h;  // [C, H, W]
};

struct ConvGruParams {
  Var reset_h, reset_x;    // U_r, W_r  [C,C,3,3]
  Var update_h, update_x;  // U_z, W_z
  Var cand_h, cand_x;      // U_h, W_h
  Var reset_b, update_b, cand_b;  // [C]
};

// Registers the nine gate tensors on a ParamStore (3x3 kernels, C channels
// in and out).
void init_convgru_params(ParamStore& store, std::size_t channels);

// Creates tape leaves for the stored gate parameters.
ConvGruParams convgru_leaves(Tape& tape, const ParamStore& store);

// One gated recurrence step:
//   R = sigmoid(conv(H_prev, U_r) + conv(X, W_r) + b_r)
//   Z = sigmoid(conv(H_prev, U_z) + conv(X, W_z) + b_z)
//   Hc = tanh(conv(R*H_prev, U_h) + conv(X, W_h) + b_h)
//   H  = Z*H_prev + (1-Z)*Hc
Var convgru_step(Tape& tape, Var h_prev, Var x, const ConvGruParams& params);

// Folds convgru_step over the sequence; h0 empty means zeros.
std::vector<Var> convgru_run(Tape& tape, const std::vector<Var>& xs, Var h0,
                             const ConvGruParams& params);

// Value-level step for streaming inference.
ConvGruState convgru_step_value(const ConvGruState& prev, const Tensor& x,
                                const ParamStore& store);

}  // namespace stgd

#endif  // STGD_CONVGRU_HPP
