// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nqg/errors.hpp"
#include "nqg/rng.hpp"
#include "nqg/tape.hpp"
#include "nqg/tensor.hpp"

namespace nqg {

// Stored parameters of one LSTM cell. Gate blocks are packed along the first
// axis in the order [input, forget, candidate, output].
template <typename T>
struct LstmCellParams {
  Tensor<T> w_input;   // [4H x In]
  Tensor<T> w_hidden;  // [4H x H]
  Tensor<T> bias;      // [4H]

  std::size_t input_size() const { return w_input.cols(); }
  std::size_t hidden_size() const { return w_hidden.cols(); }

  static LstmCellParams init(std::size_t in, std::size_t hidden, Rng& rng, T bound) {
    LstmCellParams p;
    p.w_input = Tensor<T>::uniform({4 * hidden, in}, rng, -bound, bound);
    p.w_hidden = Tensor<T>::uniform({4 * hidden, hidden}, rng, -bound, bound);
    p.bias = Tensor<T>::uniform({4 * hidden}, rng, -bound, bound);
    return p;
  }
};

// Tape-resident view of a cell, produced by lease_cell for one forward pass.
template <typename T>
struct LstmCellVars {
  typename Tape<T>::Var w_input, w_hidden, bias;
  std::size_t hidden = 0;
};

template <typename T>
LstmCellVars<T> lease_cell(Tape<T>& tape, const LstmCellParams<T>& p) {
  return LstmCellVars<T>{tape.lease(p.w_input), tape.lease(p.w_hidden),
                         tape.lease(p.bias), p.hidden_size()};
}

// h and c of one layer, as tape variables.
template <typename T>
struct LstmStateVars {
  typename Tape<T>::Var h, c;
};

template <typename T>
LstmStateVars<T> zero_state(Tape<T>& tape, std::size_t hidden) {
  return LstmStateVars<T>{tape.lease(Tensor<T>::zeros({hidden})),
                          tape.lease(Tensor<T>::zeros({hidden}))};
}

// One step of the standard gate equations:
//   [i f g o] = w_input x + w_hidden h + bias
//   c' = sigmoid(f) . c + sigmoid(i) . tanh(g)
//   h' = sigmoid(o) . tanh(c')
template <typename T>
LstmStateVars<T> lstm_cell_step(Tape<T>& tape, const LstmCellVars<T>& cell,
                                typename Tape<T>::Var x,
                                const LstmStateVars<T>& state) {
  const std::size_t h = cell.hidden;
  if (tape.value(x).numel() != tape.value(cell.w_input).cols()) {
    throw DimensionError("lstm_cell_step: input width mismatch");
  }
  if (tape.value(state.h).numel() != h || tape.value(state.c).numel() != h) {
    throw DimensionError("lstm_cell_step: state width mismatch");
  }
  auto pre = tape.add(tape.add(tape.matvec(cell.w_input, x),
                               tape.matvec(cell.w_hidden, state.h)),
                      cell.bias);
  auto gate_i = tape.sigmoid_of(tape.slice(pre, 0, h));
  auto gate_f = tape.sigmoid_of(tape.slice(pre, h, h));
  auto cand = tape.tanh_of(tape.slice(pre, 2 * h, h));
  auto gate_o = tape.sigmoid_of(tape.slice(pre, 3 * h, h));
  auto c_next = tape.add(tape.mul(gate_f, state.c), tape.mul(gate_i, cand));
  auto h_next = tape.mul(gate_o, tape.tanh_of(c_next));
  return LstmStateVars<T>{h_next, c_next};
}

template <typename T>
struct StackedRun {
  std::vector<typename Tape<T>::Var> top_states;  // one per input position
  std::vector<LstmStateVars<T>> final_states;     // one per layer
};

// Advances a vertical stack by one input. Inverted dropout is applied to the
// activations flowing between layers, never to the recurrent connections, and
// only in train mode.
template <typename T>
typename Tape<T>::Var stacked_step(Tape<T>& tape,
                                   const std::vector<LstmCellVars<T>>& layers,
                                   typename Tape<T>::Var x,
                                   std::vector<LstmStateVars<T>>& states,
                                   T dropout_p, bool train, Rng& rng) {
  if (!(dropout_p >= T(0) && dropout_p < T(1))) {
    throw ConfigError("stacked_step: dropout probability must be in [0,1)");
  }
  auto layer_in = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (l > 0 && train && dropout_p > T(0)) {
      layer_in = tape.dropout(layer_in, dropout_p, rng);
    }
    states[l] = lstm_cell_step(tape, layers[l], layer_in, states[l]);
    layer_in = states[l].h;
  }
  return layer_in;
}

// Runs a stack over a whole sequence from zero initial states.
template <typename T>
StackedRun<T> run_stacked(Tape<T>& tape,
                          const std::vector<LstmCellVars<T>>& layers,
                          const std::vector<typename Tape<T>::Var>& inputs,
                          T dropout_p, bool train, Rng& rng) {
  StackedRun<T> run;
  std::vector<LstmStateVars<T>> states;
  states.reserve(layers.size());
  for (const auto& layer : layers) states.push_back(zero_state(tape, layer.hidden));
  run.top_states.reserve(inputs.size());
  for (auto in : inputs) {
    run.top_states.push_back(stacked_step(tape, layers, in, states, dropout_p, train, rng));
  }
  run.final_states = std::move(states);
  return run;
}

// Output of a bidirectional encoder over the real (unpadded) span.
template <typename T>
struct EncoderOutputVars {
  std::vector<typename Tape<T>::Var> states;  // per token, width 2H
  typename Tape<T>::Var stacked;              // [len x 2H]
  typename Tape<T>::Var summary;              // [2H]: last forward ++ first backward
};

// Bidirectional encoding: the forward stack reads left-to-right, the backward
// stack right-to-left; per-token states concatenate the two directions. The
// summary pairs the forward state at the last token with the backward state
// at the first token.
template <typename T>
EncoderOutputVars<T> bilstm_encode(Tape<T>& tape,
                                   const std::vector<LstmCellVars<T>>& fwd_layers,
                                   const std::vector<LstmCellVars<T>>& bwd_layers,
                                   const std::vector<typename Tape<T>::Var>& inputs,
                                   T dropout_p, bool train, Rng& rng) {
  if (inputs.empty()) throw DegenerateInputError("bilstm_encode: empty sequence");
  StackedRun<T> fwd = run_stacked(tape, fwd_layers, inputs, dropout_p, train, rng);
  std::vector<typename Tape<T>::Var> reversed(inputs.rbegin(), inputs.rend());
  StackedRun<T> bwd = run_stacked(tape, bwd_layers, reversed, dropout_p, train, rng);

  EncoderOutputVars<T> out;
  const std::size_t n = inputs.size();
  out.states.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // bwd.top_states is indexed over the reversed sequence
    out.states.push_back(tape.concat({fwd.top_states[i], bwd.top_states[n - 1 - i]}));
  }
  out.stacked = tape.stack_rows(std::span<const typename Tape<T>::Var>(out.states));
  out.summary = tape.concat({fwd.top_states[n - 1], bwd.top_states[n - 1]});
  return out;
}

}  // namespace nqg
