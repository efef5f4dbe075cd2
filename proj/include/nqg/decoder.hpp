// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <vector>

#include "nqg/errors.hpp"
#include "nqg/lstm.hpp"
#include "nqg/model.hpp"
#include "nqg/tape.hpp"

namespace nqg {

// Bilinear attention over encoder states: score_i = h' W b_i, masked softmax.
// `keep` marks the source positions that may receive weight; padded positions
// must be false there and come out exactly zero.
template <typename T>
typename Tape<T>::Var attention_weights(Tape<T>& tape, typename Tape<T>::Var h,
                                        typename Tape<T>::Var encoder_states,
                                        typename Tape<T>::Var bilinear,
                                        const std::vector<bool>* keep = nullptr) {
  auto projected = tape.vecmat(h, bilinear);            // [2H]
  auto scores = tape.matvec(encoder_states, projected);  // [M]
  return tape.softmax(scores, keep);
}

// Context vector: attention-weighted average of encoder states.
template <typename T>
typename Tape<T>::Var context_vector(Tape<T>& tape, typename Tape<T>::Var weights,
                                     typename Tape<T>::Var encoder_states) {
  return tape.vecmat(weights, encoder_states);  // [2H]
}

template <typename T>
struct OutputDistribution {
  typename Tape<T>::Var log_probs;  // [U]
  typename Tape<T>::Var probs;      // [U]
};

// softmax(out_project . tanh(out_combine . [h ; c])); the context part is
// absent in the vanilla configuration.
template <typename T>
OutputDistribution<T> output_distribution(Tape<T>& tape, const ModelVars<T>& m,
                                          typename Tape<T>::Var h,
                                          std::optional<typename Tape<T>::Var> context) {
  typename Tape<T>::Var combined_in =
      context ? tape.concat({h, *context}) : h;
  auto hidden = tape.tanh_of(tape.matvec(m.out_combine, combined_in));
  auto logits = tape.matvec(m.out_project, hidden);
  auto logp = tape.log_softmax(logits);
  return OutputDistribution<T>{logp, tape.exp_of(logp)};
}

// Initial decoder state: per layer and per component, tanh(W s + b) of the
// encoder summary (or of [s ; s'] in the paragraph variant).
template <typename T>
std::vector<LstmStateVars<T>> bridge_init(
    Tape<T>& tape, const ModelVars<T>& m, typename Tape<T>::Var summary,
    std::optional<typename Tape<T>::Var> paragraph_summary) {
  if (m.dims.variant == Variant::paragraph) {
    if (!paragraph_summary) {
      throw ConfigError("bridge_init: paragraph variant requires a paragraph summary");
    }
  } else if (paragraph_summary) {
    throw ConfigError("bridge_init: paragraph summary supplied to a non-paragraph model");
  }
  typename Tape<T>::Var input =
      paragraph_summary ? tape.concat({summary, *paragraph_summary}) : summary;
  std::vector<LstmStateVars<T>> states;
  states.reserve(m.bridge_h.size());
  for (std::size_t l = 0; l < m.bridge_h.size(); ++l) {
    auto h = tape.tanh_of(
        tape.add(tape.matvec(m.bridge_h[l].weight, input), m.bridge_h[l].bias));
    auto c = tape.tanh_of(
        tape.add(tape.matvec(m.bridge_c[l].weight, input), m.bridge_c[l].bias));
    states.push_back(LstmStateVars<T>{h, c});
  }
  return states;
}

// Everything the decoder needs about an encoded source.
template <typename T>
struct SourceEncoding {
  EncoderOutputVars<T> sentence;
  std::vector<bool> keep;  // attention mask over sentence positions
  std::vector<LstmStateVars<T>> initial_states;
};

// Embeds token ids through an embedding matrix variable.
template <typename T>
std::vector<typename Tape<T>::Var> embed_tokens(Tape<T>& tape,
                                                typename Tape<T>::Var embedding,
                                                const std::vector<int>& ids) {
  std::vector<typename Tape<T>::Var> out;
  out.reserve(ids.size());
  const std::size_t vocab = tape.value(embedding).rows();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw UsageError("embed_tokens: token id " + std::to_string(id) +
                       " outside the vocabulary");
    }
    out.push_back(tape.row(embedding, static_cast<std::size_t>(id)));
  }
  return out;
}

// Encodes the source sentence (and paragraph, when the variant asks for it)
// and bridges into the initial decoder state. In the vanilla configuration the
// source is reversed before encoding.
template <typename T>
SourceEncoding<T> encode_source(Tape<T>& tape, const ModelVars<T>& m,
                                const std::vector<int>& src_ids,
                                const std::vector<int>* paragraph_ids, T dropout_p,
                                bool train, Rng& rng) {
  if (src_ids.empty()) throw DegenerateInputError("encode_source: empty source");
  std::vector<int> ids = src_ids;
  if (m.dims.variant == Variant::vanilla) std::reverse(ids.begin(), ids.end());

  auto embedded = embed_tokens(tape, m.src_embedding, ids);
  SourceEncoding<T> enc;
  enc.sentence = bilstm_encode(tape, m.enc_fwd, m.enc_bwd, embedded, dropout_p, train, rng);
  enc.keep.assign(ids.size(), true);

  std::optional<typename Tape<T>::Var> par_summary;
  if (m.dims.variant == Variant::paragraph) {
    if (!paragraph_ids || paragraph_ids->empty()) {
      throw ConfigError("encode_source: paragraph variant requires paragraph tokens");
    }
    auto par_embedded = embed_tokens(tape, m.src_embedding, *paragraph_ids);
    auto par = bilstm_encode(tape, m.par_fwd, m.par_bwd, par_embedded, dropout_p, train, rng);
    par_summary = par.summary;
  }
  enc.initial_states = bridge_init(tape, m, enc.sentence.summary, par_summary);
  return enc;
}

// Record of one decoding step.
template <typename T>
struct StepRecord {
  OutputDistribution<T> output;
  typename Tape<T>::Var attention;       // invalid in the vanilla configuration
  std::size_t attention_argmax = SIZE_MAX;  // position of the max weight
};

// Advances the decoder by one token: embed the previous output token, run the
// stacked cells, attend over the sentence states, and produce the output
// distribution.
template <typename T>
StepRecord<T> decoder_step(Tape<T>& tape, const ModelVars<T>& m, int y_prev,
                           std::vector<LstmStateVars<T>>& states,
                           const SourceEncoding<T>& enc, T dropout_p, bool train,
                           Rng& rng) {
  if (y_prev < 0 || static_cast<std::size_t>(y_prev) >= m.dims.tgt_vocab) {
    throw UsageError("decoder_step: unknown target token id " + std::to_string(y_prev));
  }
  auto y_embedded = tape.row(m.tgt_embedding, static_cast<std::size_t>(y_prev));
  auto top = stacked_step(tape, m.dec, y_embedded, states, dropout_p, train, rng);

  StepRecord<T> rec;
  if (m.dims.uses_attention()) {
    rec.attention = attention_weights(tape, top, enc.sentence.stacked, m.attn_bilinear,
                                      &enc.keep);
    const auto& w = tape.value(rec.attention).data;
    rec.attention_argmax =
        static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
    auto context = context_vector(tape, rec.attention, enc.sentence.stacked);
    rec.output = output_distribution(tape, m, top, context);
  } else {
    rec.output = output_distribution<T>(tape, m, top, std::nullopt);
  }
  return rec;
}

}  // namespace nqg
