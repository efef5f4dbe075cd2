// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nqg/decoder.hpp"
#include "nqg/errors.hpp"
#include "nqg/model.hpp"
#include "nqg/rng.hpp"
#include "nqg/vocab.hpp"

namespace nqg {

enum class Precision { single_prec, double_prec };

struct TrainingConfig {
  std::size_t embedding_dim = 300;
  std::size_t hidden_size = 600;
  std::size_t layers = 2;
  double dropout = 0.3;
  double initial_rate = 1.0;
  std::size_t halving_start_epoch = 8;
  std::size_t batch_size = 64;
  double clip_norm = 5.0;
  std::size_t max_epochs = 15;
  std::uint64_t seed = 1;
  Variant variant = Variant::sentence;
  std::size_t paragraph_limit = 100;
  std::size_t src_vocab_cap = 45000;
  std::size_t tgt_vocab_cap = 28000;
  EmbeddingPolicy embedding_policy = EmbeddingPolicy::learned;
  Precision precision = Precision::single_prec;

  void validate() const {
    if (embedding_dim == 0 || hidden_size == 0 || layers == 0 || batch_size == 0 ||
        max_epochs == 0 || halving_start_epoch == 0 || paragraph_limit == 0 ||
        src_vocab_cap == 0 || tgt_vocab_cap == 0) {
      throw ConfigError("training config: all sizes must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw ConfigError("training config: dropout must be in [0,1)");
    }
    if (initial_rate <= 0.0 || clip_norm <= 0.0) {
      throw ConfigError("training config: rates and clip threshold must be positive");
    }
    if (halving_start_epoch > max_epochs) {
      throw ConfigError("training config: halving start must not exceed max epochs");
    }
  }

  // Full-scale defaults (the values above).
  static TrainingConfig paper_preset() { return TrainingConfig{}; }

  // Desk-scale configuration used by the test suites.
  static TrainingConfig toy_preset() {
    TrainingConfig c;
    c.embedding_dim = 16;
    c.hidden_size = 32;
    c.layers = 2;
    c.dropout = 0.0;
    c.initial_rate = 1.0;
    c.batch_size = 8;
    c.max_epochs = 300;
    c.halving_start_epoch = 300;
    c.paragraph_limit = 50;
    c.src_vocab_cap = 200;
    c.tgt_vocab_cap = 200;
    return c;
  }
};

inline ModelDims model_dims(const TrainingConfig& c, std::size_t src_vocab,
                            std::size_t tgt_vocab) {
  ModelDims d;
  d.embedding_dim = c.embedding_dim;
  d.hidden_size = c.hidden_size;
  d.layers = c.layers;
  d.src_vocab = src_vocab;
  d.tgt_vocab = tgt_vocab;
  d.variant = c.variant;
  return d;
}

// A pair already mapped to ids: source carries the boundary markers, target
// is the gold output [y_1 .. y_n, EOS]. Decoder inputs are derived from the
// target by prepending SOS and dropping the last token.
struct EncodedPair {
  std::vector<int> source;
  std::vector<int> target;
  std::optional<std::vector<int>> paragraph;
};

// Padded batch. Masks are true exactly on the non-PAD positions.
struct Batch {
  std::vector<std::vector<int>> source;
  std::vector<std::vector<bool>> source_mask;
  std::vector<std::vector<int>> target;
  std::vector<std::vector<bool>> target_mask;
  std::vector<std::vector<int>> paragraph;  // empty when pairs carry none
  std::vector<std::vector<bool>> paragraph_mask;

  std::size_t rows() const { return source.size(); }

  // Recovers the unpadded pair in row r.
  EncodedPair row(std::size_t r) const {
    EncodedPair p;
    for (std::size_t i = 0; i < source[r].size(); ++i) {
      if (source_mask[r][i]) p.source.push_back(source[r][i]);
    }
    for (std::size_t i = 0; i < target[r].size(); ++i) {
      if (target_mask[r][i]) p.target.push_back(target[r][i]);
    }
    if (!paragraph.empty()) {
      std::vector<int> par;
      for (std::size_t i = 0; i < paragraph[r].size(); ++i) {
        if (paragraph_mask[r][i]) par.push_back(paragraph[r][i]);
      }
      p.paragraph = std::move(par);
    }
    return p;
  }
};

namespace detail {

inline void pad_into(const std::vector<int>& ids, std::size_t width,
                     std::vector<std::vector<int>>& rows,
                     std::vector<std::vector<bool>>& masks) {
  std::vector<int> row(width, Vocabulary::pad_id);
  std::vector<bool> mask(width, false);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    row[i] = ids[i];
    mask[i] = true;
  }
  rows.push_back(std::move(row));
  masks.push_back(std::move(mask));
}

}  // namespace detail

// Shuffles the pairs with the given rng and cuts them into padded batches.
inline std::vector<Batch> batchify(const std::vector<EncodedPair>& pairs,
                                   std::size_t batch_size, Rng& rng) {
  if (pairs.empty()) throw DegenerateInputError("batchify: no pairs");
  if (batch_size == 0) throw ConfigError("batchify: batch size must be positive");
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    std::size_t src_w = 0, tgt_w = 0, par_w = 0;
    bool any_par = false;
    for (std::size_t i = start; i < end; ++i) {
      const EncodedPair& p = pairs[order[i]];
      src_w = std::max(src_w, p.source.size());
      tgt_w = std::max(tgt_w, p.target.size());
      if (p.paragraph) {
        any_par = true;
        par_w = std::max(par_w, p.paragraph->size());
      }
    }
    Batch b;
    for (std::size_t i = start; i < end; ++i) {
      const EncodedPair& p = pairs[order[i]];
      detail::pad_into(p.source, src_w, b.source, b.source_mask);
      detail::pad_into(p.target, tgt_w, b.target, b.target_mask);
      if (any_par) {
        detail::pad_into(p.paragraph ? *p.paragraph : std::vector<int>{}, par_w,
                         b.paragraph, b.paragraph_mask);
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

template <typename T>
struct LossAndCount {
  typename Tape<T>::Var loss;
  std::size_t tokens = 0;
};

// Negative log-likelihood over the unmasked target positions. One per-step
// log-probability vector is expected for every position; masked positions
// contribute exactly nothing.
template <typename T>
LossAndCount<T> nll_loss(Tape<T>& tape,
                         const std::vector<typename Tape<T>::Var>& step_log_probs,
                         const std::vector<int>& target_ids,
                         const std::vector<bool>& target_mask) {
  if (step_log_probs.size() != target_ids.size() ||
      target_ids.size() != target_mask.size()) {
    throw DimensionError("nll_loss: steps, ids and mask must align");
  }
  typename Tape<T>::Var total;
  std::size_t tokens = 0;
  for (std::size_t j = 0; j < target_ids.size(); ++j) {
    if (!target_mask[j]) continue;
    auto term = tape.pick(step_log_probs[j], static_cast<std::size_t>(target_ids[j]));
    total = total.valid() ? tape.add(total, term) : term;
    ++tokens;
  }
  if (tokens == 0) throw DegenerateInputError("nll_loss: no unmasked target tokens");
  return LossAndCount<T>{tape.scale(total, T(-1)), tokens};
}

// Teacher-forced forward pass over one pair; returns the summed NLL.
template <typename T>
LossAndCount<T> pair_nll(Tape<T>& tape, const ModelVars<T>& m, const EncodedPair& pair,
                         T dropout_p, bool train, Rng& rng) {
  if (pair.target.empty()) throw DegenerateInputError("pair_nll: empty target");
  SourceEncoding<T> enc =
      encode_source(tape, m, pair.source,
                    pair.paragraph ? &*pair.paragraph : nullptr, dropout_p, train, rng);
  auto states = enc.initial_states;
  std::vector<typename Tape<T>::Var> step_log_probs;
  step_log_probs.reserve(pair.target.size());
  for (std::size_t j = 0; j < pair.target.size(); ++j) {
    const int y_prev = j == 0 ? Vocabulary::sos_id : pair.target[j - 1];
    StepRecord<T> rec = decoder_step(tape, m, y_prev, states, enc, dropout_p, train, rng);
    step_log_probs.push_back(rec.output.log_probs);
  }
  return nll_loss(tape, step_log_probs, pair.target,
                  std::vector<bool>(pair.target.size(), true));
}

// Gradient clipping by global L2 norm: if the norm exceeds the threshold the
// whole set is rescaled by threshold/norm. Returns the pre-clip norm.
template <typename T>
double clip_gradients(GradientSet<T>& grads, double threshold) {
  if (threshold <= 0) throw ConfigError("clip_gradients: threshold must be positive");
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (T v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  if (norm > threshold) {
    const T factor = static_cast<T>(threshold / norm);
    for (auto& [name, g] : grads) {
      for (T& v : g.data) v *= factor;
    }
  }
  return norm;
}

// 1.0 until the halving epoch, then halved every epoch.
inline double learning_rate(std::size_t epoch, const TrainingConfig& config) {
  if (epoch < 1) throw ConfigError("learning_rate: epochs are 1-based");
  const std::size_t start = config.halving_start_epoch;
  const std::size_t halvings = epoch >= start ? epoch - (start - 1) : 0;
  return config.initial_rate * std::pow(0.5, static_cast<double>(halvings));
}

// theta <- theta - rate * grad; embeddings are skipped under the
// fixed-pretrained policy.
template <typename T>
void sgd_step(ModelParameters<T>& params, const GradientSet<T>& grads, double rate,
              EmbeddingPolicy policy) {
  params.for_each_parameter([&](const std::string& name, Tensor<T>& t) {
    if (policy == EmbeddingPolicy::fixed_pretrained &&
        (name == "src_embedding" || name == "tgt_embedding")) {
      return;
    }
    auto it = grads.find(name);
    if (it == grads.end()) return;
    const Tensor<T>& g = it->second;
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      t.data[i] -= static_cast<T>(rate) * g.data[i];
    }
  });
}

// Mean per-token NLL over a pair set, in eval mode.
template <typename T>
double mean_nll(const ModelParameters<T>& params, const std::vector<EncodedPair>& pairs) {
  if (pairs.empty()) throw DegenerateInputError("mean_nll: empty pair set");
  double total = 0.0;
  std::size_t tokens = 0;
  Rng unused(0);
  for (const EncodedPair& p : pairs) {
    Tape<T> tape;
    ModelVars<T> vars = lease_model(tape, params);
    LossAndCount<T> loss = pair_nll(tape, vars, p, T(0), false, unused);
    total += static_cast<double>(tape.value(loss.loss).data[0]);
    tokens += loss.tokens;
  }
  return total / static_cast<double>(tokens);
}

// exp(mean per-token NLL), eval mode.
template <typename T>
double perplexity(const ModelParameters<T>& params, const std::vector<EncodedPair>& pairs) {
  return std::exp(mean_nll(params, pairs));
}

struct EpochLog {
  std::size_t epoch = 0;
  double rate = 0.0;
  double train_loss_per_token = 0.0;
  double dev_perplexity = 0.0;
};

template <typename T>
struct TrainResult {
  ModelParameters<T> best_params;
  std::size_t best_epoch = 0;
  double best_dev_perplexity = 0.0;
  std::vector<EpochLog> log;
};

// SGD training loop with teacher forcing. Per-batch gradients are averaged
// over the rows of the batch, clipped by global norm, and applied with the
// scheduled rate. After every epoch the dev perplexity is measured in eval
// mode; the parameters with the lowest dev perplexity are returned.
template <typename T>
TrainResult<T> train(const TrainingConfig& config, const ModelParameters<T>& initial,
                     const std::vector<EncodedPair>& train_pairs,
                     const std::vector<EncodedPair>& dev_pairs,
                     const std::function<void(const EpochLog&)>& on_epoch = nullptr) {
  config.validate();
  if (train_pairs.empty()) throw DegenerateInputError("train: no training pairs");
  if (dev_pairs.empty()) throw DegenerateInputError("train: no dev pairs");

  ModelParameters<T> params = initial;
  TrainResult<T> result;
  result.best_dev_perplexity = std::numeric_limits<double>::infinity();
  Rng rng(config.seed);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double rate = learning_rate(epoch, config);
    std::vector<Batch> batches = batchify(train_pairs, config.batch_size, rng);
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;

    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& batch = batches[bi];
      Tape<T> tape;
      ModelVars<T> vars = lease_model(tape, params);
      typename Tape<T>::Var batch_loss;
      std::size_t batch_tokens = 0;
      for (std::size_t r = 0; r < batch.rows(); ++r) {
        LossAndCount<T> row_loss = pair_nll(tape, vars, batch.row(r),
                                            static_cast<T>(config.dropout), true, rng);
        batch_loss = batch_loss.valid() ? tape.add(batch_loss, row_loss.loss)
                                        : row_loss.loss;
        batch_tokens += row_loss.tokens;
      }
      const double loss_value = static_cast<double>(tape.value(batch_loss).data[0]);
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error("train: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(bi));
      }
      epoch_loss += loss_value;
      epoch_tokens += batch_tokens;

      // gradients of the per-row mean keep update magnitudes batch-size free
      auto objective = tape.scale(batch_loss, T(1) / static_cast<T>(batch.rows()));
      tape.backward(objective);
      GradientSet<T> grads = collect_gradients(tape, vars);
      clip_gradients(grads, config.clip_norm);
      sgd_step(params, grads, rate, config.embedding_policy);
    }

    EpochLog log;
    log.epoch = epoch;
    log.rate = rate;
    log.train_loss_per_token = epoch_loss / static_cast<double>(epoch_tokens);
    log.dev_perplexity = perplexity(params, dev_pairs);
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    if (log.dev_perplexity < result.best_dev_perplexity) {
      result.best_dev_perplexity = log.dev_perplexity;
      result.best_epoch = epoch;
      result.best_params = params;
    }
  }
  return result;
}

}  // namespace nqg
