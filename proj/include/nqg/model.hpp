// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nqg/errors.hpp"
#include "nqg/lstm.hpp"
#include "nqg/rng.hpp"
#include "nqg/tape.hpp"
#include "nqg/tensor.hpp"

namespace nqg {

// sentence: attention over the encoded sentence, decoder initialized from its
//           summary.
// paragraph: adds a second encoder over the (truncated) paragraph; the two
//           summaries are concatenated for decoder initialization. Attention
//           still runs over the sentence states only.
// vanilla:  no attention, source reversed before encoding.
enum class Variant { sentence, paragraph, vanilla };

enum class EmbeddingPolicy { learned, fixed_pretrained };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::sentence: return "sentence";
    case Variant::paragraph: return "paragraph";
    case Variant::vanilla: return "vanilla";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "sentence") return Variant::sentence;
  if (s == "paragraph") return Variant::paragraph;
  if (s == "vanilla") return Variant::vanilla;
  throw ConfigError("unknown variant: " + s);
}

struct ModelDims {
  std::size_t embedding_dim = 0;
  std::size_t hidden_size = 0;
  std::size_t layers = 0;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  Variant variant = Variant::sentence;

  // width of one encoder state [fwd ; bwd]
  std::size_t encoder_state_width() const { return 2 * hidden_size; }
  // width of the decoder-initialization input
  std::size_t bridge_input_width() const {
    return variant == Variant::paragraph ? 4 * hidden_size : 2 * hidden_size;
  }
  // width of the input to the output combiner
  std::size_t combine_input_width() const {
    return variant == Variant::vanilla ? hidden_size
                                       : hidden_size + encoder_state_width();
  }
  bool uses_attention() const { return variant != Variant::vanilla; }
};

// All learnable tensors of one model. Enumeration order (and therefore
// checkpoint manifest order) is fixed by for_each_parameter.
template <typename T>
struct ModelParameters {
  ModelDims dims;

  Tensor<T> src_embedding;  // [src_vocab x E]
  Tensor<T> tgt_embedding;  // [tgt_vocab x E]
  std::vector<LstmCellParams<T>> enc_fwd, enc_bwd;  // sentence encoder stacks
  std::vector<LstmCellParams<T>> par_fwd, par_bwd;  // paragraph encoder stacks
  std::vector<LstmCellParams<T>> dec;               // decoder stack
  Tensor<T> attn_bilinear;  // [H x 2H]; empty in the vanilla variant
  Tensor<T> out_combine;    // [H x combine_input_width]
  Tensor<T> out_project;    // [tgt_vocab x H]

  struct BridgeMap {
    Tensor<T> weight;  // [H x bridge_input_width]
    Tensor<T> bias;    // [H]
  };
  std::vector<BridgeMap> bridge_h, bridge_c;  // one per decoder layer

  // Correctly shaped, all-zero parameter set.
  static ModelParameters shaped(const ModelDims& dims) {
    ModelParameters p;
    p.dims = dims;
    const std::size_t h = dims.hidden_size, e = dims.embedding_dim;
    p.src_embedding = Tensor<T>::zeros({dims.src_vocab, e});
    p.tgt_embedding = Tensor<T>::zeros({dims.tgt_vocab, e});
    const auto make_stack = [&](std::size_t first_in) {
      std::vector<LstmCellParams<T>> stack;
      for (std::size_t l = 0; l < dims.layers; ++l) {
        const std::size_t in = l == 0 ? first_in : h;
        LstmCellParams<T> cell;
        cell.w_input = Tensor<T>::zeros({4 * h, in});
        cell.w_hidden = Tensor<T>::zeros({4 * h, h});
        cell.bias = Tensor<T>::zeros({4 * h});
        stack.push_back(std::move(cell));
      }
      return stack;
    };
    p.enc_fwd = make_stack(e);
    p.enc_bwd = make_stack(e);
    if (dims.variant == Variant::paragraph) {
      p.par_fwd = make_stack(e);
      p.par_bwd = make_stack(e);
    }
    p.dec = make_stack(e);
    if (dims.uses_attention()) {
      p.attn_bilinear = Tensor<T>::zeros({h, dims.encoder_state_width()});
    }
    p.out_combine = Tensor<T>::zeros({h, dims.combine_input_width()});
    p.out_project = Tensor<T>::zeros({dims.tgt_vocab, h});
    for (std::size_t l = 0; l < dims.layers; ++l) {
      p.bridge_h.push_back({Tensor<T>::zeros({h, dims.bridge_input_width()}),
                            Tensor<T>::zeros({h})});
      p.bridge_c.push_back({Tensor<T>::zeros({h, dims.bridge_input_width()}),
                            Tensor<T>::zeros({h})});
    }
    return p;
  }

  // Uniform initialization in [-bound, bound]; tensors are filled in
  // enumeration order so a seed fully determines the model.
  static ModelParameters init(const ModelDims& dims, Rng& rng, T bound = T(0.1)) {
    ModelParameters p = shaped(dims);
    p.for_each_parameter([&](const std::string&, Tensor<T>& t) {
      for (T& v : t.data) v = rng.uniform(-bound, bound);
    });
    return p;
  }

  // Visits every parameter tensor with a stable name, in a fixed order.
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("src_embedding", self.src_embedding);
    fn("tgt_embedding", self.tgt_embedding);
    const auto stack = [&](const char* prefix, auto& layers) {
      for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string base = std::string(prefix) + "." + std::to_string(l);
        fn(base + ".w_input", layers[l].w_input);
        fn(base + ".w_hidden", layers[l].w_hidden);
        fn(base + ".bias", layers[l].bias);
      }
    };
    stack("enc_fwd", self.enc_fwd);
    stack("enc_bwd", self.enc_bwd);
    stack("par_fwd", self.par_fwd);
    stack("par_bwd", self.par_bwd);
    stack("dec", self.dec);
    if (self.dims.uses_attention()) fn("attn_bilinear", self.attn_bilinear);
    fn("out_combine", self.out_combine);
    fn("out_project", self.out_project);
    for (std::size_t l = 0; l < self.bridge_h.size(); ++l) {
      const std::string base = "bridge_h." + std::to_string(l);
      fn(base + ".weight", self.bridge_h[l].weight);
      fn(base + ".bias", self.bridge_h[l].bias);
    }
    for (std::size_t l = 0; l < self.bridge_c.size(); ++l) {
      const std::string base = "bridge_c." + std::to_string(l);
      fn(base + ".weight", self.bridge_c[l].weight);
      fn(base + ".bias", self.bridge_c[l].bias);
    }
  }

  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    visit(*this, std::forward<Fn>(fn));
  }
  template <typename Fn>
  void for_each_parameter(Fn&& fn) const {
    visit(*this, std::forward<Fn>(fn));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_parameter([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
    return n;
  }
};

// Gradients keyed by parameter name.
template <typename T>
using GradientSet = std::map<std::string, Tensor<T>>;

// Tape-resident view of a whole model for one forward/backward pass.
template <typename T>
struct ModelVars {
  using Var = typename Tape<T>::Var;
  ModelDims dims;
  Var src_embedding, tgt_embedding;
  std::vector<LstmCellVars<T>> enc_fwd, enc_bwd, par_fwd, par_bwd, dec;
  Var attn_bilinear, out_combine, out_project;
  struct BridgeVars {
    Var weight, bias;
  };
  std::vector<BridgeVars> bridge_h, bridge_c;

  std::map<std::string, Var> by_name;
};

template <typename T>
ModelVars<T> lease_model(Tape<T>& tape, const ModelParameters<T>& params) {
  ModelVars<T> v;
  v.dims = params.dims;
  // lease in visit order so by_name lines up with for_each_parameter
  std::map<std::string, typename Tape<T>::Var> names;
  params.for_each_parameter([&](const std::string& name, const Tensor<T>& t) {
    names[name] = tape.lease(t);
  });
  v.by_name = names;

  const auto pick = [&](const std::string& name) { return names.at(name); };
  v.src_embedding = pick("src_embedding");
  v.tgt_embedding = pick("tgt_embedding");
  const auto stack_from_names = [&](const char* prefix,
                                    const std::vector<LstmCellParams<T>>& src,
                                    std::vector<LstmCellVars<T>>& dst) {
    for (std::size_t l = 0; l < src.size(); ++l) {
      const std::string base = std::string(prefix) + "." + std::to_string(l);
      dst.push_back(LstmCellVars<T>{pick(base + ".w_input"), pick(base + ".w_hidden"),
                                    pick(base + ".bias"), src[l].hidden_size()});
    }
  };
  stack_from_names("enc_fwd", params.enc_fwd, v.enc_fwd);
  stack_from_names("enc_bwd", params.enc_bwd, v.enc_bwd);
  stack_from_names("par_fwd", params.par_fwd, v.par_fwd);
  stack_from_names("par_bwd", params.par_bwd, v.par_bwd);
  stack_from_names("dec", params.dec, v.dec);
  if (params.dims.uses_attention()) v.attn_bilinear = pick("attn_bilinear");
  v.out_combine = pick("out_combine");
  v.out_project = pick("out_project");
  for (std::size_t l = 0; l < params.bridge_h.size(); ++l) {
    const std::string base = "bridge_h." + std::to_string(l);
    v.bridge_h.push_back({pick(base + ".weight"), pick(base + ".bias")});
  }
  for (std::size_t l = 0; l < params.bridge_c.size(); ++l) {
    const std::string base = "bridge_c." + std::to_string(l);
    v.bridge_c.push_back({pick(base + ".weight"), pick(base + ".bias")});
  }
  return v;
}

// Reads back d(loss)/d(parameter) for every leased parameter.
template <typename T>
GradientSet<T> collect_gradients(const Tape<T>& tape, const ModelVars<T>& vars) {
  GradientSet<T> grads;
  for (const auto& [name, var] : vars.by_name) {
    grads[name] = tape.grad(var);
  }
  return grads;
}

}  // namespace nqg
