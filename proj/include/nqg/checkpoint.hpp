// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nqg/errors.hpp"
#include "nqg/model.hpp"
#include "nqg/training.hpp"
#include "nqg/vocab.hpp"

namespace nqg {

using json = nlohmann::json;

// Checkpoint file layout, bit-exact:
//   bytes 0..3   magic "NQG1"
//   bytes 4..11  little-endian uint64: metadata byte length
//   metadata     UTF-8 JSON: config, epoch, dev perplexity, both vocabulary
//                token arrays, and a tensor manifest (name, shape, offset
//                into the data section)
//   data         each tensor as little-endian IEEE-754 float32 values,
//                row-major, in manifest order

inline json config_to_json(const TrainingConfig& c) {
  json j;
  j["embedding_dim"] = c.embedding_dim;
  j["hidden_size"] = c.hidden_size;
  j["layers"] = c.layers;
  j["dropout"] = c.dropout;
  j["initial_rate"] = c.initial_rate;
  j["halving_start_epoch"] = c.halving_start_epoch;
  j["batch_size"] = c.batch_size;
  j["clip_norm"] = c.clip_norm;
  j["max_epochs"] = c.max_epochs;
  j["seed"] = c.seed;
  j["variant"] = variant_name(c.variant);
  j["paragraph_limit"] = c.paragraph_limit;
  j["src_vocab_cap"] = c.src_vocab_cap;
  j["tgt_vocab_cap"] = c.tgt_vocab_cap;
  j["embedding_policy"] =
      c.embedding_policy == EmbeddingPolicy::fixed_pretrained ? "fixed_pretrained"
                                                              : "learned";
  j["precision"] = c.precision == Precision::double_prec ? "double" : "single";
  return j;
}

inline TrainingConfig config_from_json(const json& j) {
  TrainingConfig c;
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.hidden_size = j.at("hidden_size").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.initial_rate = j.at("initial_rate").get<double>();
  c.halving_start_epoch = j.at("halving_start_epoch").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.variant = variant_from_name(j.at("variant").get<std::string>());
  c.paragraph_limit = j.at("paragraph_limit").get<std::size_t>();
  c.src_vocab_cap = j.at("src_vocab_cap").get<std::size_t>();
  c.tgt_vocab_cap = j.at("tgt_vocab_cap").get<std::size_t>();
  c.embedding_policy = j.at("embedding_policy").get<std::string>() == "fixed_pretrained"
                           ? EmbeddingPolicy::fixed_pretrained
                           : EmbeddingPolicy::learned;
  c.precision = j.at("precision").get<std::string>() == "double"
                    ? Precision::double_prec
                    : Precision::single_prec;
  return c;
}

template <typename T>
struct Checkpoint {
  ModelParameters<T> params;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
  TrainingConfig config;
  std::size_t epoch = 0;
  double dev_perplexity = 0.0;
};

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32_le(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& ckpt) {
  json manifest = json::array();
  std::uint64_t offset = 0;
  ckpt.params.for_each_parameter([&](const std::string& name, const Tensor<T>& t) {
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape;
    entry["offset"] = offset;
    manifest.push_back(entry);
    offset += 4 * t.numel();
  });

  json meta;
  meta["config"] = config_to_json(ckpt.config);
  meta["epoch"] = ckpt.epoch;
  meta["dev_perplexity"] = ckpt.dev_perplexity;
  meta["source_vocab"] = ckpt.src_vocab.tokens();
  meta["target_vocab"] = ckpt.tgt_vocab.tokens();
  meta["tensors"] = manifest;
  const std::string meta_str = meta.dump();

  std::string out;
  out.reserve(12 + meta_str.size() + offset);
  out += "NQG1";
  detail::put_u64_le(out, meta_str.size());
  out += meta_str;
  ckpt.params.for_each_parameter([&](const std::string&, const Tensor<T>& t) {
    for (T v : t.data) detail::put_f32_le(out, static_cast<float>(v));
  });
  return out;
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "NQG1") != 0) {
    throw ParseError("checkpoint: bad magic");
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t meta_len = detail::get_u64_le(raw + 4);
  if (12 + meta_len > bytes.size()) {
    throw ParseError("checkpoint: truncated metadata");
  }
  json meta;
  try {
    meta = json::parse(bytes.substr(12, meta_len));
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: metadata parse failure: ") + e.what());
  }

  Checkpoint<T> ckpt;
  ckpt.config = config_from_json(meta.at("config"));
  ckpt.epoch = meta.at("epoch").get<std::size_t>();
  ckpt.dev_perplexity = meta.at("dev_perplexity").get<double>();
  ckpt.src_vocab = Vocabulary::from_tokens(
      meta.at("source_vocab").get<std::vector<std::string>>());
  ckpt.tgt_vocab = Vocabulary::from_tokens(
      meta.at("target_vocab").get<std::vector<std::string>>());

  ModelDims dims;
  dims.embedding_dim = ckpt.config.embedding_dim;
  dims.hidden_size = ckpt.config.hidden_size;
  dims.layers = ckpt.config.layers;
  dims.src_vocab = ckpt.src_vocab.size();
  dims.tgt_vocab = ckpt.tgt_vocab.size();
  dims.variant = ckpt.config.variant;
  ckpt.params = ModelParameters<T>::shaped(dims);

  const std::size_t data_base = 12 + meta_len;
  std::map<std::string, const json*> by_name;
  for (const json& entry : meta.at("tensors")) {
    by_name[entry.at("name").get<std::string>()] = &entry;
  }
  ckpt.params.for_each_parameter([&](const std::string& name, Tensor<T>& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ParseError("checkpoint: missing tensor " + name);
    }
    const json& entry = *it->second;
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != t.shape) {
      throw ParseError("checkpoint: shape mismatch for " + name);
    }
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    if (data_base + offset + 4 * t.numel() > bytes.size()) {
      throw ParseError("checkpoint: tensor data out of range for " + name);
    }
    const unsigned char* p = raw + data_base + offset;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      t.data[i] = static_cast<T>(detail::get_f32_le(p + 4 * i));
    }
  });
  return ckpt;
}

// Atomic write: serialize to a sibling temp file, then rename into place.
template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write checkpoint: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw UsageError("short write on checkpoint: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return deserialize_checkpoint<T>(bytes);
}

}  // namespace nqg
