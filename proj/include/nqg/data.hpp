// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "nqg/errors.hpp"
#include "nqg/rng.hpp"
#include "nqg/stopwords.hpp"
#include "nqg/tensor.hpp"
#include "nqg/tokenize.hpp"
#include "nqg/training.hpp"
#include "nqg/vocab.hpp"

namespace nqg {

using json = nlohmann::json;

// One extracted question-answer annotation.
struct SquadRecord {
  std::string article;
  std::string context;
  std::string question;
  std::string answer_text;
  std::size_t answer_start = 0;
};

struct IngestResult {
  std::vector<SquadRecord> records;
  std::size_t rejected = 0;  // answer offsets outside the context
};

// Reads the v1 reading-comprehension JSON layout:
//   data -> [ { title, paragraphs -> [ { context, qas -> [ { question,
//   answers -> [ { text, answer_start } ] } ] } ] } ]
// One record per annotation, first answer used. Records whose answer offset
// falls outside the context are dropped and counted.
inline IngestResult ingest_squad(const json& doc) {
  IngestResult result;
  const auto fail = [](const std::string& path, const std::string& what) {
    throw ParseError("squad schema violation at " + path + ": " + what);
  };
  if (!doc.is_object() || !doc.contains("data") || !doc["data"].is_array()) {
    fail("$", "expected an object with a 'data' array");
  }
  for (std::size_t a = 0; a < doc["data"].size(); ++a) {
    const json& article = doc["data"][a];
    const std::string apath = "data[" + std::to_string(a) + "]";
    if (!article.is_object() || !article.contains("paragraphs") ||
        !article["paragraphs"].is_array()) {
      fail(apath, "expected an object with a 'paragraphs' array");
    }
    const std::string title = article.value("title", "article-" + std::to_string(a));
    for (std::size_t p = 0; p < article["paragraphs"].size(); ++p) {
      const json& para = article["paragraphs"][p];
      const std::string ppath = apath + ".paragraphs[" + std::to_string(p) + "]";
      if (!para.is_object() || !para.contains("context") ||
          !para["context"].is_string() || !para.contains("qas") ||
          !para["qas"].is_array()) {
        fail(ppath, "expected 'context' string and 'qas' array");
      }
      const std::string context = para["context"].get<std::string>();
      for (std::size_t q = 0; q < para["qas"].size(); ++q) {
        const json& qa = para["qas"][q];
        const std::string qpath = ppath + ".qas[" + std::to_string(q) + "]";
        if (!qa.is_object() || !qa.contains("question") ||
            !qa["question"].is_string() || !qa.contains("answers") ||
            !qa["answers"].is_array() || qa["answers"].empty()) {
          fail(qpath, "expected 'question' string and non-empty 'answers' array");
        }
        const json& ans = qa["answers"][0];
        if (!ans.is_object() || !ans.contains("text") || !ans["text"].is_string() ||
            !ans.contains("answer_start") || !ans["answer_start"].is_number()) {
          fail(qpath + ".answers[0]", "expected 'text' and numeric 'answer_start'");
        }
        SquadRecord rec;
        rec.article = title;
        rec.context = context;
        rec.question = qa["question"].get<std::string>();
        rec.answer_text = ans["text"].get<std::string>();
        const long long start = ans["answer_start"].get<long long>();
        if (start < 0 || static_cast<std::size_t>(start) >= context.size()) {
          ++result.rejected;
          continue;
        }
        rec.answer_start = static_cast<std::size_t>(start);
        result.records.push_back(std::move(rec));
      }
    }
  }
  return result;
}

// Returns the tokens of the sentence containing [answer_start,
// answer_start + answer_len); when the span crosses sentence boundaries the
// covered sentences are concatenated.
inline std::vector<std::string> locate_answer_sentence(
    std::string_view context,
    const std::vector<std::pair<std::size_t, std::size_t>>& spans,
    std::size_t answer_start, std::size_t answer_len) {
  const std::size_t answer_end = answer_start + std::max<std::size_t>(answer_len, 1);
  std::size_t first = spans.size(), last = spans.size();
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto [b, e] = spans[i];
    if (answer_start < e && answer_end > b) {
      if (first == spans.size()) first = i;
      last = i;
    }
  }
  if (first == spans.size()) {
    throw DegenerateInputError("answer offset outside every sentence span");
  }
  const std::size_t begin = spans[first].first;
  const std::size_t end = spans[last].second;
  return tokenize(context.substr(begin, end - begin));
}

// The training/eval unit. Sentence tokens carry the boundary markers and all
// tokens are lowercase; the paragraph is truncated to the configured limit.
struct SentenceQuestionPair {
  std::string article_id;
  std::vector<std::string> sentence;  // <sos> ... <eos>
  std::vector<std::string> question;
  std::vector<std::string> paragraph;  // may be empty
  std::size_t answer_start = 0;        // provenance only
};

namespace detail {

inline std::vector<std::string> lowercase_all(std::vector<std::string> tokens) {
  for (std::string& t : tokens) t = lowercase(t);
  return tokens;
}

inline std::vector<std::string> with_markers(std::vector<std::string> tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size() + 2);
  out.push_back(Vocabulary::sos_token());
  for (std::string& t : tokens) out.push_back(std::move(t));
  out.push_back(Vocabulary::eos_token());
  return out;
}

inline std::vector<std::string> strip_markers(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  for (const std::string& t : tokens) {
    if (t == Vocabulary::sos_token() || t == Vocabulary::eos_token()) continue;
    out.push_back(t);
  }
  return out;
}

}  // namespace detail

// Builds pairs from extracted records: sentence located by answer offset,
// everything lowercased, markers added, paragraph truncated at the limit.
inline std::vector<SentenceQuestionPair> build_pairs(
    const std::vector<SquadRecord>& records, std::size_t paragraph_limit) {
  std::vector<SentenceQuestionPair> pairs;
  pairs.reserve(records.size());
  for (const SquadRecord& rec : records) {
    const auto spans = split_sentences(rec.context);
    std::vector<std::string> sentence;
    try {
      sentence = locate_answer_sentence(rec.context, spans, rec.answer_start,
                                        rec.answer_text.size());
    } catch (const DegenerateInputError&) {
      continue;
    }
    SentenceQuestionPair pair;
    pair.article_id = rec.article;
    pair.sentence = detail::with_markers(detail::lowercase_all(std::move(sentence)));
    pair.question = detail::lowercase_all(tokenize(rec.question));
    pair.paragraph = detail::lowercase_all(tokenize(rec.context));
    if (pair.paragraph.size() > paragraph_limit) pair.paragraph.resize(paragraph_limit);
    pair.answer_start = rec.answer_start;
    if (pair.question.empty()) continue;
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

// True when the sentence and question share at least one non-stopword
// (markers excluded).
inline bool shares_non_stopword(const SentenceQuestionPair& pair,
                                const std::unordered_set<std::string>& stop) {
  std::unordered_set<std::string> sentence_words;
  for (const std::string& t : detail::strip_markers(pair.sentence)) {
    if (!stop.count(t)) sentence_words.insert(t);
  }
  for (const std::string& t : pair.question) {
    if (!stop.count(t) && sentence_words.count(t)) return true;
  }
  return false;
}

inline std::vector<SentenceQuestionPair> prune_pairs(
    std::vector<SentenceQuestionPair> pairs,
    const std::unordered_set<std::string>& stop = stopwords()) {
  std::vector<SentenceQuestionPair> kept;
  kept.reserve(pairs.size());
  for (auto& p : pairs) {
    if (shares_non_stopword(p, stop)) kept.push_back(std::move(p));
  }
  return kept;
}

// Fraction of question tokens that are non-stopwords found in the sentence:
// |{distinct non-stopword question tokens present in the sentence}| divided
// by the total question token count.
inline double overlap_percentage(const SentenceQuestionPair& pair,
                                 const std::unordered_set<std::string>& stop = stopwords()) {
  if (pair.question.empty()) {
    throw DegenerateInputError("overlap_percentage: empty question");
  }
  std::unordered_set<std::string> sentence_words;
  for (const std::string& t : detail::strip_markers(pair.sentence)) {
    sentence_words.insert(t);
  }
  std::unordered_set<std::string> shared;
  for (const std::string& t : pair.question) {
    if (!stop.count(t) && sentence_words.count(t)) shared.insert(t);
  }
  return static_cast<double>(shared.size()) / static_cast<double>(pair.question.size());
}

struct ArticleSplit {
  std::set<std::string> train, dev, test;
};

// Seeded shuffle of the article ids, then an 80/10/10 prefix split.
inline ArticleSplit split_articles(const std::vector<std::string>& articles,
                                   std::uint64_t seed) {
  std::vector<std::string> unique(articles);
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  if (unique.size() < 3) {
    throw ConfigError("split_articles: need at least 3 articles");
  }
  Rng rng(seed);
  rng.shuffle(unique);
  const std::size_t n = unique.size();
  const std::size_t n_train = (n * 8) / 10;
  const std::size_t n_dev = n / 10;
  ArticleSplit split;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) {
      split.train.insert(unique[i]);
    } else if (i < n_train + n_dev) {
      split.dev.insert(unique[i]);
    } else {
      split.test.insert(unique[i]);
    }
  }
  return split;
}

// ---- corpus statistics ----

struct SplitStats {
  std::string name;
  std::size_t pairs = 0;      // after pruning
  std::size_t raw_pairs = 0;  // before pruning
  double mean_sentence_tokens = 0;  // markers excluded
  double mean_question_tokens = 0;
  double questions_per_sentence = 0;
  std::array<std::size_t, 10> overlap_histogram{};  // over raw pairs
  std::size_t zero_overlap_pairs = 0;               // exact zero, over raw pairs

  json to_json() const {
    json j;
    j["name"] = name;
    j["pairs"] = pairs;
    j["raw_pairs"] = raw_pairs;
    j["mean_sentence_tokens"] = mean_sentence_tokens;
    j["mean_question_tokens"] = mean_question_tokens;
    j["questions_per_sentence"] = questions_per_sentence;
    j["overlap_histogram"] = overlap_histogram;
    j["zero_overlap_pairs"] = zero_overlap_pairs;
    return j;
  }
};

struct CorpusStats {
  std::vector<SplitStats> splits;

  json to_json() const {
    json j = json::array();
    for (const auto& s : splits) j.push_back(s.to_json());
    return json{{"splits", j}};
  }
};

// Statistics for one split. `raw` holds the pre-pruning pairs (the overlap
// histogram is computed over them); `processed` the pairs that survived.
inline SplitStats compute_split_stats(const std::string& name,
                                      const std::vector<SentenceQuestionPair>& raw,
                                      const std::vector<SentenceQuestionPair>& processed) {
  SplitStats s;
  s.name = name;
  s.raw_pairs = raw.size();
  s.pairs = processed.size();
  for (const auto& p : raw) {
    const double ov = overlap_percentage(p);
    const std::size_t bin = std::min<std::size_t>(9, static_cast<std::size_t>(ov * 10));
    ++s.overlap_histogram[bin];
    if (ov == 0.0) ++s.zero_overlap_pairs;
  }
  if (!processed.empty()) {
    double sent_tokens = 0, q_tokens = 0;
    std::set<std::vector<std::string>> distinct_sentences;
    for (const auto& p : processed) {
      sent_tokens += static_cast<double>(detail::strip_markers(p.sentence).size());
      q_tokens += static_cast<double>(p.question.size());
      distinct_sentences.insert(p.sentence);
    }
    s.mean_sentence_tokens = sent_tokens / static_cast<double>(processed.size());
    s.mean_question_tokens = q_tokens / static_cast<double>(processed.size());
    s.questions_per_sentence = static_cast<double>(processed.size()) /
                               static_cast<double>(distinct_sentences.size());
  }
  return s;
}

inline SplitStats compute_stats(const std::string& name,
                                const std::vector<SentenceQuestionPair>& pairs) {
  return compute_split_stats(name, pairs, pairs);
}

// ---- pair file io ----
//
// One JSON object per line: article_id (string), sentence / question
// (token arrays), paragraph (optional token array). Markers are stripped on
// save and re-added on load.

inline void save_pairs(std::ostream& out, const std::vector<SentenceQuestionPair>& pairs) {
  for (const auto& p : pairs) {
    json j;
    j["article_id"] = p.article_id;
    j["sentence"] = detail::strip_markers(p.sentence);
    j["question"] = p.question;
    if (!p.paragraph.empty()) j["paragraph"] = p.paragraph;
    out << j.dump() << '\n';
  }
}

inline void save_pairs_file(const std::string& path,
                            const std::vector<SentenceQuestionPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write pair file: " + path);
  save_pairs(out, pairs);
}

inline std::vector<SentenceQuestionPair> load_pairs(std::istream& in) {
  std::vector<SentenceQuestionPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("pair file line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("article_id") || !j.contains("sentence") ||
        !j.contains("question")) {
      throw ParseError("pair file line " + std::to_string(lineno) +
                       ": expected article_id, sentence, question");
    }
    SentenceQuestionPair p;
    p.article_id = j["article_id"].get<std::string>();
    p.sentence = detail::with_markers(j["sentence"].get<std::vector<std::string>>());
    p.question = j["question"].get<std::vector<std::string>>();
    if (j.contains("paragraph")) {
      p.paragraph = j["paragraph"].get<std::vector<std::string>>();
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

inline std::vector<SentenceQuestionPair> load_pairs_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read pair file: " + path);
  return load_pairs(in);
}

// ---- vocabulary / encoding ----

// Source vocabulary counts sentence and paragraph tokens, target vocabulary
// counts question tokens.
inline std::pair<Vocabulary, Vocabulary> build_vocabularies(
    const std::vector<SentenceQuestionPair>& pairs, std::size_t src_cap,
    std::size_t tgt_cap) {
  std::vector<std::vector<std::string>> src_seqs, tgt_seqs;
  src_seqs.reserve(pairs.size() * 2);
  tgt_seqs.reserve(pairs.size());
  for (const auto& p : pairs) {
    src_seqs.push_back(p.sentence);
    if (!p.paragraph.empty()) src_seqs.push_back(p.paragraph);
    tgt_seqs.push_back(p.question);
  }
  return {build_vocab(src_seqs, src_cap), build_vocab(tgt_seqs, tgt_cap)};
}

// Maps a pair onto ids: source keeps its markers, target gets a closing EOS.
inline EncodedPair encode_pair(const SentenceQuestionPair& pair,
                               const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                               bool with_paragraph) {
  EncodedPair e;
  e.source = src_vocab.encode(pair.sentence);
  e.target = tgt_vocab.encode(pair.question);
  e.target.push_back(Vocabulary::eos_id);
  if (with_paragraph && !pair.paragraph.empty()) {
    e.paragraph = src_vocab.encode(pair.paragraph);
  }
  return e;
}

inline std::vector<EncodedPair> encode_pairs(
    const std::vector<SentenceQuestionPair>& pairs, const Vocabulary& src_vocab,
    const Vocabulary& tgt_vocab, bool with_paragraph) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back(encode_pair(p, src_vocab, tgt_vocab, with_paragraph));
  }
  return out;
}

// ---- pretrained embeddings ----

template <typename T>
struct EmbeddingMatrix {
  Tensor<T> matrix;                 // [vocab x dim]
  std::vector<bool> pretrained;     // per-row provenance
};

// Loads a text embedding stream of "token v1 .. vdim" lines. Lines are split
// from the right: the last `dim` fields are the values, everything before is
// the token (which may itself contain spaces). Vocabulary tokens missing from
// the stream (and the reserved tokens) get uniform random rows.
template <typename T>
EmbeddingMatrix<T> load_glove(std::istream& in, const Vocabulary& vocab,
                              std::size_t dim, Rng& rng) {
  EmbeddingMatrix<T> emb;
  emb.matrix = Tensor<T>::uniform({vocab.size(), dim}, rng, T(-0.1), T(0.1));
  emb.pretrained.assign(vocab.size(), false);

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    // find the split point: dim fields from the right
    std::size_t pos = line.size();
    for (std::size_t k = 0; k < dim; ++k) {
      const std::size_t space = line.find_last_of(' ', pos == 0 ? 0 : pos - 1);
      if (space == std::string::npos) {
        throw ParseError("embedding line " + std::to_string(lineno) +
                         ": fewer than " + std::to_string(dim) + " value fields");
      }
      pos = space;
    }
    const std::string token = line.substr(0, pos);
    if (!vocab.contains(token)) continue;
    const int id = vocab.id(token);
    if (id < static_cast<int>(Vocabulary::reserved_count)) continue;
    std::istringstream values(line.substr(pos + 1));
    for (std::size_t k = 0; k < dim; ++k) {
      double v;
      if (!(values >> v)) {
        throw ParseError("embedding line " + std::to_string(lineno) +
                         ": malformed value field " + std::to_string(k));
      }
      emb.matrix.at(static_cast<std::size_t>(id), k) = static_cast<T>(v);
    }
    std::string extra;
    if (values >> extra) {
      throw ParseError("embedding line " + std::to_string(lineno) +
                       ": trailing fields after " + std::to_string(dim) + " values");
    }
    emb.pretrained[static_cast<std::size_t>(id)] = true;
  }
  return emb;
}

// ---- end-to-end preprocessing ----

struct PreprocessResult {
  std::vector<SentenceQuestionPair> train, dev, test;
  CorpusStats stats;
  std::size_t rejected_records = 0;
};

// Full pipeline from parsed reading-comprehension documents to split,
// pruned pair sets plus statistics.
inline PreprocessResult preprocess_squad(const std::vector<json>& docs,
                                         std::size_t paragraph_limit,
                                         std::uint64_t seed) {
  std::vector<SquadRecord> records;
  std::size_t rejected = 0;
  for (const json& doc : docs) {
    IngestResult r = ingest_squad(doc);
    rejected += r.rejected;
    records.insert(records.end(), r.records.begin(), r.records.end());
  }
  std::vector<SentenceQuestionPair> pairs = build_pairs(records, paragraph_limit);

  std::vector<std::string> articles;
  for (const auto& p : pairs) articles.push_back(p.article_id);
  ArticleSplit split = split_articles(articles, seed);

  const auto pick = [&](const std::set<std::string>& ids) {
    std::vector<SentenceQuestionPair> out;
    for (const auto& p : pairs) {
      if (ids.count(p.article_id)) out.push_back(p);
    }
    return out;
  };

  PreprocessResult result;
  result.rejected_records = rejected;
  std::vector<SentenceQuestionPair> raw_train = pick(split.train);
  std::vector<SentenceQuestionPair> raw_dev = pick(split.dev);
  std::vector<SentenceQuestionPair> raw_test = pick(split.test);
  result.train = prune_pairs(raw_train);
  result.dev = prune_pairs(raw_dev);
  result.test = prune_pairs(raw_test);
  result.stats.splits.push_back(compute_split_stats("train", raw_train, result.train));
  result.stats.splits.push_back(compute_split_stats("dev", raw_dev, result.dev));
  result.stats.splits.push_back(compute_split_stats("test", raw_test, result.test));
  return result;
}

}  // namespace nqg
