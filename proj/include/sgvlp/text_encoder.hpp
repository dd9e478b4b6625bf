#pragma once

// Closed-vocabulary tokenization and the recurrent text encoder producing
// per-word features F_w and a sentence feature F_s.

#include "sgvlp/nn.hpp"
#include "sgvlp/scene_synth.hpp"

#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace sgvlp {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary() : Vocabulary(closed_vocabulary_words()) {}

  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    if (words_.size() < 2 || words_[kPad] != "pad" || words_[kUnk] != "unk") {
      throw std::invalid_argument("vocabulary must start with 'pad', 'unk'");
    }
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!ids_.emplace(words_[i], static_cast<int>(i)).second) {
        throw std::invalid_argument("duplicate vocabulary word: " + words_[i]);
      }
    }
  }

  int size() const { return static_cast<int>(words_.size()); }
  int id(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& word) const { return ids_.count(word) > 0; }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& words() const { return words_; }

  /// One word per line; line number is the id.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
    for (const auto& w : words_) out << w << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read vocabulary: " + path);
    std::vector<std::string> words;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) words.push_back(line);
    }
    return Vocabulary(std::move(words));
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

inline std::vector<int> tokenize(const std::vector<std::string>& words, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.id(w));
  return ids;
}

/// Padded B x L id matrix stored row-major (row b, column t at b * L + t).
struct TokenBatch {
  int batch = 0;
  int max_len = 0;
  std::vector<int> ids;
  std::vector<int> lengths;

  int at(int b, int t) const { return ids[static_cast<std::size_t>(b * max_len + t)]; }
  int& at(int b, int t) { return ids[static_cast<std::size_t>(b * max_len + t)]; }
  int row(int b, int t) const { return b * max_len + t; }
};

/// Pads to the longest sequence (or `min_len`, if larger).
inline TokenBatch make_token_batch(const std::vector<std::vector<int>>& seqs, int min_len = 0) {
  TokenBatch tb;
  tb.batch = static_cast<int>(seqs.size());
  tb.max_len = min_len;
  for (const auto& s : seqs) tb.max_len = std::max(tb.max_len, static_cast<int>(s.size()));
  tb.ids.assign(static_cast<std::size_t>(tb.batch * tb.max_len), Vocabulary::kPad);
  for (int b = 0; b < tb.batch; ++b) {
    tb.lengths.push_back(static_cast<int>(seqs[b].size()));
    for (std::size_t t = 0; t < seqs[b].size(); ++t) tb.at(b, static_cast<int>(t)) = seqs[b][t];
  }
  return tb;
}

template <class T>
struct TextFeatures {
  /// (B * L) x C, row b * L + t; rows at t >= lengths[b] are zero.
  Var<T> words;
  /// B x C, the recurrent state at position lengths[b] - 1.
  Var<T> sentence;
};

struct TextEncoderConfig {
  int vocab_size = 0;
  int embedding_dim = 300;
  int hidden = 256;
};

/// Learned embedding table followed by a unidirectional GRU.
template <class T>
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ParamStore<T>& store, const std::string& name, const TextEncoderConfig& cfg)
      : cfg_(cfg) {
    embedding_ = store.add_uniform(name + ".embedding", ParamGroup::kText, cfg.vocab_size,
                                   cfg.embedding_dim, 0.1);
    gru_ = GruCell<T>(store, name + ".gru", ParamGroup::kText, cfg.embedding_dim, cfg.hidden);
  }

  TextFeatures<T> encode(const TokenBatch& tb) const {
    for (int b = 0; b < tb.batch; ++b) {
      if (tb.lengths[b] < 1) throw std::invalid_argument("encode_text: zero-length sequence");
      if (tb.lengths[b] > tb.max_len) throw std::invalid_argument("encode_text: length > L");
    }
    for (int id : tb.ids) {
      if (id < 0 || id >= cfg_.vocab_size) throw std::invalid_argument("encode_text: id out of range");
    }
    const int B = tb.batch;
    const int L = tb.max_len;
    const int H = cfg_.hidden;
    Var<T> emb = ad::gather_rows(embedding_, tb.ids);
    Var<T> gx = gru_.project_input(emb);
    Var<T> h(Matrix<T>::Zero(B, H));
    std::vector<Var<T>> states;
    states.reserve(static_cast<std::size_t>(L));
    std::vector<int> step_rows(static_cast<std::size_t>(B));
    for (int t = 0; t < L; ++t) {
      for (int b = 0; b < B; ++b) step_rows[b] = tb.row(b, t);
      h = gru_.step(ad::gather_rows(gx, step_rows), h);
      states.push_back(h);
    }
    Var<T> time_major = ad::concat_rows(states);  // row t * B + b
    std::vector<ad::RowTerm<T>> terms;
    std::vector<int> last;
    for (int b = 0; b < B; ++b) {
      for (int t = 0; t < tb.lengths[b]; ++t) terms.push_back({tb.row(b, t), t * B + b, T(1)});
      last.push_back(tb.row(b, tb.lengths[b] - 1));
    }
    TextFeatures<T> out;
    out.words = ad::combine_rows(time_major, terms, static_cast<Eigen::Index>(B) * L);
    out.sentence = ad::gather_rows(out.words, last);
    return out;
  }

  const Var<T>& embedding() const { return embedding_; }
  const TextEncoderConfig& config() const { return cfg_; }

 private:
  TextEncoderConfig cfg_;
  Var<T> embedding_;
  GruCell<T> gru_;
};

}  // namespace sgvlp
