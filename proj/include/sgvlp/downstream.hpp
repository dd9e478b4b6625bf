#pragma once

// Fine-tuning heads: grounding as classification over proposals, an
// auto-regressive caption decoder, and answer classification with a
// question-object contrastive term.

#include "sgvlp/proposals.hpp"
#include "sgvlp/sg_mcl.hpp"
#include "sgvlp/text_encoder.hpp"

#include <stdexcept>
#include <vector>

namespace sgvlp {

/// Mean of each consecutive block of `m` rows: (items * m) x C -> items x C.
template <class T>
Var<T> segment_mean(const Var<T>& x, int items, int m) {
  if (x.rows() != static_cast<Eigen::Index>(items) * m) throw std::invalid_argument("segment_mean: rows");
  std::vector<ad::RowTerm<T>> terms;
  terms.reserve(static_cast<std::size_t>(items * m));
  for (int b = 0; b < items; ++b) {
    for (int j = 0; j < m; ++j) terms.push_back({b, b * m + j, T(1) / static_cast<T>(m)});
  }
  return ad::combine_rows(x, terms, items);
}

// ---------------------------------------------------------------------------
// Grounding

struct GroundingTarget {
  std::vector<bool> multi_hot;
  std::vector<double> distribution;
  bool any() const { return std::find(multi_hot.begin(), multi_hot.end(), true) != multi_hot.end(); }
};

/// Positives are proposals with IoU strictly greater than 0.25 to the
/// referred box; the distribution spreads mass evenly over them.
inline GroundingTarget grounding_target(const ProposalSet& ps, const Aabb& referred) {
  GroundingTarget t;
  int count = 0;
  for (const auto& p : ps.proposals) {
    const bool pos = iou_aabb(p.box, referred) > kPositiveIou;
    t.multi_hot.push_back(pos);
    count += pos ? 1 : 0;
  }
  t.distribution.assign(t.multi_hot.size(), 0.0);
  for (std::size_t i = 0; i < t.multi_hot.size(); ++i) {
    if (t.multi_hot[i]) t.distribution[i] = 1.0 / count;
  }
  return t;
}

template <class T>
class GroundingHead {
 public:
  GroundingHead() = default;
  GroundingHead(ParamStore<T>& store, const std::string& name, int hidden)
      : mlp_(store, name, ParamGroup::kHead, {hidden, hidden, hidden, 1}) {}

  /// Fused features stacked (items * m) x C -> items x m scores.
  Var<T> operator()(const Var<T>& fused, int items, int m) const {
    return ad::reshape(mlp_(fused), items, m);
  }

 private:
  Mlp<T> mlp_;
};

template <class T>
Var<T> grounding_loss(const Var<T>& scores, const std::vector<GroundingTarget>& targets) {
  if (static_cast<Eigen::Index>(targets.size()) != scores.rows()) {
    throw std::invalid_argument("grounding_loss: target count");
  }
  Matrix<T> dist(scores.rows(), scores.cols());
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (static_cast<Eigen::Index>(targets[r].distribution.size()) != scores.cols()) {
      throw std::invalid_argument("grounding_loss: target width");
    }
    if (!targets[r].any()) throw std::invalid_argument("grounding_loss: target without positives");
    for (Eigen::Index c = 0; c < scores.cols(); ++c) dist(r, c) = static_cast<T>(targets[r].distribution[c]);
  }
  return ad::soft_cross_entropy(scores, dist);
}

/// Index of the highest score in row `r` (lowest index on ties).
template <class T>
int argmax_row(const Matrix<T>& scores, Eigen::Index r) {
  Eigen::Index best = 0;
  scores.row(r).maxCoeff(&best);
  return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// Captioning

inline constexpr int kMaxCaptionTokens = 16;

/// Teacher forcing pair: input = sos w_1 .. w_n, target = w_1 .. w_n eos.
struct CaptionSample {
  std::vector<int> input;
  std::vector<int> target;
};

inline CaptionSample make_caption_sample(const std::vector<std::string>& words, const Vocabulary& vocab) {
  CaptionSample s;
  s.input.push_back(vocab.id("sos"));
  for (const auto& w : words) {
    s.input.push_back(vocab.id(w));
    s.target.push_back(vocab.id(w));
  }
  s.target.push_back(vocab.id("eos"));
  return s;
}

/// GRU decoder whose initial state is tanh(W f + b) of the object feature.
template <class T>
class CaptionDecoder {
 public:
  CaptionDecoder() = default;
  CaptionDecoder(ParamStore<T>& store, const std::string& name, int hidden, int vocab_size,
                 int embedding_dim)
      : vocab_size_(vocab_size) {
    const auto g = ParamGroup::kHead;
    embedding_ = store.add_uniform(name + ".embedding", g, vocab_size, embedding_dim, 0.1);
    init_ = Linear<T>(store, name + ".init", g, hidden, hidden);
    gru_ = GruCell<T>(store, name + ".gru", g, embedding_dim, hidden);
    out_ = Linear<T>(store, name + ".out", g, hidden, vocab_size);
  }

  Var<T> initial_state(const Var<T>& object_feats) const { return ad::tanh(init_(object_feats)); }

  /// Teacher-forced logits, time-major: row t * U + u holds the prediction
  /// after reading inputs[u][0..t]. Rows past a sequence's length are junk.
  Var<T> teacher_forced(const Var<T>& object_feats, const TokenBatch& inputs) const {
    const int U = inputs.batch;
    if (object_feats.rows() != U) throw std::invalid_argument("caption decoder: batch mismatch");
    Var<T> gx = gru_.project_input(ad::gather_rows(embedding_, inputs.ids));
    Var<T> h = initial_state(object_feats);
    std::vector<Var<T>> states;
    std::vector<int> rows(static_cast<std::size_t>(U));
    for (int t = 0; t < inputs.max_len; ++t) {
      for (int u = 0; u < U; ++u) rows[u] = inputs.row(u, t);
      h = gru_.step(ad::gather_rows(gx, rows), h);
      states.push_back(h);
    }
    return out_(ad::concat_rows(states));
  }

  /// Targets aligned with teacher_forced() rows; -1 past the end.
  static std::vector<int> time_major_targets(const std::vector<CaptionSample>& samples, int max_len) {
    const auto U = samples.size();
    std::vector<int> t(U * static_cast<std::size_t>(max_len), -1);
    for (std::size_t u = 0; u < U; ++u) {
      for (std::size_t k = 0; k < samples[u].target.size(); ++k) t[k * U + u] = samples[u].target[k];
    }
    return t;
  }

  /// Logits for the token following `prefix` (sos is prepended).
  Var<T> next_logits(const Var<T>& object_feat, const std::vector<int>& prefix, int sos) const {
    std::vector<int> seq{sos};
    seq.insert(seq.end(), prefix.begin(), prefix.end());
    Var<T> h = initial_state(object_feat);
    Var<T> gx = gru_.project_input(ad::gather_rows(embedding_, seq));
    for (std::size_t t = 0; t < seq.size(); ++t) h = gru_.step(ad::slice_rows(gx, static_cast<Eigen::Index>(t), 1), h);
    return out_(h);
  }

  /// Greedy decoding until eos or `max_tokens`; eos is not included.
  std::vector<int> greedy(const Var<T>& object_feat, int sos, int eos,
                          int max_tokens = kMaxCaptionTokens) const {
    ad::NoGradGuard guard;
    std::vector<int> out;
    Var<T> h = initial_state(object_feat);
    int token = sos;
    for (int step = 0; step < max_tokens; ++step) {
      Var<T> gx = gru_.project_input(ad::gather_rows(embedding_, std::vector<int>{token}));
      h = gru_.step(gx, h);
      token = argmax_row(out_(h).value(), 0);
      if (token == eos) break;
      out.push_back(token);
    }
    return out;
  }

  int vocab_size() const { return vocab_size_; }

 private:
  int vocab_size_ = 0;
  Var<T> embedding_;
  Linear<T> init_;
  GruCell<T> gru_;
  Linear<T> out_;
};

template <class T>
Var<T> caption_loss(const Var<T>& logits, const std::vector<int>& targets) {
  return ad::cross_entropy(logits, targets);
}

// ---------------------------------------------------------------------------
// Question answering

template <class T>
struct QaOutputs {
  Var<T> answer_logits;  // B x |answers|
  Var<T> relevance;      // B x M, cosine similarity / tau
};

template <class T>
class QaHead {
 public:
  QaHead() = default;
  QaHead(ParamStore<T>& store, const std::string& name, int hidden, int answers)
      : mlp_(store, name, ParamGroup::kHead, {hidden, hidden, answers}) {}

  QaOutputs<T> operator()(const Var<T>& fused, const Var<T>& nodes, const Var<T>& question,
                          int items, int m, T tau = T(kDefaultTau)) const {
    QaOutputs<T> out;
    out.answer_logits = mlp_(segment_mean(fused, items, m));
    Var<T> sims = word_object_similarity(nodes, question, items, m, 1);  // (items * m) x 1
    out.relevance = ad::scale(ad::reshape(sims, items, m), T(1) / tau);
    return out;
  }

 private:
  Mlp<T> mlp_;
};

/// Binary cross-entropy of every answer logit against the one-hot answer.
template <class T>
Var<T> answer_loss(const Var<T>& logits, const std::vector<int>& answers) {
  if (static_cast<Eigen::Index>(answers.size()) != logits.rows()) {
    throw std::invalid_argument("answer_loss: target count");
  }
  Matrix<T> target = Matrix<T>::Zero(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < answers.size(); ++r) target(r, answers[r]) = T(1);
  const Matrix<T> all = Matrix<T>::Ones(logits.rows(), logits.cols());
  return ad::bce_with_logits(logits, target, all);
}

template <class T>
Var<T> relevance_loss(const Var<T>& relevant_nodes, const Var<T>& questions, T tau = T(kDefaultTau)) {
  return info_nce(relevant_nodes, questions, tau, "relevance_loss");
}

}  // namespace sgvlp
