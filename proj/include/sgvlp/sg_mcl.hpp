#pragma once

// Scene-graph guided multi-level contrastive alignment: word-object BCE,
// sentence-referred-object InfoNCE and scene-level InfoNCE.
//
// Layout conventions: a batch holds B items, each pairing one proposal set
// of M rows with one token sequence of L (padded) positions. Object rows are
// stacked item-major (row b * M + j), word rows likewise (row b * L + k).

#include "sgvlp/log.hpp"
#include "sgvlp/proposals.hpp"
#include "sgvlp/scene_synth.hpp"
#include "sgvlp/text_encoder.hpp"

#include <stdexcept>
#include <vector>

namespace sgvlp {

inline constexpr double kDefaultTau = 0.07;

/// s_jk for every (object j, word k) of every item, stacked to (B * M) x L.
template <class T>
struct WordObjectTargets {
  Matrix<T> similarity;
  Matrix<T> valid;
  int batch = 0;
  int m = 0;
  int max_len = 0;
};

/// s_jk = 1 iff word k is a name-span token whose category equals the
/// category of proposal j's matched object (IoU >= 0.25). With `soft`, the
/// positive entries carry iou_with_match instead of 1. Only name-span
/// columns inside the sequence length are valid.
template <class T>
WordObjectTargets<T> build_word_object_targets(const std::vector<const Utterance*>& utterances,
                                               const TokenBatch& tokens,
                                               const std::vector<const ProposalSet*>& psets,
                                               bool soft = false) {
  const int B = tokens.batch;
  if (static_cast<int>(utterances.size()) != B || static_cast<int>(psets.size()) != B) {
    throw std::invalid_argument("word-object targets: batch size mismatch");
  }
  const int M = B > 0 ? psets[0]->size() : 0;
  WordObjectTargets<T> t;
  t.batch = B;
  t.m = M;
  t.max_len = tokens.max_len;
  t.similarity = Matrix<T>::Zero(B * M, tokens.max_len);
  t.valid = Matrix<T>::Zero(B * M, tokens.max_len);
  for (int b = 0; b < B; ++b) {
    if (psets[b]->size() != M) throw std::invalid_argument("word-object targets: ragged M");
    for (const auto& span : utterances[b]->name_spans) {
      const int k = span.token_index;
      if (k < 0 || k >= tokens.lengths[b]) continue;
      for (int j = 0; j < M; ++j) {
        const Proposal& p = psets[b]->proposals[j];
        t.valid(b * M + j, k) = T(1);
        const bool positive = p.matched_gt_id.has_value() && p.iou_with_match >= kPositiveIou &&
                              p.semantic_target == static_cast<int>(span.object_category);
        if (positive) t.similarity(b * M + j, k) = soft ? static_cast<T>(p.iou_with_match) : T(1);
      }
    }
  }
  return t;
}

/// Per-item o_j . w_k for L2-normalized rows, stacked to (B * M) x L.
template <class T>
Var<T> word_object_similarity(const Var<T>& objects, const Var<T>& words, int batch, int m,
                              int max_len) {
  if (objects.rows() != static_cast<Eigen::Index>(batch) * m ||
      words.rows() != static_cast<Eigen::Index>(batch) * max_len) {
    throw std::invalid_argument("word_object_similarity: row layout");
  }
  Var<T> on = ad::l2_normalize_rows(objects);
  Var<T> wn = ad::l2_normalize_rows(words);
  std::vector<Var<T>> blocks;
  blocks.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    blocks.push_back(ad::matmul_bt(ad::slice_rows(on, b * m, m), ad::slice_rows(wn, b * max_len, max_len)));
  }
  return ad::concat_rows(blocks);
}

/// BCE of sigmoid(o . w) against s_jk over valid entries.
template <class T>
Var<T> word_object_loss(const Var<T>& objects, const Var<T>& words, const WordObjectTargets<T>& t) {
  if (t.valid.sum() == T(0)) {
    warn("word_object_loss: no valid word-object entries, returning 0");
    return Var<T>::scalar(T(0));
  }
  Var<T> sim = word_object_similarity(objects, words, t.batch, t.m, t.max_len);
  return ad::bce_with_logits(sim, t.similarity, t.valid);
}

/// -(1/B) sum_i log softmax_j(a_i . b_j / tau)[i] over L2-normalized rows.
/// A single pair has no negatives: returns 0 with a warning.
template <class T>
Var<T> info_nce(const Var<T>& anchors, const Var<T>& positives, T tau, const char* name = "info_nce") {
  if (anchors.rows() != positives.rows() || anchors.cols() != positives.cols()) {
    throw std::invalid_argument(std::string(name) + ": shape mismatch");
  }
  if (!(tau > T(0))) throw std::invalid_argument(std::string(name) + ": tau must be positive");
  const auto B = static_cast<int>(anchors.rows());
  if (B < 2) {
    warn(std::string(name) + ": batch of " + std::to_string(B) + " has no negatives, returning 0");
    return Var<T>::scalar(T(0));
  }
  Var<T> logits = ad::scale(
      ad::matmul_bt(ad::l2_normalize_rows(anchors), ad::l2_normalize_rows(positives)), T(1) / tau);
  std::vector<int> diag(static_cast<std::size_t>(B));
  for (int i = 0; i < B; ++i) diag[i] = i;
  return ad::cross_entropy(logits, diag);
}

template <class T>
Var<T> sentence_referred_object_loss(const Var<T>& referred_nodes, const Var<T>& sentences,
                                     T tau = T(kDefaultTau)) {
  return info_nce(referred_nodes, sentences, tau, "sentence_referred_object_loss");
}

template <class T>
Var<T> scene_level_loss(const Var<T>& scene_feats, const Var<T>& description_feats,
                        T tau = T(kDefaultTau)) {
  return info_nce(scene_feats, description_feats, tau, "scene_level_loss");
}

template <class T>
Var<T> sg_mcl_total(const Var<T>& wo, const Var<T>& sro, const Var<T>& scene) {
  return ad::add(ad::add(wo, sro), scene);
}

}  // namespace sgvlp
