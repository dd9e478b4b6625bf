#pragma once

// The full model: every module registered in one parameter store, plus the
// batched forward passes for pre-training and the three downstream tasks.
//
// A batch of S scenes is encoded once: proposal rows are stacked
// scene-major (row s * M + j) and the scene graph is their disjoint union.
// Text items (utterances, questions) refer back to their scene by index, so
// several items can share one encoded scene.

#include "sgvlp/config.hpp"
#include "sgvlp/downstream.hpp"
#include "sgvlp/fusion.hpp"
#include "sgvlp/masked_modality.hpp"
#include "sgvlp/proposals.hpp"
#include "sgvlp/scene_graph.hpp"
#include "sgvlp/sg_mcl.hpp"
#include "sgvlp/text_encoder.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgvlp {

struct ModelConfig {
  int vocab_size = 0;
  int hidden = 256;
  int embedding_dim = 300;
  int n1_neighbors = 8;
  SceneGraphConfig graph;
  FusionConfig fusion;
  int answers = kNumColors + kNumCategories;

  static ModelConfig from(const Config& c, int vocab_size) {
    ModelConfig m;
    m.vocab_size = vocab_size;
    m.hidden = c.hidden;
    m.embedding_dim = c.embedding_dim;
    m.n1_neighbors = c.n1_neighbors;
    m.graph = {c.hidden, c.n1_neighbors, c.n_graph_layers, parse_graph_layer_mode(c.graph_layer_mode)};
    m.fusion = {c.hidden, c.n_fusion_layers, c.n_heads, c.ffn_mult};
    return m;
  }
};

template <class T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : store(seed), cfg_(cfg) {
    const int C = cfg.hidden;
    text = TextEncoder<T>(store, "text", {cfg.vocab_size, cfg.embedding_dim, C});
    proposal = ProposalEncoder<T>(store, "proposal", C);
    detection = DetectionHead<T>(store, "detection", C);
    graph = SceneGraphNetwork<T>(store, "graph", cfg.graph);
    fusion_objects = CrossAttentionStack<T>(store, "fusion_objects", cfg.fusion);
    fusion_words = CrossAttentionStack<T>(store, "fusion_words", cfg.fusion);
    mom = MaskedObjectModel<T>(store, "mom", C);
    mlm = MaskedLanguageModel<T>(store, "mlm", C, cfg.vocab_size);
    lang = Linear<T>(store, "lang", ParamGroup::kHead, C, kNumCategories);
    grounding = GroundingHead<T>(store, "grounding", C);
    caption = CaptionDecoder<T>(store, "caption", C, cfg.vocab_size, C);
    qa = QaHead<T>(store, "qa", C, cfg.answers);
  }
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }

  ParamStore<T> store;
  TextEncoder<T> text;
  ProposalEncoder<T> proposal;
  DetectionHead<T> detection;
  SceneGraphNetwork<T> graph;
  CrossAttentionStack<T> fusion_objects;  // object queries, word keys
  CrossAttentionStack<T> fusion_words;    // word queries, object keys
  MaskedObjectModel<T> mom;
  MaskedLanguageModel<T> mlm;
  Linear<T> lang;
  GroundingHead<T> grounding;
  CaptionDecoder<T> caption;
  QaHead<T> qa;

 private:
  ModelConfig cfg_;
};

// ---------------------------------------------------------------------------
// Scene preparation and encoding

struct SceneInput {
  const SyntheticScene* scene = nullptr;
  ProposalSet proposals;
  std::vector<Aabb> boxes;
  std::vector<Edge> edges;  // local indices
};

inline JitterConfig jitter_from(const Config& c) {
  return {c.jitter_center_m, c.jitter_size_frac, c.m_proposals, c.color_noise};
}

inline SceneInput prepare_scene(const SyntheticScene& scene, const JitterConfig& jitter, int n1,
                                std::uint64_t seed) {
  SceneInput in;
  in.scene = &scene;
  std::mt19937_64 rng(seed);
  in.proposals = propose(scene, jitter.m_proposals, jitter, rng);
  for (const auto& p : in.proposals.proposals) in.boxes.push_back(p.box);
  in.edges = knn_edges(in.boxes, n1);
  return in;
}

/// Index (within its scene) of the proposal that best overlaps object `id`.
inline int proposal_for_object(const SceneInput& in, int id) {
  return best_proposal_for(in.proposals, in.scene->object(id).box);
}

template <class T>
struct EncodedScenes {
  Var<T> objects;  // proposal features before the graph, (S * M) x C
  Var<T> nodes;    // after the graph
  int count = 0;
  int m = 0;
  std::vector<Aabb> boxes;
  std::vector<const Proposal*> proposals;
  std::vector<std::pair<int, int>> segments;
};

template <class T>
EncodedScenes<T> encode_scenes(const Model<T>& model, const std::vector<const SceneInput*>& scenes) {
  if (scenes.empty()) throw std::invalid_argument("encode_scenes: empty batch");
  EncodedScenes<T> e;
  e.count = static_cast<int>(scenes.size());
  e.m = scenes[0]->proposals.size();
  std::vector<const ProposalSet*> sets;
  std::vector<Edge> edges;
  for (int s = 0; s < e.count; ++s) {
    const SceneInput& in = *scenes[s];
    if (in.proposals.size() != e.m) throw std::invalid_argument("encode_scenes: ragged proposal count");
    sets.push_back(&in.proposals);
    for (const auto& p : in.proposals.proposals) e.proposals.push_back(&p);
    e.boxes.insert(e.boxes.end(), in.boxes.begin(), in.boxes.end());
    for (const auto& ed : in.edges) edges.push_back({ed.subject + s * e.m, ed.object + s * e.m});
    e.segments.emplace_back(s * e.m, (s + 1) * e.m);
  }
  e.objects = model.proposal(descriptor_matrix<T>(sets));
  e.nodes = model.graph.forward(model.graph.build(e.objects, e.boxes, std::move(edges))).nodes;
  return e;
}

/// Pooling mask: proposals with objectness target 1. A scene without any
/// falls back to all of its proposals.
template <class T>
std::vector<bool> objectness_mask(const EncodedScenes<T>& e) {
  std::vector<bool> mask(e.proposals.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = e.proposals[i]->objectness_target == 1;
  for (const auto& [b, end] : e.segments) {
    bool any = false;
    for (int i = b; i < end; ++i) any = any || mask[i];
    if (!any) {
      for (int i = b; i < end; ++i) mask[i] = true;
    }
  }
  return mask;
}

/// Items (utterances or questions) attached to encoded scenes.
struct TextItems {
  std::vector<int> scene;  // index into the encoded batch
  TokenBatch tokens;
};

inline TextItems make_text_items(const std::vector<int>& scene_index,
                                 const std::vector<const std::vector<std::string>*>& words,
                                 const Vocabulary& vocab) {
  TextItems t;
  t.scene = scene_index;
  std::vector<std::vector<int>> ids;
  ids.reserve(words.size());
  for (const auto* w : words) ids.push_back(tokenize(*w, vocab));
  t.tokens = make_token_batch(ids);
  return t;
}

/// Stacked M-row copies of each item's scene rows.
template <class T>
Var<T> gather_item_rows(const Var<T>& rows, const std::vector<int>& scene, int m) {
  std::vector<int> idx;
  idx.reserve(scene.size() * static_cast<std::size_t>(m));
  for (int s : scene) {
    for (int j = 0; j < m; ++j) idx.push_back(s * m + j);
  }
  return ad::gather_rows(rows, idx);
}

/// Object rows of each item attend to that item's words.
template <class T>
Var<T> fuse_objects_with_words(const Model<T>& model, const Var<T>& item_nodes, const TextFeatures<T>& text,
                               const TokenBatch& tokens, int m) {
  return model.fusion_objects(item_nodes, text.words, uniform_blocks(tokens.batch, m, tokens.max_len),
                              length_mask(tokens.lengths, tokens.max_len));
}

// ---------------------------------------------------------------------------
// Pre-training objective

struct LossWeights {
  double a = 1.0;  // contrastive alignment
  double b = 1.0;  // masked modeling
  double c = 1.0;  // detection
  double d = 1.0;  // language classification

  void validate() const {
    if (a < 0 || b < 0 || c < 0 || d < 0) throw std::invalid_argument("loss weights must be non-negative");
    if (a == 0 && b == 0 && c == 0 && d == 0) throw std::invalid_argument("all loss weights are zero");
  }
};

struct PretrainOptions {
  double tau = kDefaultTau;
  bool soft_wo_targets = false;
  double word_mask_ratio = kWordMaskRatio;
  double object_mask_ratio = kObjectMaskRatio;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  explicit NonFiniteLoss(const std::string& term)
      : std::runtime_error("non-finite loss term: " + term), term_(term) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

/// Named loss terms in reporting order; absent terms were not computed
/// because their weight is zero.
template <class T>
struct LossTerms {
  std::vector<std::pair<std::string, Var<T>>> terms;
  Var<T> total;

  std::optional<double> value(const std::string& name) const {
    for (const auto& [n, v] : terms) {
      if (n == name) return static_cast<double>(v.item());
    }
    return std::nullopt;
  }
};

inline const std::vector<std::string>& pretrain_term_names() {
  static const std::vector<std::string> names = {"L_WO",  "L_SRO", "L_Scene", "L_SG_MCL", "L_MLM",
                                                 "L_MOM", "L_MMM", "L_DET",   "L_lang"};
  return names;
}

template <class T>
void check_finite(const LossTerms<T>& l) {
  for (const auto& [name, v] : l.terms) {
    if (!std::isfinite(static_cast<double>(v.item()))) throw NonFiniteLoss(name);
  }
  if (!std::isfinite(static_cast<double>(l.total.item()))) throw NonFiniteLoss("L_pre");
}

template <class T>
Var<T> lang_to_object_loss(const Var<T>& sentences, const Linear<T>& classifier,
                           const std::vector<int>& categories) {
  return ad::cross_entropy(classifier(sentences), categories);
}

/// One pre-training item: a scene with one of its utterances.
struct PretrainItem {
  const SceneInput* scene;
  const Utterance* utterance;
};

template <class T>
LossTerms<T> pretrain_losses(const Model<T>& model, const std::vector<PretrainItem>& items,
                             const LossWeights& w, const PretrainOptions& opt, const Vocabulary& vocab,
                             std::mt19937_64& rng) {
  w.validate();
  const int B = static_cast<int>(items.size());
  std::vector<const SceneInput*> scenes;
  std::vector<const Utterance*> utts;
  std::vector<const std::vector<std::string>*> words, descriptions;
  std::vector<int> scene_index;
  for (int b = 0; b < B; ++b) {
    scenes.push_back(items[b].scene);
    utts.push_back(items[b].utterance);
    words.push_back(&items[b].utterance->tokens);
    descriptions.push_back(&items[b].scene->scene->scene_description);
    scene_index.push_back(b);
  }
  const auto enc = encode_scenes(model, scenes);
  const int M = enc.m;
  const TextItems ti = make_text_items(scene_index, words, vocab);
  const TokenBatch& tb = ti.tokens;
  const TextFeatures<T> text = model.text.encode(tb);
  const T tau = static_cast<T>(opt.tau);

  LossTerms<T> out;
  std::vector<Var<T>> weighted;
  auto add_term = [&](const std::string& name, const Var<T>& v) { out.terms.emplace_back(name, v); };

  if (w.a > 0) {
    std::vector<const ProposalSet*> psets;
    for (const auto* s : scenes) psets.push_back(&s->proposals);
    const auto targets = build_word_object_targets<T>(utts, tb, psets, opt.soft_wo_targets);
    Var<T> wo = word_object_loss(enc.objects, text.words, targets);
    std::vector<int> referred;
    for (int b = 0; b < B; ++b) referred.push_back(b * M + proposal_for_object(*scenes[b], utts[b]->referred_id));
    Var<T> sro = sentence_referred_object_loss(ad::gather_rows(enc.nodes, referred), text.sentence, tau);
    const TextItems di = make_text_items(scene_index, descriptions, vocab);
    const Var<T> des = model.text.encode(di.tokens).sentence;
    Var<T> sc = scene_level_loss(graph_pool(enc.nodes, objectness_mask(enc), enc.segments), des, tau);
    Var<T> total = sg_mcl_total(wo, sro, sc);
    add_term("L_WO", wo);
    add_term("L_SRO", sro);
    add_term("L_Scene", sc);
    add_term("L_SG_MCL", total);
    weighted.push_back(ad::scale(total, static_cast<T>(w.a)));
  }
  if (w.b > 0) {
    const MaskedWords mw = mask_words(tb, rng, opt.word_mask_ratio);
    const TextFeatures<T> masked_text = model.text.encode(mw.tokens);
    Var<T> mlm_logits =
        model.mlm.forward(masked_text.words, enc.objects, uniform_blocks(B, tb.max_len, M), model.fusion_words);
    Var<T> mlm = mlm_loss(mlm_logits, mw.labels);
    const auto masked_objects = mask_objects(B, M, rng, nullptr, opt.object_mask_ratio);
    Var<T> mom_logits = model.mom.forward(enc.objects, masked_objects, enc.boxes, text.words,
                                          uniform_blocks(B, M, tb.max_len),
                                          length_mask(tb.lengths, tb.max_len), model.fusion_objects);
    Var<T> mom = mom_loss(mom_logits, mom_targets(enc.proposals, masked_objects));
    Var<T> total = ad::add(mlm, mom);
    add_term("L_MLM", mlm);
    add_term("L_MOM", mom);
    add_term("L_MMM", total);
    weighted.push_back(ad::scale(total, static_cast<T>(w.b)));
  }
  if (w.c > 0) {
    Var<T> det = detection_loss(enc.proposals, model.detection(enc.nodes)).total;
    add_term("L_DET", det);
    weighted.push_back(ad::scale(det, static_cast<T>(w.c)));
  }
  if (w.d > 0) {
    std::vector<int> cats;
    for (int b = 0; b < B; ++b) {
      cats.push_back(static_cast<int>(scenes[b]->scene->object(utts[b]->referred_id).category));
    }
    Var<T> lang = lang_to_object_loss(text.sentence, model.lang, cats);
    add_term("L_lang", lang);
    weighted.push_back(ad::scale(lang, static_cast<T>(w.d)));
  }
  out.total = weighted[0];
  for (std::size_t i = 1; i < weighted.size(); ++i) out.total = ad::add(out.total, weighted[i]);
  check_finite(out);
  return out;
}

// ---------------------------------------------------------------------------
// Downstream forward passes

/// Utterances of the given scenes, flattened; each keeps its scene index.
struct UtteranceRef {
  int scene;
  const Utterance* utterance;
};

inline std::vector<UtteranceRef> all_utterances(const std::vector<const SceneInput*>& scenes) {
  std::vector<UtteranceRef> refs;
  for (int s = 0; s < static_cast<int>(scenes.size()); ++s) {
    for (const auto& u : scenes[s]->scene->utterances) refs.push_back({s, &u});
  }
  return refs;
}

template <class T>
struct GroundingForward {
  EncodedScenes<T> scenes;
  TextItems items;
  TextFeatures<T> text;
  Var<T> scores;  // items x M
};

template <class T>
GroundingForward<T> grounding_forward(const Model<T>& model, const std::vector<const SceneInput*>& scenes,
                                      const std::vector<UtteranceRef>& utts, const Vocabulary& vocab) {
  GroundingForward<T> f;
  f.scenes = encode_scenes(model, scenes);
  std::vector<int> idx;
  std::vector<const std::vector<std::string>*> words;
  for (const auto& u : utts) {
    idx.push_back(u.scene);
    words.push_back(&u.utterance->tokens);
  }
  f.items = make_text_items(idx, words, vocab);
  f.text = model.text.encode(f.items.tokens);
  const int M = f.scenes.m;
  Var<T> fused = fuse_objects_with_words(model, gather_item_rows(f.scenes.nodes, idx, M), f.text, f.items.tokens, M);
  f.scores = model.grounding(fused, static_cast<int>(utts.size()), M);
  return f;
}

template <class T>
struct QaForward {
  EncodedScenes<T> scenes;
  TextItems items;
  TextFeatures<T> text;
  Var<T> item_nodes;
  QaOutputs<T> out;
};

struct QuestionRef {
  int scene;
  const QaPair* qa;
};

inline std::vector<QuestionRef> all_questions(const std::vector<const SceneInput*>& scenes) {
  std::vector<QuestionRef> refs;
  for (int s = 0; s < static_cast<int>(scenes.size()); ++s) {
    for (const auto& q : scenes[s]->scene->qa_pairs) refs.push_back({s, &q});
  }
  return refs;
}

template <class T>
QaForward<T> qa_forward(const Model<T>& model, const std::vector<const SceneInput*>& scenes,
                        const std::vector<QuestionRef>& questions, const Vocabulary& vocab, T tau) {
  QaForward<T> f;
  f.scenes = encode_scenes(model, scenes);
  std::vector<int> idx;
  std::vector<const std::vector<std::string>*> words;
  for (const auto& q : questions) {
    idx.push_back(q.scene);
    words.push_back(&q.qa->question);
  }
  f.items = make_text_items(idx, words, vocab);
  f.text = model.text.encode(f.items.tokens);
  const int M = f.scenes.m;
  f.item_nodes = gather_item_rows(f.scenes.nodes, idx, M);
  Var<T> fused = fuse_objects_with_words(model, f.item_nodes, f.text, f.items.tokens, M);
  f.out = model.qa(fused, f.item_nodes, f.text.sentence, static_cast<int>(questions.size()), M, tau);
  return f;
}

inline int answer_index(const std::string& answer) {
  const auto vocab = answer_vocabulary();
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab[i] == answer) return static_cast<int>(i);
  }
  throw std::invalid_argument("answer outside the answer space: " + answer);
}

}  // namespace sgvlp
