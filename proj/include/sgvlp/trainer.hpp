#pragma once

// Pre-training, fine-tuning and evaluation loops, run directories, and the
// ablation grids built on them.
//
// Every random choice is drawn from engines seeded by (run seed, purpose,
// epoch, scene id), so a run is a pure function of its config and data.

#include "sgvlp/checkpoint.hpp"
#include "sgvlp/config.hpp"
#include "sgvlp/dataset_io.hpp"
#include "sgvlp/metrics.hpp"
#include "sgvlp/model.hpp"
#include "sgvlp/optim.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace sgvlp {

using Real = float;

enum class Task { kGround, kCaption, kQa };

inline const char* to_string(Task t) {
  switch (t) {
    case Task::kGround: return "ground";
    case Task::kCaption: return "caption";
    case Task::kQa: return "qa";
  }
  return "?";
}

inline Task parse_task(const std::string& s) {
  if (s == "ground") return Task::kGround;
  if (s == "caption") return Task::kCaption;
  if (s == "qa") return Task::kQa;
  throw std::invalid_argument("unknown task '" + s + "' (expected ground, caption or qa)");
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0, std::uint64_t d = 0) {
  using detail::splitmix64;
  return splitmix64(a ^ splitmix64(b ^ splitmix64(c ^ splitmix64(d))));
}

/// Purposes keep the streams of one run disjoint.
enum SeedPurpose : std::uint64_t {
  kSeedInit = 1,
  kSeedOrder = 2,
  kSeedProposals = 3,
  kSeedMasks = 4,
  kSeedUtterance = 5,
};

inline AdamWConfig optimizer_config(const Config& c) {
  AdamWConfig o;
  o.lr = {{ParamGroup::kText, c.lr_text},
          {ParamGroup::kProposal, c.lr_proposal},
          {ParamGroup::kGraph, c.lr_graph},
          {ParamGroup::kHead, c.lr_head}};
  o.beta1 = c.adam_beta1;
  o.beta2 = c.adam_beta2;
  o.eps = c.adam_eps;
  o.weight_decay = c.weight_decay;
  o.grad_clip = c.grad_clip;
  return o;
}

inline std::unique_ptr<Model<Real>> make_model(const Config& c, const Vocabulary& vocab) {
  validate(c);
  return std::make_unique<Model<Real>>(ModelConfig::from(c, vocab.size()), mix_seed(c.seed, kSeedInit));
}

inline std::vector<const SyntheticScene*> limit_scenes(const std::vector<SyntheticScene>& scenes, int limit) {
  std::vector<const SyntheticScene*> out;
  const std::size_t n = limit > 0 ? std::min<std::size_t>(scenes.size(), limit) : scenes.size();
  for (std::size_t i = 0; i < n; ++i) out.push_back(&scenes[i]);
  return out;
}

/// Fresh proposals for every scene of one training epoch.
inline std::vector<SceneInput> prepare_epoch(const std::vector<const SyntheticScene*>& scenes, const Config& c,
                                             std::uint64_t seed, int epoch) {
  std::vector<SceneInput> out;
  out.reserve(scenes.size());
  const auto jitter = jitter_from(c);
  for (const auto* s : scenes) {
    out.push_back(prepare_scene(*s, jitter, c.n1_neighbors, mix_seed(seed, kSeedProposals, epoch, s->scene_id)));
  }
  return out;
}

/// Evaluation proposals depend only on eval_seed and the scene, so every
/// arm of an ablation is scored on identical inputs.
inline std::vector<SceneInput> prepare_eval(const std::vector<const SyntheticScene*>& scenes, const Config& c) {
  return prepare_epoch(scenes, c, c.eval_seed, 0);
}

inline std::vector<std::vector<int>> batch_order(std::size_t n, int batch_size, std::uint64_t seed, int epoch) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, kSeedOrder, epoch));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    batches.emplace_back(idx.begin() + i, idx.begin() + std::min(n, i + batch_size));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Loss traces

/// One row per epoch: mean of each named term over the epoch's steps.
struct LossTrace {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;  // epoch-major, same order as columns

  void write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "epoch";
    for (const auto& c : columns) out << ',' << c;
    out << '\n' << std::setprecision(9);
    for (std::size_t e = 0; e < rows.size(); ++e) {
      out << e + 1;
      for (double v : rows[e]) out << ',' << v;
      out << '\n';
    }
  }

  friend bool operator==(const LossTrace&, const LossTrace&) = default;
};

class EpochAccumulator {
 public:
  explicit EpochAccumulator(std::vector<std::string> columns) : columns_(std::move(columns)) {
    sums_.assign(columns_.size(), 0.0);
    counts_.assign(columns_.size(), 0);
  }
  void add(const std::string& name, double v) {
    auto it = std::find(columns_.begin(), columns_.end(), name);
    if (it == columns_.end()) return;
    const auto i = static_cast<std::size_t>(it - columns_.begin());
    sums_[i] += v;
    ++counts_[i];
  }
  /// Terms never computed (zero weight) are reported as 0.
  std::vector<double> means() const {
    std::vector<double> m(columns_.size(), 0.0);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = counts_[i] ? sums_[i] / counts_[i] : 0.0;
    return m;
  }

 private:
  std::vector<std::string> columns_;
  std::vector<double> sums_;
  std::vector<int> counts_;
};

using ProgressFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Pre-training

inline LossWeights weights_from(const Config& c) { return {c.loss_a, c.loss_b, c.loss_c, c.loss_d}; }

inline PretrainOptions pretrain_options(const Config& c) {
  return {c.tau, c.soft_wo_targets, c.word_mask_ratio, c.object_mask_ratio};
}

/// One optimizer step on a pre-training batch. Returns the named terms and
/// L_pre as plain numbers.
template <class T>
std::map<std::string, double> pretrain_step(Model<T>& model, AdamW<T>& opt, const std::vector<PretrainItem>& items,
                                            const LossWeights& w, const PretrainOptions& po,
                                            const Vocabulary& vocab, std::mt19937_64& rng) {
  model.store.zero_grad();
  LossTerms<T> l = pretrain_losses(model, items, w, po, vocab, rng);
  ad::backward(l.total);
  opt.step();
  std::map<std::string, double> report;
  for (const auto& [name, v] : l.terms) report[name] = static_cast<double>(v.item());
  report["L_pre"] = static_cast<double>(l.total.item());
  return report;
}

inline LossTrace run_pretrain(Model<Real>& model, const Config& c, const std::vector<SyntheticScene>& train,
                              const Vocabulary& vocab, const ProgressFn& progress = {}) {
  const LossWeights w = weights_from(c);
  w.validate();
  const auto po = pretrain_options(c);
  AdamW<Real> opt(model.store, optimizer_config(c));
  const auto scenes = limit_scenes(train, c.max_train_scenes);
  std::vector<std::string> columns = pretrain_term_names();
  columns.push_back("L_pre");
  LossTrace trace{columns, {}};
  std::mt19937_64 mask_rng(mix_seed(c.seed, kSeedMasks));
  for (int epoch = 0; epoch < c.pretrain_epochs; ++epoch) {
    auto inputs = prepare_epoch(scenes, c, c.seed, epoch);
    std::mt19937_64 pick(mix_seed(c.seed, kSeedUtterance, epoch));
    EpochAccumulator acc(columns);
    for (const auto& batch : batch_order(inputs.size(), c.batch_size, c.seed, epoch)) {
      std::vector<PretrainItem> items;
      for (int i : batch) {
        const auto& utts = inputs[i].scene->utterances;
        if (utts.empty()) continue;
        items.push_back({&inputs[i], &utts[pick() % utts.size()]});
      }
      if (items.empty()) continue;
      for (const auto& [k, v] : pretrain_step(model, opt, items, w, po, vocab, mask_rng)) acc.add(k, v);
    }
    trace.rows.push_back(acc.means());
    if (progress) {
      std::ostringstream msg;
      msg << "pretrain epoch " << epoch + 1 << "/" << c.pretrain_epochs << " L_pre=" << trace.rows.back().back();
      progress(msg.str());
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Fine-tuning

inline std::vector<std::string> finetune_columns(Task t) {
  switch (t) {
    case Task::kGround: return {"L_ground", "L_DET", "L_lang", "L_total"};
    case Task::kCaption: return {"L_caption", "L_DET", "L_total"};
    case Task::kQa: return {"L_answer", "L_relevance", "L_DET", "L_total"};
  }
  return {};
}

/// Loss of one fine-tuning batch, as named terms plus their sum.
template <class T>
LossTerms<T> finetune_losses(const Model<T>& model, Task task, const std::vector<const SceneInput*>& scenes,
                             const Config& c, const Vocabulary& vocab) {
  LossTerms<T> out;
  std::vector<Var<T>> parts;
  auto add = [&](const std::string& name, const Var<T>& v, double weight) {
    out.terms.emplace_back(name, v);
    parts.push_back(weight == 1.0 ? v : ad::scale(v, static_cast<T>(weight)));
  };
  EncodedScenes<T> enc;
  if (task == Task::kGround) {
    std::vector<UtteranceRef> utts;
    std::vector<GroundingTarget> targets;
    for (const auto& u : all_utterances(scenes)) {
      auto t = grounding_target(scenes[u.scene]->proposals, scenes[u.scene]->scene->object(u.utterance->referred_id).box);
      if (!t.any()) continue;  // no proposal overlaps the target enough to supervise
      utts.push_back(u);
      targets.push_back(std::move(t));
    }
    if (utts.empty()) return out;
    auto f = grounding_forward(model, scenes, utts, vocab);
    add("L_ground", grounding_loss(f.scores, targets), 1.0);
    if (c.finetune_lang_weight > 0) {
      std::vector<int> cats;
      for (const auto& u : utts) {
        cats.push_back(static_cast<int>(scenes[u.scene]->scene->object(u.utterance->referred_id).category));
      }
      add("L_lang", lang_to_object_loss(f.text.sentence, model.lang, cats), c.finetune_lang_weight);
    }
    enc = std::move(f.scenes);
  } else if (task == Task::kCaption) {
    enc = encode_scenes(model, scenes);
    const auto utts = all_utterances(scenes);
    if (utts.empty()) return out;
    std::vector<int> rows;
    std::vector<CaptionSample> samples;
    std::vector<std::vector<int>> inputs;
    for (const auto& u : utts) {
      rows.push_back(u.scene * enc.m + proposal_for_object(*scenes[u.scene], u.utterance->referred_id));
      samples.push_back(make_caption_sample(u.utterance->tokens, vocab));
      inputs.push_back(samples.back().input);
    }
    const TokenBatch tb = make_token_batch(inputs);
    Var<T> logits = model.caption.teacher_forced(ad::gather_rows(enc.nodes, rows), tb);
    add("L_caption", caption_loss(logits, CaptionDecoder<T>::time_major_targets(samples, tb.max_len)), 1.0);
  } else {
    const auto qs = all_questions(scenes);
    if (qs.empty()) return out;
    auto f = qa_forward(model, scenes, qs, vocab, static_cast<T>(c.tau));
    std::vector<int> answers, relevant;
    for (std::size_t i = 0; i < qs.size(); ++i) {
      answers.push_back(answer_index(qs[i].qa->answer));
      relevant.push_back(qs[i].scene * f.scenes.m + proposal_for_object(*scenes[qs[i].scene], qs[i].qa->relevant_id));
    }
    add("L_answer", answer_loss(f.out.answer_logits, answers), 1.0);
    add("L_relevance",
        relevance_loss(ad::gather_rows(f.scenes.nodes, relevant), f.text.sentence, static_cast<T>(c.tau)), 1.0);
    enc = std::move(f.scenes);
  }
  if (c.finetune_det_weight > 0) {
    add("L_DET", detection_loss(enc.proposals, model.detection(enc.nodes)).total, c.finetune_det_weight);
  }
  out.total = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out.total = ad::add(out.total, parts[i]);
  check_finite(out);
  return out;
}

inline LossTrace run_finetune(Model<Real>& model, Task task, const Config& c,
                              const std::vector<SyntheticScene>& train, const Vocabulary& vocab,
                              const ProgressFn& progress = {}) {
  AdamW<Real> opt(model.store, optimizer_config(c));
  const auto scenes = limit_scenes(train, c.max_train_scenes);
  const auto columns = finetune_columns(task);
  LossTrace trace{columns, {}};
  // Fine-tuning streams are offset from pre-training ones.
  const std::uint64_t seed = mix_seed(c.seed, 0xF17E, static_cast<std::uint64_t>(task));
  for (int epoch = 0; epoch < c.finetune_epochs; ++epoch) {
    const double lr_scale =
        (task == Task::kQa && epoch >= c.qa_lr_decay_epoch) ? c.qa_lr_decay_factor : 1.0;
    auto inputs = prepare_epoch(scenes, c, seed, epoch);
    EpochAccumulator acc(columns);
    for (const auto& batch : batch_order(inputs.size(), c.batch_size, seed, epoch)) {
      std::vector<const SceneInput*> b;
      for (int i : batch) b.push_back(&inputs[i]);
      model.store.zero_grad();
      LossTerms<Real> l = finetune_losses(model, task, b, c, vocab);
      if (!l.total.defined()) continue;
      ad::backward(l.total);
      opt.step(lr_scale);
      for (const auto& [name, v] : l.terms) acc.add(name, v.item());
      acc.add("L_total", l.total.item());
    }
    trace.rows.push_back(acc.means());
    if (progress) {
      std::ostringstream msg;
      msg << "finetune[" << to_string(task) << "] epoch " << epoch + 1 << "/" << c.finetune_epochs
          << " L_total=" << trace.rows.back().back();
      progress(msg.str());
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Evaluation

struct MetricRow {
  std::string metric;
  double k = 0.0;  // IoU threshold or top-K; 0 when not applicable
  double value = 0.0;
};

struct MetricReport {
  std::string task;
  std::vector<MetricRow> rows;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;

  double get(const std::string& metric, double k) const {
    for (const auto& r : rows) {
      if (r.metric == metric && r.k == k) return r.value;
    }
    throw std::out_of_range("no metric " + metric + "@" + std::to_string(k));
  }

  /// Flat document: one "task,metric,k,value,n_samples,seed" row each.
  void write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "task,metric,k,value,n_samples,seed\n" << std::setprecision(9);
    for (const auto& r : rows) {
      out << task << ',' << r.metric << ',' << r.k << ',' << r.value << ',' << n_samples << ',' << seed << '\n';
    }
  }
};

inline MetricReport run_eval(const Model<Real>& model, Task task, const Config& c,
                             const std::vector<SyntheticScene>& val, const Vocabulary& vocab) {
  ad::NoGradGuard no_grad;
  const auto scenes = limit_scenes(val, c.max_eval_scenes);
  auto inputs = prepare_eval(scenes, c);
  MetricReport report;
  report.task = to_string(task);
  report.seed = c.seed;
  std::vector<Aabb> pred_boxes, gt_boxes;
  std::vector<Sentence> captions, references;
  std::vector<std::vector<std::string>> ranked;
  std::vector<std::string> gold;
  const auto answers = answer_vocabulary();
  const int sos = vocab.id("sos");
  const int eos = vocab.id("eos");
  for (std::size_t start = 0; start < inputs.size(); start += c.batch_size) {
    std::vector<const SceneInput*> b;
    for (std::size_t i = start; i < std::min(inputs.size(), start + c.batch_size); ++i) b.push_back(&inputs[i]);
    if (task == Task::kGround) {
      const auto utts = all_utterances(b);
      if (utts.empty()) continue;
      auto f = grounding_forward(model, b, utts, vocab);
      for (std::size_t u = 0; u < utts.size(); ++u) {
        const SceneInput& s = *b[utts[u].scene];
        const int j = argmax_row(f.scores.value(), static_cast<Eigen::Index>(u));
        pred_boxes.push_back(s.proposals.proposals[j].box);
        gt_boxes.push_back(s.scene->object(utts[u].utterance->referred_id).box);
      }
    } else if (task == Task::kCaption) {
      const auto utts = all_utterances(b);
      if (utts.empty()) continue;
      const auto enc = encode_scenes(model, b);
      for (const auto& u : utts) {
        const SceneInput& s = *b[u.scene];
        const int j = proposal_for_object(s, u.utterance->referred_id);
        const auto ids = model.caption.greedy(ad::slice_rows(enc.nodes, u.scene * enc.m + j, 1), sos, eos);
        Sentence words;
        for (int id : ids) words.push_back(vocab.word(id));
        captions.push_back(std::move(words));
        references.push_back(u.utterance->tokens);
        pred_boxes.push_back(s.proposals.proposals[j].box);
        gt_boxes.push_back(s.scene->object(u.utterance->referred_id).box);
      }
    } else {
      const auto qs = all_questions(b);
      if (qs.empty()) continue;
      auto f = qa_forward(model, b, qs, vocab, static_cast<Real>(c.tau));
      const auto& logits = f.out.answer_logits.value();
      for (std::size_t q = 0; q < qs.size(); ++q) {
        std::vector<int> order(answers.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int x, int y) { return logits(static_cast<Eigen::Index>(q), x) > logits(static_cast<Eigen::Index>(q), y); });
        std::vector<std::string> r;
        for (int i : order) r.push_back(answers[i]);
        ranked.push_back(std::move(r));
        gold.push_back(qs[q].qa->answer);
      }
    }
  }
  if (task == Task::kGround) {
    report.n_samples = pred_boxes.size();
    report.rows.push_back({"acc", 0.25, acc_at_kiou(pred_boxes, gt_boxes, 0.25)});
    report.rows.push_back({"acc", 0.5, acc_at_kiou(pred_boxes, gt_boxes, 0.5)});
  } else if (task == Task::kCaption) {
    report.n_samples = captions.size();
    for (double k : {0.25, 0.5}) {
      report.rows.push_back({"bleu4", k, m_at_kiou(captions, references, pred_boxes, gt_boxes, k, CaptionMetric::kBleu4)});
      report.rows.push_back({"rougeL", k, m_at_kiou(captions, references, pred_boxes, gt_boxes, k, CaptionMetric::kRougeL)});
    }
  } else {
    report.n_samples = gold.size();
    report.rows.push_back({"em", 1, em_at_k(ranked, gold, 1)});
    report.rows.push_back({"em", 10, em_at_k(ranked, gold, 10)});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Run directories

inline nlohmann::json run_manifest(const std::string& command, const Config& c,
                                   const std::map<std::string, std::string>& outputs) {
  nlohmann::json j;
  j["command"] = command;
  j["config_hash"] = config_hash(c);
  j["seed"] = c.seed;
  j["artifact_version"] = "sgvlp-0.1.0";
  j["config"] = config_to_text(c);
  j["outputs"] = outputs;
  return j;
}

inline void write_config_file(const Config& c, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << config_to_text(c);
}

inline nlohmann::json checkpoint_meta(const Config& c, const std::string& stage, const LossTrace& trace) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["config_hash"] = config_hash(c);
  j["stage"] = stage;
  j["epoch"] = trace.rows.size();
  j["loss_columns"] = trace.columns;
  j["loss_trace"] = trace.rows;
  j["config"] = config_to_text(c);
  return j;
}

// ---------------------------------------------------------------------------
// Ablations

struct Arm {
  std::string name;
  bool pretrain;
  LossWeights weights;
};

/// Scratch, contrastive alignment only, masked modeling only, both. The
/// detection and language terms stay on in every pre-trained arm.
inline std::vector<Arm> table5_arms() {
  return {{"Scratch", false, {}},
          {"+SG_MCL", true, {1.0, 0.0, 1.0, 1.0}},
          {"+MMM", true, {0.0, 1.0, 1.0, 1.0}},
          {"+SG_MCL+MMM", true, {1.0, 1.0, 1.0, 1.0}}};
}

struct AblationRow {
  std::string arm;
  std::uint64_t seed;
  double acc25;
  double acc50;
  double seconds;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Pre-train (if the arm asks for it), fine-tune on grounding and evaluate.
inline AblationRow run_grounding_arm(const Arm& arm, const Config& base, std::uint64_t seed,
                                     const std::vector<SyntheticScene>& train,
                                     const std::vector<SyntheticScene>& val, const Vocabulary& vocab,
                                     const std::string& out_dir, const ProgressFn& progress = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  Config c = base;
  c.seed = seed;
  c.loss_a = arm.weights.a;
  c.loss_b = arm.weights.b;
  c.loss_c = arm.weights.c;
  c.loss_d = arm.weights.d;
  auto model = make_model(c, vocab);
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  if (arm.pretrain) {
    const auto trace = run_pretrain(*model, c, train, vocab, progress);
    if (!out_dir.empty()) trace.write_csv(out_dir + "/pretrain_loss.csv");
  }
  const auto ft = run_finetune(*model, Task::kGround, c, train, vocab, progress);
  const auto report = run_eval(*model, Task::kGround, c, val, vocab);
  if (!out_dir.empty()) {
    ft.write_csv(out_dir + "/finetune_loss.csv");
    report.write_csv(out_dir + "/metrics.csv");
    write_config_file(c, out_dir + "/config.txt");
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {arm.name, seed, report.get("acc", 0.25), report.get("acc", 0.5), secs};
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "arm,seed,acc25,acc50,seconds\n" << std::setprecision(9);
  for (const auto& r : rows) out << r.arm << ',' << r.seed << ',' << r.acc25 << ',' << r.acc50 << ',' << r.seconds << '\n';
}

/// Markdown table of per-arm medians, in first-appearance order.
inline std::string ablation_table(const std::vector<AblationRow>& rows, const std::string& label = "Arm") {
  std::vector<std::string> arms;
  for (const auto& r : rows) {
    if (std::find(arms.begin(), arms.end(), r.arm) == arms.end()) arms.push_back(r.arm);
  }
  std::ostringstream out;
  out << "| " << label << " | seeds | median Acc@0.25 | median Acc@0.5 |\n|---|---|---|---|\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& a : arms) {
    std::vector<double> a25, a50;
    for (const auto& r : rows) {
      if (r.arm == a) {
        a25.push_back(r.acc25);
        a50.push_back(r.acc50);
      }
    }
    out << "| " << a << " | " << a25.size() << " | " << median(a25) << " | " << median(a50) << " |\n";
  }
  return out.str();
}

enum class Grid { kTable5, kDepth, kLayer };

inline Grid parse_grid(const std::string& s) {
  if (s == "table5") return Grid::kTable5;
  if (s == "depth") return Grid::kDepth;
  if (s == "layer") return Grid::kLayer;
  throw std::invalid_argument("unknown grid '" + s + "' (expected table5, depth or layer)");
}

/// Runs one grid. table5: the four arms x seeds. depth: full pre-training
/// with 1-4 graph layers. layer: gcn vs edge_conv. Writes per-run
/// directories, ablation.csv and ablation.md under `out_dir`.
inline std::vector<AblationRow> run_ablation(Grid grid, const Config& base, const std::vector<std::uint64_t>& seeds,
                                             const std::vector<SyntheticScene>& train,
                                             const std::vector<SyntheticScene>& val, const Vocabulary& vocab,
                                             const std::string& out_dir, const ProgressFn& progress = {}) {
  std::vector<AblationRow> rows;
  auto sub = [&](const std::string& name, std::uint64_t seed) {
    return out_dir.empty() ? std::string() : out_dir + "/" + name + "_seed" + std::to_string(seed);
  };
  const Arm full = table5_arms().back();
  std::string label = "Arm";
  if (grid == Grid::kTable5) {
    for (const auto& arm : table5_arms()) {
      for (auto seed : seeds) rows.push_back(run_grounding_arm(arm, base, seed, train, val, vocab, sub(arm.name, seed), progress));
    }
  } else if (grid == Grid::kDepth) {
    label = "Graph layers";
    for (int depth = 1; depth <= 4; ++depth) {
      Config c = base;
      c.n_graph_layers = depth;
      const std::string name = std::to_string(depth);
      for (auto seed : seeds) {
        auto r = run_grounding_arm(full, c, seed, train, val, vocab, sub("depth" + name, seed), progress);
        r.arm = name;
        rows.push_back(r);
      }
    }
  } else {
    label = "Graph layer";
    for (const char* mode : {"gcn", "edge_conv"}) {
      Config c = base;
      c.graph_layer_mode = mode;
      for (auto seed : seeds) {
        auto r = run_grounding_arm(full, c, seed, train, val, vocab, sub(mode, seed), progress);
        r.arm = mode;
        rows.push_back(r);
      }
    }
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_ablation_csv(rows, out_dir + "/ablation.csv");
    std::ofstream(out_dir + "/ablation.md") << ablation_table(rows, label);
  }
  return rows;
}

}  // namespace sgvlp
