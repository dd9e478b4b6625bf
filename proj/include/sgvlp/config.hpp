#pragma once

// Run configuration: a flat set of typed keys read from a "key = value"
// text file, optionally overridden by command-line flags. Every key, its
// type and default are listed in config_keys().

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace sgvlp {

struct Config {
  // data generation
  std::uint64_t seed = 7;
  int scenes_train = 2000;
  int scenes_val = 400;
  int min_objects = 5;
  int max_objects = 9;
  int utterances_per_scene = 4;
  int qa_per_scene = 3;
  // proposals
  int m_proposals = 16;
  double jitter_center_m = 0.15;
  double jitter_size_frac = 0.10;
  double color_noise = 0.05;
  // model
  int hidden = 256;
  int embedding_dim = 300;
  int n1_neighbors = 8;
  int n_graph_layers = 3;
  std::string graph_layer_mode = "edge_conv";
  int n_fusion_layers = 2;
  int n_heads = 4;
  int ffn_mult = 2;
  // objectives
  double tau = 0.07;
  bool soft_wo_targets = false;
  double word_mask_ratio = 0.2;
  double object_mask_ratio = 0.75;
  double loss_a = 1.0;
  double loss_b = 1.0;
  double loss_c = 1.0;
  double loss_d = 1.0;
  double finetune_det_weight = 1.0;
  double finetune_lang_weight = 1.0;
  // optimization
  int batch_size = 16;
  int pretrain_epochs = 30;
  int finetune_epochs = 20;
  double lr_text = 5e-4;
  double lr_proposal = 2e-3;
  double lr_graph = 5e-4;
  double lr_head = 5e-4;
  double weight_decay = 0.01;
  double grad_clip = 5.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int qa_lr_decay_epoch = 15;
  double qa_lr_decay_factor = 0.2;
  // evaluation
  std::uint64_t eval_seed = 99991;
  int max_train_scenes = 0;  // 0 = all
  int max_eval_scenes = 0;   // 0 = all
};

struct ConfigKey {
  const char* name;
  const char* doc;
  std::variant<int Config::*, double Config::*, bool Config::*, std::string Config::*,
               std::uint64_t Config::*>
      member;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "run seed (data generation, initialization, batching)", &Config::seed},
      {"scenes_train", "training scenes written by gen-data", &Config::scenes_train},
      {"scenes_val", "validation scenes written by gen-data", &Config::scenes_val},
      {"min_objects", "minimum objects per scene (>= 2)", &Config::min_objects},
      {"max_objects", "maximum objects per scene", &Config::max_objects},
      {"utterances_per_scene", "referring utterances attempted per scene", &Config::utterances_per_scene},
      {"qa_per_scene", "question-answer pairs attempted per scene", &Config::qa_per_scene},
      {"m_proposals", "proposals per scene (M)", &Config::m_proposals},
      {"jitter_center_m", "max center jitter per axis, meters", &Config::jitter_center_m},
      {"jitter_size_frac", "max relative size jitter per axis", &Config::jitter_size_frac},
      {"color_noise", "std-dev of proposal color noise", &Config::color_noise},
      {"hidden", "feature width C", &Config::hidden},
      {"embedding_dim", "word embedding width", &Config::embedding_dim},
      {"n1_neighbors", "out-degree of the kNN scene graph", &Config::n1_neighbors},
      {"n_graph_layers", "graph layers (1-4)", &Config::n_graph_layers},
      {"graph_layer_mode", "gcn | edge_conv", &Config::graph_layer_mode},
      {"n_fusion_layers", "cross-attention layers", &Config::n_fusion_layers},
      {"n_heads", "attention heads", &Config::n_heads},
      {"ffn_mult", "feed-forward width multiplier", &Config::ffn_mult},
      {"tau", "contrastive temperature", &Config::tau},
      {"soft_wo_targets", "use IoU as word-object target instead of 1", &Config::soft_wo_targets},
      {"word_mask_ratio", "fraction of words masked for MLM", &Config::word_mask_ratio},
      {"object_mask_ratio", "fraction of proposals masked for MOM", &Config::object_mask_ratio},
      {"loss_a", "pre-training weight of the contrastive terms", &Config::loss_a},
      {"loss_b", "pre-training weight of masked modeling", &Config::loss_b},
      {"loss_c", "pre-training weight of the detection loss", &Config::loss_c},
      {"loss_d", "pre-training weight of language classification", &Config::loss_d},
      {"finetune_det_weight", "detection loss weight while fine-tuning", &Config::finetune_det_weight},
      {"finetune_lang_weight", "language classification weight while fine-tuning grounding",
       &Config::finetune_lang_weight},
      {"batch_size", "scenes per optimizer step", &Config::batch_size},
      {"pretrain_epochs", "pre-training epochs", &Config::pretrain_epochs},
      {"finetune_epochs", "fine-tuning epochs", &Config::finetune_epochs},
      {"lr_text", "learning rate, text encoder", &Config::lr_text},
      {"lr_proposal", "learning rate, proposal encoder and detection head", &Config::lr_proposal},
      {"lr_graph", "learning rate, scene graph", &Config::lr_graph},
      {"lr_head", "learning rate, fusion and task heads", &Config::lr_head},
      {"weight_decay", "decoupled weight decay", &Config::weight_decay},
      {"grad_clip", "global gradient-norm clip", &Config::grad_clip},
      {"adam_beta1", "Adam beta1", &Config::adam_beta1},
      {"adam_beta2", "Adam beta2", &Config::adam_beta2},
      {"adam_eps", "Adam epsilon", &Config::adam_eps},
      {"qa_lr_decay_epoch", "epoch after which QA learning rates are multiplied", &Config::qa_lr_decay_epoch},
      {"qa_lr_decay_factor", "QA learning-rate multiplier", &Config::qa_lr_decay_factor},
      {"eval_seed", "seed of the evaluation proposals", &Config::eval_seed},
      {"max_train_scenes", "use only the first N training scenes (0 = all)", &Config::max_train_scenes},
      {"max_eval_scenes", "use only the first N evaluation scenes (0 = all)", &Config::max_eval_scenes},
  };
  return keys;
}

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class V>
V parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  V v{};
  if constexpr (std::is_same_v<V, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
  } else if constexpr (std::is_same_v<V, std::string>) {
    return text;
  } else {
    in >> v;
    if (!in || !in.eof()) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
    return v;
  }
}

}  // namespace config_detail

inline const ConfigKey* find_config_key(const std::string& name) {
  for (const auto& k : config_keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

inline void set_config_value(Config& cfg, const std::string& key, const std::string& value) {
  const ConfigKey* k = find_config_key(key);
  if (!k) throw ConfigError("unknown config key '" + key + "'");
  std::visit(
      [&](auto member) {
        using V = std::remove_reference_t<decltype(cfg.*member)>;
        cfg.*member = config_detail::parse_value<V>(key, value);
      },
      k->member);
}

inline std::string get_config_value(const Config& cfg, const ConfigKey& k) {
  return std::visit(
      [&](auto member) {
        std::ostringstream out;
        using V = std::remove_cv_t<std::remove_reference_t<decltype(cfg.*member)>>;
        if constexpr (std::is_same_v<V, bool>) {
          out << (cfg.*member ? "true" : "false");
        } else if constexpr (std::is_same_v<V, double>) {
          out << std::setprecision(17) << cfg.*member;
        } else {
          out << cfg.*member;
        }
        return out.str();
      },
      k.member);
}

inline void validate(const Config& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  require(c.min_objects >= 2, "min_objects must be >= 2");
  require(c.max_objects >= c.min_objects, "max_objects < min_objects");
  require(c.m_proposals >= c.max_objects, "m_proposals must be >= max_objects");
  require(c.hidden > 0 && c.hidden % c.n_heads == 0, "hidden must be a positive multiple of n_heads");
  require(c.n_graph_layers >= 1 && c.n_graph_layers <= 4, "n_graph_layers must be in 1..4");
  require(c.graph_layer_mode == "gcn" || c.graph_layer_mode == "edge_conv",
          "graph_layer_mode must be gcn or edge_conv");
  require(c.tau > 0, "tau must be positive");
  require(c.loss_a >= 0 && c.loss_b >= 0 && c.loss_c >= 0 && c.loss_d >= 0, "loss weights must be >= 0");
  require(c.batch_size >= 1, "batch_size must be >= 1");
  require(c.n1_neighbors >= 1, "n1_neighbors must be >= 1");
}

/// Lines are "key = value"; '#' starts a comment; blank lines are ignored.
inline Config parse_config_text(const std::string& text, Config cfg = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    set_config_value(cfg, config_detail::trim(line.substr(0, eq)), config_detail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline Config load_config(const std::string& path, Config cfg = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), cfg);
}

/// Canonical text: every key in list order.
inline std::string config_to_text(const Config& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += std::string(k.name) + " = " + get_config_value(cfg, k) + "\n";
  return out;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string config_hash(const Config& cfg) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(config_to_text(cfg));
  return out.str();
}

}  // namespace sgvlp
