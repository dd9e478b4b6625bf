#pragma once

// Command-line front end. Subcommands: gen-data, pretrain, finetune, eval,
// ablate, report. Config precedence, lowest first: built-in defaults, the
// checkpoint's stored config (eval only), --config FILE, --set KEY=VALUE,
// dedicated flags such as --seed or --epochs.

#include "sgvlp/report.hpp"
#include "sgvlp/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace sgvlp {

namespace cli_detail {

namespace fs = std::filesystem;

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

inline void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_file, "config file of key = value lines");
  app->add_option("--set", c.sets, "override one config key (KEY=VALUE), repeatable");
  app->add_option("--seed", c.seed, "run seed");
  app->add_flag("--quiet", c.quiet, "suppress progress lines");
}

inline Config resolve_config(const Common& common, Config base = {}) {
  Config c = base;
  if (!common.config_file.empty()) {
    if (!fs::exists(common.config_file)) throw std::runtime_error("config file not found: " + common.config_file);
    c = load_config(common.config_file, c);
  }
  for (const auto& kv : common.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    set_config_value(c, config_detail::trim(kv.substr(0, eq)), config_detail::trim(kv.substr(eq + 1)));
  }
  if (common.seed) c.seed = *common.seed;
  validate(c);
  return c;
}

inline void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw std::runtime_error("file not found: " + p.string());
}

struct DataDir {
  std::vector<SyntheticScene> train, val;
  Vocabulary vocab;
};

inline DataDir load_data(const std::string& dir, bool need_train, bool need_val) {
  const fs::path d(dir);
  if (!fs::is_directory(d)) throw std::runtime_error("data directory not found: " + dir);
  DataDir out;
  require_file(d / "vocab.txt");
  out.vocab = Vocabulary::load((d / "vocab.txt").string());
  if (need_train) {
    require_file(d / "train.jsonl");
    out.train = read_dataset((d / "train.jsonl").string());
  }
  if (need_val) {
    require_file(d / "val.jsonl");
    out.val = read_dataset((d / "val.jsonl").string());
  }
  return out;
}

inline GeneratorConfig generator_from(const Config& c) {
  GeneratorConfig g;
  g.min_objects = c.min_objects;
  g.max_objects = c.max_objects;
  g.utterances_per_scene = c.utterances_per_scene;
  g.qa_per_scene = c.qa_per_scene;
  return g;
}

/// Scenes [0, n) of one split; workers take disjoint index ranges and write
/// into their own slots, so the result does not depend on `threads`.
inline std::vector<SyntheticScene> generate_split(const Config& c, std::uint64_t split, int n, int threads) {
  std::vector<SyntheticScene> scenes(static_cast<std::size_t>(n));
  const auto g = generator_from(c);
  threads = std::max(1, std::min(threads, n));
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex mu;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += threads) scenes[i] = generate_scene(scene_seed(c.seed, split, i), g);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return scenes;
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoull(item));
  }
  if (out.empty()) throw std::invalid_argument("--seeds must list at least one seed");
  return out;
}

}  // namespace cli_detail

/// Returns the process exit code. Output goes to `out`, diagnostics to `err`.
inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"Scene-graph guided 3D vision-language pre-training at desk scale"};
  app.require_subcommand(1);

  // gen-data
  Common gen_common;
  std::string gen_out;
  std::optional<int> gen_scenes, gen_val;
  int gen_threads = 1;
  auto* gen = app.add_subcommand("gen-data", "generate train/val datasets, vocabulary and manifest");
  add_common(gen, gen_common);
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--scenes", gen_scenes, "training scenes");
  gen->add_option("--val-scenes", gen_val, "validation scenes");
  gen->add_option("--threads", gen_threads, "worker threads");

  // pretrain
  Common pre_common;
  std::string pre_data, pre_out;
  std::optional<int> pre_epochs;
  auto* pre = app.add_subcommand("pretrain", "pre-train and write a checkpoint plus loss CSV");
  add_common(pre, pre_common);
  pre->add_option("--data", pre_data, "dataset directory")->required();
  pre->add_option("--out", pre_out, "run directory")->required();
  pre->add_option("--epochs", pre_epochs, "pre-training epochs");

  // finetune
  Common ft_common;
  std::string ft_data, ft_out, ft_task, ft_ckpt;
  std::optional<int> ft_epochs;
  auto* ft = app.add_subcommand("finetune", "fine-tune on a task, from scratch or a checkpoint");
  add_common(ft, ft_common);
  ft->add_option("--task", ft_task, "ground | caption | qa")->required();
  ft->add_option("--data", ft_data, "dataset directory")->required();
  ft->add_option("--out", ft_out, "run directory")->required();
  ft->add_option("--ckpt", ft_ckpt, "checkpoint directory to start from");
  ft->add_option("--epochs", ft_epochs, "fine-tuning epochs");

  // eval
  Common ev_common;
  std::string ev_data, ev_out, ev_task, ev_ckpt, ev_split = "val";
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint and write metrics.csv");
  add_common(ev, ev_common);
  ev->add_option("--task", ev_task, "ground | caption | qa")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint directory")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--out", ev_out, "directory for metrics.csv (default: the checkpoint)");
  ev->add_option("--split", ev_split, "train | val");

  // ablate
  Common ab_common;
  std::string ab_data, ab_out, ab_grid = "table5", ab_seeds = "1,2,3";
  auto* ab = app.add_subcommand("ablate", "run an ablation grid and emit a comparison table");
  add_common(ab, ab_common);
  ab->add_option("--grid", ab_grid, "table5 | depth | layer");
  ab->add_option("--data", ab_data, "dataset directory")->required();
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--seeds", ab_seeds, "comma-separated seeds");

  // report
  std::string rep_runs, rep_out;
  auto* rep = app.add_subcommand("report", "render loss/metric CSVs into SVG plots and report.md");
  rep->add_option("--runs", rep_runs, "directory to scan for CSVs")->required();
  rep->add_option("--out", rep_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) {
      Config c = resolve_config(gen_common);
      if (gen_scenes) c.scenes_train = *gen_scenes;
      if (gen_val) c.scenes_val = *gen_val;
      validate(c);
      fs::create_directories(gen_out);
      const auto train = generate_split(c, 0, c.scenes_train, gen_threads);
      const auto val = generate_split(c, 1, c.scenes_val, gen_threads);
      write_dataset(train, (fs::path(gen_out) / "train.jsonl").string());
      write_dataset(val, (fs::path(gen_out) / "val.jsonl").string());
      Vocabulary().save((fs::path(gen_out) / "vocab.txt").string());
      write_config_file(c, (fs::path(gen_out) / "config.txt").string());
      write_json(run_manifest("gen-data", c,
                              {{"train", "train.jsonl"}, {"val", "val.jsonl"}, {"vocab", "vocab.txt"},
                               {"config", "config.txt"}}),
                 (fs::path(gen_out) / "manifest.json").string());
      out << "wrote " << train.size() << " train and " << val.size() << " val scenes to " << gen_out << '\n';
      return 0;
    }
    auto progress = [&](bool quiet) -> ProgressFn {
      if (quiet) return {};
      return [&](const std::string& s) { out << s << '\n' << std::flush; };
    };
    if (pre->parsed()) {
      Config c = resolve_config(pre_common);
      if (pre_epochs) c.pretrain_epochs = *pre_epochs;
      const auto data = load_data(pre_data, true, false);
      auto model = make_model(c, data.vocab);
      const auto trace = run_pretrain(*model, c, data.train, data.vocab, progress(pre_common.quiet));
      fs::create_directories(pre_out);
      trace.write_csv((fs::path(pre_out) / "pretrain_loss.csv").string());
      save_checkpoint(model->store, checkpoint_meta(c, "pretrain", trace), pre_out);
      write_config_file(c, (fs::path(pre_out) / "config.txt").string());
      write_json(run_manifest("pretrain", c,
                              {{"checkpoint", "params.bin"}, {"meta", "meta.json"}, {"loss", "pretrain_loss.csv"}}),
                 (fs::path(pre_out) / "manifest.json").string());
      out << "pre-training done: " << pre_out << '\n';
      return 0;
    }
    if (ft->parsed()) {
      const Task task = parse_task(ft_task);
      Config c = resolve_config(ft_common);
      if (ft_epochs) c.finetune_epochs = *ft_epochs;
      const auto data = load_data(ft_data, true, true);
      auto model = make_model(c, data.vocab);
      if (!ft_ckpt.empty()) load_checkpoint(model->store, ft_ckpt);
      const auto trace = run_finetune(*model, task, c, data.train, data.vocab, progress(ft_common.quiet));
      fs::create_directories(ft_out);
      trace.write_csv((fs::path(ft_out) / "finetune_loss.csv").string());
      auto meta = checkpoint_meta(c, std::string("finetune-") + to_string(task), trace);
      meta["init"] = ft_ckpt.empty() ? "scratch" : ft_ckpt;
      save_checkpoint(model->store, meta, ft_out);
      const auto report = run_eval(*model, task, c, data.val, data.vocab);
      report.write_csv((fs::path(ft_out) / "metrics.csv").string());
      write_config_file(c, (fs::path(ft_out) / "config.txt").string());
      write_json(run_manifest("finetune", c,
                              {{"checkpoint", "params.bin"}, {"loss", "finetune_loss.csv"}, {"metrics", "metrics.csv"}}),
                 (fs::path(ft_out) / "manifest.json").string());
      for (const auto& r : report.rows) out << report.task << ' ' << r.metric << '@' << r.k << " = " << r.value << '\n';
      return 0;
    }
    if (ev->parsed()) {
      const Task task = parse_task(ev_task);
      const fs::path meta_path = fs::path(ev_ckpt) / "meta.json";
      require_file(fs::path(ev_ckpt) / "params.bin");
      require_file(meta_path);
      const auto meta = read_json(meta_path.string());
      Config stored = meta.contains("config") ? parse_config_text(meta["config"].get<std::string>()) : Config{};
      Config c = resolve_config(ev_common, stored);
      const bool use_train = ev_split == "train";
      if (!use_train && ev_split != "val") throw std::invalid_argument("--split must be train or val");
      const auto data = load_data(ev_data, use_train, !use_train);
      auto model = make_model(c, data.vocab);
      load_checkpoint(model->store, ev_ckpt);
      const auto report = run_eval(*model, task, c, use_train ? data.train : data.val, data.vocab);
      const std::string dir = ev_out.empty() ? ev_ckpt : ev_out;
      fs::create_directories(dir);
      report.write_csv((fs::path(dir) / "metrics.csv").string());
      write_json(run_manifest("eval", c, {{"metrics", "metrics.csv"}, {"checkpoint", ev_ckpt}}),
                 (fs::path(dir) / "manifest.json").string());
      for (const auto& r : report.rows) out << report.task << ' ' << r.metric << '@' << r.k << " = " << r.value << '\n';
      return 0;
    }
    if (ab->parsed()) {
      const Grid grid = parse_grid(ab_grid);
      Config c = resolve_config(ab_common);
      const auto seeds = parse_seeds(ab_seeds);
      const auto data = load_data(ab_data, true, true);
      const auto rows = run_ablation(grid, c, seeds, data.train, data.val, data.vocab, ab_out, progress(ab_common.quiet));
      write_json(run_manifest("ablate", c, {{"table", "ablation.md"}, {"rows", "ablation.csv"}}),
                 (fs::path(ab_out) / "manifest.json").string());
      out << ablation_table(rows, grid == Grid::kTable5 ? "Arm" : grid == Grid::kDepth ? "Graph layers" : "Graph layer");
      return 0;
    }
    if (rep->parsed()) {
      const int n = render_report(rep_runs, rep_out);
      out << "rendered " << n << " files into " << rep_out << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace sgvlp
