// acre: knowledge-graph-embedding experiments with atrous-convolution scoring.
// Subcommands: preprocess, train, eval, report, grid-search.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "acre/checkpoint.hpp"
#include "acre/config.hpp"
#include "acre/data.hpp"
#include "acre/eval.hpp"
#include "acre/kernels.hpp"
#include "acre/model.hpp"
#include "acre/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string one_line(std::string msg) {
  for (char& c : msg) {
    if (c == '\n') c = ';';
  }
  return msg;
}

// Flag overrides collected as key=value pairs, applied after the config file.
struct Overrides {
  std::vector<std::pair<std::string, std::string>> kv;

  void bind(CLI::App* cmd) {
    static const char* keys[] = {
        "dataset_dir",   "embedding_dim", "reshape_rows",  "reshape_cols",
        "kernel",        "filters",       "rates",         "structure",
        "integration",   "mix_channels",  "dropout_input", "dropout_feature",
        "dropout_score", "batchnorm",     "batch_size",    "learning_rate",
        "epochs",        "label_smoothing", "eval_every",  "patience",
        "seed",          "head_mode",     "tie_policy",    "eval_batch_size"};
    for (const char* key : keys) {
      std::string k = key;
      cmd->add_option_function<std::string>(
             "--" + k, [this, k](const std::string& v) { kv.emplace_back(k, v); })
          ->type_name("VALUE");
    }
  }

  void apply(acre::config::RunConfig& cfg) const {
    std::vector<std::string> errors;
    for (const auto& [k, v] : kv) acre::config::apply_override(cfg, k, v, errors);
    if (!errors.empty()) {
      std::ostringstream os;
      os << "invalid flags:";
      for (const auto& e : errors) os << " " << e << ";";
      throw std::invalid_argument(os.str());
    }
  }
};

acre::config::RunConfig resolve_config(const std::string& config_path, const Overrides& ov,
                                       const std::string& data_dir) {
  acre::config::RunConfig cfg;
  if (!config_path.empty()) cfg = acre::config::parse_file(config_path);
  ov.apply(cfg);
  if (!data_dir.empty()) cfg.dataset_dir = data_dir;
  return cfg;
}

fs::path make_run_dir(const std::string& explicit_dir, const std::string& name) {
  fs::path dir;
  if (!explicit_dir.empty()) {
    dir = explicit_dir;
  } else {
    const char* root = std::getenv("ACRE_OUT_ROOT");
    dir = fs::path(root ? root : "runs") / name;
  }
  fs::create_directories(dir);
  return dir;
}

acre::data::TripleStore load_store(const std::string& dir) {
  const fs::path cache = fs::path(dir) / "cache.bin";
  if (fs::exists(cache)) return acre::data::load_cache(cache.string());
  return acre::data::load_dir(dir);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
}

int cmd_preprocess(const std::string& data_dir, const std::string& out) {
  auto store = acre::data::load_dir(data_dir);
  if (!out.empty()) {
    fs::create_directories(fs::path(out).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(out).parent_path());
    acre::data::save_cache(store, out);
  }
  std::cout << store.stats_line() << "\n";
  if (store.duplicates_dropped > 0) {
    std::cout << "duplicates_dropped=" << store.duplicates_dropped << "\n";
  }
  if (!store.entities_unseen_in_train.empty()) {
    std::cout << "entities_unseen_in_train=" << store.entities_unseen_in_train.size() << "\n";
  }
  return 0;
}

int cmd_train(const acre::config::RunConfig& cfg, const fs::path& run_dir, bool quiet) {
  if (cfg.dataset_dir.empty()) throw std::invalid_argument("train: --data is required");
  auto store = load_store(cfg.dataset_dir);

  write_text(run_dir / "config.txt", "# schema: acre-config-v1\n" + cfg.to_text());

  std::ofstream log_os(run_dir / "train_log.jsonl", std::ios::trunc);
  auto on_epoch = [&](const acre::train::EpochLog& e) {
    json j{{"schema", "acre-epoch-v1"}, {"epoch", e.epoch}, {"loss", e.loss}};
    if (e.val_mrr) j["val_mrr"] = *e.val_mrr;
    log_os << j.dump() << "\n";
    log_os.flush();
    if (!quiet) {
      std::cout << "epoch " << e.epoch << " loss " << e.loss;
      if (e.val_mrr) std::cout << " val_mrr " << *e.val_mrr;
      std::cout << "\n";
    }
  };

  auto ck = acre::train::train(store, cfg.model, cfg.train, nullptr, on_epoch);
  acre::checkpoint::save(ck, (run_dir / "checkpoint.bin").string());
  std::cout << "checkpoint " << (run_dir / "checkpoint.bin").string() << " best_val_mrr "
            << ck.best_val_mrr << " epoch " << ck.epoch << "\n";
  return 0;
}

int cmd_eval(const std::string& ck_path, const std::string& data_dir,
             const std::string& split_name, const std::string& out) {
  auto ck = acre::checkpoint::load(ck_path);
  auto store = load_store(data_dir.empty() ? std::string() : data_dir);
  acre::data::Split split;
  if (split_name == "train") split = acre::data::Split::train;
  else if (split_name == "valid") split = acre::data::Split::valid;
  else if (split_name == "test") split = acre::data::Split::test;
  else throw std::invalid_argument("eval: --split must be train|valid|test");

  if (ck.train_cfg.head_mode == acre::eval::HeadMode::reciprocal && !store.reciprocal_flag) {
    acre::data::add_reciprocals(store);
  }
  if (store.num_entities() != ck.num_entities || store.num_relations() != ck.num_relations) {
    throw std::invalid_argument("eval: dataset vocabulary does not match the checkpoint");
  }
  acre::model::Model m(ck.model_cfg, ck.params);
  acre::eval::EvalOptions opts;
  opts.head_mode = ck.train_cfg.head_mode;
  opts.tie_policy = ck.train_cfg.tie_policy;
  const auto rep = acre::eval::evaluate(m, store, split, opts);
  const std::string text = "# schema: acre-metrics-v1\n" + rep.to_text();
  std::cout << text;
  if (!out.empty()) write_text(out, text);
  return 0;
}

int cmd_report(const std::string& ck_path, const std::string& config_path, const Overrides& ov,
               bool params_only, const std::string& data_dir, const std::string& split_name) {
  if (params_only && ck_path.empty()) {
    // Parameter count from a config alone; vocabulary sizes come from flags
    // num_entities/num_relations via the dataset or explicit values.
    acre::config::RunConfig cfg = resolve_config(config_path, ov, data_dir);
    if (cfg.dataset_dir.empty()) {
      throw std::invalid_argument("report --params needs --data (for vocabulary sizes)");
    }
    auto store = load_store(cfg.dataset_dir);
    std::size_t n_rel = store.num_relations();
    if (cfg.train.head_mode == acre::eval::HeadMode::reciprocal && !store.reciprocal_flag) {
      n_rel *= 2;
    }
    acre::Rng rng(0);
    auto params = acre::model::init_params(cfg.model, store.num_entities(), n_rel, rng);
    const double mill = static_cast<double>(params.count_params()) / 1e6;
    std::cout << "# schema: acre-params-v1\n";
    std::cout << "structure " << acre::model::structure_name(cfg.model.structure)
              << " params " << params.count_params() << " (" << mill << "M)\n";
    return 0;
  }
  if (ck_path.empty()) throw std::invalid_argument("report: --checkpoint is required");
  auto ck = acre::checkpoint::load(ck_path);
  std::cout << "# schema: acre-report-v1\n";
  std::cout << "structure " << acre::model::structure_name(ck.model_cfg.structure)
            << " params " << ck.params.count_params() << " ("
            << static_cast<double>(ck.params.count_params()) / 1e6 << "M)\n";
  if (!data_dir.empty()) {
    auto store = load_store(data_dir);
    if (ck.train_cfg.head_mode == acre::eval::HeadMode::reciprocal && !store.reciprocal_flag) {
      acre::data::add_reciprocals(store);
    }
    acre::data::Split split = split_name == "valid" ? acre::data::Split::valid
                                                    : acre::data::Split::test;
    acre::model::Model m(ck.model_cfg, ck.params);
    acre::eval::EvalOptions opts;
    opts.head_mode = ck.train_cfg.head_mode;
    opts.tie_policy = ck.train_cfg.tie_policy;
    const auto rep = acre::eval::evaluate(m, store, split, opts);
    std::cout << rep.to_text();
    const auto cat = acre::eval::category_report(m, store, split, opts);
    std::cout << cat.to_text();
  }
  return 0;
}

int cmd_grid(const acre::config::RunConfig& cfg, const fs::path& run_dir,
             std::size_t cell_epochs) {
  if (cfg.dataset_dir.empty()) throw std::invalid_argument("grid-search: --data is required");
  auto store = load_store(cfg.dataset_dir);
  acre::train::GridSpace space;
  if (cell_epochs > 0) space.cell_epochs = cell_epochs;
  auto result = acre::train::grid_search(store, cfg.model, cfg.train, space);

  json cells = json::array();
  for (const auto& c : result.cells) {
    cells.push_back(json{{"learning_rate", c.learning_rate},
                         {"dropout", c.dropout},
                         {"rates", c.rates},
                         {"label_smoothing", c.label_smoothing},
                         {"val_mrr", c.val_mrr}});
  }
  json out{{"schema", "acre-grid-v1"},
           {"cells", cells},
           {"best",
            {{"learning_rate", result.best.learning_rate},
             {"dropout", result.best.dropout},
             {"rates", result.best.rates},
             {"label_smoothing", result.best.label_smoothing},
             {"val_mrr", result.best.val_mrr}}}};
  write_text(run_dir / "grid.json", out.dump(2) + "\n");
  acre::checkpoint::save(result.best_checkpoint, (run_dir / "checkpoint.bin").string());
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"atrous-convolution knowledge graph embeddings"};
  app.require_subcommand(1);

  std::string data_dir, config_path, run_dir_flag, ck_path, split_name = "test", out_path;
  bool params_only = false, quiet = false;
  std::size_t cell_epochs = 0;

  auto* pre = app.add_subcommand("preprocess", "ingest a triple dataset and cache it");
  pre->add_option("--data", data_dir, "directory with train.txt/valid.txt/test.txt")
      ->required();
  pre->add_option("--out", out_path, "cache file to write");

  Overrides train_ov, grid_ov, report_ov;
  auto* tr = app.add_subcommand("train", "train a model and write a run directory");
  tr->add_option("--data", data_dir, "dataset directory");
  tr->add_option("--config", config_path, "key=value config file");
  tr->add_option("--run-dir", run_dir_flag, "output directory (default $ACRE_OUT_ROOT/<name>)");
  tr->add_flag("--quiet", quiet, "suppress per-epoch stdout");
  train_ov.bind(tr);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  ev->add_option("--checkpoint", ck_path, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--split", split_name, "train|valid|test");
  ev->add_option("--out", out_path, "also write the report here");

  auto* rp = app.add_subcommand("report", "parameter count and breakdown tables");
  rp->add_option("--checkpoint", ck_path, "checkpoint file");
  rp->add_option("--config", config_path, "config file (for --params without checkpoint)");
  rp->add_option("--data", data_dir, "dataset directory");
  rp->add_option("--split", split_name, "valid|test for the breakdown tables");
  rp->add_flag("--params", params_only, "print the parameter count only");
  report_ov.bind(rp);

  auto* gs = app.add_subcommand("grid-search", "validation-MRR grid search");
  gs->add_option("--data", data_dir, "dataset directory");
  gs->add_option("--config", config_path, "key=value config file");
  gs->add_option("--run-dir", run_dir_flag, "output directory");
  gs->add_option("--cell-epochs", cell_epochs, "epoch budget per grid cell");
  grid_ov.bind(gs);

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) return cmd_preprocess(data_dir, out_path);
    if (tr->parsed()) {
      auto cfg = resolve_config(config_path, train_ov, data_dir);
      const auto dir = make_run_dir(run_dir_flag,
                                    "train-" + acre::model::structure_name(cfg.model.structure) +
                                        "-seed" + std::to_string(cfg.train.seed));
      return cmd_train(cfg, dir, quiet);
    }
    if (ev->parsed()) return cmd_eval(ck_path, data_dir, split_name, out_path);
    if (rp->parsed()) {
      return cmd_report(ck_path, config_path, report_ov, params_only, data_dir, split_name);
    }
    if (gs->parsed()) {
      auto cfg = resolve_config(config_path, grid_ov, data_dir);
      const auto dir = make_run_dir(run_dir_flag, "grid-seed" + std::to_string(cfg.train.seed));
      return cmd_grid(cfg, dir, cell_epochs);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 2;
}
