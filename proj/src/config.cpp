#include "acre/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace acre::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool parse_size(const std::string& v, std::size_t& out) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) return false;
    out = static_cast<std::size_t>(x);
    return true;
  } catch (...) {
    return false;
  }
}

bool parse_double(const std::string& v, double& out) {
  try {
    std::size_t pos = 0;
    out = std::stod(v, &pos);
    return pos == v.size();
  } catch (...) {
    return false;
  }
}

bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "on") { out = true; return true; }
  if (v == "false" || v == "0" || v == "off") { out = false; return true; }
  return false;
}

bool parse_size_list(const std::string& v, std::vector<std::size_t>& out) {
  out.clear();
  std::string token;
  std::istringstream is(v);
  while (std::getline(is, token, ',')) {
    std::size_t x;
    if (!parse_size(trim(token), x)) return false;
    out.push_back(x);
  }
  return !out.empty();
}

}  // namespace

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value,
                    std::vector<std::string>& errors) {
  auto bad = [&](const char* expect) {
    errors.push_back("key '" + key + "': bad value '" + value + "' (expected " + expect + ")");
  };
  if (key == "dataset_dir") {
    cfg.dataset_dir = value;
  } else if (key == "embedding_dim") {
    if (!parse_size(value, cfg.model.embedding_dim)) bad("positive integer");
  } else if (key == "reshape_rows") {
    if (!parse_size(value, cfg.model.n1)) bad("positive integer");
  } else if (key == "reshape_cols") {
    if (!parse_size(value, cfg.model.n2)) bad("positive integer");
  } else if (key == "kernel") {
    if (!parse_size(value, cfg.model.kernel)) bad("positive integer");
  } else if (key == "filters") {
    if (!parse_size(value, cfg.model.filters)) bad("positive integer");
  } else if (key == "rates") {
    if (!parse_size_list(value, cfg.model.rates)) {
      bad("comma-separated integers");
    } else {
      cfg.model.atrous_stages = cfg.model.rates.size();
    }
  } else if (key == "structure") {
    try { cfg.model.structure = model::parse_structure(value); }
    catch (...) { bad("serial|parallel"); }
  } else if (key == "integration") {
    try { cfg.model.integration = model::parse_integration(value); }
    catch (...) { bad("add|concat"); }
  } else if (key == "mix_channels") {
    if (!parse_size(value, cfg.model.mix_channels)) bad("positive integer");
  } else if (key == "dropout_input") {
    if (!parse_double(value, cfg.model.dropout_input)) bad("real");
  } else if (key == "dropout_feature") {
    if (!parse_double(value, cfg.model.dropout_feature)) bad("real");
  } else if (key == "dropout_score") {
    if (!parse_double(value, cfg.model.dropout_score)) bad("real");
  } else if (key == "batchnorm") {
    if (!parse_bool(value, cfg.model.batchnorm)) bad("true|false");
  } else if (key == "batch_size") {
    if (!parse_size(value, cfg.train.batch_size)) bad("positive integer");
  } else if (key == "learning_rate") {
    if (!parse_double(value, cfg.train.learning_rate)) bad("real");
  } else if (key == "epochs") {
    if (!parse_size(value, cfg.train.epochs)) bad("positive integer");
  } else if (key == "label_smoothing") {
    if (!parse_double(value, cfg.train.label_smoothing)) bad("real");
  } else if (key == "eval_every") {
    if (!parse_size(value, cfg.train.eval_every)) bad("positive integer");
  } else if (key == "patience") {
    if (!parse_size(value, cfg.train.patience)) bad("positive integer");
  } else if (key == "seed") {
    std::size_t s;
    if (!parse_size(value, s)) bad("non-negative integer");
    else cfg.train.seed = s;
  } else if (key == "head_mode") {
    try {
      cfg.train.head_mode = eval::parse_head_mode(value);
      cfg.eval.head_mode = cfg.train.head_mode;
    } catch (...) { bad("reciprocal|direct"); }
  } else if (key == "tie_policy") {
    try {
      cfg.train.tie_policy = eval::parse_tie_policy(value);
      cfg.eval.tie_policy = cfg.train.tie_policy;
    } catch (...) { bad("mean|optimistic|pessimistic"); }
  } else if (key == "eval_batch_size") {
    if (!parse_size(value, cfg.eval.batch_size)) bad("positive integer");
  } else {
    errors.push_back("unknown key '" + key + "'");
  }
}

RunConfig parse_file(const std::string& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open " + path);
  std::vector<std::string> errors;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(path + ":" + std::to_string(lineno) + ": expected key=value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::vector<std::string> local;
    apply_override(base, key, value, local);
    for (const auto& e : local) {
      errors.push_back(path + ":" + std::to_string(lineno) + ": " + e);
    }
  }
  if (!errors.empty()) {
    std::ostringstream os;
    os << "config errors:";
    for (const auto& e : errors) os << "\n  - " << e;
    throw std::invalid_argument(os.str());
  }
  return base;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "dataset_dir = " << dataset_dir << "\n";
  os << "embedding_dim = " << model.embedding_dim << "\n";
  os << "reshape_rows = " << model.n1 << "\n";
  os << "reshape_cols = " << model.n2 << "\n";
  os << "kernel = " << model.kernel << "\n";
  os << "filters = " << model.filters << "\n";
  os << "rates = ";
  for (std::size_t i = 0; i < model.rates.size(); ++i) {
    if (i) os << ",";
    os << model.rates[i];
  }
  os << "\n";
  os << "structure = " << model::structure_name(model.structure) << "\n";
  os << "integration = " << model::integration_name(model.integration) << "\n";
  os << "mix_channels = " << model.mix_channels << "\n";
  os << "dropout_input = " << model.dropout_input << "\n";
  os << "dropout_feature = " << model.dropout_feature << "\n";
  os << "dropout_score = " << model.dropout_score << "\n";
  os << "batchnorm = " << (model.batchnorm ? "true" : "false") << "\n";
  os << "batch_size = " << train.batch_size << "\n";
  os << "learning_rate = " << train.learning_rate << "\n";
  os << "epochs = " << train.epochs << "\n";
  os << "label_smoothing = " << train.label_smoothing << "\n";
  os << "eval_every = " << train.eval_every << "\n";
  os << "patience = " << train.patience << "\n";
  os << "seed = " << train.seed << "\n";
  os << "head_mode = " << eval::head_mode_name(train.head_mode) << "\n";
  os << "tie_policy = " << eval::tie_policy_name(train.tie_policy) << "\n";
  os << "eval_batch_size = " << eval.batch_size << "\n";
  return os.str();
}

}  // namespace acre::config
