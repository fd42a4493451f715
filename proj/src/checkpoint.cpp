#include "acre/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace acre::checkpoint {

using json = nlohmann::json;

namespace {

json model_cfg_to_json(const model::ModelConfig& c) {
  return json{{"embedding_dim", c.embedding_dim},
              {"n1", c.n1},
              {"n2", c.n2},
              {"kernel", c.kernel},
              {"filters", c.filters},
              {"atrous_stages", c.atrous_stages},
              {"rates", c.rates},
              {"structure", model::structure_name(c.structure)},
              {"integration", model::integration_name(c.integration)},
              {"mix_channels", c.mix_channels},
              {"dropout_input", c.dropout_input},
              {"dropout_feature", c.dropout_feature},
              {"dropout_score", c.dropout_score},
              {"batchnorm", c.batchnorm}};
}

model::ModelConfig model_cfg_from_json(const json& j) {
  model::ModelConfig c;
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.n1 = j.at("n1").get<std::size_t>();
  c.n2 = j.at("n2").get<std::size_t>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.filters = j.at("filters").get<std::size_t>();
  c.atrous_stages = j.at("atrous_stages").get<std::size_t>();
  c.rates = j.at("rates").get<std::vector<std::size_t>>();
  c.structure = model::parse_structure(j.at("structure").get<std::string>());
  c.integration = model::parse_integration(j.at("integration").get<std::string>());
  c.mix_channels = j.at("mix_channels").get<std::size_t>();
  c.dropout_input = j.at("dropout_input").get<double>();
  c.dropout_feature = j.at("dropout_feature").get<double>();
  c.dropout_score = j.at("dropout_score").get<double>();
  c.batchnorm = j.at("batchnorm").get<bool>();
  return c;
}

json train_cfg_to_json(const train::TrainConfig& c) {
  return json{{"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"epochs", c.epochs},
              {"label_smoothing", c.label_smoothing},
              {"eval_every", c.eval_every},
              {"patience", c.patience},
              {"seed", c.seed},
              {"head_mode", eval::head_mode_name(c.head_mode)},
              {"tie_policy", eval::tie_policy_name(c.tie_policy)}};
}

train::TrainConfig train_cfg_from_json(const json& j) {
  train::TrainConfig c;
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.label_smoothing = j.at("label_smoothing").get<double>();
  c.eval_every = j.at("eval_every").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.head_mode = eval::parse_head_mode(j.at("head_mode").get<std::string>());
  c.tie_policy = eval::parse_tie_policy(j.at("tie_policy").get<std::string>());
  return c;
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

// Named tensor list in a fixed, reproducible order.
std::vector<std::pair<std::string, Tensor>> all_tensors(const model::ModelParams& p) {
  auto out = p.trainable();
  for (auto& kv : p.buffers()) out.push_back(kv);
  return out;
}

}  // namespace

void save(const train::Checkpoint& ck, const std::string& path) {
  json header;
  header["version"] = 1;
  header["model"] = model_cfg_to_json(ck.model_cfg);
  header["train"] = train_cfg_to_json(ck.train_cfg);
  header["num_entities"] = ck.num_entities;
  header["num_relations"] = ck.num_relations;
  header["epoch"] = ck.epoch;
  header["best_val_mrr"] = ck.best_val_mrr;
  header["adam_steps"] = ck.adam_steps;

  const auto tensors = all_tensors(ck.params);
  json table = json::array();
  std::size_t total = 0;
  for (const auto& [name, t] : tensors) {
    table.push_back(json{{"name", name}, {"shape", t.shape()}});
    total += t.numel();
  }
  header["tensors"] = table;
  json adam_lens = json::array();
  for (const auto& m : ck.adam_m) adam_lens.push_back(m.size());
  header["adam_lens"] = adam_lens;

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  const std::string hs = header.dump();
  write_u64(os, hs.size());
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  auto write_doubles = [&](const std::vector<double>& v) {
    for (double d : v) {
      std::uint64_t bits;
      std::memcpy(&bits, &d, 8);
      write_u64(os, bits);
    }
  };
  for (const auto& [name, t] : tensors) write_doubles(t.data());
  for (const auto& m : ck.adam_m) write_doubles(m);
  for (const auto& v : ck.adam_v) write_doubles(v);
  (void)total;
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

train::Checkpoint load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const std::uint64_t hlen = read_u64(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw std::runtime_error("checkpoint: truncated header in " + path);
  json header = json::parse(hs);
  if (header.at("version").get<int>() != 1) {
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  }

  train::Checkpoint ck;
  ck.model_cfg = model_cfg_from_json(header.at("model"));
  ck.train_cfg = train_cfg_from_json(header.at("train"));
  ck.num_entities = header.at("num_entities").get<std::size_t>();
  ck.num_relations = header.at("num_relations").get<std::size_t>();
  ck.epoch = header.at("epoch").get<std::size_t>();
  ck.best_val_mrr = header.at("best_val_mrr").get<double>();
  ck.adam_steps = header.at("adam_steps").get<std::size_t>();

  Rng rng(0);
  ck.params = model::init_params(ck.model_cfg, ck.num_entities, ck.num_relations, rng);
  auto tensors = all_tensors(ck.params);
  const json& table = header.at("tensors");
  if (table.size() != tensors.size()) {
    throw std::runtime_error("checkpoint: tensor table mismatch in " + path);
  }
  auto read_doubles = [&](std::vector<double>& v) {
    for (double& d : v) {
      const std::uint64_t bits = read_u64(is);
      std::memcpy(&d, &bits, 8);
    }
  };
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = table[i];
    if (entry.at("name").get<std::string>() != tensors[i].first ||
        entry.at("shape").get<Shape>() != tensors[i].second.shape()) {
      throw std::runtime_error("checkpoint: tensor '" + tensors[i].first +
                               "' does not match stored layout in " + path);
    }
    read_doubles(tensors[i].second.data());
  }
  for (std::size_t len : header.at("adam_lens").get<std::vector<std::size_t>>()) {
    ck.adam_m.emplace_back(len, 0.0);
    ck.adam_v.emplace_back(len, 0.0);
  }
  for (auto& m : ck.adam_m) read_doubles(m);
  for (auto& v : ck.adam_v) read_doubles(v);
  if (!is) throw std::runtime_error("checkpoint: truncated blob in " + path);
  return ck;
}

}  // namespace acre::checkpoint
