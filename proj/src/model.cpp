#include "acre/model.hpp"

#include <cmath>
#include <stdexcept>

namespace acre::model {

using ops::Padding;

std::string structure_name(Structure s) {
  return s == Structure::serial ? "serial" : "parallel";
}

std::string integration_name(Integration i) {
  return i == Integration::add ? "add" : "concat";
}

Structure parse_structure(const std::string& s) {
  if (s == "serial") return Structure::serial;
  if (s == "parallel") return Structure::parallel;
  throw std::invalid_argument("structure must be serial|parallel, got '" + s + "'");
}

Integration parse_integration(const std::string& s) {
  if (s == "add") return Integration::add;
  if (s == "concat" || s == "con") return Integration::concat;
  throw std::invalid_argument("integration must be add|concat, got '" + s + "'");
}

std::vector<std::string> ModelConfig::validate() const {
  std::vector<std::string> errs;
  if (2 * embedding_dim != n1 * n2) {
    errs.push_back("2*embedding_dim (" + std::to_string(2 * embedding_dim) +
                   ") != n1*n2 (" + std::to_string(n1 * n2) + ")");
  }
  if (rates.size() != atrous_stages) {
    errs.push_back("rates has " + std::to_string(rates.size()) + " entries, expected T=" +
                   std::to_string(atrous_stages));
  }
  for (std::size_t r : rates) {
    if (r < 1) errs.push_back("atrous rates must be >= 1");
  }
  if (kernel < 1) errs.push_back("kernel must be >= 1");
  if (filters < 1) errs.push_back("filters must be >= 1");
  if (mix_channels < 1) errs.push_back("mix_channels must be >= 1");
  for (double p : {dropout_input, dropout_feature, dropout_score}) {
    if (p < 0.0 || p >= 1.0) {
      errs.push_back("dropout probabilities must be in [0,1)");
      break;
    }
  }
  return errs;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::trainable() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("entity_table", entity_table);
  out.emplace_back("relation_table", relation_table);
  for (std::size_t t = 0; t < conv_w.size(); ++t) {
    out.emplace_back("conv_w" + std::to_string(t), conv_w[t]);
    out.emplace_back("conv_b" + std::to_string(t), conv_b[t]);
  }
  if (mix_w.defined()) out.emplace_back("mix_w", mix_w);
  out.emplace_back("score_w", score_w);
  out.emplace_back("score_b", score_b);
  if (bn_in_gamma.defined()) {
    out.emplace_back("bn_in_gamma", bn_in_gamma);
    out.emplace_back("bn_in_beta", bn_in_beta);
    for (std::size_t t = 0; t < bn_gamma.size(); ++t) {
      out.emplace_back("bn_gamma" + std::to_string(t), bn_gamma[t]);
      out.emplace_back("bn_beta" + std::to_string(t), bn_beta[t]);
    }
    out.emplace_back("bn_fc_gamma", bn_fc_gamma);
    out.emplace_back("bn_fc_beta", bn_fc_beta);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::buffers() const {
  std::vector<std::pair<std::string, Tensor>> out;
  if (bn_in_mean.defined()) {
    out.emplace_back("bn_in_mean", bn_in_mean);
    out.emplace_back("bn_in_var", bn_in_var);
    for (std::size_t t = 0; t < bn_mean.size(); ++t) {
      out.emplace_back("bn_mean" + std::to_string(t), bn_mean[t]);
      out.emplace_back("bn_var" + std::to_string(t), bn_var[t]);
    }
    out.emplace_back("bn_fc_mean", bn_fc_mean);
    out.emplace_back("bn_fc_var", bn_fc_var);
  }
  return out;
}

std::size_t ModelParams::count_params() const {
  std::size_t total = 0;
  for (const auto& [name, t] : trainable()) total += t.numel();
  return total;
}

namespace {

Tensor uniform_tensor(Shape shape, double limit, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::size_t num_entities,
                        std::size_t num_relations, Rng& rng) {
  const auto errs = cfg.validate();
  if (!errs.empty()) throw std::invalid_argument("invalid model config: " + errs.front());

  ModelParams p;
  p.num_entities = num_entities;
  p.num_relations = num_relations;
  const std::size_t m = cfg.embedding_dim;
  p.entity_table = uniform_tensor({num_entities, m}, 1.0 / std::sqrt(double(m)), rng);
  p.relation_table = uniform_tensor({num_relations, m}, 1.0 / std::sqrt(double(m)), rng);

  const std::size_t k = cfg.kernel;
  for (std::size_t t = 0; t < cfg.conv_stages(); ++t) {
    // Serial stages chain (stage 0 sees 1 channel); parallel branches all see
    // the reshaped input directly.
    const std::size_t c_in =
        (cfg.structure == Structure::serial && t > 0) ? cfg.filters : 1;
    const double limit = std::sqrt(1.0 / static_cast<double>(c_in * k * k));
    p.conv_w.push_back(uniform_tensor({cfg.filters, c_in, k, k}, limit, rng));
    p.conv_b.push_back(Tensor::zeros({cfg.filters}, true));
  }
  if (cfg.structure == Structure::parallel && cfg.atrous_stages > 0) {
    const std::size_t c_in = cfg.integrated_channels();
    p.mix_w = uniform_tensor({cfg.mix_channels, c_in, 1, 1},
                             std::sqrt(1.0 / static_cast<double>(c_in)), rng);
  }
  p.score_w = uniform_tensor({cfg.feature_len(), m},
                             std::sqrt(1.0 / static_cast<double>(cfg.feature_len())), rng);
  p.score_b = Tensor::zeros({m}, true);

  if (cfg.batchnorm) {
    auto ones = [](std::size_t n) { return Tensor::full({n}, 1.0, true); };
    auto zeros_p = [](std::size_t n) { return Tensor::zeros({n}, true); };
    auto buf0 = [](std::size_t n) { return Tensor::zeros({n}); };
    auto buf1 = [](std::size_t n) { return Tensor::full({n}, 1.0); };
    p.bn_in_gamma = ones(1);
    p.bn_in_beta = zeros_p(1);
    p.bn_in_mean = buf0(1);
    p.bn_in_var = buf1(1);
    for (std::size_t t = 0; t < cfg.conv_stages(); ++t) {
      p.bn_gamma.push_back(ones(cfg.filters));
      p.bn_beta.push_back(zeros_p(cfg.filters));
      p.bn_mean.push_back(buf0(cfg.filters));
      p.bn_var.push_back(buf1(cfg.filters));
    }
    p.bn_fc_gamma = ones(m);
    p.bn_fc_beta = zeros_p(m);
    p.bn_fc_mean = buf0(m);
    p.bn_fc_var = buf1(m);
  }
  return p;
}

Tensor reshape_2d(Tape* tape, const Tensor& e, const Tensor& r, const ModelConfig& cfg) {
  if (e.ndim() != 2 || r.ndim() != 2 || e.dim(1) != cfg.embedding_dim ||
      r.dim(1) != cfg.embedding_dim || e.dim(0) != r.dim(0)) {
    throw std::invalid_argument("reshape_2d: expected [B,m] embeddings, got " +
                                shape_str(e.shape()) + " and " + shape_str(r.shape()));
  }
  if (2 * cfg.embedding_dim != cfg.n1 * cfg.n2) {
    throw std::invalid_argument("reshape_2d: 2m != n1*n2");
  }
  Tensor cat = ops::concat(tape, {e, r}, 1);
  return ops::reshape(tape, cat, {e.dim(0), 1, cfg.n1, cfg.n2});
}

Tensor integrate(Tape* tape, const std::vector<Tensor>& stage_outputs, Integration mode) {
  if (stage_outputs.empty()) throw std::invalid_argument("integrate: no stage outputs");
  if (mode == Integration::concat) return ops::concat(tape, stage_outputs, 1);
  Tensor acc = stage_outputs[0];
  for (std::size_t i = 1; i < stage_outputs.size(); ++i) {
    acc = ops::add(tape, acc, stage_outputs[i]);
  }
  return acc;
}

Tensor score_all(Tape* tape, const Tensor& o, const ModelParams& params) {
  Tensor o2 = o.ndim() == 1 ? ops::reshape(tape, o, {1, o.numel()}) : o;
  Tensor proj = ops::affine(tape, o2, params.score_w, params.score_b);
  Tensor scores = ops::matmul_bt(tape, proj, params.entity_table);
  return o.ndim() == 1 ? ops::flatten(tape, scores) : scores;
}

Model::Model(ModelConfig cfg, ModelParams params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  const auto errs = cfg_.validate();
  if (!errs.empty()) throw std::invalid_argument("invalid model config: " + errs.front());
}

Tensor Model::forward(Tape* tape, const std::vector<std::size_t>& h_ids,
                      const std::vector<std::size_t>& r_ids, bool train, Rng* rng) const {
  if (h_ids.size() != r_ids.size() || h_ids.empty()) {
    throw std::invalid_argument("forward: head/relation id lists must be equal, non-empty");
  }
  if (train && !rng) throw std::invalid_argument("forward: training mode needs an rng");
  Tensor e = ops::embedding_lookup(tape, params_.entity_table, h_ids);
  Tensor r = ops::embedding_lookup(tape, params_.relation_table, r_ids);
  Tensor x = reshape_2d(tape, e, r, cfg_);
  if (cfg_.batchnorm) {
    x = ops::batchnorm(tape, x, params_.bn_in_gamma, params_.bn_in_beta, params_.bn_in_mean,
                       params_.bn_in_var, 0.1, 1e-5, train);
  }
  if (train && cfg_.dropout_input > 0.0) {
    x = ops::dropout(tape, x, cfg_.dropout_input, train, *rng);
  }
  return cfg_.structure == Structure::serial ? forward_serial(tape, x, train, rng)
                                             : forward_parallel(tape, x, train, rng);
}

Tensor Model::forward_serial(Tape* tape, const Tensor& x, bool train, Rng* rng) const {
  Tensor cur = x;
  for (std::size_t t = 0; t < cfg_.conv_stages(); ++t) {
    cur = ops::conv2d_dilated(tape, cur, params_.conv_w[t], params_.conv_b[t],
                              cfg_.rate_of_stage(t), Padding::same_zero);
    if (cfg_.batchnorm) {
      cur = ops::batchnorm(tape, cur, params_.bn_gamma[t], params_.bn_beta[t],
                           params_.bn_mean[t], params_.bn_var[t], 0.1, 1e-5, train);
    }
  }
  Tensor res = ops::relu(tape, ops::add(tape, cur, x));  // residual; x broadcast over channels
  return score_head(tape, res, train, rng);
}

Tensor Model::forward_parallel(Tape* tape, const Tensor& x, bool train, Rng* rng) const {
  std::vector<Tensor> stages;
  for (std::size_t t = 0; t < cfg_.conv_stages(); ++t) {
    Tensor c = ops::conv2d_dilated(tape, x, params_.conv_w[t], params_.conv_b[t],
                                   cfg_.rate_of_stage(t), Padding::same_zero);
    if (cfg_.batchnorm) {
      c = ops::batchnorm(tape, c, params_.bn_gamma[t], params_.bn_beta[t],
                         params_.bn_mean[t], params_.bn_var[t], 0.1, 1e-5, train);
    }
    stages.push_back(c);
  }
  Tensor combined = integrate(tape, stages, cfg_.integration);
  Tensor res = ops::relu(tape, ops::add(tape, combined, x));
  if (cfg_.atrous_stages > 0) {
    res = ops::conv2d_dilated(tape, res, params_.mix_w, Tensor{}, 1, Padding::valid);
  }
  return score_head(tape, res, train, rng);
}

Tensor Model::score_head(Tape* tape, const Tensor& features, bool train, Rng* rng) const {
  Tensor feat = features;
  if (train && cfg_.dropout_feature > 0.0) {
    feat = ops::dropout(tape, feat, cfg_.dropout_feature, train, *rng);
  }
  Tensor o = ops::flatten_batch(tape, feat);
  Tensor proj = ops::affine(tape, o, params_.score_w, params_.score_b);
  if (train && cfg_.dropout_score > 0.0) {
    proj = ops::dropout(tape, proj, cfg_.dropout_score, train, *rng);
  }
  if (cfg_.batchnorm) {
    proj = ops::batchnorm(tape, proj, params_.bn_fc_gamma, params_.bn_fc_beta,
                          params_.bn_fc_mean, params_.bn_fc_var, 0.1, 1e-5, train);
  }
  Tensor scores = ops::matmul_bt(tape, proj, params_.entity_table);
  return ops::sigmoid(tape, scores);
}

}  // namespace acre::model
