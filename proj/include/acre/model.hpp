#pragma once
// The AcrE scoring model: 2D-reshaped entity/relation embeddings run through
// a standard convolution plus T atrous convolutions, wired serially or in
// parallel, with a residual connection back to the reshaped input and a 1-N
// score head against the whole entity table.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "acre/ops.hpp"
#include "acre/tensor.hpp"

namespace acre::model {

enum class Structure { serial, parallel };
enum class Integration { add, concat };

std::string structure_name(Structure s);
std::string integration_name(Integration i);
Structure parse_structure(const std::string& s);
Integration parse_integration(const std::string& s);

struct ModelConfig {
  std::size_t embedding_dim = 200;            // m
  std::size_t n1 = 20, n2 = 20;               // reshape dims, 2m = n1*n2
  std::size_t kernel = 3;                     // square kernel k
  std::size_t filters = 32;                   // F per conv stage
  std::size_t atrous_stages = 3;              // T
  std::vector<std::size_t> rates = {1, 2, 4}; // atrous rate per stage 1..T
  Structure structure = Structure::serial;
  Integration integration = Integration::concat;  // parallel only
  std::size_t mix_channels = 40;              // output channels of W1 (parallel)
  double dropout_input = 0.2;
  double dropout_feature = 0.2;
  double dropout_score = 0.3;
  bool batchnorm = true;

  std::size_t conv_stages() const { return atrous_stages + 1; }  // stage 0 is standard
  std::size_t rate_of_stage(std::size_t t) const { return t == 0 ? 1 : rates[t - 1]; }
  // Channels entering the residual/score path.
  std::size_t integrated_channels() const {
    if (structure == Structure::serial) return filters;
    return integration == Integration::concat ? conv_stages() * filters : filters;
  }
  std::size_t feature_len() const {
    if (structure == Structure::serial) return filters * n1 * n2;
    const std::size_t ch = atrous_stages == 0 ? integrated_channels() : mix_channels;
    return ch * n1 * n2;
  }

  std::vector<std::string> validate() const;  // all violations, not just the first
};

struct ModelParams {
  std::size_t num_entities = 0, num_relations = 0;
  Tensor entity_table;    // [N, m]
  Tensor relation_table;  // [R, m]
  std::vector<Tensor> conv_w, conv_b;  // stages 0..T
  Tensor mix_w;           // W1 as a 1x1 conv [q, integrated_channels, 1, 1]; parallel, T>0
  Tensor score_w;         // [feature_len, m]
  Tensor score_b;         // [m]
  // Batch-normalization parameters/buffers (present when cfg.batchnorm).
  Tensor bn_in_gamma, bn_in_beta, bn_in_mean, bn_in_var;          // input, 1 channel
  std::vector<Tensor> bn_gamma, bn_beta, bn_mean, bn_var;         // per conv stage
  Tensor bn_fc_gamma, bn_fc_beta, bn_fc_mean, bn_fc_var;          // fc output, m dims

  std::vector<std::pair<std::string, Tensor>> trainable() const;
  std::vector<std::pair<std::string, Tensor>> buffers() const;
  std::size_t count_params() const;  // total scalars across trainable tensors
};

// Fan-in-scaled uniform initialization for embeddings and filters.
ModelParams init_params(const ModelConfig& cfg, std::size_t num_entities,
                        std::size_t num_relations, Rng& rng);

// tau: row-major reshape of [e;r] batches into [B, 1, n1, n2].
Tensor reshape_2d(Tape* tape, const Tensor& e, const Tensor& r, const ModelConfig& cfg);

// Integration of per-stage outputs: elementwise add or channel concat.
Tensor integrate(Tape* tape, const std::vector<Tensor>& stage_outputs, Integration mode);

// Projects the flattened feature vector to m dims and scores against every
// entity embedding; o may be [len] or [B, len].
Tensor score_all(Tape* tape, const Tensor& o, const ModelParams& params);

class Model {
 public:
  Model(ModelConfig cfg, ModelParams params);

  const ModelConfig& config() const { return cfg_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

  // Batched 1-N forward: probabilities [B, N], each strictly inside (0,1).
  // rng is only touched when train==true and dropout is active.
  Tensor forward(Tape* tape, const std::vector<std::size_t>& h_ids,
                 const std::vector<std::size_t>& r_ids, bool train, Rng* rng) const;

 private:
  Tensor forward_serial(Tape* tape, const Tensor& x, bool train, Rng* rng) const;
  Tensor forward_parallel(Tape* tape, const Tensor& x, bool train, Rng* rng) const;
  Tensor score_head(Tape* tape, const Tensor& features, bool train, Rng* rng) const;

  ModelConfig cfg_;
  ModelParams params_;
};

}  // namespace acre::model
