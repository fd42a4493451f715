#pragma once
// 1-N listwise training: Adam, batched multi-hot BCE against the full entity
// set, periodic filtered validation, early stopping, grid search.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "acre/data.hpp"
#include "acre/eval.hpp"
#include "acre/model.hpp"

namespace acre::train {

struct TrainConfig {
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::size_t epochs = 300;
  double label_smoothing = 0.1;
  std::size_t eval_every = 5;      // epochs between validation passes
  std::size_t patience = 10;       // validation passes without improvement
  std::uint64_t seed = 42;
  eval::HeadMode head_mode = eval::HeadMode::reciprocal;
  eval::TiePolicy tie_policy = eval::TiePolicy::mean;

  std::vector<std::string> validate() const;
};

// Standard Adam with bias correction; moments keyed by parameter order.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>> params, double lr, double beta1,
       double beta2, double eps);
  void step();  // consumes .grad() of every parameter, then caller zeroes grads
  void set_learning_rate(double lr) { lr_ = lr; }
  std::size_t steps() const { return t_; }

  // Checkpoint access.
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
  std::vector<std::vector<double>>& moments_m() { return m_; }
  std::vector<std::vector<double>>& moments_v() { return v_; }
  void set_steps(std::size_t t) { t_ = t; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// Listwise loss: mean over batch and entities of BCE between probabilities and a
// (optionally smoothed) multi-hot label row.
Tensor bce_listwise_loss(Tape* tape, const Tensor& probs, const Tensor& labels);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<double> val_mrr;
};

struct Checkpoint {
  model::ModelConfig model_cfg;
  TrainConfig train_cfg;
  model::ModelParams params;
  std::vector<std::vector<double>> adam_m, adam_v;
  std::size_t adam_steps = 0;
  std::size_t epoch = 0;
  double best_val_mrr = 0.0;
  std::size_t num_entities = 0, num_relations = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains on the train split of `store` (reciprocal augmentation is applied
// here when head_mode asks for it and the store lacks it), keeping the
// parameters of the best validation MRR. Deterministic for a fixed seed.
Checkpoint train(data::TripleStore& store, const model::ModelConfig& model_cfg,
                 const TrainConfig& cfg, std::vector<EpochLog>* log = nullptr,
                 const EpochCallback& on_epoch = {});

struct GridSpace {
  std::vector<double> learning_rates = {1e-3, 5e-4};
  std::vector<double> dropouts = {0.1, 0.2, 0.3};                 // input+feature positions
  std::vector<std::vector<std::size_t>> rates = {{1, 2, 4}, {2, 3, 5}};
  std::vector<double> label_smoothings = {0.0, 0.1};
  std::size_t cell_epochs = 40;  // short budget per cell
};

struct GridCell {
  double learning_rate;
  double dropout;
  std::vector<std::size_t> rates;
  double label_smoothing;
  double val_mrr = 0.0;
};

struct GridResult {
  std::vector<GridCell> cells;   // every evaluated cell
  GridCell best;
  Checkpoint best_checkpoint;    // best cell re-trained at full budget
};

GridResult grid_search(data::TripleStore& store, const model::ModelConfig& model_cfg,
                       const TrainConfig& base_cfg, const GridSpace& space,
                       const EpochCallback& on_epoch = {});

}  // namespace acre::train
