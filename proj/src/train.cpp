#include "acre/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace acre::train {

using data::Split;

std::vector<std::string> TrainConfig::validate() const {
  std::vector<std::string> errs;
  if (batch_size == 0) errs.push_back("batch_size must be positive");
  if (learning_rate < 0.0) errs.push_back("learning_rate must be >= 0");
  if (epochs == 0) errs.push_back("epochs must be positive");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    errs.push_back("label_smoothing must be in [0,1)");
  }
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    errs.push_back("adam betas must be in [0,1)");
  }
  if (adam_eps <= 0.0) errs.push_back("adam_eps must be positive");
  if (eval_every == 0) errs.push_back("eval_every must be positive");
  if (patience == 0) errs.push_back("patience must be positive");
  return errs;
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, double lr, double beta1,
           double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& [name, t] : params_) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& t = params_[pi].second;
    if (!t.has_grad()) continue;  // parameter untouched this step
    const auto& g = t.grad();
    auto& data = t.data();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

Tensor bce_listwise_loss(Tape* tape, const Tensor& probs, const Tensor& labels) {
  return ops::bce_listwise(tape, probs, labels, 1e-12);
}

namespace {

Tensor clone_tensor(const Tensor& t) {
  if (!t.defined()) return Tensor{};
  Tensor c = Tensor::from(t.shape(), t.data(), t.requires_grad());
  return c;
}

model::ModelParams clone_params(const model::ModelParams& p) {
  model::ModelParams c;
  c.num_entities = p.num_entities;
  c.num_relations = p.num_relations;
  c.entity_table = clone_tensor(p.entity_table);
  c.relation_table = clone_tensor(p.relation_table);
  for (const Tensor& t : p.conv_w) c.conv_w.push_back(clone_tensor(t));
  for (const Tensor& t : p.conv_b) c.conv_b.push_back(clone_tensor(t));
  c.mix_w = clone_tensor(p.mix_w);
  c.score_w = clone_tensor(p.score_w);
  c.score_b = clone_tensor(p.score_b);
  c.bn_in_gamma = clone_tensor(p.bn_in_gamma);
  c.bn_in_beta = clone_tensor(p.bn_in_beta);
  c.bn_in_mean = clone_tensor(p.bn_in_mean);
  c.bn_in_var = clone_tensor(p.bn_in_var);
  for (const Tensor& t : p.bn_gamma) c.bn_gamma.push_back(clone_tensor(t));
  for (const Tensor& t : p.bn_beta) c.bn_beta.push_back(clone_tensor(t));
  for (const Tensor& t : p.bn_mean) c.bn_mean.push_back(clone_tensor(t));
  for (const Tensor& t : p.bn_var) c.bn_var.push_back(clone_tensor(t));
  c.bn_fc_gamma = clone_tensor(p.bn_fc_gamma);
  c.bn_fc_beta = clone_tensor(p.bn_fc_beta);
  c.bn_fc_mean = clone_tensor(p.bn_fc_mean);
  c.bn_fc_var = clone_tensor(p.bn_fc_var);
  return c;
}

struct Query {
  std::uint32_t h, r;
};

}  // namespace

Checkpoint train(data::TripleStore& store, const model::ModelConfig& model_cfg,
                 const TrainConfig& cfg, std::vector<EpochLog>* log,
                 const EpochCallback& on_epoch) {
  std::vector<std::string> errs = model_cfg.validate();
  const auto terrs = cfg.validate();
  errs.insert(errs.end(), terrs.begin(), terrs.end());
  if (!errs.empty()) {
    std::ostringstream os;
    os << "invalid configuration:";
    for (const auto& e : errs) os << "\n  - " << e;
    throw std::invalid_argument(os.str());
  }

  if (cfg.head_mode == eval::HeadMode::reciprocal && !store.reciprocal_flag) {
    data::add_reciprocals(store);
  }

  const std::size_t n_ent = store.num_entities();
  const std::size_t n_rel = store.num_relations();
  Rng init_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  Rng shuffle_rng(cfg.seed ^ 0xbf58476d1ce4e5b9ull);

  model::Model m(model_cfg, model::init_params(model_cfg, n_ent, n_rel, init_rng));

  const auto train_idx = data::LabelIndex::build(store, data::split_bit(Split::train));
  std::vector<Query> queries;
  std::vector<const std::vector<std::uint32_t>*> query_tails;
  train_idx.for_each([&](std::uint32_t h, std::uint32_t r,
                         const std::vector<std::uint32_t>& tails) {
    queries.push_back({h, r});
    (void)tails;
  });
  std::sort(queries.begin(), queries.end(), [](const Query& a, const Query& b) {
    return a.h < b.h || (a.h == b.h && a.r < b.r);
  });
  query_tails.resize(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    query_tails[i] = train_idx.tails(queries[i].h, queries[i].r);
  }

  Adam adam(m.params().trainable(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);

  const bool have_valid = !store.split(Split::valid).empty();
  eval::EvalOptions vopts;
  vopts.direction = eval::Direction::both;
  vopts.head_mode = cfg.head_mode;
  vopts.tie_policy = cfg.tie_policy;

  Checkpoint best;
  best.model_cfg = model_cfg;
  best.train_cfg = cfg;
  best.num_entities = n_ent;
  best.num_relations = n_rel;
  best.best_val_mrr = -1.0;
  std::size_t evals_since_best = 0;

  const double eps_ls = cfg.label_smoothing;
  const double off_label = eps_ls / static_cast<double>(n_ent);
  const double on_label = 1.0 - eps_ls + off_label;

  std::vector<std::size_t> order(queries.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::size_t bsz = end - begin;
      std::vector<std::size_t> h_ids(bsz), r_ids(bsz);
      Tensor labels = Tensor::full({bsz, n_ent}, off_label);
      for (std::size_t i = 0; i < bsz; ++i) {
        const Query& q = queries[order[begin + i]];
        h_ids[i] = q.h;
        r_ids[i] = q.r;
        for (std::uint32_t t : *query_tails[order[begin + i]]) {
          labels.data()[i * n_ent + t] = on_label;
        }
      }
      Tape tape;
      Tensor probs = m.forward(&tape, h_ids, r_ids, true, &dropout_rng);
      Tensor loss = bce_listwise_loss(&tape, probs, labels);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch));
      }
      epoch_loss += lv;
      ++batches;
      tape.backward(loss);
      adam.step();
      for (auto& [name, t] : m.params().trainable()) t.zero_grad();
    }
    epoch_loss /= static_cast<double>(batches);

    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = epoch_loss;

    const bool do_eval = have_valid && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
    if (do_eval) {
      const auto rep = eval::evaluate(m, store, Split::valid, vopts);
      entry.val_mrr = rep.both.mrr;
      if (rep.both.mrr > best.best_val_mrr) {
        best.best_val_mrr = rep.both.mrr;
        best.params = clone_params(m.params());
        best.adam_m = adam.moments_m();
        best.adam_v = adam.moments_v();
        best.adam_steps = adam.steps();
        best.epoch = epoch;
        evals_since_best = 0;
      } else {
        ++evals_since_best;
      }
    }
    if (log) log->push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (do_eval && evals_since_best >= cfg.patience) break;
  }

  if (best.best_val_mrr < 0.0) {
    // No validation pass happened; keep the final state.
    best.best_val_mrr = 0.0;
    best.params = clone_params(m.params());
    best.adam_m = adam.moments_m();
    best.adam_v = adam.moments_v();
    best.adam_steps = adam.steps();
    best.epoch = cfg.epochs;
  }
  return best;
}

GridResult grid_search(data::TripleStore& store, const model::ModelConfig& model_cfg,
                       const TrainConfig& base_cfg, const GridSpace& space,
                       const EpochCallback& on_epoch) {
  if (space.learning_rates.empty() || space.dropouts.empty() || space.rates.empty() ||
      space.label_smoothings.empty()) {
    throw std::invalid_argument("grid_search: empty search space");
  }
  GridResult result;
  bool have_best = false;
  for (double lr : space.learning_rates) {
    for (double drop : space.dropouts) {
      for (const auto& rates : space.rates) {
        for (double ls : space.label_smoothings) {
          model::ModelConfig mc = model_cfg;
          mc.rates = rates;
          mc.atrous_stages = rates.size();
          mc.dropout_input = drop;
          mc.dropout_feature = drop;
          TrainConfig tc = base_cfg;
          tc.learning_rate = lr;
          tc.label_smoothing = ls;
          tc.epochs = space.cell_epochs;
          Checkpoint ck = train(store, mc, tc, nullptr, on_epoch);
          GridCell cell{lr, drop, rates, ls, ck.best_val_mrr};
          result.cells.push_back(cell);
          if (!have_best || cell.val_mrr > result.best.val_mrr) {
            result.best = cell;
            have_best = true;
          }
        }
      }
    }
  }
  // Re-train the winning cell at full budget.
  model::ModelConfig mc = model_cfg;
  mc.rates = result.best.rates;
  mc.atrous_stages = result.best.rates.size();
  mc.dropout_input = result.best.dropout;
  mc.dropout_feature = result.best.dropout;
  TrainConfig tc = base_cfg;
  tc.learning_rate = result.best.learning_rate;
  tc.label_smoothing = result.best.label_smoothing;
  result.best_checkpoint = train(store, mc, tc, nullptr, on_epoch);
  return result;
}

}  // namespace acre::train
