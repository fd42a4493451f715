#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "acre/checkpoint.hpp"
#include "acre/train.hpp"

using namespace acre;
using train::TrainConfig;

namespace {

// Small random-but-structured KG: relation r connects i -> (i + r + 1) mod N.
data::TripleStore toy_store(std::size_t n_entities = 8, std::size_t n_relations = 2) {
  data::TripleStore store;
  for (std::size_t i = 0; i < n_entities; ++i) {
    store.vocab.intern_entity("e" + std::to_string(i));
  }
  for (std::size_t r = 0; r < n_relations; ++r) {
    store.vocab.intern_relation("r" + std::to_string(r));
  }
  Rng rng(77);
  for (std::size_t r = 0; r < n_relations; ++r) {
    for (std::size_t i = 0; i < n_entities; ++i) {
      const auto t = static_cast<std::uint32_t>((i + r + 1) % n_entities);
      const auto split = rng.uniform01() < 0.75 ? data::Split::train
                         : rng.uniform01() < 0.5 ? data::Split::valid
                                                 : data::Split::test;
      store.split(split).push_back({static_cast<std::uint32_t>(i),
                                    static_cast<std::uint32_t>(r), t});
    }
  }
  // Training needs every entity/relation in train; top up the ones the split
  // draw missed.
  std::vector<bool> seen(n_entities, false);
  for (const auto& t : store.split(data::Split::train)) seen[t.h] = seen[t.t] = true;
  for (std::size_t i = 0; i < n_entities; ++i) {
    if (!seen[i]) {
      store.split(data::Split::train).push_back(
          {static_cast<std::uint32_t>(i), 0, static_cast<std::uint32_t>((i + 1) % n_entities)});
    }
  }
  if (store.split(data::Split::valid).empty()) {
    store.split(data::Split::valid).push_back({0, 0, 1});
  }
  if (store.split(data::Split::test).empty()) {
    store.split(data::Split::test).push_back({1, 0, 2});
  }
  return store;
}

model::ModelConfig toy_model_config() {
  model::ModelConfig cfg;
  cfg.embedding_dim = 8;
  cfg.n1 = 4;
  cfg.n2 = 4;
  cfg.kernel = 3;
  cfg.filters = 2;
  cfg.atrous_stages = 1;
  cfg.rates = {2};
  cfg.mix_channels = 3;
  cfg.dropout_input = cfg.dropout_feature = cfg.dropout_score = 0.1;
  cfg.batchnorm = true;
  return cfg;
}

TrainConfig quick_train_config() {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 4;
  cfg.eval_every = 2;
  cfg.patience = 10;
  cfg.learning_rate = 1e-2;
  return cfg;
}

}  // namespace

TEST_CASE("TrainConfig::validate reports every violation at once") {
  TrainConfig cfg;
  CHECK(cfg.validate().empty());
  cfg.batch_size = 0;
  cfg.learning_rate = -1.0;
  cfg.label_smoothing = 2.0;
  CHECK(cfg.validate().size() >= 3);
}

TEST_CASE("parameter totals for the published large-graph configurations") {
  // FB15k-237 sizing: 14541 entities, 237 relations doubled by reciprocals.
  const std::size_t n_ent = 14541, n_rel = 474;
  {
    Rng rng(1);
    model::ModelConfig cfg;  // defaults: serial, m=200, F=32, T=3
    auto p = model::init_params(cfg, n_ent, n_rel, rng);
    const double count = static_cast<double>(p.count_params());
    CHECK(count > 5.61e6 * 0.9);
    CHECK(count < 5.61e6 * 1.1);
  }
  {
    Rng rng(1);
    model::ModelConfig cfg;
    cfg.structure = model::Structure::parallel;
    auto p = model::init_params(cfg, n_ent, n_rel, rng);
    const double count = static_cast<double>(p.count_params());
    CHECK(count > 6.22e6 * 0.9);
    CHECK(count < 6.22e6 * 1.1);
  }
}

TEST_CASE("count_params equals the sum over the trainable table") {
  Rng rng(2);
  auto p = model::init_params(toy_model_config(), 8, 4, rng);
  std::size_t total = 0;
  for (const auto& [name, t] : p.trainable()) total += t.numel();
  CHECK(p.count_params() == total);
}

TEST_CASE("listwise BCE loss: scalar-loop oracle, ln 2 landmark, perfect fit") {
  Rng rng(3);
  Tensor probs = Tensor::zeros({3, 5});
  Tensor labels = Tensor::zeros({3, 5});
  for (double& v : probs.data()) v = 0.02 + 0.96 * rng.uniform01();
  for (double& v : labels.data()) v = rng.uniform01() < 0.4 ? 1.0 : 0.0;
  const Tensor loss = train::bce_listwise_loss(nullptr, probs, labels);
  double expect = 0.0;
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    const double p = probs.data()[i], t = labels.data()[i];
    expect += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
  }
  expect /= static_cast<double>(probs.numel());
  CHECK(std::abs(loss.item() - expect) < 1e-12);

  // p = 0.5 everywhere: both BCE terms are log 2 regardless of the labels.
  const Tensor half = Tensor::full({4, 7}, 0.5);
  Tensor any_labels = Tensor::zeros({4, 7});
  any_labels.data()[3] = 1.0;
  any_labels.data()[11] = 1.0;
  CHECK(std::abs(train::bce_listwise_loss(nullptr, half, any_labels).item() -
                 std::log(2.0)) < 1e-12);

  Tensor exact = Tensor::from({1, 3}, {1, 0, 1});
  CHECK(train::bce_listwise_loss(nullptr, exact, exact).item() < 1e-10);
}

TEST_CASE("Adam: zero gradient is a fixed point; first step has magnitude ~lr") {
  Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  w.zero_grad();
  train::Adam opt({{"w", w}}, 0.01, 0.9, 0.999, 1e-8);
  const auto before = w.data();
  opt.step();
  CHECK(w.data() == before);  // zero grads move nothing

  // Fresh optimizer: with bias correction the first step is lr * g/|g| ~ lr.
  train::Adam fresh({{"w", w}}, 0.01, 0.9, 0.999, 1e-8);
  w.grad()[0] = 0.3;
  w.grad()[1] = -4.0;
  w.grad()[2] = 1e-3;
  fresh.step();
  CHECK(std::abs((before[0] - w.data()[0]) - 0.01) < 1e-5);
  CHECK(std::abs((before[1] - w.data()[1]) + 0.01) < 1e-5);
  CHECK(w.data()[2] < before[2]);
}

TEST_CASE("Adam matches a scalar recurrence oracle minimizing w^2") {
  Tensor w = Tensor::from({1}, {1.0}, true);
  train::Adam opt({{"w", w}}, 0.1, 0.9, 0.999, 1e-8);
  double ow = 1.0, om = 0.0, ov = 0.0;
  for (int t = 1; t <= 100; ++t) {
    w.zero_grad();
    w.grad()[0] = 2.0 * w.data()[0];
    opt.step();

    const double g = 2.0 * ow;
    om = 0.9 * om + 0.1 * g;
    ov = 0.999 * ov + 0.001 * g * g;
    const double mh = om / (1.0 - std::pow(0.9, t));
    const double vh = ov / (1.0 - std::pow(0.999, t));
    ow -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(w.data()[0] == doctest::Approx(ow).epsilon(1e-12));
  }
  CHECK(std::abs(w.data()[0]) < 0.1);
  CHECK(opt.steps() == 100);
}

TEST_CASE("train: loss falls, logs are complete, validation fires on schedule") {
  auto store = toy_store();
  std::vector<train::EpochLog> log;
  auto ck = train::train(store, toy_model_config(), quick_train_config(), &log);
  REQUIRE(log.size() == 4);
  CHECK(store.reciprocal_flag);  // reciprocal head mode augments the store
  CHECK(log.back().loss < log.front().loss);
  CHECK_FALSE(log[0].val_mrr.has_value());
  CHECK(log[1].val_mrr.has_value());
  CHECK(log[3].val_mrr.has_value());
  CHECK(ck.best_val_mrr >= 0.0);
  CHECK(ck.num_entities == store.num_entities());
  CHECK(ck.num_relations == store.num_relations());
  CHECK(ck.params.count_params() > 0);
  CHECK(!ck.adam_m.empty());
}

TEST_CASE("train is deterministic for a fixed seed") {
  auto s1 = toy_store();
  auto s2 = toy_store();
  std::vector<train::EpochLog> l1, l2;
  auto c1 = train::train(s1, toy_model_config(), quick_train_config(), &l1);
  auto c2 = train::train(s2, toy_model_config(), quick_train_config(), &l2);
  REQUIRE(l1.size() == l2.size());
  for (std::size_t i = 0; i < l1.size(); ++i) {
    CHECK(l1[i].loss == l2[i].loss);  // bitwise
    CHECK(l1[i].val_mrr.has_value() == l2[i].val_mrr.has_value());
    if (l1[i].val_mrr) CHECK(*l1[i].val_mrr == *l2[i].val_mrr);
  }
  CHECK(c1.params.entity_table.data() == c2.params.entity_table.data());

  // A different seed takes a different trajectory.
  auto s3 = toy_store();
  auto cfg = quick_train_config();
  cfg.seed = 43;
  std::vector<train::EpochLog> l3;
  train::train(s3, toy_model_config(), cfg, &l3);
  CHECK(l3[0].loss != l1[0].loss);
}

TEST_CASE("a single step at a tiny learning rate reduces the training loss") {
  auto store = toy_store();
  auto tc = quick_train_config();
  tc.epochs = 2;
  tc.eval_every = 5;   // no validation pass in this window
  tc.learning_rate = 1e-4;
  tc.batch_size = 256; // one full batch per epoch: loss must strictly descend
  auto mc = toy_model_config();
  mc.dropout_input = mc.dropout_feature = mc.dropout_score = 0.0;
  mc.batchnorm = false;  // keep the epoch loss free of batch-statistics noise
  std::vector<train::EpochLog> log;
  train::train(store, mc, tc, &log);
  CHECK(log[1].loss < log[0].loss);
}

TEST_CASE("checkpoint: save -> load round-trips parameters bitwise") {
  auto store = toy_store();
  auto ck = train::train(store, toy_model_config(), quick_train_config());

  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() /
                    ("acre-ckpt-" + std::to_string(::getpid()) + ".bin");
  checkpoint::save(ck, path.string());
  auto loaded = checkpoint::load(path.string());
  fs::remove(path);

  CHECK(loaded.num_entities == ck.num_entities);
  CHECK(loaded.num_relations == ck.num_relations);
  CHECK(loaded.epoch == ck.epoch);
  CHECK(loaded.best_val_mrr == ck.best_val_mrr);
  CHECK(loaded.adam_steps == ck.adam_steps);
  CHECK(loaded.model_cfg.rates == ck.model_cfg.rates);
  CHECK(loaded.train_cfg.learning_rate == ck.train_cfg.learning_rate);

  const auto a = ck.params.trainable();
  const auto b = loaded.params.trainable();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second.data() == b[i].second.data());  // bitwise
  }
  const auto ba = ck.params.buffers(), bb = loaded.params.buffers();
  REQUIRE(ba.size() == bb.size());
  for (std::size_t i = 0; i < ba.size(); ++i) {
    CHECK(ba[i].second.data() == bb[i].second.data());
  }
  CHECK(loaded.adam_m == ck.adam_m);
  CHECK(loaded.adam_v == ck.adam_v);

  // Same parameters -> bitwise identical forward pass.
  model::Model m1(ck.model_cfg, ck.params);
  model::Model m2(loaded.model_cfg, loaded.params);
  Tensor y1 = m1.forward(nullptr, {0, 1}, {0, 1}, false, nullptr);
  Tensor y2 = m2.forward(nullptr, {0, 1}, {0, 1}, false, nullptr);
  CHECK(y1.data() == y2.data());
}

TEST_CASE("grid search: degenerate single cell reproduces plain training") {
  auto store = toy_store();
  auto tc = quick_train_config();
  train::GridSpace space;
  space.learning_rates = {tc.learning_rate};
  space.dropouts = {0.1};
  space.rates = {{2}};
  space.label_smoothings = {tc.label_smoothing};
  space.cell_epochs = tc.epochs;
  auto res = train::grid_search(store, toy_model_config(), tc, space);
  REQUIRE(res.cells.size() == 1);
  CHECK(res.best.learning_rate == tc.learning_rate);

  auto store2 = toy_store();
  auto ck = train::train(store2, toy_model_config(), tc);
  CHECK(res.best_checkpoint.best_val_mrr == ck.best_val_mrr);
  CHECK(res.best_checkpoint.params.entity_table.data() == ck.params.entity_table.data());
}

TEST_CASE("grid search: enumerates the full Cartesian product and picks a winner") {
  auto store = toy_store();
  auto tc = quick_train_config();
  tc.epochs = 2;
  train::GridSpace space;
  space.learning_rates = {1e-2, 0.0};
  space.dropouts = {0.1};
  space.rates = {{1}, {2}};
  space.label_smoothings = {0.1};
  space.cell_epochs = 2;
  auto res = train::grid_search(store, toy_model_config(), tc, space);
  REQUIRE(res.cells.size() == 4);
  bool best_is_a_cell = false;
  for (const auto& c : res.cells) {
    CHECK(c.val_mrr <= res.best.val_mrr);  // winner dominates every cell
    if (c.learning_rate == res.best.learning_rate && c.rates == res.best.rates &&
        c.val_mrr == res.best.val_mrr) {
      best_is_a_cell = true;
    }
  }
  CHECK(best_is_a_cell);
  CHECK(res.best_checkpoint.best_val_mrr >= 0.0);
}
