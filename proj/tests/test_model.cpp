#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "acre/model.hpp"
#include "acre/ops.hpp"

using namespace acre;
using model::Integration;
using model::ModelConfig;
using model::ModelParams;
using model::Structure;

namespace {

// Plain-loop NCHW buffer for the straight-line forward oracle below.
struct Buf {
  std::size_t b, c, h, w;
  std::vector<double> v;
  Buf(std::size_t b_, std::size_t c_, std::size_t h_, std::size_t w_)
      : b(b_), c(c_), h(h_), w(w_), v(b_ * c_ * h_ * w_, 0.0) {}
  double& at(std::size_t bi, std::size_t ci, std::size_t y, std::size_t x) {
    return v[((bi * c + ci) * h + y) * w + x];
  }
  double at(std::size_t bi, std::size_t ci, std::size_t y, std::size_t x) const {
    return v[((bi * c + ci) * h + y) * w + x];
  }
};

// Same-zero-padded dilated cross-correlation, quadruple loop, no shortcuts.
Buf conv_same(const Buf& in, const Tensor& w, const Tensor& bias, std::size_t rate) {
  const std::size_t co = w.dim(0), ci = w.dim(1), k = w.dim(2);
  REQUIRE(ci == in.c);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) * rate / 2);
  Buf out(in.b, co, in.h, in.w);
  for (std::size_t b = 0; b < in.b; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < in.h; ++y)
        for (std::size_t x = 0; x < in.w; ++x) {
          double acc = bias.defined() ? bias.data()[o] : 0.0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t dy = 0; dy < k; ++dy)
              for (std::size_t dx = 0; dx < k; ++dx) {
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy * rate) - pad;
                const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx * rate) - pad;
                if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(in.h) ||
                    sx >= static_cast<std::ptrdiff_t>(in.w))
                  continue;
                acc += in.at(b, c, sy, sx) * w.data()[((o * ci + c) * k + dy) * k + dx];
              }
          out.at(b, o, y, x) = acc;
        }
  return out;
}

ModelConfig toy_config(Structure s, Integration integ = Integration::concat) {
  ModelConfig cfg;
  cfg.embedding_dim = 4;
  cfg.n1 = 2;
  cfg.n2 = 4;
  cfg.kernel = 3;
  cfg.filters = 2;
  cfg.atrous_stages = 1;
  cfg.rates = {2};
  cfg.structure = s;
  cfg.integration = integ;
  cfg.mix_channels = 3;
  cfg.dropout_input = cfg.dropout_feature = cfg.dropout_score = 0.0;
  cfg.batchnorm = false;
  return cfg;
}

// Straight-line reimplementation of the whole forward pass with plain loops
// (dropout and batchnorm off). Returns [B, N] probabilities.
std::vector<double> oracle_forward(const ModelConfig& cfg, const ModelParams& p,
                                   const std::vector<std::size_t>& h_ids,
                                   const std::vector<std::size_t>& r_ids) {
  const std::size_t B = h_ids.size(), m = cfg.embedding_dim;
  Buf tau(B, 1, cfg.n1, cfg.n2);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < m; ++j) {
      tau.v[b * 2 * m + j] = p.entity_table.data()[h_ids[b] * m + j];
      tau.v[b * 2 * m + m + j] = p.relation_table.data()[r_ids[b] * m + j];
    }
  }

  Buf feat(0, 0, 0, 0);
  if (cfg.structure == Structure::serial) {
    Buf cur = tau;
    for (std::size_t t = 0; t < cfg.conv_stages(); ++t) {
      cur = conv_same(cur, p.conv_w[t], p.conv_b[t], cfg.rate_of_stage(t));
    }
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < cur.c; ++c)
        for (std::size_t i = 0; i < cfg.n1 * cfg.n2; ++i) {
          double& x = cur.v[(b * cur.c + c) * cfg.n1 * cfg.n2 + i];
          x = std::max(0.0, x + tau.v[b * cfg.n1 * cfg.n2 + i]);
        }
    feat = cur;
  } else {
    std::vector<Buf> stages;
    for (std::size_t t = 0; t < cfg.conv_stages(); ++t) {
      stages.push_back(conv_same(tau, p.conv_w[t], p.conv_b[t], cfg.rate_of_stage(t)));
    }
    Buf comb(0, 0, 0, 0);
    if (cfg.integration == Integration::concat) {
      comb = Buf(B, cfg.conv_stages() * cfg.filters, cfg.n1, cfg.n2);
      std::size_t off = 0;
      for (const Buf& s : stages) {
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t y = 0; y < s.h; ++y)
              for (std::size_t x = 0; x < s.w; ++x)
                comb.at(b, off + c, y, x) = s.at(b, c, y, x);
        off += s.c;
      }
    } else {
      comb = stages[0];
      for (std::size_t s = 1; s < stages.size(); ++s)
        for (std::size_t i = 0; i < comb.v.size(); ++i) comb.v[i] += stages[s].v[i];
    }
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < comb.c; ++c)
        for (std::size_t i = 0; i < cfg.n1 * cfg.n2; ++i) {
          double& x = comb.v[(b * comb.c + c) * cfg.n1 * cfg.n2 + i];
          x = std::max(0.0, x + tau.v[b * cfg.n1 * cfg.n2 + i]);
        }
    if (cfg.atrous_stages > 0) {
      // 1x1 mixing convolution, no bias.
      Buf mixed(B, cfg.mix_channels, cfg.n1, cfg.n2);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t q = 0; q < cfg.mix_channels; ++q)
          for (std::size_t i = 0; i < cfg.n1 * cfg.n2; ++i) {
            double acc = 0.0;
            for (std::size_t c = 0; c < comb.c; ++c)
              acc += comb.v[(b * comb.c + c) * cfg.n1 * cfg.n2 + i] *
                     p.mix_w.data()[q * comb.c + c];
            mixed.v[(b * cfg.mix_channels + q) * cfg.n1 * cfg.n2 + i] = acc;
          }
      comb = mixed;
    }
    feat = comb;
  }

  // Score head: flatten -> affine -> against every entity embedding -> sigmoid.
  const std::size_t len = feat.c * feat.h * feat.w;
  const std::size_t N = p.num_entities;
  std::vector<double> probs(B * N);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> proj(m);
    for (std::size_t j = 0; j < m; ++j) {
      double acc = p.score_b.data()[j];
      for (std::size_t i = 0; i < len; ++i)
        acc += feat.v[b * len + i] * p.score_w.data()[i * m + j];
      proj[j] = acc;
    }
    for (std::size_t n = 0; n < N; ++n) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += proj[j] * p.entity_table.data()[n * m + j];
      probs[b * N + n] = 1.0 / (1.0 + std::exp(-s));
    }
  }
  return probs;
}

}  // namespace

TEST_CASE("reshape_2d: [e;r] row-major layout under the worked micro-example") {
  ModelConfig cfg;
  cfg.embedding_dim = 2;
  cfg.n1 = 2;
  cfg.n2 = 2;
  Tensor e = Tensor::from({1, 2}, {1, 2});
  Tensor r = Tensor::from({1, 2}, {3, 4});
  Tensor tau = model::reshape_2d(nullptr, e, r, cfg);
  REQUIRE(tau.shape() == Shape{1, 1, 2, 2});
  CHECK(tau.data() == std::vector<double>{1, 2, 3, 4});  // [[1,2],[3,4]]

  // The reshape is a bijection: flattening recovers [e;r] exactly.
  Tensor flat = ops::flatten(nullptr, tau);
  CHECK(flat.data() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("integrate: identity, additive cancellation, concat slicing") {
  Tensor a = Tensor::from({1, 2, 1, 2}, {1, 2, 3, 4});
  Tensor neg = Tensor::from({1, 2, 1, 2}, {-1, -2, -3, -4});

  CHECK(model::integrate(nullptr, {a}, Integration::add).data() == a.data());
  CHECK(model::integrate(nullptr, {a}, Integration::concat).data() == a.data());

  Tensor zero = model::integrate(nullptr, {a, neg}, Integration::add);
  for (double v : zero.data()) CHECK(v == 0.0);

  Tensor cat = model::integrate(nullptr, {a, neg}, Integration::concat);
  REQUIRE(cat.shape() == Shape{1, 4, 1, 2});
  CHECK(std::vector<double>(cat.data().begin(), cat.data().begin() + 4) == a.data());
  CHECK(std::vector<double>(cat.data().begin() + 4, cat.data().end()) == neg.data());
}

TEST_CASE("parse helpers: names, aliases, bad input") {
  CHECK(model::parse_structure("serial") == Structure::serial);
  CHECK(model::parse_structure("parallel") == Structure::parallel);
  CHECK(model::parse_integration("add") == Integration::add);
  CHECK(model::parse_integration("concat") == Integration::concat);
  CHECK(model::parse_integration("con") == Integration::concat);
  CHECK_THROWS(model::parse_structure("diagonal"));
  CHECK_THROWS(model::parse_integration("multiply"));
}

TEST_CASE("ModelConfig::validate reports every violation at once") {
  ModelConfig cfg = toy_config(Structure::serial);
  CHECK(cfg.validate().empty());
  cfg.n2 = 3;           // 2m != n1*n2
  cfg.rates = {1, 2};   // size != atrous_stages
  cfg.dropout_input = 1.5;
  const auto errs = cfg.validate();
  CHECK(errs.size() >= 3);
}

TEST_CASE("score_all: per-entity oracle, zero features score zero") {
  Rng rng(21);
  ModelConfig cfg = toy_config(Structure::serial);
  ModelParams p = model::init_params(cfg, 5, 2, rng);
  const std::size_t len = cfg.feature_len(), m = cfg.embedding_dim;

  std::vector<double> ov(2 * len);
  for (double& v : ov) v = rng.uniform(-1.0, 1.0);
  Tensor o = Tensor::from({2, len}, ov);
  Tensor scores = model::score_all(nullptr, o, p);
  REQUIRE(scores.shape() == Shape{2, 5});
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t n = 0; n < 5; ++n) {
      std::vector<double> proj(m);
      for (std::size_t j = 0; j < m; ++j) {
        double acc = p.score_b.data()[j];
        for (std::size_t i = 0; i < len; ++i)
          acc += ov[b * len + i] * p.score_w.data()[i * m + j];
        proj[j] = acc;
      }
      double expect = 0.0;
      for (std::size_t j = 0; j < m; ++j) expect += proj[j] * p.entity_table.data()[n * m + j];
      CHECK(std::abs(scores.data()[b * 5 + n] - expect) < 1e-12);
    }
  }

  // Zero features and zero projection bias: every entity scores exactly 0.
  for (double& v : p.score_b.data()) v = 0.0;
  Tensor z = model::score_all(nullptr, Tensor::zeros({len}), p);
  REQUIRE(z.shape() == Shape{5});
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("residual shortcut: zeroed convolutions reduce the serial forward to "
          "sigmoid(score(flatten(relu(tau))))") {
  Rng rng(22);
  ModelConfig cfg = toy_config(Structure::serial);
  ModelParams p = model::init_params(cfg, 6, 3, rng);
  for (auto& w : p.conv_w) std::fill(w.data().begin(), w.data().end(), 0.0);
  for (auto& b : p.conv_b) std::fill(b.data().begin(), b.data().end(), 0.0);
  model::Model mdl(cfg, p);

  const std::vector<std::size_t> hs = {0, 3, 5}, rs = {0, 2, 1};
  Tensor probs = mdl.forward(nullptr, hs, rs, false, nullptr);
  REQUIRE(probs.shape() == Shape{3, 6});

  const std::size_t m = cfg.embedding_dim, hw = cfg.n1 * cfg.n2;
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<double> tau(hw);
    for (std::size_t j = 0; j < m; ++j) {
      tau[j] = p.entity_table.data()[hs[b] * m + j];
      tau[m + j] = p.relation_table.data()[rs[b] * m + j];
    }
    // o = Flatten(ReLU(tau)) broadcast over all F channels.
    std::vector<double> proj(m);
    for (std::size_t j = 0; j < m; ++j) {
      double acc = p.score_b.data()[j];
      for (std::size_t c = 0; c < cfg.filters; ++c)
        for (std::size_t i = 0; i < hw; ++i)
          acc += std::max(0.0, tau[i]) * p.score_w.data()[(c * hw + i) * m + j];
      proj[j] = acc;
    }
    for (std::size_t n = 0; n < 6; ++n) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += proj[j] * p.entity_table.data()[n * m + j];
      const double expect = 1.0 / (1.0 + std::exp(-s));
      CHECK(std::abs(probs.data()[b * 6 + n] - expect) < 1e-12);
    }
  }
}

TEST_CASE("forward matches the straight-line plain-loop oracle") {
  const std::vector<std::size_t> hs = {0, 2, 3, 1}, rs = {1, 0, 1, 0};
  for (auto [structure, integ] : {std::pair{Structure::serial, Integration::concat},
                                  {Structure::parallel, Integration::concat},
                                  {Structure::parallel, Integration::add}}) {
    Rng rng(23);
    ModelConfig cfg = toy_config(structure, integ);
    ModelParams p = model::init_params(cfg, 4, 2, rng);
    model::Model mdl(cfg, p);
    Tensor probs = mdl.forward(nullptr, hs, rs, false, nullptr);
    const auto expect = oracle_forward(cfg, p, hs, rs);
    REQUIRE(probs.numel() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) {
      CHECK(std::abs(probs.data()[i] - expect[i]) < 1e-10);
    }
  }
}

TEST_CASE("parallel add with identical rate-1 filters mimics a scaled single branch") {
  // Every branch sees the same input; with equal filters and rate 1 everywhere,
  // add-integration equals (T+1) times the single stage-0 output.
  Rng rng(24);
  ModelConfig cfg = toy_config(Structure::parallel, Integration::add);
  cfg.atrous_stages = 2;
  cfg.rates = {1, 1};
  ModelParams p = model::init_params(cfg, 4, 2, rng);
  for (std::size_t t = 1; t < cfg.conv_stages(); ++t) {
    p.conv_w[t].data() = p.conv_w[0].data();
    p.conv_b[t].data() = p.conv_b[0].data();
  }

  Tensor e = ops::embedding_lookup(nullptr, p.entity_table, {0, 1});
  Tensor r = ops::embedding_lookup(nullptr, p.relation_table, {0, 1});
  Tensor tau = model::reshape_2d(nullptr, e, r, cfg);
  std::vector<Tensor> stages;
  for (std::size_t t = 0; t < cfg.conv_stages(); ++t) {
    stages.push_back(
        ops::conv2d_dilated(nullptr, tau, p.conv_w[t], p.conv_b[t], 1, ops::Padding::same_zero));
  }
  Tensor combined = model::integrate(nullptr, stages, Integration::add);
  for (std::size_t i = 0; i < combined.numel(); ++i) {
    CHECK(std::abs(combined.data()[i] - 3.0 * stages[0].data()[i]) < 1e-12);
  }
}

TEST_CASE("batch permutation equivariance at evaluation time") {
  Rng rng(25);
  ModelConfig cfg = toy_config(Structure::parallel);
  cfg.batchnorm = true;  // eval mode uses running stats, so rows stay independent
  ModelParams p = model::init_params(cfg, 5, 2, rng);
  model::Model mdl(cfg, p);
  const std::size_t N = 5;
  Tensor a = mdl.forward(nullptr, {0, 2, 4}, {0, 1, 1}, false, nullptr);
  Tensor b = mdl.forward(nullptr, {4, 0, 2}, {1, 0, 1}, false, nullptr);
  for (std::size_t n = 0; n < N; ++n) {
    CHECK(a.data()[0 * N + n] == b.data()[1 * N + n]);
    CHECK(a.data()[1 * N + n] == b.data()[2 * N + n]);
    CHECK(a.data()[2 * N + n] == b.data()[0 * N + n]);
  }
}

TEST_CASE("T = 0 collapses serial and parallel to the same network") {
  ModelConfig cs = toy_config(Structure::serial);
  cs.atrous_stages = 0;
  cs.rates = {};
  ModelConfig cp = cs;
  cp.structure = Structure::parallel;
  Rng rng_a(26), rng_b(26);
  ModelParams pa = model::init_params(cs, 4, 2, rng_a);
  ModelParams pb = model::init_params(cp, 4, 2, rng_b);
  model::Model ma(cs, pa), mb(cp, pb);
  Tensor ya = ma.forward(nullptr, {0, 1, 2}, {0, 1, 0}, false, nullptr);
  Tensor yb = mb.forward(nullptr, {0, 1, 2}, {0, 1, 0}, false, nullptr);
  CHECK(ya.data() == yb.data());
}

TEST_CASE("forward outputs are probabilities strictly inside (0, 1)") {
  Rng rng(27);
  for (auto s : {Structure::serial, Structure::parallel}) {
    ModelConfig cfg = toy_config(s);
    cfg.batchnorm = true;
    ModelParams p = model::init_params(cfg, 8, 3, rng);
    model::Model mdl(cfg, p);
    Rng drop(1);
    for (bool train : {false, true}) {
      Tensor y = mdl.forward(nullptr, {0, 1, 2, 3, 4, 5, 6, 7},
                             {0, 1, 2, 0, 1, 2, 0, 1}, train, &drop);
      for (double v : y.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
    }
  }
}

TEST_CASE("gradient reaches every trainable parameter") {
  // Batchnorm stays off here: normalization makes the output invariant to the
  // conv/score biases, so their gradients would be legitimately zero.
  Rng rng(28);
  for (auto s : {Structure::serial, Structure::parallel}) {
    ModelConfig cfg = toy_config(s);
    ModelParams p = model::init_params(cfg, 4, 2, rng);
    model::Model mdl(cfg, p);
    for (auto& [name, t] : p.trainable()) t.zero_grad();

    Tape tape;
    Rng drop(2);
    Tensor probs = mdl.forward(&tape, {0, 1, 2, 3}, {0, 1, 0, 1}, true, &drop);
    Tensor labels = Tensor::zeros({4, 4});
    for (std::size_t b = 0; b < 4; ++b) labels.data()[b * 4 + (b + 1) % 4] = 1.0;
    Tensor loss = ops::bce_listwise(&tape, probs, labels);
    tape.backward(loss);

    for (auto& [name, t] : p.trainable()) {
      REQUIRE_MESSAGE(t.has_grad(), name);
      double norm = 0.0;
      for (double g : t.grad()) norm += g * g;
      CHECK_MESSAGE(norm > 0.0, name);
    }
  }
}

TEST_CASE("gradient reaches batch-normalization parameters too") {
  Rng rng(29);
  ModelConfig cfg = toy_config(Structure::serial);
  cfg.batchnorm = true;
  ModelParams p = model::init_params(cfg, 4, 2, rng);
  model::Model mdl(cfg, p);
  for (auto& [name, t] : p.trainable()) t.zero_grad();

  Tape tape;
  Tensor probs = mdl.forward(&tape, {0, 1, 2, 3}, {0, 1, 0, 1}, true, &rng);
  Tensor labels = Tensor::zeros({4, 4});
  for (std::size_t b = 0; b < 4; ++b) labels.data()[b * 4 + b] = 1.0;
  tape.backward(ops::bce_listwise(&tape, probs, labels));

  for (auto& [name, t] : p.trainable()) {
    if (name.rfind("bn_", 0) != 0) continue;
    REQUIRE_MESSAGE(t.has_grad(), name);
    double norm = 0.0;
    for (double g : t.grad()) norm += g * g;
    CHECK_MESSAGE(norm > 0.0, name);
  }
}
