#pragma once
// Filtered link-prediction evaluation: per-query ranks with configurable tie
// handling, MRR / Hits@k reports, head/tail breakdown and relation-category
// breakdown.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "acre/data.hpp"
#include "acre/model.hpp"

namespace acre::eval {

enum class TiePolicy { mean, optimistic, pessimistic };
enum class Direction { head, tail, both };
enum class HeadMode { reciprocal, direct };

TiePolicy parse_tie_policy(const std::string& s);
HeadMode parse_head_mode(const std::string& s);
std::string tie_policy_name(TiePolicy p);
std::string head_mode_name(HeadMode m);

struct RankEntry {
  std::uint32_t known_entity;  // h for tail prediction, t for head prediction
  std::uint32_t relation;      // original (non-reciprocal) relation id
  std::uint32_t gold;
  bool predict_head;
  double rank;                 // 1..N; half-integers possible under the mean tie rule
};

struct MetricsBlock {
  double mrr = 0.0;
  double hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;
  std::size_t count = 0;
};

MetricsBlock metrics_of(const std::vector<RankEntry>& entries);

struct MetricReport {
  MetricsBlock both;           // pooled head+tail entries
  MetricsBlock head, tail;
  std::vector<RankEntry> entries;
  std::string to_text() const;
};

// rank = 1 + |{j not in known, j != gold : s_j > s_gold}| + tie adjustment
// over equal scores; `known` entities other than gold never count against it.
double filtered_rank(const std::vector<double>& scores, std::uint32_t gold,
                     const std::vector<std::uint32_t>& known_sorted, TiePolicy policy);

struct EvalOptions {
  Direction direction = Direction::both;
  HeadMode head_mode = HeadMode::reciprocal;
  TiePolicy tie_policy = TiePolicy::mean;
  std::size_t batch_size = 256;
};

// Filtered evaluation over one split; the filter index is built from
// train + valid + test of `store`. The store must already be reciprocal-
// augmented when head_mode == reciprocal.
MetricReport evaluate(const model::Model& m, const data::TripleStore& store,
                      data::Split split, const EvalOptions& opts);

struct CategoryCell {
  double hits10 = 0.0;
  std::size_t count = 0;
};

struct CategoryReport {
  // category -> [head cell, tail cell]; categories with no test triples are absent.
  std::map<data::RelationCategory, CategoryCell> head_cells, tail_cells;
  std::vector<std::uint32_t> unclassified_relations;  // no train triples
  std::string to_text() const;
};

CategoryReport category_report(const model::Model& m, const data::TripleStore& store,
                               data::Split split, const EvalOptions& opts,
                               double threshold = 1.5);

}  // namespace acre::eval
