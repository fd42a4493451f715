#include "acre/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace acre::eval {

using data::Split;
using data::Triple;

TiePolicy parse_tie_policy(const std::string& s) {
  if (s == "mean") return TiePolicy::mean;
  if (s == "optimistic") return TiePolicy::optimistic;
  if (s == "pessimistic") return TiePolicy::pessimistic;
  throw std::invalid_argument("tie policy must be mean|optimistic|pessimistic, got '" + s + "'");
}

HeadMode parse_head_mode(const std::string& s) {
  if (s == "reciprocal") return HeadMode::reciprocal;
  if (s == "direct") return HeadMode::direct;
  throw std::invalid_argument("head mode must be reciprocal|direct, got '" + s + "'");
}

std::string tie_policy_name(TiePolicy p) {
  switch (p) {
    case TiePolicy::mean: return "mean";
    case TiePolicy::optimistic: return "optimistic";
    case TiePolicy::pessimistic: return "pessimistic";
  }
  return "?";
}

std::string head_mode_name(HeadMode m) {
  return m == HeadMode::reciprocal ? "reciprocal" : "direct";
}

double filtered_rank(const std::vector<double>& scores, std::uint32_t gold,
                     const std::vector<std::uint32_t>& known_sorted, TiePolicy policy) {
  if (gold >= scores.size()) {
    throw std::invalid_argument("filtered_rank: gold id " + std::to_string(gold) +
                                " out of range");
  }
  const double sg = scores[gold];
  std::size_t higher = 0, equal = 0;
  for (std::uint32_t j = 0; j < scores.size(); ++j) {
    if (j == gold) continue;
    if (std::binary_search(known_sorted.begin(), known_sorted.end(), j)) continue;
    if (scores[j] > sg) {
      ++higher;
    } else if (scores[j] == sg) {
      ++equal;
    }
  }
  double rank = 1.0 + static_cast<double>(higher);
  switch (policy) {
    case TiePolicy::mean: rank += static_cast<double>(equal) / 2.0; break;
    case TiePolicy::optimistic: break;
    case TiePolicy::pessimistic: rank += static_cast<double>(equal); break;
  }
  return rank;
}

MetricsBlock metrics_of(const std::vector<RankEntry>& entries) {
  MetricsBlock b;
  b.count = entries.size();
  if (entries.empty()) return b;
  for (const RankEntry& e : entries) {
    b.mrr += 1.0 / e.rank;
    b.hits1 += e.rank <= 1.0 ? 1.0 : 0.0;
    b.hits3 += e.rank <= 3.0 ? 1.0 : 0.0;
    b.hits10 += e.rank <= 10.0 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(b.count);
  b.mrr /= n;
  b.hits1 /= n;
  b.hits3 /= n;
  b.hits10 /= n;
  return b;
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  auto row = [&os](const char* name, const MetricsBlock& b) {
    os << name << "  MRR=" << b.mrr << "  H@1=" << b.hits1 << "  H@3=" << b.hits3
       << "  H@10=" << b.hits10 << "  n=" << b.count << '\n';
  };
  row("both ", both);
  if (head.count) row("head ", head);
  if (tail.count) row("tail ", tail);
  return os.str();
}

namespace {

// Scores for a batch of (e, r) 1-N queries, eval mode.
std::vector<std::vector<double>> batched_scores(const model::Model& m,
                                                const std::vector<std::uint32_t>& es,
                                                const std::vector<std::uint32_t>& rs,
                                                std::size_t batch_size) {
  std::vector<std::vector<double>> out(es.size());
  const std::size_t n = m.params().num_entities;
  for (std::size_t begin = 0; begin < es.size(); begin += batch_size) {
    const std::size_t end = std::min(es.size(), begin + batch_size);
    std::vector<std::size_t> h_ids(es.begin() + begin, es.begin() + end);
    std::vector<std::size_t> r_ids(rs.begin() + begin, rs.begin() + end);
    Tensor probs = m.forward(nullptr, h_ids, r_ids, false, nullptr);
    for (std::size_t i = begin; i < end; ++i) {
      const double* row = probs.data().data() + (i - begin) * n;
      out[i].assign(row, row + n);
    }
  }
  return out;
}

// Direct head prediction: one [N]-batch forward per unique (r, t) query,
// reading P(t | h', r) for every candidate head h'.
std::vector<double> direct_head_scores(const model::Model& m, std::uint32_t r,
                                       std::uint32_t t) {
  const std::size_t n = m.params().num_entities;
  std::vector<std::size_t> h_ids(n), r_ids(n, r);
  std::iota(h_ids.begin(), h_ids.end(), 0);
  Tensor probs = m.forward(nullptr, h_ids, r_ids, false, nullptr);
  std::vector<double> scores(n);
  for (std::size_t h = 0; h < n; ++h) scores[h] = probs.data()[h * n + t];
  return scores;
}

struct QueryKey {
  std::uint32_t e, r;
  bool operator<(const QueryKey& o) const { return e < o.e || (e == o.e && r < o.r); }
};

}  // namespace

MetricReport evaluate(const model::Model& m, const data::TripleStore& store,
                      data::Split split, const EvalOptions& opts) {
  const auto& triples = store.split(split);
  if (triples.empty()) throw std::runtime_error("evaluate: split is empty");
  if (opts.head_mode == HeadMode::reciprocal && !store.reciprocal_flag) {
    throw std::runtime_error("evaluate: reciprocal head mode needs a reciprocal store");
  }
  const std::uint32_t r_orig = store.reciprocal_flag
                                   ? store.num_relations_orig
                                   : static_cast<std::uint32_t>(store.num_relations());
  const auto all_idx = data::LabelIndex::build(
      store, data::split_bit(Split::train) | data::split_bit(Split::valid) |
                 data::split_bit(Split::test));

  // Original (non-mirrored) triples of the split.
  std::vector<Triple> originals;
  for (const Triple& tr : triples) {
    if (tr.r < r_orig) originals.push_back(tr);
  }

  const bool want_tail =
      opts.direction == Direction::tail || opts.direction == Direction::both;
  const bool want_head =
      opts.direction == Direction::head || opts.direction == Direction::both;

  // Deduplicate forward passes across triples sharing a query.
  std::map<QueryKey, std::vector<double>> cache;
  {
    std::vector<QueryKey> keys;
    for (const Triple& tr : originals) {
      if (want_tail) keys.push_back({tr.h, tr.r});
      if (want_head && opts.head_mode == HeadMode::reciprocal) {
        keys.push_back({tr.t, tr.r + r_orig});
      }
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end(),
                           [](const QueryKey& a, const QueryKey& b) {
                             return a.e == b.e && a.r == b.r;
                           }),
               keys.end());
    std::vector<std::uint32_t> es, rs;
    for (const QueryKey& k : keys) {
      es.push_back(k.e);
      rs.push_back(k.r);
    }
    auto scores = batched_scores(m, es, rs, opts.batch_size);
    for (std::size_t i = 0; i < keys.size(); ++i) cache[keys[i]] = std::move(scores[i]);
  }

  MetricReport report;
  std::vector<RankEntry> head_entries, tail_entries;
  for (const Triple& tr : originals) {
    if (want_tail) {
      const auto& scores = cache[{tr.h, tr.r}];
      const auto* known = all_idx.tails(tr.h, tr.r);
      static const std::vector<std::uint32_t> empty;
      const double rank =
          filtered_rank(scores, tr.t, known ? *known : empty, opts.tie_policy);
      tail_entries.push_back({tr.h, tr.r, tr.t, false, rank});
    }
    if (want_head) {
      std::vector<std::uint32_t> known;
      double rank;
      if (opts.head_mode == HeadMode::reciprocal) {
        const auto& scores = cache[{tr.t, tr.r + r_orig}];
        const auto* ks = all_idx.tails(tr.t, tr.r + r_orig);
        rank = filtered_rank(scores, tr.h, ks ? *ks : known, opts.tie_policy);
      } else {
        const auto scores = direct_head_scores(m, tr.r, tr.t);
        // Known heads for (r, t): scan the filter index the other way.
        for (std::uint32_t h = 0; h < store.num_entities(); ++h) {
          if (all_idx.contains(h, tr.r, tr.t)) known.push_back(h);
        }
        rank = filtered_rank(scores, tr.h, known, opts.tie_policy);
      }
      head_entries.push_back({tr.t, tr.r, tr.h, true, rank});
    }
  }

  report.head = metrics_of(head_entries);
  report.tail = metrics_of(tail_entries);
  report.entries = std::move(head_entries);
  report.entries.insert(report.entries.end(), tail_entries.begin(), tail_entries.end());
  report.both = metrics_of(report.entries);
  return report;
}

std::string CategoryReport::to_text() const {
  std::ostringstream os;
  os << "category   head-H@10 (n)      tail-H@10 (n)\n";
  for (auto cat : {data::RelationCategory::one_to_one, data::RelationCategory::one_to_n,
                   data::RelationCategory::n_to_one, data::RelationCategory::m_to_n}) {
    os << data::category_name(cat) << "    ";
    auto h = head_cells.find(cat);
    auto t = tail_cells.find(cat);
    if (h == head_cells.end()) {
      os << "absent          ";
    } else {
      os << h->second.hits10 << " (" << h->second.count << ")   ";
    }
    if (t == tail_cells.end()) {
      os << "absent";
    } else {
      os << t->second.hits10 << " (" << t->second.count << ")";
    }
    os << '\n';
  }
  return os.str();
}

CategoryReport category_report(const model::Model& m, const data::TripleStore& store,
                               data::Split split, const EvalOptions& opts,
                               double threshold) {
  EvalOptions both = opts;
  both.direction = Direction::both;
  const MetricReport rep = evaluate(m, store, split, both);
  const auto stats = data::classify_relations(store, threshold);

  CategoryReport out;
  for (std::uint32_t r = 0; r < stats.size(); ++r) {
    const bool mirrored = store.reciprocal_flag && r >= store.num_relations_orig;
    if (!mirrored && !stats[r].category && stats[r].train_triples == 0) {
      out.unclassified_relations.push_back(r);
    }
  }
  for (const RankEntry& e : rep.entries) {
    if (!stats[e.relation].category) continue;  // undefined category, reported separately
    auto& cells = e.predict_head ? out.head_cells : out.tail_cells;
    CategoryCell& cell = cells[*stats[e.relation].category];
    cell.hits10 += e.rank <= 10.0 ? 1.0 : 0.0;
    cell.count += 1;
  }
  for (auto* cells : {&out.head_cells, &out.tail_cells}) {
    for (auto& [cat, cell] : *cells) cell.hits10 /= static_cast<double>(cell.count);
  }
  return out;
}

}  // namespace acre::eval
