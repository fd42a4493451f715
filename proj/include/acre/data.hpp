#pragma once
// Triple dataset ingestion: vocabularies, per-split triple lists, reciprocal
// augmentation, (h,r) -> {t} label indexes and relation category statistics.

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace acre::data {

struct Triple {
  std::uint32_t h = 0, r = 0, t = 0;
  bool operator==(const Triple&) const = default;
};

enum class Split { train = 0, valid = 1, test = 2 };
constexpr std::uint32_t split_bit(Split s) { return 1u << static_cast<int>(s); }

struct Vocabulary {
  std::vector<std::string> entity_names;
  std::vector<std::string> relation_names;
  std::unordered_map<std::string, std::uint32_t> entity_ids;
  std::unordered_map<std::string, std::uint32_t> relation_ids;

  std::size_t num_entities() const { return entity_names.size(); }
  std::size_t num_relations() const { return relation_names.size(); }
  std::uint32_t intern_entity(const std::string& name);
  std::uint32_t intern_relation(const std::string& name);
};

struct TripleStore {
  Vocabulary vocab;
  std::vector<Triple> splits[3];
  std::string provenance;
  bool reciprocal_flag = false;
  std::uint32_t num_relations_orig = 0;   // before reciprocal augmentation
  std::vector<std::uint32_t> entities_unseen_in_train;
  std::size_t duplicates_dropped = 0;

  std::vector<Triple>& split(Split s) { return splits[static_cast<int>(s)]; }
  const std::vector<Triple>& split(Split s) const { return splits[static_cast<int>(s)]; }
  std::size_t num_entities() const { return vocab.num_entities(); }
  std::size_t num_relations() const { return vocab.num_relations(); }
  std::string stats_line() const;
};

// Files are 3-column `head relation tail` lines, tab or whitespace separated.
// The vocabulary is built from the train file first (first-appearance order),
// then valid, then test; per-split duplicates are dropped and counted.
TripleStore load_triples(const std::string& train_path, const std::string& valid_path,
                         const std::string& test_path);
// Convenience: dir must contain train.txt, valid.txt, test.txt.
TripleStore load_dir(const std::string& dir);

// Adds r_inv = r + R_orig and a mirrored (t, r_inv, h) for every triple, in
// every split. Throws if already applied.
void add_reciprocals(TripleStore& store);

// Exact (h,r) -> set-of-tails map over a union of splits (bitmask of split_bit).
class LabelIndex {
 public:
  static LabelIndex build(const TripleStore& store, std::uint32_t split_mask);

  const std::vector<std::uint32_t>* tails(std::uint32_t h, std::uint32_t r) const;
  bool contains(std::uint32_t h, std::uint32_t r, std::uint32_t t) const;
  std::size_t num_queries() const { return map_.size(); }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [key, tails] : map_) {
      fn(static_cast<std::uint32_t>(key >> 32), static_cast<std::uint32_t>(key), tails);
    }
  }

 private:
  static std::uint64_t key(std::uint32_t h, std::uint32_t r) {
    return (static_cast<std::uint64_t>(h) << 32) | r;
  }
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> map_;
};

enum class RelationCategory { one_to_one, one_to_n, n_to_one, m_to_n };
std::string category_name(RelationCategory c);

struct RelationStats {
  double tails_per_head = 0.0;  // mean tails per (h,r) key over train
  double heads_per_tail = 0.0;  // mean heads per (t,r) key over train
  std::size_t train_triples = 0;
  std::optional<RelationCategory> category;  // nullopt when no train triples
};

// Computed over the train split; comparison against `threshold` on each
// average picks the category.
std::vector<RelationStats> classify_relations(const TripleStore& store,
                                              double threshold = 1.5);

// Versioned binary cache of vocab + id triples (see save_cache for layout).
void save_cache(const TripleStore& store, const std::string& path);
TripleStore load_cache(const std::string& path);

}  // namespace acre::data
