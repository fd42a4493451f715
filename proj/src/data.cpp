#include "acre/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace acre::data {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::uint64_t pack_hr(std::uint32_t a, std::uint32_t b) {
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

struct RawTriple {
  std::string h, r, t;
};

std::vector<RawTriple> parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open triple file: " + path);
  std::vector<RawTriple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    RawTriple rt;
    std::string extra;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (!(ss >> rt.h >> rt.r >> rt.t) || (ss >> extra)) {
      fail(path + ":" + std::to_string(lineno) + ": expected 3 columns");
    }
    out.push_back(std::move(rt));
  }
  if (out.empty()) fail(path + ": no triples");
  return out;
}

}  // namespace

std::uint32_t Vocabulary::intern_entity(const std::string& name) {
  auto [it, inserted] = entity_ids.try_emplace(name, entity_names.size());
  if (inserted) entity_names.push_back(name);
  return it->second;
}

std::uint32_t Vocabulary::intern_relation(const std::string& name) {
  auto [it, inserted] = relation_ids.try_emplace(name, relation_names.size());
  if (inserted) relation_names.push_back(name);
  return it->second;
}

std::string TripleStore::stats_line() const {
  std::ostringstream os;
  os << "E=" << num_entities() << " R=" << num_relations()
     << " train=" << split(Split::train).size() << " valid=" << split(Split::valid).size()
     << " test=" << split(Split::test).size();
  return os.str();
}

TripleStore load_triples(const std::string& train_path, const std::string& valid_path,
                         const std::string& test_path) {
  TripleStore store;
  store.provenance = train_path;
  const std::string* paths[3] = {&train_path, &valid_path, &test_path};
  for (int s = 0; s < 3; ++s) {
    auto raw = parse_file(*paths[s]);
    std::set<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>> seen3;
    for (const RawTriple& rt : raw) {
      Triple tr{store.vocab.intern_entity(rt.h), store.vocab.intern_relation(rt.r),
                store.vocab.intern_entity(rt.t)};
      if (!seen3.emplace(tr.h, tr.r, tr.t).second) {
        ++store.duplicates_dropped;
        continue;
      }
      store.splits[s].push_back(tr);
    }
  }
  store.num_relations_orig = static_cast<std::uint32_t>(store.vocab.num_relations());

  std::vector<bool> in_train(store.vocab.num_entities(), false);
  for (const Triple& tr : store.split(Split::train)) {
    in_train[tr.h] = true;
    in_train[tr.t] = true;
  }
  for (std::uint32_t e = 0; e < in_train.size(); ++e) {
    if (!in_train[e]) store.entities_unseen_in_train.push_back(e);
  }
  return store;
}

TripleStore load_dir(const std::string& dir) {
  return load_triples(dir + "/train.txt", dir + "/valid.txt", dir + "/test.txt");
}

void add_reciprocals(TripleStore& store) {
  if (store.reciprocal_flag) fail("add_reciprocals: already applied");
  const std::uint32_t r_orig = static_cast<std::uint32_t>(store.vocab.num_relations());
  for (std::uint32_t r = 0; r < r_orig; ++r) {
    store.vocab.intern_relation(store.vocab.relation_names[r] + "_reciprocal");
  }
  for (auto& split : store.splits) {
    const std::size_t n = split.size();
    split.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      const Triple tr = split[i];
      split.push_back(Triple{tr.t, tr.r + r_orig, tr.h});
    }
  }
  store.reciprocal_flag = true;
  store.num_relations_orig = r_orig;
}

LabelIndex LabelIndex::build(const TripleStore& store, std::uint32_t split_mask) {
  if (split_mask == 0) fail("LabelIndex: empty split selection");
  LabelIndex idx;
  for (int s = 0; s < 3; ++s) {
    if (!(split_mask & (1u << s))) continue;
    for (const Triple& tr : store.splits[s]) {
      idx.map_[key(tr.h, tr.r)].push_back(tr.t);
    }
  }
  for (auto& [k, tails] : idx.map_) {
    std::sort(tails.begin(), tails.end());
    tails.erase(std::unique(tails.begin(), tails.end()), tails.end());
  }
  return idx;
}

const std::vector<std::uint32_t>* LabelIndex::tails(std::uint32_t h, std::uint32_t r) const {
  auto it = map_.find(key(h, r));
  return it == map_.end() ? nullptr : &it->second;
}

bool LabelIndex::contains(std::uint32_t h, std::uint32_t r, std::uint32_t t) const {
  const auto* ts = tails(h, r);
  return ts && std::binary_search(ts->begin(), ts->end(), t);
}

std::string category_name(RelationCategory c) {
  switch (c) {
    case RelationCategory::one_to_one: return "1-to-1";
    case RelationCategory::one_to_n: return "1-to-n";
    case RelationCategory::n_to_one: return "n-to-1";
    case RelationCategory::m_to_n: return "m-to-n";
  }
  return "?";
}

std::vector<RelationStats> classify_relations(const TripleStore& store, double threshold) {
  if (threshold <= 0.0) fail("classify_relations: threshold must be > 0");
  const std::size_t r_count = store.num_relations();
  std::vector<RelationStats> stats(r_count);
  std::vector<std::unordered_set<std::uint64_t>> hr_keys(r_count), tr_keys(r_count);
  for (const Triple& tr : store.split(Split::train)) {
    ++stats[tr.r].train_triples;
    hr_keys[tr.r].insert(pack_hr(tr.h, 0));
    tr_keys[tr.r].insert(pack_hr(tr.t, 0));
  }
  for (std::size_t r = 0; r < r_count; ++r) {
    RelationStats& s = stats[r];
    if (s.train_triples == 0) continue;  // category undefined, reported separately
    s.tails_per_head = static_cast<double>(s.train_triples) / hr_keys[r].size();
    s.heads_per_tail = static_cast<double>(s.train_triples) / tr_keys[r].size();
    const bool many_tails = s.tails_per_head > threshold;
    const bool many_heads = s.heads_per_tail > threshold;
    s.category = many_tails
                     ? (many_heads ? RelationCategory::m_to_n : RelationCategory::one_to_n)
                     : (many_heads ? RelationCategory::n_to_one : RelationCategory::one_to_one);
  }
  return stats;
}

namespace {

constexpr char kCacheMagic[8] = {'A', 'C', 'R', 'E', 'K', 'G', 'C', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) fail("cache: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is) {
  const std::uint64_t n = get_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) fail("cache: truncated string");
  return s;
}

}  // namespace

// Layout: magic, reciprocal flag, R_orig, duplicate count, entity names,
// relation names, then the three splits as (h,r,t) u64 triples.
void save_cache(const TripleStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("cannot write cache: " + path);
  os.write(kCacheMagic, 8);
  put_u64(os, store.reciprocal_flag ? 1 : 0);
  put_u64(os, store.num_relations_orig);
  put_u64(os, store.duplicates_dropped);
  put_str(os, store.provenance);
  put_u64(os, store.vocab.num_entities());
  for (const auto& n : store.vocab.entity_names) put_str(os, n);
  put_u64(os, store.vocab.num_relations());
  for (const auto& n : store.vocab.relation_names) put_str(os, n);
  for (const auto& split : store.splits) {
    put_u64(os, split.size());
    for (const Triple& tr : split) {
      put_u64(os, tr.h);
      put_u64(os, tr.r);
      put_u64(os, tr.t);
    }
  }
  if (!os) fail("cache write failed: " + path);
}

TripleStore load_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open cache: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, kCacheMagic)) {
    fail("cache: bad magic in " + path);
  }
  TripleStore store;
  store.reciprocal_flag = get_u64(is) != 0;
  store.num_relations_orig = static_cast<std::uint32_t>(get_u64(is));
  store.duplicates_dropped = get_u64(is);
  store.provenance = get_str(is);
  const std::uint64_t ne = get_u64(is);
  for (std::uint64_t i = 0; i < ne; ++i) store.vocab.intern_entity(get_str(is));
  const std::uint64_t nr = get_u64(is);
  for (std::uint64_t i = 0; i < nr; ++i) store.vocab.intern_relation(get_str(is));
  for (auto& split : store.splits) {
    const std::uint64_t n = get_u64(is);
    split.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      Triple tr;
      tr.h = static_cast<std::uint32_t>(get_u64(is));
      tr.r = static_cast<std::uint32_t>(get_u64(is));
      tr.t = static_cast<std::uint32_t>(get_u64(is));
      split.push_back(tr);
    }
  }
  std::vector<bool> in_train(store.vocab.num_entities(), false);
  for (const Triple& tr : store.split(Split::train)) {
    in_train[tr.h] = true;
    in_train[tr.t] = true;
  }
  for (std::uint32_t e = 0; e < in_train.size(); ++e) {
    if (!in_train[e]) store.entities_unseen_in_train.push_back(e);
  }
  return store;
}

}  // namespace acre::data
