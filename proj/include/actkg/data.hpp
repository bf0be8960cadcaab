#pragma once

// Interaction/KG ingestion, preprocessing and the synthetic dataset generator.
//
// Index conventions. Items are entities: the entity vocabulary starts with every item
// (entity index == item index for items), followed by attribute entities that only
// appear in the KG. The graph node space is [0, U) for users followed by
// [U, U + num_entities) for entities.
//
// File formats (UTF-8, TAB separated, one record per line):
//   interactions   <user_id>\t<item_id>
//   triples        <head_id>\t<relation>\t<tail_id>
//   vocabularies   <string>\t<index>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "actkg/model.hpp"
#include "actkg/random.hpp"
#include "actkg/tensor.hpp"

namespace actkg {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Stable string <-> index map; indices are assigned in first-seen order.
class Vocabulary {
 public:
  std::uint32_t intern(const std::string& s) {
    auto [it, inserted] = index_.try_emplace(s, static_cast<std::uint32_t>(names_.size()));
    if (inserted) names_.push_back(s);
    return it->second;
  }

  std::optional<std::uint32_t> find(const std::string& s) const {
    const auto it = index_.find(s);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& name(std::uint32_t i) const { return names_.at(i); }
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  void write(std::ostream& os) const {
    for (std::size_t i = 0; i < names_.size(); ++i) os << names_[i] << '\t' << i << '\n';
  }

  /// Reads a sidecar; indices must be exactly 0..n-1 in order.
  static Vocabulary read(std::istream& is, const std::string& source = "<vocab>") {
    Vocabulary v;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto tab = line.rfind('\t');
      if (tab == std::string::npos || tab == 0) throw ParseError(source, line_no, "expected <string>\\t<index>");
      std::uint64_t idx = 0;
      try {
        std::size_t used = 0;
        idx = std::stoull(line.substr(tab + 1), &used);
        if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError(source, line_no, "bad index '" + line.substr(tab + 1) + "'");
      }
      if (idx != v.size()) throw ParseError(source, line_no, "indices must be contiguous from 0");
      if (v.find(line.substr(0, tab))) throw ParseError(source, line_no, "duplicate entry");
      v.intern(line.substr(0, tab));
    }
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.names_ == b.names_; }

 private:
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<std::string> names_;
};

struct Interaction {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  friend auto operator<=>(const Interaction&, const Interaction&) = default;
};

struct Triple {
  std::uint32_t head = 0;
  std::uint32_t relation = 0;
  std::uint32_t tail = 0;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct InteractionData {
  Vocabulary users;
  Vocabulary items;
  std::vector<Interaction> pairs;
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

/// Calls fn(fields, line_no) for each non-empty line; checks the field count.
template <typename Fn>
void for_each_record(std::istream& is, const std::string& source, std::size_t fields, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto parts = split_tabs(line);
    if (parts.size() != fields)
      throw ParseError(source, line_no,
                       "expected " + std::to_string(fields) + " tab-separated fields, got " + std::to_string(parts.size()));
    for (const auto& p : parts)
      if (p.empty()) throw ParseError(source, line_no, "empty field");
    fn(parts, line_no);
  }
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "' for reading");
  return is;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  return os;
}

}  // namespace detail

/// Parses `<user>\t<item>` records; repeated pairs are dropped (first occurrence kept).
inline InteractionData parse_interactions(std::istream& is, const std::string& source = "<interactions>") {
  InteractionData data;
  std::unordered_set<std::uint64_t> seen;
  detail::for_each_record(is, source, 2, [&](const std::vector<std::string>& f, std::size_t) {
    const Interaction x{data.users.intern(f[0]), data.items.intern(f[1])};
    if (seen.insert((std::uint64_t{x.user} << 32) | x.item).second) data.pairs.push_back(x);
  });
  return data;
}

inline InteractionData load_interactions(const std::filesystem::path& path) {
  auto is = detail::open_input(path);
  return parse_interactions(is, path.string());
}

/// Parses `<head>\t<relation>\t<tail>` records against an entity vocabulary that already
/// holds the items. New entities and relations are appended unless `strict`, in which
/// case an unknown relation is a parse error. Duplicate triples are dropped.
inline std::vector<Triple> parse_triples(std::istream& is, Vocabulary& entities, Vocabulary& relations,
                                         bool strict = false, const std::string& source = "<triples>") {
  std::vector<Triple> out;
  std::set<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>> seen;
  detail::for_each_record(is, source, 3, [&](const std::vector<std::string>& f, std::size_t line_no) {
    std::uint32_t rel = 0;
    if (strict) {
      const auto r = relations.find(f[1]);
      if (!r) throw ParseError(source, line_no, "unknown relation '" + f[1] + "'");
      rel = *r;
    } else {
      rel = relations.intern(f[1]);
    }
    const Triple t{entities.intern(f[0]), rel, entities.intern(f[2])};
    if (seen.emplace(t.head, t.relation, t.tail).second) out.push_back(t);
  });
  return out;
}

inline std::vector<Triple> load_triples(const std::filesystem::path& path, Vocabulary& entities,
                                        Vocabulary& relations, bool strict = false) {
  auto is = detail::open_input(path);
  return parse_triples(is, entities, relations, strict, path.string());
}

/// Iteratively drops users and items with fewer than k interactions until every
/// remaining user and item has at least k.
inline std::vector<Interaction> kcore_filter(std::vector<Interaction> pairs, std::size_t k) {
  if (k < 1) throw ConfigError("kcore_filter: k must be >= 1");
  while (true) {
    std::unordered_map<std::uint32_t, std::size_t> user_deg, item_deg;
    for (const auto& p : pairs) {
      ++user_deg[p.user];
      ++item_deg[p.item];
    }
    std::vector<Interaction> kept;
    kept.reserve(pairs.size());
    for (const auto& p : pairs)
      if (user_deg[p.user] >= k && item_deg[p.item] >= k) kept.push_back(p);
    if (kept.size() == pairs.size()) return kept;
    pairs = std::move(kept);
  }
}

struct SplitResult {
  std::vector<Interaction> train;
  std::vector<Interaction> validation;
  std::vector<Interaction> test;
};

/// Per-user random split: round(80%) of each user's interactions form the training
/// pool and the rest go to test; round(10%) of the pool is then moved to validation.
/// Users with fewer than 3 interactions keep everything in train.
inline SplitResult split(const std::vector<Interaction>& pairs, std::uint64_t seed, double train_ratio = 0.8,
                         double validation_ratio = 0.1) {
  std::map<std::uint32_t, std::vector<std::uint32_t>> by_user;
  for (const auto& p : pairs) by_user[p.user].push_back(p.item);
  SplitResult out;
  for (auto& [user, items] : by_user) {
    const std::size_t n = items.size();
    if (n < 3) {
      for (auto i : items) out.train.push_back({user, i});
      continue;
    }
    Rng rng(hash_combine(seed, user));
    rng.shuffle(items.begin(), items.end());
    auto pool = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(n)));
    pool = std::clamp<std::size_t>(pool, 1, n - 1);
    auto n_val = static_cast<std::size_t>(std::llround(validation_ratio * static_cast<double>(pool)));
    n_val = std::min(n_val, pool - 1);
    for (std::size_t k = 0; k < n; ++k) {
      const Interaction x{user, items[k]};
      if (k < n_val) {
        out.validation.push_back(x);
      } else if (k < pool) {
        out.train.push_back(x);
      } else {
        out.test.push_back(x);
      }
    }
  }
  return out;
}

struct KgDataset {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_entities = 0;  // items included
  std::vector<Interaction> train;
  std::vector<Interaction> validation;
  std::vector<Interaction> test;
  std::vector<Triple> triples;
  Vocabulary users;
  Vocabulary entities;
  Vocabulary relations;

  std::size_t num_nodes() const noexcept { return num_users + num_entities; }
  std::size_t num_relations() const noexcept { return relations.size(); }
  std::uint32_t user_node(std::uint32_t u) const noexcept { return u; }
  std::uint32_t item_node(std::uint32_t i) const noexcept { return static_cast<std::uint32_t>(num_users + i); }
  std::uint32_t entity_node(std::uint32_t e) const noexcept { return static_cast<std::uint32_t>(num_users + e); }
  std::size_t num_interactions() const noexcept { return train.size() + validation.size() + test.size(); }

  /// Throws ConfigError describing the first violated invariant.
  void validate() const {
    if (users.size() != num_users) throw ConfigError("dataset: user vocabulary size mismatch");
    if (entities.size() != num_entities) throw ConfigError("dataset: entity vocabulary size mismatch");
    if (num_items > num_entities) throw ConfigError("dataset: more items than entities");
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    for (const auto* part : {&train, &validation, &test}) {
      for (const auto& x : *part) {
        if (x.user >= num_users || x.item >= num_items) throw ConfigError("dataset: interaction index out of range");
        if (!seen.emplace(x.user, x.item).second) throw ConfigError("dataset: pair appears more than once");
      }
    }
    for (const auto& t : triples) {
      if (t.head >= num_entities || t.tail >= num_entities || t.relation >= relations.size())
        throw ConfigError("dataset: triple index out of range");
    }
  }

  friend bool operator==(const KgDataset&, const KgDataset&) = default;
};

/// Builds a dataset from raw interactions and KG triples: optional k-core filtering
/// (k = 0 disables it), compaction of the vocabularies to surviving users/items, and
/// the per-user split. Triples touching a filtered-out item are dropped.
inline KgDataset assemble_dataset(const InteractionData& raw, const std::vector<Triple>& triples,
                                  const Vocabulary& entities, const Vocabulary& relations, std::size_t kcore,
                                  std::uint64_t seed) {
  const std::size_t raw_items = raw.items.size();
  auto pairs = kcore > 0 ? kcore_filter(raw.pairs, kcore) : raw.pairs;

  std::vector<char> user_alive(raw.users.size(), 0), item_alive(raw_items, 0);
  for (const auto& p : pairs) {
    user_alive[p.user] = 1;
    item_alive[p.item] = 1;
  }
  KgDataset ds;
  std::vector<std::uint32_t> user_map(raw.users.size(), 0), entity_map(entities.size(), UINT32_MAX);
  for (std::uint32_t u = 0; u < raw.users.size(); ++u)
    if (user_alive[u]) user_map[u] = ds.users.intern(raw.users.name(u));
  for (std::uint32_t i = 0; i < raw_items; ++i)
    if (item_alive[i]) entity_map[i] = ds.entities.intern(entities.name(i));
  ds.num_items = ds.entities.size();
  for (std::uint32_t e = static_cast<std::uint32_t>(raw_items); e < entities.size(); ++e)
    entity_map[e] = ds.entities.intern(entities.name(e));
  ds.relations = relations;
  ds.num_users = ds.users.size();
  ds.num_entities = ds.entities.size();

  for (auto& p : pairs) p = {user_map[p.user], entity_map[p.item]};
  for (const auto& t : triples) {
    if (entity_map[t.head] == UINT32_MAX || entity_map[t.tail] == UINT32_MAX) continue;
    ds.triples.push_back({entity_map[t.head], t.relation, entity_map[t.tail]});
  }
  auto parts = split(pairs, seed);
  ds.train = std::move(parts.train);
  ds.validation = std::move(parts.validation);
  ds.test = std::move(parts.test);
  ds.validate();
  return ds;
}

/// Loads raw interaction + triple files and assembles a dataset.
inline KgDataset load_raw_dataset(const std::filesystem::path& interactions, const std::filesystem::path& triples,
                                  std::size_t kcore, std::uint64_t seed) {
  const auto raw = load_interactions(interactions);
  Vocabulary entities = raw.items;
  Vocabulary relations;
  const auto kg = load_triples(triples, entities, relations);
  return assemble_dataset(raw, kg, entities, relations, kcore, seed);
}

/// Symmetric normalized adjacency D^-1/2 (A + I) D^-1/2 over the node space, built from
/// train interactions and KG triples with relation types collapsed.
template <typename T>
CsrMatrix<T> build_adjacency(const KgDataset& ds) {
  const std::size_t n = ds.num_nodes();
  std::vector<std::vector<std::uint32_t>> nbrs(n);
  auto link = [&nbrs](std::uint32_t a, std::uint32_t b) {
    if (a == b) return;
    nbrs[a].push_back(b);
    nbrs[b].push_back(a);
  };
  for (const auto& x : ds.train) link(ds.user_node(x.user), ds.item_node(x.item));
  for (const auto& t : ds.triples) link(ds.entity_node(t.head), ds.entity_node(t.tail));
  std::vector<typename CsrMatrix<T>::index_type> row_ptr(n + 1, 0);
  std::vector<double> degree(n);
  for (std::size_t v = 0; v < n; ++v) {
    auto& l = nbrs[v];
    l.push_back(static_cast<std::uint32_t>(v));
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
    degree[v] = static_cast<double>(l.size());
    row_ptr[v + 1] = row_ptr[v] + static_cast<std::uint32_t>(l.size());
  }
  std::vector<typename CsrMatrix<T>::index_type> col_idx;
  std::vector<T> values;
  col_idx.reserve(row_ptr[n]);
  values.reserve(row_ptr[n]);
  for (std::size_t v = 0; v < n; ++v) {
    for (const auto w : nbrs[v]) {
      col_idx.push_back(w);
      values.push_back(static_cast<T>(1.0 / std::sqrt(degree[v] * degree[w])));
    }
  }
  return CsrMatrix<T>(n, n, std::move(row_ptr), std::move(col_idx), std::move(values));
}

/// Uniform negative sampling over items the user has no train interaction with.
class NegativeSampler {
 public:
  NegativeSampler(const std::vector<Interaction>& train, std::size_t num_items) : num_items_(num_items) {
    for (const auto& x : train) {
      if (x.user >= positives_.size()) positives_.resize(x.user + 1);
      positives_[x.user].push_back(x.item);
    }
    for (auto& p : positives_) {
      std::sort(p.begin(), p.end());
      p.erase(std::unique(p.begin(), p.end()), p.end());
    }
  }

  bool is_positive(std::uint32_t user, std::uint32_t item) const {
    if (user >= positives_.size()) return false;
    return std::binary_search(positives_[user].begin(), positives_[user].end(), item);
  }

  std::uint32_t sample(std::uint32_t user, Rng& rng) const {
    const std::size_t n_pos = user < positives_.size() ? positives_[user].size() : 0;
    if (n_pos >= num_items_)
      throw SamplingError("user " + std::to_string(user) + " has interacted with every item");
    while (true) {
      const auto item = static_cast<std::uint32_t>(rng.below(num_items_));
      if (!is_positive(user, item)) return item;
    }
  }

 private:
  std::size_t num_items_;
  std::vector<std::vector<std::uint32_t>> positives_;
};

struct BprTriple {
  std::uint32_t user = 0;
  std::uint32_t positive = 0;
  std::uint32_t negative = 0;
  friend bool operator==(const BprTriple&, const BprTriple&) = default;
};

/// One negative per positive pair, in the order of `pairs`.
inline std::vector<BprTriple> sample_negatives(const std::vector<Interaction>& pairs, std::size_t num_items,
                                               Rng& rng) {
  const NegativeSampler sampler(pairs, num_items);
  std::vector<BprTriple> out;
  out.reserve(pairs.size());
  for (const auto& x : pairs) out.push_back({x.user, x.item, sampler.sample(x.user, rng)});
  return out;
}

// ---------------------------------------------------------------------------------
// Synthetic data

/// Generator settings; parsed from key=value text.
struct SynthSpec {
  std::size_t users = 500;
  std::size_t items = 300;
  std::size_t entities = 1000;  // items included
  std::size_t relations = 5;
  double interactions_per_user = 20.0;
  std::size_t groups = 10;
  double in_group = 0.8;                // chance an interaction stays inside the user's group
  std::size_t attributes_per_item = 4;  // KG triples per item
  double kg_in_group = 0.85;            // chance an item's attribute comes from its own group
  double popularity_skew = 0.8;         // Zipf exponent of item popularity
  std::uint64_t seed = 1;

  void validate() const {
    if (users < 1 || items < 1) throw ConfigError("synthetic spec: need at least one user and one item");
    if (entities < items) throw ConfigError("synthetic spec: entities must include all items");
    if (relations < 1) throw ConfigError("synthetic spec: need at least one relation");
    if (groups < 1 || groups > items) throw ConfigError("synthetic spec: groups must be in [1, items]");
    if (interactions_per_user < 1.0) throw ConfigError("synthetic spec: interactions_per_user must be >= 1");
    if (interactions_per_user * 1.5 > static_cast<double>(items))
      throw ConfigError("synthetic spec: interaction density exceeds 1 (interactions_per_user too large for items)");
    if (in_group < 0 || in_group > 1 || kg_in_group < 0 || kg_in_group > 1)
      throw ConfigError("synthetic spec: probabilities must be in [0, 1]");
    if (attributes_per_item > 0 && entities == items)
      throw ConfigError("synthetic spec: attributes requested but no attribute entities");
  }

  /// Applies `key=value` lines ('#' starts a comment). Unknown keys are errors.
  void apply(std::istream& is, const std::string& source = "<synthetic spec>") {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError(source, line_no, "expected key=value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      try {
        set(key, value);
      } catch (const ConfigError& e) {
        throw ParseError(source, line_no, e.what());
      } catch (const std::exception&) {
        throw ParseError(source, line_no, "bad value '" + value + "' for " + key);
      }
    }
  }

  void set(const std::string& key, const std::string& value) {
    if (key == "users") users = std::stoul(value);
    else if (key == "items") items = std::stoul(value);
    else if (key == "entities") entities = std::stoul(value);
    else if (key == "relations") relations = std::stoul(value);
    else if (key == "interactions_per_user") interactions_per_user = std::stod(value);
    else if (key == "groups") groups = std::stoul(value);
    else if (key == "in_group") in_group = std::stod(value);
    else if (key == "attributes_per_item") attributes_per_item = std::stoul(value);
    else if (key == "kg_in_group") kg_in_group = std::stod(value);
    else if (key == "popularity_skew") popularity_skew = std::stod(value);
    else if (key == "seed") seed = std::stoull(value);
    else throw ConfigError("unknown synthetic spec key '" + key + "'");
  }

  static SynthSpec parse(const std::string& text) {
    SynthSpec s;
    std::istringstream is(text);
    s.apply(is);
    return s;
  }
};

namespace detail {

/// Sampler over a fixed discrete distribution (inverse CDF by binary search).
class DiscreteSampler {
 public:
  explicit DiscreteSampler(const std::vector<double>& weights) : cdf_(weights.size()) {
    std::partial_sum(weights.begin(), weights.end(), cdf_.begin());
  }
  std::size_t operator()(Rng& rng) const {
    const double x = rng.uniform() * cdf_.back();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), x);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace detail

/// Deterministic dataset with planted block structure: users and items belong to
/// `groups` clusters, users mostly interact with (Zipf-popular) items of their own
/// cluster, and items link to attribute entities of their cluster through the KG.
inline KgDataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(hash_combine(seed, 0x5E7D));
  const std::size_t g = spec.groups;

  std::vector<std::vector<std::uint32_t>> group_items(g);
  for (std::uint32_t i = 0; i < spec.items; ++i) group_items[i % g].push_back(i);
  std::vector<double> global_w(spec.items);
  std::vector<std::uint32_t> popularity_rank(spec.items);
  std::iota(popularity_rank.begin(), popularity_rank.end(), 0u);
  rng.shuffle(popularity_rank.begin(), popularity_rank.end());
  for (std::size_t i = 0; i < spec.items; ++i)
    global_w[i] = 1.0 / std::pow(static_cast<double>(popularity_rank[i]) + 1.0, spec.popularity_skew);
  const detail::DiscreteSampler global_sampler(global_w);
  std::vector<detail::DiscreteSampler> group_samplers;
  for (const auto& items : group_items) {
    std::vector<double> w;
    for (const auto i : items) w.push_back(global_w[i]);
    group_samplers.emplace_back(w);
  }

  std::vector<Interaction> pairs;
  for (std::uint32_t u = 0; u < spec.users; ++u) {
    const std::size_t group = u % g;
    const double lo = 0.5 * spec.interactions_per_user;
    const auto n = static_cast<std::size_t>(std::llround(lo + rng.uniform() * spec.interactions_per_user));
    std::vector<char> taken(spec.items, 0);
    std::size_t have = 0;
    while (have < n) {
      std::uint32_t item;
      if (rng.uniform() < spec.in_group) {
        item = group_items[group][group_samplers[group](rng)];
      } else {
        item = static_cast<std::uint32_t>(global_sampler(rng));
      }
      if (taken[item]) continue;
      taken[item] = 1;
      pairs.push_back({u, item});
      ++have;
    }
  }

  std::vector<Triple> triples;
  const std::size_t n_attr = spec.entities - spec.items;
  std::vector<std::vector<std::uint32_t>> group_attrs(g);
  for (std::size_t a = 0; a < n_attr; ++a) group_attrs[a % g].push_back(static_cast<std::uint32_t>(spec.items + a));
  std::set<std::pair<std::uint32_t, std::uint32_t>> linked;
  for (std::uint32_t i = 0; i < spec.items && n_attr > 0; ++i) {
    const auto& own = group_attrs[i % g].empty() ? group_attrs[0] : group_attrs[i % g];
    for (std::size_t k = 0; k < spec.attributes_per_item; ++k) {
      std::uint32_t attr;
      if (rng.uniform() < spec.kg_in_group && !own.empty()) {
        attr = own[rng.below(own.size())];
      } else {
        attr = static_cast<std::uint32_t>(spec.items + rng.below(n_attr));
      }
      if (!linked.emplace(i, attr).second) continue;
      const auto rel = static_cast<std::uint32_t>((attr - spec.items) % spec.relations);
      triples.push_back({i, rel, attr});
    }
  }

  KgDataset ds;
  for (std::size_t u = 0; u < spec.users; ++u) ds.users.intern("u" + std::to_string(u));
  for (std::size_t i = 0; i < spec.items; ++i) ds.entities.intern("i" + std::to_string(i));
  for (std::size_t a = spec.items; a < spec.entities; ++a) ds.entities.intern("e" + std::to_string(a));
  for (std::size_t r = 0; r < spec.relations; ++r) ds.relations.intern("r" + std::to_string(r));
  ds.num_users = spec.users;
  ds.num_items = spec.items;
  ds.num_entities = spec.entities;
  ds.triples = std::move(triples);
  auto parts = split(pairs, hash_combine(seed, 0x5917));
  ds.train = std::move(parts.train);
  ds.validation = std::move(parts.validation);
  ds.test = std::move(parts.test);
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------------
// Dataset directories
//
//   train.tsv valid.tsv test.tsv   interactions, by vocabulary name
//   kg.tsv                         triples, by vocabulary name
//   users.vocab entities.vocab relations.vocab
//   meta.tsv                       num_items\t<n>  (items are entities [0, n))

inline void write_dataset(const KgDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write_pairs = [&](const std::vector<Interaction>& pairs, const char* name) {
    auto os = detail::open_output(dir / name);
    for (const auto& x : pairs) os << ds.users.name(x.user) << '\t' << ds.entities.name(x.item) << '\n';
  };
  write_pairs(ds.train, "train.tsv");
  write_pairs(ds.validation, "valid.tsv");
  write_pairs(ds.test, "test.tsv");
  {
    auto os = detail::open_output(dir / "kg.tsv");
    for (const auto& t : ds.triples)
      os << ds.entities.name(t.head) << '\t' << ds.relations.name(t.relation) << '\t' << ds.entities.name(t.tail)
         << '\n';
  }
  {
    auto os = detail::open_output(dir / "users.vocab");
    ds.users.write(os);
  }
  {
    auto os = detail::open_output(dir / "entities.vocab");
    ds.entities.write(os);
  }
  {
    auto os = detail::open_output(dir / "relations.vocab");
    ds.relations.write(os);
  }
  auto os = detail::open_output(dir / "meta.tsv");
  os << "num_items\t" << ds.num_items << '\n';
}

/// Reads a directory written by write_dataset. All names must resolve through the
/// vocabulary sidecars.
inline KgDataset load_dataset(const std::filesystem::path& dir) {
  KgDataset ds;
  auto read_vocab = [&](const char* name) {
    auto is = detail::open_input(dir / name);
    return Vocabulary::read(is, (dir / name).string());
  };
  ds.users = read_vocab("users.vocab");
  ds.entities = read_vocab("entities.vocab");
  ds.relations = read_vocab("relations.vocab");
  ds.num_users = ds.users.size();
  ds.num_entities = ds.entities.size();
  {
    const auto path = dir / "meta.tsv";
    auto is = detail::open_input(path);
    detail::for_each_record(is, path.string(), 2, [&](const std::vector<std::string>& f, std::size_t line_no) {
      if (f[0] != "num_items") throw ParseError(path.string(), line_no, "unknown key '" + f[0] + "'");
      ds.num_items = std::stoul(f[1]);
    });
  }
  auto lookup = [](const Vocabulary& v, const std::string& s, const std::string& src, std::size_t line) {
    const auto i = v.find(s);
    if (!i) throw ParseError(src, line, "unknown name '" + s + "'");
    return *i;
  };
  auto read_pairs = [&](const char* name) {
    std::vector<Interaction> out;
    const auto path = (dir / name).string();
    auto is = detail::open_input(dir / name);
    detail::for_each_record(is, path, 2, [&](const std::vector<std::string>& f, std::size_t line_no) {
      out.push_back({lookup(ds.users, f[0], path, line_no), lookup(ds.entities, f[1], path, line_no)});
    });
    return out;
  };
  ds.train = read_pairs("train.tsv");
  ds.validation = read_pairs("valid.tsv");
  ds.test = read_pairs("test.tsv");
  {
    const auto path = (dir / "kg.tsv").string();
    auto is = detail::open_input(dir / "kg.tsv");
    detail::for_each_record(is, path, 3, [&](const std::vector<std::string>& f, std::size_t line_no) {
      ds.triples.push_back({lookup(ds.entities, f[0], path, line_no), lookup(ds.relations, f[1], path, line_no),
                            lookup(ds.entities, f[2], path, line_no)});
    });
  }
  ds.validate();
  return ds;
}

}  // namespace actkg
