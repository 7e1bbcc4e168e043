#include "hahe/hkg.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "hahe/errors.hpp"
#include "hahe/numerics.hpp"
#include "json.hpp"

namespace hahe {

std::optional<DataFormat> parse_data_format(std::string_view name) {
  if (name == "tsv" || name == "txt") return DataFormat::kTsv;
  if (name == "jsonl") return DataFormat::kJsonl;
  return std::nullopt;
}

namespace {

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.emplace_back(line.substr(start, tab == std::string_view::npos ? line.npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

void check_token_count(const std::vector<std::string>& tokens, const std::string& source,
                       std::size_t line) {
  if (tokens.size() < 3) {
    throw ParseError(source, line, "a fact needs at least 3 tokens, got " +
                                       std::to_string(tokens.size()));
  }
  if (tokens.size() % 2 == 0) {
    throw ParseError(source, line, "even token count " + std::to_string(tokens.size()) +
                                       " leaves a dangling qualifier");
  }
  for (const auto& t : tokens) {
    if (t.empty()) throw ParseError(source, line, "empty token");
  }
}

}  // namespace

std::vector<LabeledFact> parse_dataset_text(std::string_view text, DataFormat format,
                                            const std::string& source) {
  std::vector<LabeledFact> facts;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == text.npos ? text.npos : nl - pos);
    pos = nl == text.npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    LabeledFact fact;
    if (format == DataFormat::kTsv) {
      fact.tokens = split_tabs(line);
    } else {
      nlohmann::json row;
      try {
        row = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(source, line_no, std::string("invalid JSON: ") + e.what());
      }
      if (!row.is_array()) throw ParseError(source, line_no, "expected a JSON array of strings");
      for (const auto& item : row) {
        if (!item.is_string()) throw ParseError(source, line_no, "non-string token");
        fact.tokens.push_back(item.get<std::string>());
      }
    }
    check_token_count(fact.tokens, source, line_no);
    facts.push_back(std::move(fact));
  }
  return facts;
}

std::vector<LabeledFact> parse_dataset(const std::filesystem::path& path, DataFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("read failure on " + path.string());
  return parse_dataset_text(buf.str(), format, path.string());
}

Vocabulary Vocabulary::build(std::span<const LabeledFact> facts) {
  Vocabulary v;
  for (const auto& f : facts) {
    for (std::size_t i = 0; i < f.tokens.size(); ++i) {
      if (is_entity_position(i)) {
        v.add_entity(f.tokens[i]);
      } else {
        v.add_relation(f.tokens[i]);
      }
    }
  }
  return v;
}

Vocabulary Vocabulary::from_labels(std::vector<std::string> entities,
                                   std::vector<std::string> relations) {
  Vocabulary v;
  for (auto& e : entities) v.add_entity(e);
  for (auto& r : relations) v.add_relation(r);
  if (v.entities_.size() != entities.size() || v.relations_.size() != relations.size()) {
    throw ConfigError("vocabulary labels must be unique");
  }
  return v;
}

void Vocabulary::add_entity(const std::string& label) {
  if (entity_ids_.emplace(label, static_cast<int>(entities_.size())).second) {
    entities_.push_back(label);
  }
}

void Vocabulary::add_relation(const std::string& label) {
  if (relation_ids_.emplace(label, static_cast<int>(relations_.size())).second) {
    relations_.push_back(label);
  }
}

std::optional<int> Vocabulary::entity_id(std::string_view label) const {
  auto it = entity_ids_.find(std::string(label));
  if (it == entity_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> Vocabulary::relation_id(std::string_view label) const {
  auto it = relation_ids_.find(std::string(label));
  if (it == relation_ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::entity_label(int id) const {
  static const std::string pad = "<pad>", mask = "<mask>";
  if (id == entity_pad()) return pad;
  if (id == entity_mask()) return mask;
  if (id < 0 || id > entity_mask()) throw IndexError("entity id out of range");
  return entities_[id];
}

const std::string& Vocabulary::relation_label(int id) const {
  static const std::string pad = "<pad>", mask = "<mask>";
  if (id == relation_pad()) return pad;
  if (id == relation_mask()) return mask;
  if (id < 0 || id > relation_mask()) throw IndexError("relation id out of range");
  return relations_[id];
}

HFact index_fact(const LabeledFact& fact, const Vocabulary& vocab) {
  auto ent = [&](const std::string& label) {
    auto id = vocab.entity_id(label);
    if (!id) throw IndexError("unknown entity '" + label + "'");
    return *id;
  };
  auto rel = [&](const std::string& label) {
    auto id = vocab.relation_id(label);
    if (!id) throw IndexError("unknown relation '" + label + "'");
    return *id;
  };
  HFact out;
  out.subject = ent(fact.tokens[0]);
  out.relation = rel(fact.tokens[1]);
  out.object = ent(fact.tokens[2]);
  for (std::size_t i = 3; i + 1 < fact.tokens.size(); i += 2) {
    out.qualifiers.push_back({rel(fact.tokens[i]), ent(fact.tokens[i + 1])});
  }
  return out;
}

std::vector<HFact> index_facts(std::span<const LabeledFact> facts, const Vocabulary& vocab) {
  std::vector<HFact> out;
  out.reserve(facts.size());
  for (const auto& f : facts) out.push_back(index_fact(f, vocab));
  return out;
}

Hypergraph Hypergraph::build(std::span<const HFact> facts, std::size_t num_nodes) {
  std::vector<std::vector<std::size_t>> edges;
  edges.reserve(facts.size());
  for (const auto& f : facts) {
    std::vector<std::size_t> members;
    auto push = [&](int id) {
      const auto v = static_cast<std::size_t>(id);
      if (std::find(members.begin(), members.end(), v) == members.end()) members.push_back(v);
    };
    push(f.subject);
    push(f.object);
    for (const auto& q : f.qualifiers) push(q.value);
    edges.push_back(std::move(members));
  }
  return from_edges(edges, num_nodes);
}

Hypergraph Hypergraph::from_edges(const std::vector<std::vector<std::size_t>>& edges,
                                  std::size_t num_nodes) {
  Hypergraph g;
  g.edge_offsets_.assign(1, 0);
  std::vector<std::size_t> degree(num_nodes, 0);
  for (const auto& members : edges) {
    if (members.empty()) throw ShapeError("hyperedge without members");
    std::set<std::size_t> unique;
    for (std::size_t v : members) {
      if (v >= num_nodes) throw IndexError("hyperedge member outside node range");
      unique.insert(v);
    }
    for (std::size_t v : unique) {
      g.edge_members_.push_back(v);
      ++degree[v];
    }
    g.edge_offsets_.push_back(g.edge_members_.size());
  }
  g.node_offsets_.assign(num_nodes + 1, 0);
  for (std::size_t v = 0; v < num_nodes; ++v) g.node_offsets_[v + 1] = g.node_offsets_[v] + degree[v];
  g.isolated_.resize(num_nodes);
  for (std::size_t v = 0; v < num_nodes; ++v) g.isolated_[v] = degree[v] == 0 ? 1 : 0;
  g.node_edges_.resize(g.edge_members_.size());
  std::vector<std::size_t> cursor(g.node_offsets_.begin(), g.node_offsets_.end() - 1);
  for (std::size_t e = 0; e + 1 < g.edge_offsets_.size(); ++e) {
    for (std::size_t i = g.edge_offsets_[e]; i < g.edge_offsets_[e + 1]; ++i) {
      g.node_edges_[cursor[g.edge_members_[i]]++] = e;
    }
  }
  return g;
}

std::span<const std::size_t> Hypergraph::members(std::size_t edge) const {
  if (edge >= num_hyperedges()) throw IndexError("hyperedge index out of range");
  return std::span(edge_members_).subspan(edge_offsets_[edge],
                                          edge_offsets_[edge + 1] - edge_offsets_[edge]);
}

std::span<const std::size_t> Hypergraph::incident_edges(std::size_t node) const {
  if (node >= num_nodes()) throw IndexError("node index out of range");
  return std::span(node_edges_).subspan(node_offsets_[node],
                                        node_offsets_[node + 1] - node_offsets_[node]);
}

bool Hypergraph::incidence(std::size_t node, std::size_t edge) const {
  if (node >= num_nodes()) throw IndexError("node index out of range");
  const auto m = members(edge);
  return std::find(m.begin(), m.end(), node) != m.end();
}

std::size_t Hypergraph::degree(std::size_t node) const {
  if (node >= num_nodes()) {
    throw IndexError("node " + std::to_string(node) + " out of range (" +
                     std::to_string(num_nodes()) + " nodes)");
  }
  return node_offsets_[node + 1] - node_offsets_[node];
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kS: return "S";
    case Role::kR: return "R";
    case Role::kO: return "O";
    case Role::kA: return "A";
    case Role::kV: return "V";
    case Role::kPad: return "PAD";
  }
  return "?";
}

std::string_view to_string(EdgeType type) {
  static constexpr std::string_view names[] = {
      "SELF", "S-R", "S-O", "R-O", "S-A", "S-V", "R-A", "R-V",
      "O-A", "O-V", "Ai-Vi", "Ai-Aj", "Vi-Vj", "Ai-Vj", "PAD-EDGE"};
  return names[static_cast<std::size_t>(type)];
}

bool is_entity_position(std::size_t pos) { return pos % 2 == 0; }

Role role_at(std::size_t pos, std::size_t num_real) {
  if (pos >= num_real) return Role::kPad;
  if (pos < 3) return static_cast<Role>(pos);
  return (pos - 3) % 2 == 0 ? Role::kA : Role::kV;
}

EdgeType edge_type(std::size_t i, std::size_t j, std::size_t num_real) {
  if (i >= num_real || j >= num_real) return EdgeType::kPad;
  if (i == j) return EdgeType::kSelf;
  const std::size_t lo = std::min(i, j), hi = std::max(i, j);
  if (hi < 3) {
    if (lo == 0) return hi == 1 ? EdgeType::kSR : EdgeType::kSO;
    return EdgeType::kRO;
  }
  const bool hi_attr = role_at(hi, num_real) == Role::kA;
  if (lo < 3) {
    switch (lo) {
      case 0: return hi_attr ? EdgeType::kSA : EdgeType::kSV;
      case 1: return hi_attr ? EdgeType::kRA : EdgeType::kRV;
      default: return hi_attr ? EdgeType::kOA : EdgeType::kOV;
    }
  }
  const bool lo_attr = role_at(lo, num_real) == Role::kA;
  if ((lo - 3) / 2 == (hi - 3) / 2) return EdgeType::kAiVi;
  if (lo_attr && hi_attr) return EdgeType::kAiAj;
  if (!lo_attr && !hi_attr) return EdgeType::kViVj;
  return EdgeType::kAiVj;
}

Sequence fact_to_sequence(const HFact& fact, std::size_t max_qualifiers, const Vocabulary& vocab) {
  if (fact.qualifiers.size() > max_qualifiers) {
    throw CapacityError("fact has " + std::to_string(fact.qualifiers.size()) +
                        " qualifiers, sequence capacity is " + std::to_string(max_qualifiers));
  }
  const std::size_t len = sequence_length(max_qualifiers);
  Sequence seq;
  seq.num_real = 3 + 2 * fact.qualifiers.size();
  seq.ids.reserve(len);
  seq.ids = {fact.subject, fact.relation, fact.object};
  for (const auto& q : fact.qualifiers) {
    seq.ids.push_back(q.attribute);
    seq.ids.push_back(q.value);
  }
  for (std::size_t p = seq.num_real; p < len; ++p) {
    seq.ids.push_back(is_entity_position(p) ? vocab.entity_pad() : vocab.relation_pad());
  }
  seq.roles.resize(len);
  for (std::size_t p = 0; p < len; ++p) seq.roles[p] = role_at(p, seq.num_real);
  return seq;
}

HFact sequence_to_fact(const Sequence& seq) {
  if (seq.num_real < 3 || seq.num_real % 2 == 0 || seq.num_real > seq.ids.size()) {
    throw ShapeError("sequence does not describe a fact");
  }
  HFact f;
  f.subject = seq.ids[0];
  f.relation = seq.ids[1];
  f.object = seq.ids[2];
  for (std::size_t p = 3; p + 1 < seq.num_real; p += 2) {
    f.qualifiers.push_back({seq.ids[p], seq.ids[p + 1]});
  }
  return f;
}

DatasetStatistics dataset_statistics(std::span<const LabeledFact> facts) {
  DatasetStatistics s;
  s.num_facts = facts.size();
  std::set<std::string_view> entities, relations;
  for (const auto& f : facts) {
    const std::size_t arity = f.arity();
    if (arity > 2) ++s.num_with_qualifiers;
    s.arity_min = s.arity_min == 0 ? arity : std::min(s.arity_min, arity);
    s.arity_max = std::max(s.arity_max, arity);
    for (std::size_t i = 0; i < f.tokens.size(); ++i) {
      (is_entity_position(i) ? entities : relations).insert(f.tokens[i]);
    }
  }
  s.num_entities = entities.size();
  s.num_relations = relations.size();
  return s;
}

std::size_t Dataset::max_qualifiers() const {
  std::size_t m = 0;
  for (const auto* split : {&train, &valid, &test}) {
    for (const auto& f : *split) m = std::max(m, f.qualifiers.size());
  }
  return m;
}

SplitFiles locate_splits(const std::filesystem::path& dir, std::optional<DataFormat> format) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  auto find = [&](const std::string& split, DataFormat f) -> std::optional<fs::path> {
    const std::vector<std::string> exts =
        f == DataFormat::kTsv ? std::vector<std::string>{".txt", ".tsv"}
                              : std::vector<std::string>{".jsonl"};
    for (const auto& ext : exts) {
      fs::path p = dir / (split + ext);
      if (fs::is_regular_file(p)) return p;
    }
    return std::nullopt;
  };
  SplitFiles files;
  std::vector<DataFormat> candidates =
      format ? std::vector<DataFormat>{*format}
             : std::vector<DataFormat>{DataFormat::kTsv, DataFormat::kJsonl};
  for (DataFormat f : candidates) {
    files.train = find("train", f);
    files.valid = find("valid", f);
    files.test = find("test", f);
    files.format = f;
    if (files.train || files.valid || files.test) return files;
  }
  throw IoError("no train/valid/test files found in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir, std::optional<DataFormat> format,
                     std::uint64_t seed, double holdout_fraction) {
  const SplitFiles files = locate_splits(dir, format);
  if (!files.train) throw IoError("dataset has no training split: " + dir.string());
  auto read = [&](const std::optional<std::filesystem::path>& p) {
    return p ? parse_dataset(*p, files.format) : std::vector<LabeledFact>{};
  };
  const auto train = read(files.train);
  const auto valid = read(files.valid);
  const auto test = read(files.test);

  std::vector<LabeledFact> all;
  all.reserve(train.size() + valid.size() + test.size());
  all.insert(all.end(), train.begin(), train.end());
  all.insert(all.end(), valid.begin(), valid.end());
  all.insert(all.end(), test.begin(), test.end());

  Dataset ds;
  ds.vocab = Vocabulary::build(all);
  ds.raw_train = train.size();
  ds.raw_valid = valid.size();
  ds.raw_test = test.size();
  ds.train = index_facts(train, ds.vocab);
  ds.valid = index_facts(valid, ds.vocab);
  ds.test = index_facts(test, ds.vocab);

  if (!files.valid && ds.train.size() >= 2 && holdout_fraction > 0.0) {
    const std::size_t n = ds.train.size();
    const auto count = std::max<std::size_t>(
        1, static_cast<std::size_t>(static_cast<double>(n) * holdout_fraction + 0.5));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::uint8_t> held(n, 0);
    for (std::size_t i = 0; i < count; ++i) held[order[i]] = 1;
    std::vector<HFact> kept;
    for (std::size_t i = 0; i < n; ++i) {
      (held[i] ? ds.valid : kept).push_back(ds.train[i]);
    }
    ds.train = std::move(kept);
    ds.valid_held_out = true;
  }
  return ds;
}

}  // namespace hahe
