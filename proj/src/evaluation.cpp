#include "hahe/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <queue>
#include <set>
#include <sstream>

#include "hahe/errors.hpp"
#include "hahe/model.hpp"

namespace hahe {

using nlohmann::json;

namespace {

std::vector<int> tokens_of(const HFact& f) {
  std::vector<int> t{f.subject, f.relation, f.object};
  for (const Qualifier& q : f.qualifiers) {
    t.push_back(q.attribute);
    t.push_back(q.value);
  }
  return t;
}

std::string hole_key(const std::vector<int>& tokens, std::span<const std::size_t> holes) {
  std::string key;
  key.reserve(tokens.size() * 6);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (std::find(holes.begin(), holes.end(), i) != holes.end()) {
      key += '?';
    } else {
      key += std::to_string(tokens[i]);
    }
    key += ',';
  }
  return key;
}

}  // namespace

FilterIndex::FilterIndex(std::vector<std::vector<HFact>> splits) {
  for (auto& split : splits) {
    for (HFact& f : split) facts_.push_back(std::move(f));
  }
  for (const HFact& f : facts_) {
    const auto tokens = tokens_of(f);
    for (std::size_t p = 0; p < tokens.size(); ++p) {
      const std::size_t hole[] = {p};
      auto& v = single_[hole_key(tokens, hole)];
      if (std::find(v.begin(), v.end(), tokens[p]) == v.end()) v.push_back(tokens[p]);
    }
  }
}

const std::vector<int>& FilterIndex::fillers(const HFact& fact, std::size_t position) const {
  static const std::vector<int> none;
  const std::size_t hole[] = {position};
  const auto it = single_.find(hole_key(tokens_of(fact), hole));
  return it == single_.end() ? none : it->second;
}

const std::vector<std::vector<int>>& FilterIndex::tuples(
    const HFact& fact, std::span<const std::size_t> positions) const {
  static const std::vector<std::vector<int>> none;
  std::vector<std::size_t> key_pos(positions.begin(), positions.end());
  auto [slot, fresh] = multi_.try_emplace(key_pos);
  auto& index = slot->second;
  if (fresh) {
    const std::size_t need = *std::max_element(key_pos.begin(), key_pos.end());
    for (const HFact& f : facts_) {
      const auto tokens = tokens_of(f);
      if (tokens.size() <= need) continue;
      std::vector<int> tuple;
      for (std::size_t p : key_pos) tuple.push_back(tokens[p]);
      auto& v = index[hole_key(tokens, key_pos)];
      if (std::find(v.begin(), v.end(), tuple) == v.end()) v.push_back(std::move(tuple));
    }
  }
  const auto it = index.find(hole_key(tokens_of(fact), key_pos));
  return it == index.end() ? none : it->second;
}

Query parse_query(std::string_view text, const Vocabulary& vocab) {
  std::vector<std::string> tokens;
  std::istringstream in{std::string(text)};
  for (std::string tok; in >> tok;) tokens.push_back(tok);
  if (tokens.size() < 3 || tokens.size() % 2 == 0) {
    throw UsageError("a fact needs an odd number (>= 3) of tokens, got " +
                     std::to_string(tokens.size()));
  }
  Query q;
  std::vector<int> ids(tokens.size(), 0);
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    if (tokens[p] == "?") {
      q.positions.push_back(p);
      continue;
    }
    const bool entity = is_entity_position(p);
    const auto id = entity ? vocab.entity_id(tokens[p]) : vocab.relation_id(tokens[p]);
    if (!id) {
      throw IndexError(std::string("unknown ") + (entity ? "entity" : "relation") + " '" +
                       tokens[p] + "' at position " + std::to_string(p));
    }
    ids[p] = *id;
  }
  q.fact.subject = ids[0];
  q.fact.relation = ids[1];
  q.fact.object = ids[2];
  for (std::size_t p = 3; p + 1 < ids.size(); p += 2) q.fact.qualifiers.push_back({ids[p], ids[p + 1]});
  return q;
}

std::size_t filtered_rank(std::span<const double> scores, std::size_t target,
                          std::span<const int> other_true) {
  if (target >= scores.size()) {
    throw IndexError("rank target " + std::to_string(target) + " outside " +
                     std::to_string(scores.size()) + " candidates");
  }
  const double ts = scores[target];
  std::size_t above = 0;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (c != target && scores[c] >= ts) ++above;
  }
  std::vector<int> seen;
  for (int c : other_true) {
    if (c < 0 || static_cast<std::size_t>(c) >= scores.size()) continue;
    if (static_cast<std::size_t>(c) == target) continue;
    if (std::find(seen.begin(), seen.end(), c) != seen.end()) continue;
    seen.push_back(c);
    if (scores[c] >= ts) --above;
  }
  return 1 + above;
}

Metrics mrr_hits(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw ShapeError("mrr_hits needs at least one rank");
  Metrics m;
  for (std::size_t r : ranks) {
    if (r == 0) throw IndexError("ranks start at 1");
    m.mrr += 1.0 / static_cast<double>(r);
    m.hits1 += r <= 1 ? 1.0 : 0.0;
    m.hits10 += r <= 10 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(ranks.size());
  m.mrr /= n;
  m.hits1 /= n;
  m.hits10 /= n;
  m.count = ranks.size();
  return m;
}

ModelScorer::ModelScorer(const Model& model, std::size_t batch_size)
    : model_(model), nodes_(model.inference_nodes()), batch_size_(std::max<std::size_t>(1, batch_size)) {}

std::vector<std::vector<std::vector<double>>> ModelScorer::score(std::span<const Query> queries) {
  std::vector<std::vector<std::vector<double>>> out;
  out.reserve(queries.size());
  std::vector<MaskedSequence> items;
  for (std::size_t begin = 0; begin < queries.size(); begin += batch_size_) {
    const std::size_t end = std::min(queries.size(), begin + batch_size_);
    items.clear();
    for (std::size_t i = begin; i < end; ++i) items.push_back({queries[i].fact, queries[i].positions});
    const SequenceBatch batch = model_.batch(items);
    auto lp = model_.log_probs(batch, nodes_);
    std::size_t at = 0;
    for (std::size_t i = begin; i < end; ++i) {
      std::vector<std::vector<double>> per;
      for (std::size_t k = 0; k < queries[i].positions.size(); ++k) per.push_back(std::move(lp[at++]));
      out.push_back(std::move(per));
    }
  }
  return out;
}

std::string degree_bucket(std::size_t degree) {
  if (degree == 0) return "0";
  if (degree == 1) return "1";
  if (degree >= 128) return ">=128";
  std::size_t lo = 2;
  while (lo * 2 <= degree) lo *= 2;
  return std::to_string(lo) + "-" + std::to_string(lo * 2 - 1);
}

namespace {

const std::vector<std::string>& bucket_labels() {
  static const std::vector<std::string> labels = {"0",     "1",     "2-3",    "4-7",  "8-15",
                                                  "16-31", "32-63", "64-127", ">=128"};
  return labels;
}

json metrics_json(const Metrics& m) {
  return {{"mrr", m.mrr}, {"hits1", m.hits1}, {"hits10", m.hits10}, {"count", m.count}};
}

Metrics metrics_from(const json& j) {
  return {j.at("mrr").get<double>(), j.at("hits1").get<double>(), j.at("hits10").get<double>(),
          j.at("count").get<std::size_t>()};
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

json RankReport::to_json() const {
  json j;
  j["protocol"] = filtered ? "filtered" : "raw";
  j["subject_object"] = metrics_json(subject_object);
  j["all_entities"] = metrics_json(all_entities);
  j["main_relation"] = metrics_json(main_relation);
  j["all_relations"] = metrics_json(all_relations);
  json deg = json::array();
  for (const BucketMetrics& b : degree) deg.push_back({{"bucket", b.label}, {"metrics", metrics_json(b.metrics)}});
  j["degree"] = deg;
  json so = json::array(), ql = json::array();
  for (const auto& [a, m] : arity_subject_object) so.push_back({{"arity", a}, {"metrics", metrics_json(m)}});
  for (const auto& [a, m] : arity_qualifier) ql.push_back({{"arity", a}, {"metrics", metrics_json(m)}});
  j["arity_subject_object"] = so;
  j["arity_qualifier"] = ql;
  json qs = json::array();
  for (const QueryRecord& q : queries) {
    qs.push_back({q.fact, q.position, q.target, q.raw_rank, q.filtered_rank});
  }
  j["queries"] = qs;
  j["query_fields"] = {"fact", "position", "target", "raw_rank", "filtered_rank"};
  return j;
}

RankReport RankReport::from_json(const json& j) {
  RankReport r;
  r.filtered = j.at("protocol").get<std::string>() == "filtered";
  r.subject_object = metrics_from(j.at("subject_object"));
  r.all_entities = metrics_from(j.at("all_entities"));
  r.main_relation = metrics_from(j.at("main_relation"));
  r.all_relations = metrics_from(j.at("all_relations"));
  for (const json& b : j.at("degree")) {
    r.degree.push_back({b.at("bucket").get<std::string>(), metrics_from(b.at("metrics"))});
  }
  for (const json& a : j.at("arity_subject_object")) {
    r.arity_subject_object[a.at("arity").get<std::size_t>()] = metrics_from(a.at("metrics"));
  }
  for (const json& a : j.at("arity_qualifier")) {
    r.arity_qualifier[a.at("arity").get<std::size_t>()] = metrics_from(a.at("metrics"));
  }
  for (const json& q : j.at("queries")) {
    r.queries.push_back({q.at(0).get<std::size_t>(), q.at(1).get<std::size_t>(), q.at(2).get<int>(),
                         q.at(3).get<std::size_t>(), q.at(4).get<std::size_t>()});
  }
  return r;
}

std::string RankReport::to_text() const {
  std::ostringstream os;
  os << "protocol: " << (filtered ? "filtered" : "raw") << "\n";
  os << std::left << std::setw(18) << "task" << std::right << std::setw(8) << "MRR"
     << std::setw(8) << "H@1" << std::setw(8) << "H@10" << std::setw(9) << "queries" << "\n";
  auto line = [&os](const std::string& name, const Metrics& m) {
    os << std::left << std::setw(18) << name << std::right << std::setw(8) << fmt(m.mrr)
       << std::setw(8) << fmt(m.hits1) << std::setw(8) << fmt(m.hits10) << std::setw(9)
       << m.count << "\n";
  };
  line("subject/object", subject_object);
  line("all entities", all_entities);
  line("main relation", main_relation);
  line("all relations", all_relations);
  os << "\nall-entity MRR by target degree\n";
  for (const BucketMetrics& b : degree) line("  degree " + b.label, b.metrics);
  os << "\nsubject/object by arity\n";
  for (const auto& [a, m] : arity_subject_object) line("  arity " + std::to_string(a), m);
  os << "\nqualifier values by arity\n";
  for (const auto& [a, m] : arity_qualifier) line("  arity " + std::to_string(a), m);
  return os.str();
}

std::string RankReport::breakdown_csv() const {
  std::ostringstream os;
  os << "group,key,mrr,hits1,hits10,count\n";
  auto row = [&os](const std::string& g, const std::string& k, const Metrics& m) {
    os << g << ',' << k << ',' << m.mrr << ',' << m.hits1 << ',' << m.hits10 << ',' << m.count
       << "\n";
  };
  for (const BucketMetrics& b : degree) row("degree", b.label, b.metrics);
  for (const auto& [a, m] : arity_subject_object) row("arity_subject_object", std::to_string(a), m);
  for (const auto& [a, m] : arity_qualifier) row("arity_qualifier", std::to_string(a), m);
  return os.str();
}

RankReport evaluate_link_prediction(Scorer& scorer, std::span<const HFact> split,
                                    const FilterIndex* filter, const Hypergraph& graph,
                                    const LinkPredictionOptions& options) {
  if (options.filtered && !filter) throw UsageError("filtered evaluation needs a filter index");
  RankReport report;
  report.filtered = options.filtered;
  std::vector<Query> queries;
  std::vector<std::pair<std::size_t, std::size_t>> origin;  // (fact, position)
  for (std::size_t f = 0; f < split.size(); ++f) {
    const std::size_t n = 3 + 2 * split[f].qualifiers.size();
    for (std::size_t p = 0; p < n; ++p) {
      queries.push_back({split[f], {p}});
      origin.emplace_back(f, p);
    }
  }

  std::vector<std::size_t> so, ent, mainrel, rel;
  std::map<std::string, std::vector<std::size_t>> by_degree;
  std::map<std::size_t, std::vector<std::size_t>> ar_so, ar_q;
  const std::size_t step = std::max<std::size_t>(1, options.batch_queries);
  for (std::size_t begin = 0; begin < queries.size(); begin += step) {
    const std::size_t end = std::min(queries.size(), begin + step);
    const auto scores = scorer.score(std::span(queries).subspan(begin, end - begin));
    for (std::size_t i = begin; i < end; ++i) {
      const auto [f, p] = origin[i];
      const HFact& fact = split[f];
      const int target = tokens_of(fact)[p];
      const auto& s = scores[i - begin][0];
      const std::size_t raw = filtered_rank(s, static_cast<std::size_t>(target), {});
      const std::size_t filt =
          filter ? filtered_rank(s, static_cast<std::size_t>(target), filter->fillers(fact, p)) : raw;
      report.queries.push_back({f, p, target, raw, filt});
      const std::size_t r = options.filtered ? filt : raw;
      if (is_entity_position(p)) {
        ent.push_back(r);
        if (p == 0 || p == 2) {
          so.push_back(r);
          ar_so[fact.arity()].push_back(r);
        } else {
          ar_q[fact.arity()].push_back(r);
        }
        const std::size_t deg =
            static_cast<std::size_t>(target) < graph.num_nodes() ? graph.degree(target) : 0;
        by_degree[degree_bucket(deg)].push_back(r);
      } else {
        rel.push_back(r);
        if (p == 1) mainrel.push_back(r);
      }
    }
  }
  auto metrics_or_empty = [](const std::vector<std::size_t>& v) {
    return v.empty() ? Metrics{} : mrr_hits(v);
  };
  report.subject_object = metrics_or_empty(so);
  report.all_entities = metrics_or_empty(ent);
  report.main_relation = metrics_or_empty(mainrel);
  report.all_relations = metrics_or_empty(rel);
  for (const std::string& label : bucket_labels()) {
    const auto it = by_degree.find(label);
    if (it != by_degree.end()) report.degree.push_back({label, mrr_hits(it->second)});
  }
  for (const auto& [a, v] : ar_so) report.arity_subject_object[a] = mrr_hits(v);
  for (const auto& [a, v] : ar_q) report.arity_qualifier[a] = mrr_hits(v);
  return report;
}

std::vector<TupleCandidate> joint_top_tuples(std::span<const std::vector<double>> log_marginals,
                                             std::size_t beam, std::size_t keep) {
  if (log_marginals.size() < 2) throw UsageError("joint prediction needs at least two positions");
  if (beam < 1) throw UsageError("beam must be at least 1");
  if (keep < 1) throw UsageError("keep must be at least 1");
  const std::size_t k = log_marginals.size();
  // Per position: candidate ids sorted by log-probability descending, id ascending.
  std::vector<std::vector<int>> order(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& lp = log_marginals[i];
    if (lp.empty()) throw ShapeError("empty marginal");
    std::vector<int> ids(lp.size());
    for (std::size_t c = 0; c < lp.size(); ++c) ids[c] = static_cast<int>(c);
    const std::size_t b = std::min(beam, ids.size());
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(b), ids.end(),
                      [&lp](int a, int c) { return lp[a] > lp[c] || (lp[a] == lp[c] && a < c); });
    ids.resize(b);
    order[i] = std::move(ids);
  }

  struct State {
    std::vector<std::size_t> idx;
    std::size_t last;  // only coordinates >= last may be advanced
    double score;
    std::vector<int> ids;
  };
  auto make = [&](std::vector<std::size_t> idx, std::size_t last) {
    State s{std::move(idx), last, 0.0, std::vector<int>(k)};
    for (std::size_t i = 0; i < k; ++i) {
      s.ids[i] = order[i][s.idx[i]];
      s.score += log_marginals[i][s.ids[i]];
    }
    return s;
  };
  auto worse = [](const State& a, const State& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.ids > b.ids;
  };
  std::priority_queue<State, std::vector<State>, decltype(worse)> heap(worse);
  heap.push(make(std::vector<std::size_t>(k, 0), 0));
  std::vector<TupleCandidate> out;
  while (!heap.empty()) {
    if (out.size() >= keep && heap.top().score < out.back().log_score) break;
    State s = heap.top();
    heap.pop();
    for (std::size_t i = s.last; i < k; ++i) {
      if (s.idx[i] + 1 >= order[i].size()) continue;
      auto next = s.idx;
      ++next[i];
      heap.push(make(std::move(next), i));
    }
    out.push_back({std::move(s.ids), s.score});
  }
  std::sort(out.begin(), out.end(), [](const TupleCandidate& a, const TupleCandidate& b) {
    if (a.log_score != b.log_score) return a.log_score > b.log_score;
    return a.ids < b.ids;
  });
  if (out.size() > keep) out.resize(keep);
  return out;
}

namespace {

void check_positions(const HFact& fact, std::span<const std::size_t> positions) {
  if (positions.size() < 2) throw UsageError("multi-position prediction needs at least two positions");
  const std::size_t n = 3 + 2 * fact.qualifiers.size();
  std::set<std::size_t> seen;
  for (std::size_t p : positions) {
    if (p >= n) throw IndexError("position " + std::to_string(p) + " outside the fact");
    if (!seen.insert(p).second) throw UsageError("positions must be distinct");
  }
}

}  // namespace

std::vector<TupleCandidate> multi_position_predict(Scorer& scorer, const HFact& fact,
                                                   std::span<const std::size_t> positions,
                                                   std::size_t beam, std::size_t keep) {
  check_positions(fact, positions);
  if (beam < 1) throw UsageError("beam must be at least 1");
  const Query q{fact, {positions.begin(), positions.end()}};
  const auto scores = scorer.score(std::span(&q, 1));
  return joint_top_tuples(scores[0], beam, keep);
}

PairCategory pair_category(std::span<const std::size_t> positions) {
  std::size_t entities = 0;
  for (std::size_t p : positions) entities += is_entity_position(p) ? 1 : 0;
  if (entities == positions.size()) return PairCategory::kEntEnt;
  if (entities == 0) return PairCategory::kRelRel;
  return PairCategory::kEntRel;
}

Scope position_scope(std::span<const std::size_t> positions) {
  for (std::size_t p : positions) {
    if (p < 3) return Scope::kSroAv;
  }
  return Scope::kAv;
}

std::string_view to_string(PairCategory c) {
  switch (c) {
    case PairCategory::kEntEnt: return "Ent-Ent";
    case PairCategory::kEntRel: return "Ent-Rel";
    case PairCategory::kRelRel: return "Rel-Rel";
  }
  return "?";
}

std::string_view to_string(Scope s) {
  switch (s) {
    case Scope::kAv: return "av";
    case Scope::kSroAv: return "sro/av";
    case Scope::kAll: return "all";
  }
  return "?";
}

std::string MultiPositionReport::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(10) << "" << std::right;
  for (int s = 0; s < 3; ++s) os << std::setw(18) << to_string(static_cast<Scope>(s));
  os << "\n";
  for (int c = 0; c < 3; ++c) {
    os << std::left << std::setw(10) << to_string(static_cast<PairCategory>(c)) << std::right;
    for (int s = 0; s < 3; ++s) {
      const Metrics& m = cells[c][s];
      os << std::setw(18) << (m.count ? fmt(m.mrr) + " (" + std::to_string(m.count) + ")" : "-");
    }
    os << "\n";
  }
  return os.str();
}

json MultiPositionReport::to_json() const {
  json j = json::object();
  for (int c = 0; c < 3; ++c) {
    for (int s = 0; s < 3; ++s) {
      j[std::string(to_string(static_cast<PairCategory>(c)))][std::string(to_string(static_cast<Scope>(s)))] =
          metrics_json(cells[c][s]);
    }
  }
  return j;
}

MultiPositionReport evaluate_multi_position(Scorer& scorer, std::span<const HFact> split,
                                            const FilterIndex* filter,
                                            const MultiPositionOptions& options) {
  if (options.positions < 2) throw UsageError("multi-position evaluation needs k >= 2");
  if (options.filter_tuples && !filter) throw UsageError("tuple filtering needs a filter index");
  struct Acc {
    double rr = 0.0, h1 = 0.0, h10 = 0.0;
    std::size_t n = 0;
  };
  Acc acc[3][3];
  for (const HFact& fact : split) {
    const std::size_t n = 3 + 2 * fact.qualifiers.size();
    if (n < options.positions) continue;
    const auto tokens = tokens_of(fact);
    std::vector<Query> queries;
    std::vector<std::size_t> idx(options.positions);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    while (true) {
      queries.push_back({fact, idx});
      std::size_t i = idx.size();
      while (i > 0 && idx[i - 1] == n - idx.size() + i - 1) --i;
      if (i == 0) break;
      ++idx[i - 1];
      for (std::size_t j = i; j < idx.size(); ++j) idx[j] = idx[j - 1] + 1;
    }
    const auto scores = scorer.score(queries);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const auto& pos = queries[q].positions;
      std::vector<int> truth;
      for (std::size_t p : pos) truth.push_back(tokens[p]);
      const auto kept = joint_top_tuples(scores[q], options.beam, options.keep);
      const std::vector<std::vector<int>>* others =
          options.filter_tuples ? &filter->tuples(fact, pos) : nullptr;
      double truth_score = 0.0;
      bool found = false;
      for (const TupleCandidate& c : kept) {
        if (c.ids == truth) {
          found = true;
          truth_score = c.log_score;
        }
      }
      std::size_t rank = 0;
      if (found) {
        rank = 1;
        for (const TupleCandidate& c : kept) {
          if (c.ids == truth || c.log_score < truth_score) continue;
          if (others && std::find(others->begin(), others->end(), c.ids) != others->end()) continue;
          ++rank;
        }
      }
      const int cat = static_cast<int>(pair_category(pos));
      for (int s : {static_cast<int>(position_scope(pos)), static_cast<int>(Scope::kAll)}) {
        Acc& a = acc[cat][s];
        a.rr += rank ? 1.0 / static_cast<double>(rank) : 0.0;
        a.h1 += rank == 1 ? 1.0 : 0.0;
        a.h10 += rank >= 1 && rank <= 10 ? 1.0 : 0.0;
        ++a.n;
      }
    }
  }
  MultiPositionReport report;
  for (int c = 0; c < 3; ++c) {
    for (int s = 0; s < 3; ++s) {
      const Acc& a = acc[c][s];
      if (a.n == 0) continue;
      const double n = static_cast<double>(a.n);
      report.cells[c][s] = {a.rr / n, a.h1 / n, a.h10 / n, a.n};
    }
  }
  return report;
}

}  // namespace hahe
