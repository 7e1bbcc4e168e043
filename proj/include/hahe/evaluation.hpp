#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "hahe/hkg.hpp"
#include "hahe/tensor.hpp"

namespace hahe {

class Model;

// Known fillers of a fact with one or more holes, over every split.
class FilterIndex {
 public:
  FilterIndex() = default;
  explicit FilterIndex(std::vector<std::vector<HFact>> splits);

  // True ids for `position` given the rest of `fact` (includes the fact's own id).
  const std::vector<int>& fillers(const HFact& fact, std::size_t position) const;
  // True id tuples for `positions` given the rest of `fact`.
  const std::vector<std::vector<int>>& tuples(const HFact& fact,
                                              std::span<const std::size_t> positions) const;

 private:
  std::vector<HFact> facts_;
  std::unordered_map<std::string, std::vector<int>> single_;
  mutable std::map<std::vector<std::size_t>,
                   std::unordered_map<std::string, std::vector<std::vector<int>>>>
      multi_;
};

// 1 + #{c : c != target, c not in other_true, score_c >= score_target}.
std::size_t filtered_rank(std::span<const double> scores, std::size_t target,
                          std::span<const int> other_true);

struct Metrics {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits10 = 0.0;
  std::size_t count = 0;
};

Metrics mrr_hits(std::span<const std::size_t> ranks);

// One fact with some positions replaced by MASK.
struct Query {
  HFact fact;
  std::vector<std::size_t> positions;
};

// Parses whitespace-separated labels "s r o [a v]*" where "?" marks a
// masked slot. Known labels are resolved against the vocabulary.
Query parse_query(std::string_view text, const Vocabulary& vocab);

class Scorer {
 public:
  virtual ~Scorer() = default;
  // Per query, per masked position (in the order given): log-probabilities
  // over the entity vocabulary (even positions) or relation vocabulary.
  virtual std::vector<std::vector<std::vector<double>>> score(std::span<const Query> queries) = 0;
};

class ModelScorer : public Scorer {
 public:
  explicit ModelScorer(const Model& model, std::size_t batch_size = 256);
  std::vector<std::vector<std::vector<double>>> score(std::span<const Query> queries) override;

 private:
  const Model& model_;
  Tensor nodes_;
  std::size_t batch_size_;
};

struct QueryRecord {
  std::size_t fact = 0;
  std::size_t position = 0;
  int target = 0;
  std::size_t raw_rank = 0;
  std::size_t filtered_rank = 0;
};

struct BucketMetrics {
  std::string label;
  Metrics metrics;
};

struct RankReport {
  bool filtered = true;
  Metrics subject_object, all_entities, main_relation, all_relations;
  std::vector<BucketMetrics> degree;              // all-entity queries by target degree
  std::map<std::size_t, Metrics> arity_subject_object;
  std::map<std::size_t, Metrics> arity_qualifier;  // qualifier value queries
  std::vector<QueryRecord> queries;

  nlohmann::json to_json() const;
  static RankReport from_json(const nlohmann::json& j);
  std::string to_text() const;
  std::string breakdown_csv() const;
};

// Degree bucket label for a node degree: 0, 1, 2-3, 4-7, ..., 64-127, >=128.
std::string degree_bucket(std::size_t degree);

struct LinkPredictionOptions {
  bool filtered = true;
  std::size_t batch_queries = 512;
};

// One query per position of every fact. `filter` may be null for raw-only
// evaluation; `graph` supplies entity degrees.
RankReport evaluate_link_prediction(Scorer& scorer, std::span<const HFact> split,
                                    const FilterIndex* filter, const Hypergraph& graph,
                                    const LinkPredictionOptions& options = {});

struct TupleCandidate {
  std::vector<int> ids;
  double log_score = 0.0;  // sum of per-position log-probabilities
};

// Exact top-`keep` tuples of the product of marginals, drawing candidates
// from the top-`beam` ids of each position. Sorted by score descending, ties
// by ids ascending.
std::vector<TupleCandidate> joint_top_tuples(std::span<const std::vector<double>> log_marginals,
                                             std::size_t beam, std::size_t keep);

std::vector<TupleCandidate> multi_position_predict(Scorer& scorer, const HFact& fact,
                                                   std::span<const std::size_t> positions,
                                                   std::size_t beam, std::size_t keep);

enum class PairCategory { kEntEnt, kEntRel, kRelRel };
enum class Scope { kAv, kSroAv, kAll };

PairCategory pair_category(std::span<const std::size_t> positions);
// kAv when every position is a qualifier slot, kSroAv otherwise. Every
// subset also counts toward kAll.
Scope position_scope(std::span<const std::size_t> positions);
std::string_view to_string(PairCategory c);
std::string_view to_string(Scope s);

struct MultiPositionOptions {
  std::size_t positions = 2;
  std::size_t beam = 100;
  std::size_t keep = 100;
  bool filter_tuples = false;
};

struct MultiPositionReport {
  // cells[category][scope]
  Metrics cells[3][3];
  std::string to_text() const;
  nlohmann::json to_json() const;
};

MultiPositionReport evaluate_multi_position(Scorer& scorer, std::span<const HFact> split,
                                            const FilterIndex* filter,
                                            const MultiPositionOptions& options);

}  // namespace hahe
