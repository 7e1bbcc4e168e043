#pragma once

// Hyper-relational facts, their vocabularies, the entity hypergraph built
// from them, and the role / edge-type view of a single fact as a sequence.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hahe {

enum class DataFormat { kTsv, kJsonl };

std::optional<DataFormat> parse_data_format(std::string_view name);

// A fact as read from disk: tokens s r o [a v]*.
struct LabeledFact {
  std::vector<std::string> tokens;

  std::size_t arity() const { return 2 + (tokens.size() - 3) / 2; }
};

std::vector<LabeledFact> parse_dataset(const std::filesystem::path& path, DataFormat format);
std::vector<LabeledFact> parse_dataset_text(std::string_view text, DataFormat format,
                                            const std::string& source = "<memory>");

// Label <-> id tables for entities and relations. Each vocabulary reserves
// two ids after the real entries: PAD (= size) and MASK (= size + 1).
class Vocabulary {
 public:
  static Vocabulary build(std::span<const LabeledFact> facts);
  static Vocabulary from_labels(std::vector<std::string> entities,
                                std::vector<std::string> relations);

  std::size_t num_entities() const noexcept { return entities_.size(); }
  std::size_t num_relations() const noexcept { return relations_.size(); }
  int entity_pad() const noexcept { return static_cast<int>(entities_.size()); }
  int entity_mask() const noexcept { return entity_pad() + 1; }
  int relation_pad() const noexcept { return static_cast<int>(relations_.size()); }
  int relation_mask() const noexcept { return relation_pad() + 1; }

  std::optional<int> entity_id(std::string_view label) const;
  std::optional<int> relation_id(std::string_view label) const;
  const std::string& entity_label(int id) const;
  const std::string& relation_label(int id) const;

  const std::vector<std::string>& entities() const noexcept { return entities_; }
  const std::vector<std::string>& relations() const noexcept { return relations_; }

 private:
  void add_entity(const std::string& label);
  void add_relation(const std::string& label);

  std::vector<std::string> entities_, relations_;
  std::unordered_map<std::string, int> entity_ids_, relation_ids_;
};

struct Qualifier {
  int attribute = 0;
  int value = 0;
  friend bool operator==(const Qualifier&, const Qualifier&) = default;
};

struct HFact {
  int subject = 0;
  int relation = 0;
  int object = 0;
  std::vector<Qualifier> qualifiers;

  std::size_t arity() const noexcept { return 2 + qualifiers.size(); }
  friend bool operator==(const HFact&, const HFact&) = default;
};

HFact index_fact(const LabeledFact& fact, const Vocabulary& vocab);
std::vector<HFact> index_facts(std::span<const LabeledFact> facts, const Vocabulary& vocab);

// Binary node x hyperedge incidence stored both ways in CSR form. One
// hyperedge per fact over its entities {s, o, v_1..v_m}; repeated entities
// inside a fact count once. Members are stored in ascending id order.
class Hypergraph {
 public:
  Hypergraph() = default;
  static Hypergraph build(std::span<const HFact> facts, std::size_t num_nodes);
  static Hypergraph from_edges(const std::vector<std::vector<std::size_t>>& edges,
                               std::size_t num_nodes);

  std::size_t num_nodes() const noexcept { return node_offsets_.empty() ? 0 : node_offsets_.size() - 1; }
  std::size_t num_hyperedges() const noexcept { return edge_offsets_.empty() ? 0 : edge_offsets_.size() - 1; }
  std::size_t num_incidences() const noexcept { return edge_members_.size(); }

  std::span<const std::size_t> members(std::size_t edge) const;
  std::span<const std::size_t> incident_edges(std::size_t node) const;

  bool incidence(std::size_t node, std::size_t edge) const;
  std::size_t degree(std::size_t node) const;

  // CSR views consumed by the attention kernels.
  std::span<const std::size_t> edge_offsets() const noexcept { return edge_offsets_; }
  std::span<const std::size_t> edge_members() const noexcept { return edge_members_; }
  std::span<const std::size_t> node_offsets() const noexcept { return node_offsets_; }
  std::span<const std::size_t> node_edges() const noexcept { return node_edges_; }
  // 1 for nodes that belong to no hyperedge.
  std::span<const std::uint8_t> isolated() const noexcept { return isolated_; }

 private:
  std::vector<std::size_t> edge_offsets_, edge_members_;
  std::vector<std::size_t> node_offsets_, node_edges_;
  std::vector<std::uint8_t> isolated_;
};

enum class Role : std::uint8_t { kS = 0, kR, kO, kA, kV, kPad };
inline constexpr std::size_t kNumRoles = 5;

enum class EdgeType : std::uint8_t {
  kSelf = 0,
  kSR,
  kSO,
  kRO,
  kSA,
  kSV,
  kRA,
  kRV,
  kOA,
  kOV,
  kAiVi,  // attribute and value of the same qualifier
  kAiAj,
  kViVj,
  kAiVj,  // attribute and value of different qualifiers
  kPad,   // sentinel for any pair touching a padding slot
};
inline constexpr std::size_t kNumEdgeTypes = 14;

std::string_view to_string(Role role);
std::string_view to_string(EdgeType type);

inline constexpr std::size_t sequence_length(std::size_t max_qualifiers) {
  return 3 + 2 * max_qualifiers;
}

bool is_entity_position(std::size_t pos);
Role role_at(std::size_t pos, std::size_t num_real);
EdgeType edge_type(std::size_t i, std::size_t j, std::size_t num_real);

struct Sequence {
  std::vector<int> ids;  // entity ids at entity positions, relation ids otherwise
  std::vector<Role> roles;
  std::size_t num_real = 0;
};

Sequence fact_to_sequence(const HFact& fact, std::size_t max_qualifiers, const Vocabulary& vocab);
HFact sequence_to_fact(const Sequence& seq);

struct DatasetStatistics {
  std::size_t num_facts = 0;
  std::size_t num_with_qualifiers = 0;
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;
  std::size_t arity_min = 0;
  std::size_t arity_max = 0;
};

DatasetStatistics dataset_statistics(std::span<const LabeledFact> facts);

// A dataset directory holds train/valid/test files named <split>.txt (TSV)
// or <split>.jsonl. The vocabulary spans every split. A missing validation
// split is carved out of train with a seeded shuffle.
struct Dataset {
  Vocabulary vocab;
  std::vector<HFact> train, valid, test;
  std::size_t raw_train = 0, raw_valid = 0, raw_test = 0;
  bool valid_held_out = false;

  std::size_t max_qualifiers() const;
};

struct SplitFiles {
  std::optional<std::filesystem::path> train, valid, test;
  DataFormat format = DataFormat::kTsv;
};

SplitFiles locate_splits(const std::filesystem::path& dir, std::optional<DataFormat> format);
Dataset load_dataset(const std::filesystem::path& dir, std::optional<DataFormat> format,
                     std::uint64_t seed, double holdout_fraction = 0.05);

}  // namespace hahe
