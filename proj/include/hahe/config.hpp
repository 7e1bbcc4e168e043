#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hahe/numerics.hpp"

namespace hahe {

// Every knob of a training run. Defaults sit inside the hyperparameter grid
// the model was tuned on. The whole struct is serialized into checkpoints.
struct TrainConfig {
  std::size_t embedding_dim = 256;
  std::size_t global_layers = 2;
  double global_dropout = 0.1;
  Activation global_activation{ActivationKind::kElu};
  std::size_t global_heads = 4;
  std::size_t local_layers = 12;
  double local_dropout = 0.1;
  std::size_t local_heads = 4;
  Activation decoder_activation{ActivationKind::kGelu};
  std::size_t hidden_size = 256;
  std::size_t batch_size = 1024;
  double learning_rate = 5e-4;
  double weight_decay = 0.01;
  double soft_label_entity = 0.2;  // probability mass moved off the target
  double soft_label_relation = 0.1;
  std::size_t epochs = 300;
  std::uint64_t seed = 42;
  bool no_global = false;
  bool no_node_bias = false;
  bool no_edge_bias = false;
  std::optional<std::size_t> max_qualifiers;  // empty = derive from data
  std::size_t eval_every = 10;
  bool global_full_graph = false;  // use every split's facts as hyperedges

  std::size_t effective_global_layers() const { return no_global ? 0 : global_layers; }
  void validate() const;
};

// Applies one `key = value` pair. Unknown keys and unparsable values throw
// ConfigError.
void set_config_value(TrainConfig& config, std::string_view key, std::string_view value);

TrainConfig parse_config_text(std::string_view text, TrainConfig base = {});
TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base = {});

// Ordered key/value view; parse_config_text(render_config(c)) == c.
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& config);
std::string render_config(const TrainConfig& config);

}  // namespace hahe
