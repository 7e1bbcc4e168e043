#include "hahe/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "hahe/errors.hpp"

namespace hahe {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == s.npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" +
                      std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const std::string s(v);
    const double out = std::stod(s, &used);
    if (used == s.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + std::string(key) + "' expects true/false, got '" + std::string(v) + "'");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (embedding_dim == 0) fail("embedding_dim must be positive");
  if (global_heads == 0 || embedding_dim % global_heads != 0) {
    fail("embedding_dim must be divisible by global_heads");
  }
  if (local_heads == 0 || embedding_dim % local_heads != 0) {
    fail("embedding_dim must be divisible by local_heads");
  }
  if (hidden_size == 0) fail("hidden_size must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  for (double r : {global_dropout, local_dropout}) {
    if (r < 0.0 || r >= 1.0) fail("dropout rates must lie in [0, 1)");
  }
  for (double e : {soft_label_entity, soft_label_relation}) {
    if (e < 0.0 || e >= 1.0) fail("soft labels must lie in [0, 1)");
  }
  if (learning_rate < 0.0) fail("learning_rate must be non-negative");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (eval_every == 0) fail("eval_every must be positive");
}

void set_config_value(TrainConfig& c, std::string_view key, std::string_view raw) {
  const std::string_view v = trim(raw);
  if (key == "embedding_dim") c.embedding_dim = to_size(key, v);
  else if (key == "global_layers") c.global_layers = to_size(key, v);
  else if (key == "global_dropout") c.global_dropout = to_double(key, v);
  else if (key == "global_activation") c.global_activation = parse_activation(v);
  else if (key == "global_heads") c.global_heads = to_size(key, v);
  else if (key == "local_layers") c.local_layers = to_size(key, v);
  else if (key == "local_dropout") c.local_dropout = to_double(key, v);
  else if (key == "local_heads") c.local_heads = to_size(key, v);
  else if (key == "decoder_activation") c.decoder_activation = parse_activation(v);
  else if (key == "hidden_size") c.hidden_size = to_size(key, v);
  else if (key == "batch_size") c.batch_size = to_size(key, v);
  else if (key == "learning_rate") c.learning_rate = to_double(key, v);
  else if (key == "weight_decay") c.weight_decay = to_double(key, v);
  else if (key == "soft_label_entity") c.soft_label_entity = to_double(key, v);
  else if (key == "soft_label_relation") c.soft_label_relation = to_double(key, v);
  else if (key == "epochs") c.epochs = to_size(key, v);
  else if (key == "seed") c.seed = to_size(key, v);
  else if (key == "no_global") c.no_global = to_bool(key, v);
  else if (key == "no_node_bias") c.no_node_bias = to_bool(key, v);
  else if (key == "no_edge_bias") c.no_edge_bias = to_bool(key, v);
  else if (key == "max_qualifiers") {
    if (v == "auto") c.max_qualifiers.reset();
    else c.max_qualifiers = to_size(key, v);
  } else if (key == "eval_every") c.eval_every = to_size(key, v);
  else if (key == "global_full_graph") c.global_full_graph = to_bool(key, v);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

TrainConfig parse_config_text(std::string_view text, TrainConfig base) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == text.npos ? text.npos : nl - pos);
    pos = nl == text.npos ? text.size() : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != line.npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == line.npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), std::move(base));
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& c) {
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  return {
      {"embedding_dim", std::to_string(c.embedding_dim)},
      {"global_layers", std::to_string(c.global_layers)},
      {"global_dropout", fmt_double(c.global_dropout)},
      {"global_activation", to_string(c.global_activation)},
      {"global_heads", std::to_string(c.global_heads)},
      {"local_layers", std::to_string(c.local_layers)},
      {"local_dropout", fmt_double(c.local_dropout)},
      {"local_heads", std::to_string(c.local_heads)},
      {"decoder_activation", to_string(c.decoder_activation)},
      {"hidden_size", std::to_string(c.hidden_size)},
      {"batch_size", std::to_string(c.batch_size)},
      {"learning_rate", fmt_double(c.learning_rate)},
      {"weight_decay", fmt_double(c.weight_decay)},
      {"soft_label_entity", fmt_double(c.soft_label_entity)},
      {"soft_label_relation", fmt_double(c.soft_label_relation)},
      {"epochs", std::to_string(c.epochs)},
      {"seed", std::to_string(c.seed)},
      {"no_global", b(c.no_global)},
      {"no_node_bias", b(c.no_node_bias)},
      {"no_edge_bias", b(c.no_edge_bias)},
      {"max_qualifiers", c.max_qualifiers ? std::to_string(*c.max_qualifiers) : "auto"},
      {"eval_every", std::to_string(c.eval_every)},
      {"global_full_graph", b(c.global_full_graph)},
  };
}

std::string render_config(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_entries(c)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace hahe
