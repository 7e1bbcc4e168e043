#include "hahe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "hahe/errors.hpp"

namespace hahe {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::string to_string(DataFormat format) {
  return format == DataFormat::kJsonl ? "jsonl" : "tsv";
}

namespace {

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw IoError("truncated checkpoint " + path);
  }
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const CheckpointInfo& info) {
  json m;
  m["version"] = kCheckpointVersion;
  json cfg = json::object();
  for (const auto& [k, v] : config_entries(model.config())) cfg[k] = v;
  m["config"] = cfg;
  m["entities"] = model.vocab().entities();
  m["relations"] = model.vocab().relations();
  json edges = json::array();
  const Hypergraph& g = model.graph();
  for (std::size_t e = 0; e < g.num_hyperedges(); ++e) {
    const auto mem = g.members(e);
    edges.push_back(std::vector<std::size_t>(mem.begin(), mem.end()));
  }
  m["hyperedges"] = std::move(edges);
  m["data_dir"] = info.data_dir;
  m["format"] = to_string(info.format);
  json params = json::array();
  std::size_t offset = 0;
  const auto named = model.params().named();
  for (const auto& [name, v] : named) {
    params.push_back({{"name", name},
                      {"shape", v->value.shape()},
                      {"offset", offset},
                      {"count", v->value.size()}});
    offset += v->value.size();
  }
  m["params"] = std::move(params);
  const std::string manifest = m.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, manifest.size());
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  std::vector<float> buf;
  for (const auto& [name, v] : named) {
    buf.assign(v->value.data().begin(), v->value.data().end());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failure on checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  const std::string p = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + p);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw IoError("not a checkpoint file: " + p);
  }
  const auto version = get<std::uint32_t>(in, p);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto length = get<std::uint64_t>(in, p);
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
    throw IoError("truncated checkpoint " + p);
  }
  json m;
  try {
    m = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint manifest in " + p + ": " + e.what());
  }

  try {
    TrainConfig config;
    for (const auto& [k, v] : m.at("config").items()) {
      set_config_value(config, k, v.get<std::string>());
    }
    Vocabulary vocab = Vocabulary::from_labels(m.at("entities").get<std::vector<std::string>>(),
                                               m.at("relations").get<std::vector<std::string>>());
    const auto edges = m.at("hyperedges").get<std::vector<std::vector<std::size_t>>>();
    Hypergraph graph = Hypergraph::from_edges(edges, vocab.num_entities());
    Rng rng(0);
    ModelParams params = init_parameters(config, vocab.num_entities(), vocab.num_relations(),
                                         graph.num_hyperedges(), rng);
    std::map<std::string, ad::Var> by_name;
    for (const auto& [name, v] : params.named()) by_name[name] = v;

    const std::streamoff payload = in.tellg();
    std::vector<float> buf;
    std::size_t seen = 0;
    for (const json& entry : m.at("params")) {
      const auto name = entry.at("name").get<std::string>();
      auto it = by_name.find(name);
      if (it == by_name.end()) throw IoError("checkpoint parameter '" + name + "' is unexpected");
      Tensor& t = it->second->value;
      const auto shape = entry.at("shape").get<Shape>();
      if (shape != t.shape()) {
        throw IoError("checkpoint parameter '" + name + "' has shape " + shape_string(shape) +
                      ", expected " + shape_string(t.shape()));
      }
      const auto offset = entry.at("offset").get<std::uint64_t>();
      buf.resize(t.size());
      in.seekg(payload + static_cast<std::streamoff>(offset * sizeof(float)));
      if (!in.read(reinterpret_cast<char*>(buf.data()),
                   static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
        throw IoError("truncated checkpoint payload for '" + name + "'");
      }
      std::copy(buf.begin(), buf.end(), t.data().begin());
      ++seen;
    }
    if (seen != by_name.size()) throw IoError("checkpoint is missing parameters");
    if (info) {
      info->data_dir = m.value("data_dir", "");
      info->format = parse_data_format(m.value("format", "tsv")).value_or(DataFormat::kTsv);
    }
    return Model(std::move(config), std::move(vocab), std::move(graph), std::move(params));
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint manifest in " + p + ": " + e.what());
  }
}

}  // namespace hahe
