// Command-line front end: stats, train, eval, predict, multi-predict, gradcheck.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hahe/checkpoint.hpp"
#include "hahe/config.hpp"
#include "hahe/errors.hpp"
#include "hahe/evaluation.hpp"
#include "hahe/gradcheck.hpp"
#include "hahe/hkg.hpp"
#include "hahe/kernels.hpp"
#include "hahe/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hahe;

namespace {

std::optional<DataFormat> format_option(const std::string& name) {
  if (name.empty() || name == "auto") return std::nullopt;
  auto f = parse_data_format(name);
  if (!f) throw UsageError("unknown data format '" + name + "' (tsv, jsonl)");
  return f;
}

std::string with_commas(std::size_t n) {
  std::string s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

int cmd_stats(const std::string& data, const std::string& format) {
  const SplitFiles files = locate_splits(data, format_option(format));
  auto read = [&](const std::optional<fs::path>& p) {
    return p ? parse_dataset(*p, files.format) : std::vector<LabeledFact>{};
  };
  const auto train = read(files.train), valid = read(files.valid), test = read(files.test);
  std::vector<LabeledFact> all = train;
  all.insert(all.end(), valid.begin(), valid.end());
  all.insert(all.end(), test.begin(), test.end());
  const DatasetStatistics s = dataset_statistics(all);

  auto split = [](const std::optional<fs::path>& p, std::size_t n) {
    return p ? with_commas(n) : std::string("-");
  };
  const std::string arity =
      s.num_facts ? std::to_string(s.arity_min) + "-" + std::to_string(s.arity_max) : "-";
  const std::vector<std::pair<std::string, std::string>> rows = {
      {"facts", with_commas(s.num_facts)},
      {"facts with qualifiers", with_commas(s.num_with_qualifiers)},
      {"entities", with_commas(s.num_entities)},
      {"relations", with_commas(s.num_relations)},
      {"train", split(files.train, train.size())},
      {"valid", split(files.valid, valid.size())},
      {"test", split(files.test, test.size())},
      {"arity", arity}};
  std::cout << "dataset: " << data << " (" << to_string(files.format) << ")\n";
  for (const auto& [k, v] : rows) {
    std::cout << "  " << std::left << std::setw(24) << k << std::right << std::setw(12) << v << "\n";
  }
  json j = {{"facts", s.num_facts},
            {"facts_with_qualifiers", s.num_with_qualifiers},
            {"entities", s.num_entities},
            {"relations", s.num_relations},
            {"train", files.train ? json(train.size()) : json(nullptr)},
            {"valid", files.valid ? json(valid.size()) : json(nullptr)},
            {"test", files.test ? json(test.size()) : json(nullptr)},
            {"arity_min", s.arity_min},
            {"arity_max", s.arity_max}};
  std::cout << j.dump() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, data, out, format;
  std::vector<std::string> overrides;
  std::optional<std::size_t> epochs;
  bool no_global = false, no_node_bias = false, no_edge_bias = false;
};

int cmd_train(const TrainArgs& a, std::optional<std::uint64_t> seed) {
  TrainConfig config = a.config.empty() ? TrainConfig{} : load_config_file(a.config);
  for (const std::string& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.epochs) config.epochs = *a.epochs;
  if (seed) config.seed = *seed;
  if (a.no_global) config.no_global = true;
  if (a.no_node_bias) config.no_node_bias = true;
  if (a.no_edge_bias) config.no_edge_bias = true;
  const TrainingResult r = run_training(config, a.data, a.out, format_option(a.format));
  std::cout << "final checkpoint: " << r.final_checkpoint.string() << "\n"
            << "best checkpoint:  " << r.best_checkpoint.string() << "\n"
            << "log:              " << r.log.string() << "\n"
            << "best valid all-entity MRR: " << r.best_valid_mrr << "\n";
  return 0;
}

struct LoadedData {
  Model model;
  Dataset data;
};

LoadedData load_with_data(const std::string& checkpoint, const std::string& data_override,
                          const std::string& format) {
  CheckpointInfo info;
  Model model = load_checkpoint(checkpoint, &info);
  const std::string dir = data_override.empty() ? info.data_dir : data_override;
  if (dir.empty()) throw UsageError("checkpoint records no data directory; pass --data");
  std::optional<DataFormat> fmt = format_option(format);
  if (!fmt && data_override.empty()) fmt = info.format;
  Dataset data = load_dataset(dir, fmt, model.config().seed);
  if (data.vocab.entities() != model.vocab().entities() ||
      data.vocab.relations() != model.vocab().relations()) {
    throw ConfigError("dataset vocabulary differs from the checkpoint vocabulary");
  }
  return {std::move(model), std::move(data)};
}

struct EvalArgs {
  std::string checkpoint, split = "test", data, format, out;
  bool raw = false, filtered = false, filter_tuples = false;
  std::size_t multi = 0, beam = 100, keep = 100;
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out || !(out << text)) throw IoError("cannot write " + p.string());
}

int cmd_eval(const EvalArgs& a) {
  if (a.raw && a.filtered) throw UsageError("--raw and --filtered are exclusive");
  LoadedData ld = load_with_data(a.checkpoint, a.data, a.format);
  const Dataset& d = ld.data;
  const std::vector<HFact>* split = nullptr;
  if (a.split == "test") split = &d.test;
  else if (a.split == "valid") split = &d.valid;
  else if (a.split == "train") split = &d.train;
  else throw UsageError("--split must be train, valid or test");
  if (split->empty()) throw UsageError("split '" + a.split + "' is empty");
  const FilterIndex filter({d.train, d.valid, d.test});
  ModelScorer scorer(ld.model);
  if (!a.out.empty()) fs::create_directories(a.out);

  if (a.multi > 0) {
    MultiPositionOptions opt;
    opt.positions = a.multi;
    opt.beam = a.beam;
    opt.keep = a.keep;
    opt.filter_tuples = a.filter_tuples;
    const MultiPositionReport r = evaluate_multi_position(scorer, *split, &filter, opt);
    std::cout << r.to_text();
    if (!a.out.empty()) {
      write_file(fs::path(a.out) / "multi_report.json", r.to_json().dump(2) + "\n");
      write_file(fs::path(a.out) / "multi_report.txt", r.to_text());
    }
    return 0;
  }
  LinkPredictionOptions opt;
  opt.filtered = !a.raw;
  const RankReport r = evaluate_link_prediction(scorer, *split, &filter, ld.model.graph(), opt);
  std::cout << r.to_text();
  if (!a.out.empty()) {
    write_file(fs::path(a.out) / "report.json", r.to_json().dump(2) + "\n");
    write_file(fs::path(a.out) / "report.txt", r.to_text());
    write_file(fs::path(a.out) / "breakdown.csv", r.breakdown_csv());
  }
  return 0;
}

std::string label_at(const Vocabulary& v, std::size_t pos, int id) {
  return is_entity_position(pos) ? v.entity_label(id) : v.relation_label(id);
}

int cmd_predict(const std::string& checkpoint, const std::string& fact, std::size_t top,
                bool as_json) {
  const Model model = load_checkpoint(checkpoint);
  const Query q = parse_query(fact, model.vocab());
  if (q.positions.size() != 1) {
    throw UsageError("predict needs exactly one '?' token, got " + std::to_string(q.positions.size()));
  }
  ModelScorer scorer(model);
  const auto lp = scorer.score(std::span(&q, 1))[0][0];
  std::vector<int> ids(lp.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  const std::size_t k = std::min(top, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&lp](int a, int b) { return lp[a] > lp[b] || (lp[a] == lp[b] && a < b); });
  ids.resize(k);
  const std::size_t pos = q.positions[0];
  json out = json::array();
  for (int id : ids) {
    const double p = std::exp(lp[id]);
    if (as_json) {
      out.push_back({{"label", label_at(model.vocab(), pos, id)}, {"probability", p}});
    } else {
      std::cout << std::left << std::setw(32) << label_at(model.vocab(), pos, id) << std::right
                << std::fixed << std::setprecision(6) << p << "\n";
    }
  }
  if (as_json) std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_multi_predict(const std::string& checkpoint, const std::string& fact, std::size_t beam,
                      std::size_t keep, bool as_json) {
  const Model model = load_checkpoint(checkpoint);
  const Query q = parse_query(fact, model.vocab());
  if (q.positions.size() < 2) {
    throw UsageError("multi-predict needs at least two '?' tokens, got " +
                     std::to_string(q.positions.size()));
  }
  ModelScorer scorer(model);
  const auto tuples = multi_position_predict(scorer, q.fact, q.positions, beam, keep);
  const std::string category = std::string(to_string(pair_category(q.positions))) + " / " +
                               std::string(to_string(position_scope(q.positions)));
  json out = {{"category", category}, {"tuples", json::array()}};
  if (!as_json) std::cout << "category: " << category << "\n";
  for (const TupleCandidate& t : tuples) {
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < t.ids.size(); ++i) {
      labels.push_back(label_at(model.vocab(), q.positions[i], t.ids[i]));
    }
    const double p = std::exp(t.log_score);
    if (as_json) {
      out["tuples"].push_back({{"labels", labels}, {"probability", p}});
    } else {
      std::string joined;
      for (const auto& l : labels) joined += (joined.empty() ? "" : "  ") + l;
      std::cout << std::left << std::setw(48) << joined << std::right << std::scientific
                << std::setprecision(4) << p << std::defaultfloat << "\n";
    }
  }
  if (as_json) std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& config_path, const std::string& corrupt,
                  std::optional<std::uint64_t> seed) {
  TrainConfig config = gradcheck_config();
  if (!config_path.empty()) config = load_config_file(config_path, config);
  GradcheckOptions opt;
  if (seed) opt.seed = *seed;
  if (!corrupt.empty()) {
    opt.corrupt = [corrupt](const std::string& name, Tensor& g) {
      if (name == corrupt && g.size() > 0) g[0] += 1.0;
    };
  }
  const GradcheckReport r = run_gradcheck(config, opt);
  std::cout << r.to_text();
  return r.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical attention link prediction on hyper-relational knowledge graphs"};
  app.require_subcommand(1);
  int threads = 0;
  std::optional<std::uint64_t> seed;
  app.add_option("--threads", threads, "Worker threads for the parallel kernels (0 = all)");
  app.add_option("--seed", seed, "Random seed (overrides the config)");

  std::string data, format;
  auto* stats = app.add_subcommand("stats", "Dataset statistics");
  stats->add_option("--data", data, "Dataset directory")->required();
  stats->add_option("--format", format, "tsv or jsonl (default: detect)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", ta.config, "key = value config file");
  train->add_option("--data", ta.data, "Dataset directory")->required();
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--format", ta.format, "tsv or jsonl (default: detect)");
  train->add_option("--epochs", ta.epochs, "Override the epoch count");
  train->add_option("--set", ta.overrides, "Override a config key (key=value)");
  train->add_flag("--no-global", ta.no_global, "Drop the hypergraph attention layers");
  train->add_flag("--no-node-bias", ta.no_node_bias, "Share one projection across roles");
  train->add_flag("--no-edge-bias", ta.no_edge_bias, "Remove the edge-type bias vectors");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  eval->add_option("--split", ea.split, "train, valid or test");
  eval->add_option("--data", ea.data, "Dataset directory (default: from checkpoint)");
  eval->add_option("--format", ea.format, "tsv or jsonl");
  eval->add_option("--out", ea.out, "Directory for report files");
  eval->add_flag("--raw", ea.raw, "Unfiltered ranking");
  eval->add_flag("--filtered", ea.filtered, "Filtered ranking (default)");
  eval->add_option("--multi", ea.multi, "Multi-position evaluation with this many positions");
  eval->add_option("--beam", ea.beam, "Candidates per position for multi-position evaluation");
  eval->add_option("--keep", ea.keep, "Tuples kept per multi-position query");
  eval->add_flag("--filter-tuples", ea.filter_tuples, "Filter other true tuples");

  std::string checkpoint, fact;
  std::size_t top = 10, beam = 100, keep = 100;
  bool as_json = false;
  auto* predict = app.add_subcommand("predict", "Complete one '?' slot of a fact");
  predict->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  predict->add_option("--fact", fact, "Tokens s r o [a v]* with one '?'")->required();
  predict->add_option("--top", top, "Completions to print");
  predict->add_flag("--json", as_json, "JSON output");

  auto* multi = app.add_subcommand("multi-predict", "Jointly complete several '?' slots");
  multi->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  multi->add_option("--fact", fact, "Tokens s r o [a v]* with two or more '?'")->required();
  multi->add_option("--beam", beam, "Candidates per position");
  multi->add_option("--keep", keep, "Tuples to print");
  multi->add_flag("--json", as_json, "JSON output");

  std::string gc_config, corrupt;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gradcheck->add_option("--config", gc_config, "Config overrides for the toy model");
  gradcheck->add_option("--corrupt", corrupt, "Perturb the analytic gradient of this tensor")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (threads < 0) throw UsageError("--threads must be >= 0");
    if (threads > 0) kernels::set_threads(threads);
    if (*stats) return cmd_stats(data, format);
    if (*train) return cmd_train(ta, seed);
    if (*eval) return cmd_eval(ea);
    if (*predict) return cmd_predict(checkpoint, fact, top, as_json);
    if (*multi) return cmd_multi_predict(checkpoint, fact, beam, keep, as_json);
    if (*gradcheck) return cmd_gradcheck(gc_config, corrupt, seed);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
