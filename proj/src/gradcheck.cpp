#include "hahe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "hahe/training.hpp"

namespace hahe {

TrainConfig gradcheck_config() {
  TrainConfig c;
  c.embedding_dim = 8;
  c.global_layers = 1;
  c.global_heads = 2;
  c.local_layers = 2;
  c.local_heads = 2;
  c.hidden_size = 16;
  c.batch_size = 64;
  c.global_dropout = 0.1;
  c.local_dropout = 0.1;
  c.seed = 7;
  return c;
}

Dataset gradcheck_dataset() {
  const char* text =
      "e0\tr0\te1\tr1\te2\tr2\te3\n"
      "e1\tr1\te4\n"
      "e4\tr0\te5\tr3\te6\n"
      "e6\tr2\te7\tr1\te8\tr0\te9\n"
      "e9\tr3\te10\n"
      "e10\tr0\te11\tr2\te0\n";
  const auto facts = parse_dataset_text(text, DataFormat::kTsv);
  Dataset d;
  d.vocab = Vocabulary::build(facts);
  d.train = index_facts(facts, d.vocab);
  d.raw_train = d.train.size();
  return d;
}

double gradient_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

std::string GradcheckReport::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(24) << "parameter" << std::right << std::setw(8) << "count"
     << std::setw(14) << "max abs err" << std::setw(14) << "max rel err" << "  status\n";
  for (const GradcheckGroup& g : groups) {
    os << std::left << std::setw(24) << g.name << std::right << std::setw(8) << g.count
       << std::setw(14) << std::scientific << std::setprecision(3) << g.max_abs_error
       << std::setw(14) << g.max_rel_error << std::defaultfloat << "  "
       << (g.passed ? "ok" : "FAIL") << "\n";
  }
  os << (passed ? "PASS" : "FAIL") << " (tolerance " << tolerance << ")\n";
  return os.str();
}

GradcheckReport run_gradcheck(const TrainConfig& config, const GradcheckOptions& options) {
  const Dataset data = gradcheck_dataset();
  Model model = build_model(config, data);

  Rng perturb(options.seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  const auto named = model.params().named();
  for (const auto& [name, v] : named) {
    for (double& x : v->value.data()) x += noise(perturb);
  }

  std::vector<MaskedSequence> items;
  for (const MaskedSample& s : generate_masked_samples(data.train)) {
    items.push_back({data.train[s.fact], {s.position}});
  }
  const SequenceBatch batch = model.batch(items);
  const std::uint64_t dropout_seed = options.seed + 1;
  auto loss_value = [&]() {
    ad::Tape t(false);
    Rng rng(dropout_seed);
    return model.loss(t, batch, true, rng)->value[0];
  };

  {
    ad::Tape t;
    Rng rng(dropout_seed);
    const ad::Var loss = model.loss(t, batch, true, rng);
    t.backward(loss);
  }

  GradcheckReport report;
  report.tolerance = options.tolerance;
  for (const auto& [name, v] : named) {
    Tensor analytic = v->grad.empty() ? Tensor(v->value.shape()) : v->grad;
    if (options.corrupt) options.corrupt(name, analytic);
    GradcheckGroup g;
    g.name = name;
    g.count = v->value.size();
    for (std::size_t i = 0; i < v->value.size(); ++i) {
      double& x = v->value[i];
      const double saved = x;
      x = saved + options.eps;
      const double up = loss_value();
      x = saved - options.eps;
      const double down = loss_value();
      x = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      g.max_abs_error = std::max(g.max_abs_error, std::abs(analytic[i] - numeric));
      g.max_rel_error = std::max(g.max_rel_error, gradient_relative_error(analytic[i], numeric));
    }
    g.passed = g.max_rel_error <= options.tolerance;
    report.passed = report.passed && g.passed;
    report.groups.push_back(std::move(g));
  }
  return report;
}

}  // namespace hahe
