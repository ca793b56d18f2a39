// Command-line front end: gen, run, grid, score, eval.
// Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <unordered_map>

#include "CLI11.hpp"
#include "cloe/experiment.hpp"
#include "cloe/manifest.hpp"

namespace fs = std::filesystem;
using namespace cloe;

namespace {

struct Common {
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

experiment::ExperimentConfig config_from(const std::string& path, const Common& c) {
  experiment::ExperimentConfig cfg = path.empty() ? experiment::default_config() : experiment::load_config(path);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

int cmd_gen(const std::string& config, const Common& c) {
  const auto cfg = config_from(config, c);
  if (!cfg.synthetic) throw ConfigError("gen needs a synthetic data section");
  const auto g = experiment::generate(*cfg.synthetic, cfg.seed);
  const std::vector<Dataset> main{g.train, g.test};
  const fs::path m = manifest::write(std::span<const Dataset>(main), cfg.output_dir);
  const fs::path q = manifest::write(g.quality, cfg.output_dir / "quality");
  if (!c.quiet) std::cout << m.string() << '\n' << q.string() << '\n';
  return 0;
}

int cmd_run(const std::string& config, const Common& c) {
  const auto cfg = config_from(config, c);
  const auto rep = experiment::run_experiment(cfg, {true, c.quiet, nullptr});
  if (!c.quiet) std::cout << rep.test->to_json() << '\n';
  return 0;
}

int cmd_grid(const std::string& config, const Common& c) {
  const auto cfg = config_from(config, c);
  auto protocols = cfg.grid_protocols;
  auto augs = cfg.grid_augmentations;
  auto seeds = cfg.grid_seeds;
  if (protocols.empty()) protocols = {cfg.protocol};
  if (augs.empty()) augs = {cfg.augmentation.kind};
  if (seeds.empty()) seeds = {cfg.seed};
  const auto res = experiment::run_grid(cfg, protocols, augs, seeds, {true, c.quiet, nullptr});
  if (!c.quiet) std::cout << res.to_csv();
  bool any_failed = false;
  for (const auto& r : res.rows) any_failed |= !r.test.has_value();
  return any_failed ? 2 : 0;
}

int cmd_score(const std::string& model_path, const std::string& manifest_path, double tau, const Common& c) {
  const nn::TinyCNN model = nn::load_checkpoint(model_path);
  std::vector<quality::CleanlinessScore> scores;
  for (const auto& ds : manifest::read_all(manifest_path)) {
    auto part = quality::score_all(model, ds);
    scores.insert(scores.end(), part.begin(), part.end());
  }
  const std::string csv = quality::scores_csv(scores, tau);
  if (!c.out.empty()) experiment::write_text(fs::path(c.out) / "quality_scores.csv", csv);
  if (!c.quiet) std::cout << csv;
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& manifest_path, const Common& c) {
  const auto preds = experiment::read_predictions(pred_path);
  std::unordered_map<std::string, int> truth_by_id;
  int k = 0;
  for (const auto& ds : manifest::read_all(manifest_path)) {
    k = ds.num_classes;
    for (const auto& s : ds.samples) truth_by_id.emplace(s.id, s.label);
  }
  std::vector<int> truth;
  for (std::size_t i = 0; i < preds.ids.size(); ++i) {
    auto it = truth_by_id.find(preds.ids[i]);
    if (it == truth_by_id.end()) throw DataError("prediction id '" + preds.ids[i] + "' not in manifest");
    if (preds.probs[i].size() != static_cast<std::size_t>(k)) {
      throw DataError("prediction '" + preds.ids[i] + "' has the wrong number of classes");
    }
    truth.push_back(it->second);
  }
  const auto rep = metrics::report(preds.probs, truth, k);
  if (!c.out.empty()) {
    const fs::path out(c.out);
    experiment::write_text(out / "metrics.csv", metrics::MetricsReport::csv_header() + "\n" + rep.csv_row() + "\n");
    experiment::write_text(out / "confusion.csv", rep.confusion.to_csv());
  }
  if (!c.quiet) std::cout << rep.to_json() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curriculum learning for ordinal image classification under label noise"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--out", common.out, "Output directory");
  app.add_option("--seed", common.seed, "Override the config seed");
  app.add_flag("--quiet", common.quiet, "Suppress progress and result output");

  std::string config, model_path, manifest_path, pred_path;
  double tau = 0.5;

  auto* gen = app.add_subcommand("gen", "Write the synthetic train/test set and quality set to --out");
  gen->add_option("config", config, "Experiment config (defaults to the built-in synthetic setup)");
  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("config", config, "Experiment config")->required();
  auto* grid = app.add_subcommand("grid", "Run the protocol x augmentation x seed grid");
  grid->add_option("config", config, "Experiment config with a grid section")->required();
  auto* score = app.add_subcommand("score", "Cleanliness scores for every manifest row");
  score->add_option("model", model_path, "Quality model checkpoint")->required();
  score->add_option("manifest", manifest_path, "Manifest CSV")->required();
  score->add_option("--tau", tau, "Clean/noisy threshold");
  auto* eval = app.add_subcommand("eval", "Metrics for a predictions CSV");
  eval->add_option("predictions", pred_path, "CSV with id and p_0..p_{K-1}")->required();
  eval->add_option("manifest", manifest_path, "Manifest CSV with the true labels")->required();

  // Global flags are also accepted after the subcommand.
  for (auto* sub : {gen, run, grid, score, eval}) {
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen(config, common);
    if (*run) return cmd_run(config, common);
    if (*grid) return cmd_grid(config, common);
    if (*score) return cmd_score(model_path, manifest_path, tau, common);
    if (*eval) return cmd_eval(pred_path, manifest_path, common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "parse error at " << e.location() << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
