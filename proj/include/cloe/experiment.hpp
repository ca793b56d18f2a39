#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cloe/augment.hpp"
#include "cloe/curriculum.hpp"
#include "cloe/metrics.hpp"
#include "cloe/nn.hpp"
#include "cloe/quality.hpp"
#include "cloe/synthgen.hpp"

namespace cloe::experiment {

/// Synthetic data section: the train split follows `train`, the test split
/// reuses its generator settings with `test_class_counts`, and the quality
/// scorer gets its own generated set, like an external quality-labeled corpus.
struct SyntheticData {
  synth::SynthConfig train;
  std::vector<int> test_class_counts{185, 93, 35, 24};
  /// Test labels are the rendered grades unless this is raised.
  double test_noise_flip_prob = 0.0;
  int quality_set_size = 1924;
  double quality_set_noisy_fraction = 776.0 / 1924.0;
};

struct ManifestData {
  std::filesystem::path manifest;
  std::optional<int> num_classes;
  /// Optional binary clean/noisy corpus for the scorer; without it the
  /// training split must carry true_quality.
  std::optional<std::filesystem::path> quality_manifest;
};

struct ExperimentConfig {
  std::optional<SyntheticData> synthetic;
  std::optional<ManifestData> manifest;

  curriculum::Protocol protocol = curriculum::Protocol::CL;
  augment::AugmentConfig augmentation;
  double tau = 0.5;
  int patience = 5;
  int max_epochs_per_phase = 100;
  int batch_size = 32;
  double base_lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 0.0;
  nn::LrSchedule schedule{nn::ScheduleKind::Step, 0.0, 100, 40, 0.1};
  bool lr_restart_per_phase = false;
  /// Evaluate the checkpoint with the best validation accuracy seen in any
  /// phase instead of the last one.
  bool select_best_checkpoint = true;
  double val_fraction = 0.1;
  quality::ScorerHyper scorer;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";

  // Grid axes; empty means "use the single value above".
  std::vector<curriculum::Protocol> grid_protocols;
  std::vector<augment::Kind> grid_augmentations;
  std::vector<std::uint64_t> grid_seeds;

  void validate() const;
};

/// Strict JSON parsing: unknown keys and wrong types raise ConfigError.
/// Relative manifest paths resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

/// The built-in synthetic setup: 4 imbalanced classes (518/259/108/75 train,
/// 185/93/35/24 test), quality_mix (0.5, 0.4, 0.2, 0.1), flip probability 0.3.
ExperimentConfig default_config();

struct EpochRecord {
  curriculum::Phase phase;
  int epoch = 0;
  int train_size = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double val_qwk = 0.0;
};

struct ScorerSummary {
  double val_accuracy = 0.0;
  double val_auc = 0.0;
  std::size_t train_clean = 0;
  std::size_t train_noisy = 0;
};

struct RunReport {
  std::string config_json;
  ScorerSummary scorer;
  std::vector<quality::ClassQuality> class_quality;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  std::size_t test_size = 0;
  std::size_t clean_size = 0;
  std::size_t noisy_size = 0;
  /// Ids of every sample the classifier was trained on, in first-seen order.
  std::vector<std::string> trained_ids;
  std::vector<curriculum::EpochLog> phase_log;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  std::optional<metrics::MetricsReport> test;
  double wall_seconds = 0.0;

  std::string to_json() const;
};

/// Trained scorers keyed by everything that determines them, so runs sharing
/// data and seed can skip retraining. Results are identical either way.
class ScorerCache {
 public:
  const quality::ScorerResult* find(const std::string& key) const;
  const quality::ScorerResult& insert(const std::string& key, quality::ScorerResult r);

 private:
  std::map<std::string, quality::ScorerResult> entries_;
};

struct RunOptions {
  bool write_artifacts = true;
  bool quiet = true;
  ScorerCache* scorer_cache = nullptr;
};

/// Full pipeline: data, stratified validation split, quality scorer, partition,
/// protocol schedule, phase-driven training and final test evaluation.
/// Artifacts go to cfg.output_dir.
RunReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

struct GridRow {
  curriculum::Protocol protocol;
  augment::Kind augmentation;
  std::uint64_t seed = 0;
  std::string status = "ok";
  std::optional<metrics::MetricsReport> test;
  std::filesystem::path output_dir;
};

struct GridAggregate {
  curriculum::Protocol protocol;
  augment::Kind augmentation;
  std::size_t n = 0;
  std::vector<double> mean;  // one per metric column
  std::vector<double> stddev;
};

struct GridResult {
  std::vector<GridRow> rows;
  std::vector<GridAggregate> aggregates;

  std::string to_csv() const;
};

std::vector<std::string> metric_columns();
std::vector<double> metric_values(const metrics::MetricsReport& r);

/// Cartesian product, rows ordered by (protocol name, augmentation name,
/// seed). A failing run is recorded and the grid continues. Each run writes
/// to <output_dir>/<protocol>_<aug>_seed<seed> when artifacts are enabled.
GridResult run_grid(const ExperimentConfig& base, std::vector<curriculum::Protocol> protocols,
                    std::vector<augment::Kind> augmentations, std::vector<std::uint64_t> seeds,
                    const RunOptions& opts = {});

/// Mean and sample standard deviation per (protocol, augmentation) over the
/// successful rows.
std::vector<GridAggregate> aggregate(const std::vector<GridRow>& rows);

/// CSV `id,true_label,f_1..f_F` of penultimate features.
void export_embeddings(const nn::TinyCNN& model, const Dataset& ds, const std::filesystem::path& path);
std::string embeddings_csv(const nn::TinyCNN& model, const Dataset& ds);

/// CSV `id,true_label,p_0..p_{K-1}`.
std::string predictions_csv(const nn::Evaluation& ev, const Dataset& ds);

struct Predictions {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> probs;
};

Predictions read_predictions(const std::filesystem::path& path);

/// Synthetic train and test splits plus the scorer's quality corpus.
struct GeneratedData {
  Dataset train;
  Dataset test;
  Dataset quality;
};

GeneratedData generate(const SyntheticData& data, std::uint64_t seed);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace cloe::experiment
