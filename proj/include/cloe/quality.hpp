#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cloe/core.hpp"
#include "cloe/nn.hpp"

namespace cloe::quality {

/// Class index of "clean" in the two-class quality model.
inline constexpr int kCleanIndex = 0;
inline constexpr int kNoisyIndex = 1;

enum class QualityLabel { Clean, Noisy };

std::string_view to_string(QualityLabel q);

/// Probability that the image is clean.
struct CleanlinessScore {
  std::string sample_id;
  double s = 0.0;
};

/// Relabels samples as clean (0) or noisy (1). Synthetic data maps
/// true_quality >= 0.5 to clean; data without ground truth must already carry
/// binary labels.
Dataset make_quality_training_set(const Dataset& ds);

struct QualityCounts {
  std::size_t clean = 0;
  std::size_t noisy = 0;
};

QualityCounts count_quality_labels(const Dataset& binary);

struct ScorerHyper {
  int epochs = 8;
  int batch_size = 32;
  double base_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  nn::LrSchedule schedule{nn::ScheduleKind::Cosine, 0.0, 8, 40, 0.1};
  std::uint64_t seed = 0;
};

struct ScorerResult {
  nn::TinyCNN model;
  double val_accuracy = 0.0;
  double val_auc = 0.0;
  std::vector<double> epoch_loss;
};

/// Trains TinyCNN with K = 2 on binary-labeled data and reports validation
/// accuracy and AUC (clean as the positive class).
ScorerResult train_quality_scorer(const Dataset& train, const Dataset& val, const ScorerHyper& hyper);

/// softmax(logits)[clean].
CleanlinessScore score(const nn::TinyCNN& model, const Sample& sample);
double score(const nn::TinyCNN& model, const ImageTensor& img);

/// Batched scoring of a whole dataset, in dataset order.
std::vector<CleanlinessScore> score_all(const nn::TinyCNN& model, const Dataset& ds);

/// Clean iff s >= tau.
QualityLabel pseudo_label(double s, double tau);

struct ClassQuality {
  std::size_t clean = 0;
  std::size_t noisy = 0;
};

/// Per ordinal class, pseudo-label counts at tau. Every sample needs a score.
std::vector<ClassQuality> quality_distribution_by_class(const Dataset& ds, std::span<const CleanlinessScore> scores,
                                                        double tau);

/// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie).
double auc(std::span<const double> scores, std::span<const int> positive);

/// CSV `id,s,pseudo_label`.
std::string scores_csv(std::span<const CleanlinessScore> scores, double tau);

}  // namespace cloe::quality
