#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cloe::metrics {

/// K x K counts; rows are true classes, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int k = 2);

  int num_classes() const { return k_; }
  std::uint64_t& at(int truth, int pred) { return counts_[static_cast<std::size_t>(truth) * k_ + pred]; }
  std::uint64_t at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth) * k_ + pred]; }
  std::uint64_t total() const;
  std::vector<std::uint64_t> row_sums() const;
  std::vector<std::uint64_t> col_sums() const;
  ConfusionMatrix transposed() const;
  bool is_diagonal() const;
  bool operator==(const ConfusionMatrix&) const = default;

  /// CSV grid with a `true\pred` header row and column.
  std::string to_csv() const;

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, int num_classes);

struct KappaResult {
  double value = 0.0;
  /// Expected weighted disagreement was zero and the observed matrix is not
  /// a single diagonal cell, so kappa is undefined; value is then 0.
  bool degenerate = false;
};

/// Quadratic weighted kappa with w_ij = (i - j)^2 / (K - 1)^2.
KappaResult qwk(const ConfusionMatrix& cm);

/// Fraction of samples whose label is among the k highest probabilities;
/// equal probabilities rank the lower class index first.
double top_k_accuracy(std::span<const std::vector<double>> probs, std::span<const int> truth, int k);

struct F1Scores {
  std::vector<double> per_class;
  double macro = 0.0;
  double micro = 0.0;
  /// Classes whose precision or recall had a zero denominator.
  std::vector<int> undefined_classes;
};

F1Scores f1_scores(const ConfusionMatrix& cm);

struct PrecRecSpec {
  double precision_macro = 0.0;
  double recall_macro = 0.0;
  double specificity_macro = 0.0;
  std::vector<double> precision, recall, specificity;
  std::vector<int> undefined_classes;
};

PrecRecSpec prec_rec_spec(const ConfusionMatrix& cm);

struct MetricsReport {
  double top1_acc = 0.0;
  double top2_acc = 0.0;
  double f1_macro = 0.0;
  double f1_micro = 0.0;
  double precision_macro = 0.0;
  double recall_macro = 0.0;
  double specificity_macro = 0.0;
  double qwk = 0.0;
  bool qwk_degenerate = false;
  std::vector<int> undefined_classes;
  ConfusionMatrix confusion{2};

  static std::string csv_header();
  std::string csv_row() const;
  std::string to_json() const;
};

/// Argmax predictions (lowest index wins ties) scored against truth.
MetricsReport report(std::span<const std::vector<double>> probs, std::span<const int> truth, int num_classes);

}  // namespace cloe::metrics
