#include "cloe/metrics.hpp"

#include <algorithm>
#include <sstream>

#include "json.hpp"

#include "cloe/core.hpp"

namespace cloe::metrics {

ConfusionMatrix::ConfusionMatrix(int k) : k_(k), counts_(static_cast<std::size_t>(k) * k, 0) {
  if (k < 1) throw DataError("confusion matrix needs at least one class");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::vector<std::uint64_t> ConfusionMatrix::row_sums() const {
  std::vector<std::uint64_t> r(static_cast<std::size_t>(k_), 0);
  for (int i = 0; i < k_; ++i)
    for (int j = 0; j < k_; ++j) r[static_cast<std::size_t>(i)] += at(i, j);
  return r;
}

std::vector<std::uint64_t> ConfusionMatrix::col_sums() const {
  std::vector<std::uint64_t> c(static_cast<std::size_t>(k_), 0);
  for (int i = 0; i < k_; ++i)
    for (int j = 0; j < k_; ++j) c[static_cast<std::size_t>(j)] += at(i, j);
  return c;
}

ConfusionMatrix ConfusionMatrix::transposed() const {
  ConfusionMatrix t(k_);
  for (int i = 0; i < k_; ++i)
    for (int j = 0; j < k_; ++j) t.at(j, i) = at(i, j);
  return t;
}

bool ConfusionMatrix::is_diagonal() const {
  for (int i = 0; i < k_; ++i)
    for (int j = 0; j < k_; ++j)
      if (i != j && at(i, j) != 0) return false;
  return true;
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream os;
  os << "true\\pred";
  for (int j = 0; j < k_; ++j) os << ',' << j;
  os << '\n';
  for (int i = 0; i < k_; ++i) {
    os << i;
    for (int j = 0; j < k_; ++j) os << ',' << at(i, j);
    os << '\n';
  }
  return os.str();
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, int num_classes) {
  if (truth.size() != pred.size()) {
    throw DataError("confusion: " + std::to_string(truth.size()) + " labels but " + std::to_string(pred.size()) +
                    " predictions");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || pred[i] < 0 || pred[i] >= num_classes) {
      throw DataError("confusion: label out of range at position " + std::to_string(i));
    }
    ++cm.at(truth[i], pred[i]);
  }
  return cm;
}

KappaResult qwk(const ConfusionMatrix& cm) {
  const int k = cm.num_classes();
  const std::uint64_t n = cm.total();
  if (n == 0 || k < 2) return {0.0, true};
  const auto rows = cm.row_sums();
  const auto cols = cm.col_sums();
  const double denom_w = static_cast<double>(k - 1) * (k - 1);
  double observed = 0.0;
  double expected = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const double w = static_cast<double>((i - j) * (i - j)) / denom_w;
      observed += w * static_cast<double>(cm.at(i, j));
      expected += w * static_cast<double>(rows[static_cast<std::size_t>(i)]) *
                  static_cast<double>(cols[static_cast<std::size_t>(j)]) / static_cast<double>(n);
    }
  }
  if (expected == 0.0) {
    // Only possible when all mass sits in one cell; that cell is diagonal
    // exactly when there is no observed disagreement.
    if (observed == 0.0 && cm.is_diagonal()) return {1.0, false};
    return {0.0, true};
  }
  return {1.0 - observed / expected, false};
}

double top_k_accuracy(std::span<const std::vector<double>> probs, std::span<const int> truth, int k) {
  if (probs.size() != truth.size()) throw DataError("top_k_accuracy: length mismatch");
  if (probs.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i];
    const int t = truth[i];
    if (t < 0 || static_cast<std::size_t>(t) >= p.size()) throw DataError("top_k_accuracy: label out of range");
    if (k > static_cast<int>(p.size())) throw DataError("top_k_accuracy: k exceeds the number of classes");
    const double pt = p[static_cast<std::size_t>(t)];
    int rank = 0;
    for (std::size_t c = 0; c < p.size(); ++c) {
      if (p[c] > pt || (p[c] == pt && static_cast<int>(c) < t)) ++rank;
    }
    if (rank < k) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(probs.size());
}

namespace {

struct ClassCounts {
  double tp, fp, fn, tn;
};

std::vector<ClassCounts> class_counts(const ConfusionMatrix& cm) {
  const auto rows = cm.row_sums();
  const auto cols = cm.col_sums();
  const double n = static_cast<double>(cm.total());
  std::vector<ClassCounts> out;
  for (int c = 0; c < cm.num_classes(); ++c) {
    const double tp = static_cast<double>(cm.at(c, c));
    const double fp = static_cast<double>(cols[static_cast<std::size_t>(c)]) - tp;
    const double fn = static_cast<double>(rows[static_cast<std::size_t>(c)]) - tp;
    out.push_back({tp, fp, fn, n - tp - fp - fn});
  }
  return out;
}

double safe_ratio(double num, double den, bool& undefined) {
  if (den == 0.0) {
    undefined = true;
    return 0.0;
  }
  return num / den;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

F1Scores f1_scores(const ConfusionMatrix& cm) {
  F1Scores out;
  double tp_all = 0.0, fp_all = 0.0, fn_all = 0.0;
  int c = 0;
  for (const auto& cc : class_counts(cm)) {
    bool undefined = false;
    const double p = safe_ratio(cc.tp, cc.tp + cc.fp, undefined);
    const double r = safe_ratio(cc.tp, cc.tp + cc.fn, undefined);
    out.per_class.push_back(p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0);
    if (undefined) out.undefined_classes.push_back(c);
    tp_all += cc.tp;
    fp_all += cc.fp;
    fn_all += cc.fn;
    ++c;
  }
  out.macro = mean(out.per_class);
  const double denom = tp_all + 0.5 * (fp_all + fn_all);
  out.micro = denom > 0.0 ? tp_all / denom : 0.0;
  return out;
}

PrecRecSpec prec_rec_spec(const ConfusionMatrix& cm) {
  PrecRecSpec out;
  int c = 0;
  for (const auto& cc : class_counts(cm)) {
    bool undefined = false;
    out.precision.push_back(safe_ratio(cc.tp, cc.tp + cc.fp, undefined));
    out.recall.push_back(safe_ratio(cc.tp, cc.tp + cc.fn, undefined));
    out.specificity.push_back(safe_ratio(cc.tn, cc.tn + cc.fp, undefined));
    if (undefined) out.undefined_classes.push_back(c);
    ++c;
  }
  out.precision_macro = mean(out.precision);
  out.recall_macro = mean(out.recall);
  out.specificity_macro = mean(out.specificity);
  return out;
}

std::string MetricsReport::csv_header() {
  return "top1_acc,top2_acc,f1_macro,f1_micro,precision_macro,recall_macro,specificity_macro,qwk,qwk_degenerate";
}

std::string MetricsReport::csv_row() const {
  std::ostringstream os;
  os << format_real(top1_acc) << ',' << format_real(top2_acc) << ',' << format_real(f1_macro) << ','
     << format_real(f1_micro) << ',' << format_real(precision_macro) << ',' << format_real(recall_macro) << ','
     << format_real(specificity_macro) << ',' << format_real(qwk) << ',' << (qwk_degenerate ? 1 : 0);
  return os.str();
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["top1_acc"] = top1_acc;
  j["top2_acc"] = top2_acc;
  j["f1_macro"] = f1_macro;
  j["f1_micro"] = f1_micro;
  j["precision_macro"] = precision_macro;
  j["recall_macro"] = recall_macro;
  j["specificity_macro"] = specificity_macro;
  j["qwk"] = qwk;
  j["qwk_degenerate"] = qwk_degenerate;
  j["undefined_classes"] = undefined_classes;
  return j.dump(2);
}

MetricsReport report(std::span<const std::vector<double>> probs, std::span<const int> truth, int num_classes) {
  if (probs.size() != truth.size()) throw DataError("report: predictions and labels differ in length");
  std::vector<int> pred;
  pred.reserve(probs.size());
  for (const auto& p : probs) {
    if (static_cast<int>(p.size()) != num_classes) throw DataError("report: probability vector has wrong length");
    int best = 0;
    for (int c = 1; c < num_classes; ++c) {
      if (p[static_cast<std::size_t>(c)] > p[static_cast<std::size_t>(best)]) best = c;
    }
    pred.push_back(best);
  }
  MetricsReport r;
  r.confusion = confusion(truth, pred, num_classes);
  r.top1_acc = top_k_accuracy(probs, truth, 1);
  r.top2_acc = top_k_accuracy(probs, truth, std::min(2, num_classes));
  const F1Scores f1 = f1_scores(r.confusion);
  r.f1_macro = f1.macro;
  r.f1_micro = f1.micro;
  const PrecRecSpec prs = prec_rec_spec(r.confusion);
  r.precision_macro = prs.precision_macro;
  r.recall_macro = prs.recall_macro;
  r.specificity_macro = prs.specificity_macro;
  const KappaResult kappa = qwk(r.confusion);
  r.qwk = kappa.value;
  r.qwk_degenerate = kappa.degenerate;
  r.undefined_classes = prs.undefined_classes;
  for (int c : f1.undefined_classes) {
    if (std::find(r.undefined_classes.begin(), r.undefined_classes.end(), c) == r.undefined_classes.end()) {
      r.undefined_classes.push_back(c);
    }
  }
  std::sort(r.undefined_classes.begin(), r.undefined_classes.end());
  return r;
}

}  // namespace cloe::metrics
