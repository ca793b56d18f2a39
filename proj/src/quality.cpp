#include "cloe/quality.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "cloe/rng.hpp"

namespace cloe::quality {

std::string_view to_string(QualityLabel q) { return q == QualityLabel::Clean ? "clean" : "noisy"; }

Dataset make_quality_training_set(const Dataset& ds) {
  const bool has_truth =
      !ds.samples.empty() &&
      std::all_of(ds.samples.begin(), ds.samples.end(), [](const Sample& s) { return s.true_quality.has_value(); });
  Dataset out{{}, 2, ds.split};
  out.samples.reserve(ds.samples.size());
  if (has_truth) {
    for (const auto& s : ds.samples) {
      Sample q = s;
      q.label = *s.true_quality >= 0.5 ? kCleanIndex : kNoisyIndex;
      out.samples.push_back(std::move(q));
    }
    return out;
  }
  if (ds.num_classes == 2 && !ds.samples.empty()) {
    for (const auto& s : ds.samples) {
      if (s.label != kCleanIndex && s.label != kNoisyIndex) {
        throw DataError("quality labels must be 0 (clean) or 1 (noisy); sample " + s.id);
      }
    }
    out.samples = ds.samples;
    return out;
  }
  throw DataError("quality training needs true_quality ground truth or explicit binary clean/noisy labels");
}

QualityCounts count_quality_labels(const Dataset& binary) {
  QualityCounts c;
  for (const auto& s : binary.samples) (s.label == kCleanIndex ? c.clean : c.noisy)++;
  return c;
}

double auc(std::span<const double> scores, std::span<const int> positive) {
  if (scores.size() != positive.size()) throw DataError("auc: length mismatch");
  // Rank-sum form with average ranks for ties.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (positive[order[t]]) rank_sum += avg_rank;
    }
    i = j;
  }
  for (int p : positive) n_pos += p ? 1 : 0;
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return 0.5;
  const double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ScorerResult train_quality_scorer(const Dataset& train, const Dataset& val, const ScorerHyper& hyper) {
  if (train.num_classes != 2 || val.num_classes != 2) throw DataError("quality scorer needs binary-labeled data");
  if (train.empty()) throw DataError("quality scorer: empty training set");
  const ImageTensor& first = train.samples.front().image;
  nn::ModelShape shape;
  shape.channels = first.channels;
  shape.height = first.height;
  shape.width = first.width;
  shape.num_classes = 2;

  ScorerResult res;
  res.model = nn::init_model<float>(shape, hyper.seed);
  nn::OptimState optim = nn::OptimState::for_model(res.model, hyper.momentum, hyper.weight_decay);
  nn::TrainOptions opts;
  opts.batch_size = hyper.batch_size;
  opts.base_lr = hyper.base_lr;
  opts.schedule = hyper.schedule;
  opts.seed = mix_seed(hyper.seed, 0x9a1);
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (int e = 0; e < hyper.epochs; ++e) {
    res.epoch_loss.push_back(nn::train_epoch(res.model, optim, idx, train, opts, e).mean_loss);
  }

  if (!val.empty()) {
    const nn::Evaluation ev = nn::evaluate(res.model, val);
    res.val_accuracy = nn::accuracy(ev, val);
    std::vector<double> s;
    std::vector<int> pos;
    for (std::size_t i = 0; i < val.size(); ++i) {
      s.push_back(ev.probs[i][kCleanIndex]);
      pos.push_back(val.samples[i].label == kCleanIndex ? 1 : 0);
    }
    res.val_auc = auc(s, pos);
  }
  return res;
}

double score(const nn::TinyCNN& model, const ImageTensor& img) {
  if (model.shape.num_classes != 2) throw DataError("quality model must have exactly 2 outputs");
  nn::check_input(model.shape, img);
  const auto fp = nn::forward(model, std::span<const ImageTensor>(&img, 1));
  const std::vector<double> z(fp.logits.begin(), fp.logits.end());
  return nn::softmax(z)[kCleanIndex];
}

CleanlinessScore score(const nn::TinyCNN& model, const Sample& sample) { return {sample.id, score(model, sample.image)}; }

std::vector<CleanlinessScore> score_all(const nn::TinyCNN& model, const Dataset& ds) {
  if (model.shape.num_classes != 2) throw DataError("quality model must have exactly 2 outputs");
  const nn::Evaluation ev = nn::evaluate(model, ds);
  std::vector<CleanlinessScore> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back({ds.samples[i].id, ev.probs[i][kCleanIndex]});
  return out;
}

QualityLabel pseudo_label(double s, double tau) { return s >= tau ? QualityLabel::Clean : QualityLabel::Noisy; }

std::vector<ClassQuality> quality_distribution_by_class(const Dataset& ds, std::span<const CleanlinessScore> scores,
                                                        double tau) {
  std::unordered_map<std::string_view, double> by_id;
  for (const auto& sc : scores) by_id.emplace(sc.sample_id, sc.s);
  std::vector<ClassQuality> out(static_cast<std::size_t>(ds.num_classes));
  for (const auto& s : ds.samples) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) throw DataError("no cleanliness score for sample '" + s.id + "'");
    if (s.label < 0 || s.label >= ds.num_classes) throw DataError("label out of range for sample '" + s.id + "'");
    auto& cq = out[static_cast<std::size_t>(s.label)];
    (pseudo_label(it->second, tau) == QualityLabel::Clean ? cq.clean : cq.noisy)++;
  }
  return out;
}

std::string scores_csv(std::span<const CleanlinessScore> scores, double tau) {
  std::ostringstream os;
  os << "id,s,pseudo_label\n";
  for (const auto& sc : scores) {
    os << sc.sample_id << ',' << format_real(sc.s) << ',' << to_string(pseudo_label(sc.s, tau)) << '\n';
  }
  return os.str();
}

}  // namespace cloe::quality
