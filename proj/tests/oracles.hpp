#pragma once
// Reference implementations used only by tests. Each one takes a different
// route to the same quantity than the library code it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cloe/augment.hpp"
#include "cloe/core.hpp"
#include "cloe/metrics.hpp"
#include "cloe/nn.hpp"
#include "cloe/rng.hpp"

namespace oracle {

/// Kappa from per-sample label lists: observed mean squared disagreement over
/// matched pairs against the mean over every (truth, prediction) cross pair.
/// The (K-1)^2 normalization cancels in the ratio.
inline double qwk_pairs(const cloe::metrics::ConfusionMatrix& cm) {
  std::vector<int> truth, pred;
  for (int i = 0; i < cm.num_classes(); ++i) {
    for (int j = 0; j < cm.num_classes(); ++j) {
      for (std::uint64_t c = 0; c < cm.at(i, j); ++c) {
        truth.push_back(i);
        pred.push_back(j);
      }
    }
  }
  const auto n = static_cast<long double>(truth.size());
  long double observed = 0;
  for (std::size_t a = 0; a < truth.size(); ++a) observed += (long double)(truth[a] - pred[a]) * (truth[a] - pred[a]);
  long double expected = 0;
  for (int t : truth) {
    for (int p : pred) expected += (long double)(t - p) * (t - p);
  }
  observed /= n;
  expected /= n * n;
  return static_cast<double>(1.0L - observed / expected);
}

inline cloe::metrics::ConfusionMatrix random_confusion(cloe::Rng& rng, int k, int max_count) {
  cloe::metrics::ConfusionMatrix cm(k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) cm.at(i, j) = rng.below(static_cast<std::uint64_t>(max_count) + 1);
  }
  return cm;
}

inline cloe::ImageTensor random_image(cloe::Rng& rng, int c, int h, int w) {
  cloe::ImageTensor img(c, h, w);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

/// Soft-target cross-entropy written directly from its definition.
inline double ce_loss(const std::vector<double>& logits, const std::vector<double>& targets, int k) {
  const std::size_t n = logits.size() / static_cast<std::size_t>(k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(logits[i * k + j]);
    for (int j = 0; j < k; ++j) total -= targets[i * k + j] * (logits[i * k + j] - std::log(z));
  }
  return total / static_cast<double>(n);
}

struct GradCheck {
  double worst_rel = 0.0;
  std::size_t checked = 0;
  std::size_t failed = 0;
  std::size_t kinks = 0;
};

/// Central differences on `per_array` random coordinates of each parameter
/// array. Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradients(std::uint64_t seed, int per_array, double h = 1e-4, double tol = 1e-4,
                                 double floor = 1e-7) {
  using namespace cloe;
  Rng rng(seed);
  nn::ModelShape shape;
  shape.channels = 3;
  shape.height = 8;
  shape.width = 8;
  shape.num_classes = 3;
  auto model = nn::init_model<double>(shape, rng.next());
  // Non-zero biases so every path is exercised.
  for (auto* b : {&model.conv1_b, &model.conv2_b, &model.fc_b}) {
    for (auto& v : *b) v = rng.uniform(-0.1, 0.1);
  }
  const std::size_t batch = 3;
  std::vector<ImageTensor> images;
  std::vector<double> targets;
  for (std::size_t i = 0; i < batch; ++i) {
    images.push_back(random_image(rng, 3, 8, 8));
    std::vector<double> t(3);
    double s = 0;
    for (auto& v : t) s += (v = rng.uniform(0.05, 1.0));
    for (auto& v : t) targets.push_back(v / s);
  }
  auto loss_of = [&](const nn::Params<double>& m) {
    const auto fp = nn::forward(m, std::span<const ImageTensor>(images));
    return oracle::ce_loss(fp.logits, targets, 3);
  };
  const auto fp = nn::forward(model, std::span<const ImageTensor>(images));
  const auto lr = nn::loss_ce_soft(fp.logits, targets, 3);
  const auto grads = nn::backward(model, fp, std::span<const double>(lr.dlogits));

  GradCheck out;
  auto g_arrays = grads.arrays();
  auto central = [&](std::size_t a, std::size_t idx, double step) {
    auto plus = model, minus = model;
    plus.arrays()[a][idx] += step;
    minus.arrays()[a][idx] -= step;
    return (loss_of(plus) - loss_of(minus)) / (2 * step);
  };
  for (std::size_t a = 0; a < nn::kNumArrays; ++a) {
    const std::size_t len = model.arrays()[a].size();
    for (int r = 0; r < per_array;) {
      const std::size_t idx = rng.below(len);
      const double numeric = central(a, idx, h);
      // Where the perturbation crosses a ReLU or max-pool switch the loss is
      // not differentiable and differences at h and h/2 disagree well beyond
      // the O(h^2) truncation error. Such points are drawn again. A wrong
      // analytic gradient still fails, since both steps agree with each other.
      const double half = central(a, idx, h / 2);
      if (std::abs(numeric - half) > 0.1 * tol * std::max({std::abs(numeric), std::abs(half), floor})) {
        ++out.kinks;
        continue;
      }
      ++r;
      const double analytic = g_arrays[a][idx];
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      out.worst_rel = std::max(out.worst_rel, rel);
      ++out.checked;
      if (rel >= tol) ++out.failed;
    }
  }
  return out;
}

/// Batch whose image i has every pixel inside its own band
/// [(i + 0.1) / B, (i + 0.9) / B], so any output pixel can be traced to the
/// image it came from. Bilinear blends of one image stay inside its band.
inline cloe::augment::LabeledBatch banded_batch(cloe::Rng& rng, std::size_t b, int h, int w, int k) {
  cloe::augment::LabeledBatch batch;
  batch.num_classes = k;
  const double width = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    cloe::ImageTensor img(3, h, w);
    for (auto& p : img.pixels) p = static_cast<float>(width * (static_cast<double>(i) + 0.1 + 0.8 * rng.uniform()));
    batch.images.push_back(std::move(img));
    batch.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(k))));
  }
  return batch;
}

inline std::size_t band_of(float v, std::size_t b) {
  return std::min(b - 1, static_cast<std::size_t>(static_cast<double>(v) * static_cast<double>(b)));
}

struct MixStats {
  std::size_t mixes = 0;
  std::size_t simplex_failures = 0;
  std::size_t area_failures = 0;
  std::size_t outside_failures = 0;
  std::size_t label_failures = 0;
  double worst_simplex_error = 0.0;
};

/// Checks every item of a mixed batch against the banded input.
inline void check_mixed_batch(const cloe::augment::LabeledBatch& in, const cloe::augment::MixedBatch& out,
                              cloe::augment::Kind kind, MixStats& st) {
  using cloe::augment::Kind;
  const std::size_t b = in.images.size();
  for (std::size_t n = 0; n < out.images.size(); ++n) {
    ++st.mixes;
    const auto& pv = out.provenance[n];
    const auto& lab = out.labels[n].probs;
    const int yt = in.labels[pv.target_idx], ys = in.labels[pv.source_idx];

    double sum = 0.0;
    bool ok = lab.size() == static_cast<std::size_t>(in.num_classes);
    for (std::size_t c = 0; c < lab.size(); ++c) {
      sum += lab[c];
      if (lab[c] < 0.0) ok = false;
      if (lab[c] != 0.0 && static_cast<int>(c) != yt && static_cast<int>(c) != ys) ok = false;
    }
    st.worst_simplex_error = std::max(st.worst_simplex_error, std::abs(sum - 1.0));
    if (!ok || std::abs(sum - 1.0) > 1e-9) ++st.simplex_failures;
    if (yt != ys && std::abs(lab[yt] - pv.target_weight) > 1e-12) ++st.label_failures;

    const auto& t = in.images[pv.target_idx];
    const auto& img = out.images[n];
    if (kind == Kind::MixUp) {
      for (std::size_t i = 0; i < img.size(); ++i) {
        const double want = pv.target_weight * t.pixels[i] +
                            (1.0 - pv.target_weight) * in.images[pv.source_idx].pixels[i];
        if (std::abs(img.pixels[i] - want) > 1e-6) {
          ++st.outside_failures;
          break;
        }
      }
      continue;
    }

    std::size_t pasted = 0;
    bool outside_ok = true, inside_ok = true;
    for (int c = 0; c < img.channels; ++c) {
      for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
          const bool in_box = x >= pv.x0 && x < pv.x0 + pv.w && y >= pv.y0 && y < pv.y0 + pv.h;
          const float v = img.at(c, y, x);
          if (!in_box) {
            if (v != t.at(c, y, x)) outside_ok = false;
            continue;
          }
          if (band_of(v, b) != pv.source_idx) inside_ok = false;
          if (c == 0 && band_of(v, b) != pv.target_idx) ++pasted;
        }
      }
    }
    if (!outside_ok) ++st.outside_failures;
    if (pv.source_idx == pv.target_idx) pasted = static_cast<std::size_t>(pv.w) * pv.h;
    const double total = static_cast<double>(img.height) * img.width;
    const double counted = 1.0 - static_cast<double>(pasted) / total;
    if (!inside_ok || counted != pv.target_weight) ++st.area_failures;
  }
}

}  // namespace oracle
