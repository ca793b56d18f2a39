#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cloe/core.hpp"
#include "cloe/rng.hpp"

namespace cloe::augment {

/// Probability vector over K classes.
struct SoftLabel {
  std::vector<double> probs;

  static SoftLabel one_hot(int label, int num_classes);
  /// weight * onehot(a) + (1 - weight) * onehot(b).
  static SoftLabel mix(int a, int b, double weight, int num_classes);
  double sum() const;
};

/// Where a mixed item came from. target_weight is the label mass kept by the
/// target (lambda for MixUp, lambda* for CutMix, 1 - lambda_src for
/// ResizeMix). For the two paste-based methods the pasted rectangle is
/// [x0, x0+w) x [y0, y0+h) in target coordinates; it is empty for MixUp.
struct Provenance {
  std::size_t target_idx = 0;
  std::size_t source_idx = 0;
  double target_weight = 1.0;
  int x0 = 0, y0 = 0, w = 0, h = 0;
};

struct MixedBatch {
  std::vector<ImageTensor> images;
  std::vector<SoftLabel> labels;
  std::vector<Provenance> provenance;
};

/// Input to the mixing operations: hard labels plus images.
struct LabeledBatch {
  std::vector<ImageTensor> images;
  std::vector<int> labels;
  int num_classes = 2;
};

enum class Kind { None, MixUp, CutMix, ResizeMix };

std::string_view to_string(Kind k);
Kind parse_kind(std::string_view s);

struct AugmentConfig {
  Kind kind = Kind::None;
  double mixup_alpha = 0.2;
  double cutmix_alpha = 1.0;
  double resizemix_scale_lo = 0.1;
  double resizemix_scale_hi = 0.8;
  // Crop a random region of the source before resizing, instead of the whole image.
  bool resize_source_region = false;
  // Plain per-sample transforms applied before mixing.
  bool hflip = false;
  bool random_resized_crop = false;
};

MixedBatch mixup(const LabeledBatch& batch, double alpha, Rng& rng);
MixedBatch cutmix(const LabeledBatch& batch, double alpha, Rng& rng);
MixedBatch resizemix(const LabeledBatch& batch, double scale_lo, double scale_hi, Rng& rng,
                     bool resize_source_region = false);

/// No mixing: one-hot labels, identity provenance.
MixedBatch passthrough(const LabeledBatch& batch);

/// Dispatches on cfg.kind; batches smaller than 2 pass through unmixed.
MixedBatch apply(const LabeledBatch& batch, const AugmentConfig& cfg, Rng& rng);

// Single-pair building blocks with every random choice made explicit.

/// lambda * target + (1 - lambda) * source, pixelwise.
ImageTensor blend(const ImageTensor& target, const ImageTensor& source, double lambda);

struct Box {
  int x0 = 0, y0 = 0, w = 0, h = 0;
  long area() const { return static_cast<long>(w) * h; }
};

/// CutMix box: sides round(W sqrt(1 - lambda)) x round(H sqrt(1 - lambda))
/// centered on (cx, cy), clipped to the image.
Box cutmix_box(int height, int width, double lambda, int cx, int cy);

/// Copy source pixels inside box into target.
ImageTensor paste(const ImageTensor& target, const ImageTensor& source, const Box& box);

/// Bilinear resize with half-pixel centers and edge clamping.
ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w);

/// Sub-image [x0, x0+w) x [y0, y0+h).
ImageTensor crop(const ImageTensor& img, const Box& box);

/// Place `patch` with its top-left corner at (x0, y0); must lie fully inside.
ImageTensor paste_patch(const ImageTensor& target, const ImageTensor& patch, int x0, int y0);

ImageTensor hflip(const ImageTensor& img);

/// Random crop of 8%..100% area, aspect 3/4..4/3, resized back to the input size.
ImageTensor random_resized_crop(const ImageTensor& img, Rng& rng);

}  // namespace cloe::augment
