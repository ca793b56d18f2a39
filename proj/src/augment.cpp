#include "cloe/augment.hpp"

#include <algorithm>
#include <cmath>

namespace cloe::augment {

SoftLabel SoftLabel::one_hot(int label, int num_classes) {
  if (label < 0 || label >= num_classes) throw DataError("label out of range for soft label");
  SoftLabel s;
  s.probs.assign(static_cast<std::size_t>(num_classes), 0.0);
  s.probs[static_cast<std::size_t>(label)] = 1.0;
  return s;
}

SoftLabel SoftLabel::mix(int a, int b, double weight, int num_classes) {
  if (!(weight >= 0.0 && weight <= 1.0)) throw DataError("mixing weight outside [0, 1]");
  if (a == b) return one_hot(a, num_classes);
  SoftLabel s = one_hot(a, num_classes);
  if (b < 0 || b >= num_classes) throw DataError("label out of range for soft label");
  s.probs[static_cast<std::size_t>(a)] = weight;
  s.probs[static_cast<std::size_t>(b)] = 1.0 - weight;
  return s;
}

double SoftLabel::sum() const {
  double t = 0.0;
  for (double p : probs) t += p;
  return t;
}

std::string_view to_string(Kind k) {
  switch (k) {
    case Kind::None: return "none";
    case Kind::MixUp: return "mixup";
    case Kind::CutMix: return "cutmix";
    case Kind::ResizeMix: return "resizemix";
  }
  return "none";
}

Kind parse_kind(std::string_view s) {
  if (s == "none") return Kind::None;
  if (s == "mixup") return Kind::MixUp;
  if (s == "cutmix") return Kind::CutMix;
  if (s == "resizemix") return Kind::ResizeMix;
  throw ConfigError("unknown augmentation '" + std::string(s) + "'");
}

namespace {

void require_pairable(const LabeledBatch& b, const char* who) {
  if (b.images.size() < 2) throw DataError(std::string(who) + ": batch must hold at least 2 images");
  if (b.images.size() != b.labels.size()) throw DataError(std::string(who) + ": images and labels differ in length");
  for (std::size_t i = 1; i < b.images.size(); ++i) {
    if (!b.images[i].same_shape(b.images[0])) throw DataError(std::string(who) + ": images differ in shape");
  }
}

}  // namespace

ImageTensor blend(const ImageTensor& target, const ImageTensor& source, double lambda) {
  if (!target.same_shape(source)) throw DataError("blend: shape mismatch");
  ImageTensor out = target;
  // Double evaluation rounds back exactly to the target when lambda == 1 or
  // when both inputs agree.
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = static_cast<float>(lambda * target.pixels[i] + (1.0 - lambda) * source.pixels[i]);
  }
  return out;
}

Box cutmix_box(int height, int width, double lambda, int cx, int cy) {
  const double r = std::sqrt(std::max(0.0, 1.0 - lambda));
  const int cw = static_cast<int>(std::lround(width * r));
  const int ch = static_cast<int>(std::lround(height * r));
  const int x0 = std::clamp(cx - cw / 2, 0, width);
  const int x1 = std::clamp(cx - cw / 2 + cw, 0, width);
  const int y0 = std::clamp(cy - ch / 2, 0, height);
  const int y1 = std::clamp(cy - ch / 2 + ch, 0, height);
  return {x0, y0, x1 - x0, y1 - y0};
}

ImageTensor paste(const ImageTensor& target, const ImageTensor& source, const Box& box) {
  if (!target.same_shape(source)) throw DataError("paste: shape mismatch");
  ImageTensor out = target;
  for (int c = 0; c < out.channels; ++c) {
    for (int y = box.y0; y < box.y0 + box.h; ++y) {
      for (int x = box.x0; x < box.x0 + box.w; ++x) out.at(c, y, x) = source.at(c, y, x);
    }
  }
  return out;
}

ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw DataError("resize: output must be at least 1x1");
  ImageTensor out(img.channels, out_h, out_w);
  const double sy_scale = static_cast<double>(img.height) / out_h;
  const double sx_scale = static_cast<double>(img.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double sy = std::clamp((y + 0.5) * sy_scale - 0.5, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = sy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double sx = std::clamp((x + 0.5) * sx_scale - 0.5, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = sx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double top = (1.0 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1);
        const double bot = (1.0 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1);
        out.at(c, y, x) = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

ImageTensor crop(const ImageTensor& img, const Box& box) {
  if (box.x0 < 0 || box.y0 < 0 || box.w < 1 || box.h < 1 || box.x0 + box.w > img.width ||
      box.y0 + box.h > img.height) {
    throw DataError("crop: box outside image");
  }
  ImageTensor out(img.channels, box.h, box.w);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < box.h; ++y) {
      for (int x = 0; x < box.w; ++x) out.at(c, y, x) = img.at(c, box.y0 + y, box.x0 + x);
    }
  }
  return out;
}

ImageTensor paste_patch(const ImageTensor& target, const ImageTensor& patch, int x0, int y0) {
  if (patch.channels != target.channels || x0 < 0 || y0 < 0 || x0 + patch.width > target.width ||
      y0 + patch.height > target.height) {
    throw DataError("paste_patch: patch does not fit inside the target");
  }
  ImageTensor out = target;
  for (int c = 0; c < out.channels; ++c) {
    for (int y = 0; y < patch.height; ++y) {
      for (int x = 0; x < patch.width; ++x) out.at(c, y0 + y, x0 + x) = patch.at(c, y, x);
    }
  }
  return out;
}

ImageTensor hflip(const ImageTensor& img) {
  ImageTensor out = img;
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    }
  }
  return out;
}

ImageTensor random_resized_crop(const ImageTensor& img, Rng& rng) {
  const double area = static_cast<double>(img.height) * img.width;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(0.08, 1.0);
    const double ar = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    const int w = static_cast<int>(std::lround(std::sqrt(target * ar)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ar)));
    if (w >= 1 && h >= 1 && w <= img.width && h <= img.height) {
      const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width - w + 1)));
      const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height - h + 1)));
      return resize_bilinear(crop(img, {x0, y0, w, h}), img.height, img.width);
    }
  }
  return img;
}

MixedBatch passthrough(const LabeledBatch& batch) {
  MixedBatch out;
  out.images = batch.images;
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    out.labels.push_back(SoftLabel::one_hot(batch.labels[i], batch.num_classes));
    out.provenance.push_back({i, i, 1.0, 0, 0, 0, 0});
  }
  return out;
}

MixedBatch mixup(const LabeledBatch& batch, double alpha, Rng& rng) {
  require_pairable(batch, "mixup");
  if (!(alpha > 0.0)) throw ConfigError("mixup: alpha must be positive");
  const auto perm = rng.permutation(batch.images.size());
  MixedBatch out;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const std::size_t j = perm[i];
    const double lambda = rng.beta(alpha, alpha);
    out.images.push_back(blend(batch.images[i], batch.images[j], lambda));
    out.labels.push_back(SoftLabel::mix(batch.labels[i], batch.labels[j], lambda, batch.num_classes));
    out.provenance.push_back({i, j, lambda, 0, 0, 0, 0});
  }
  return out;
}

MixedBatch cutmix(const LabeledBatch& batch, double alpha, Rng& rng) {
  require_pairable(batch, "cutmix");
  if (!(alpha > 0.0)) throw ConfigError("cutmix: alpha must be positive");
  const auto perm = rng.permutation(batch.images.size());
  MixedBatch out;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const std::size_t j = perm[i];
    const ImageTensor& t = batch.images[i];
    const double lambda = rng.beta(alpha, alpha);
    const int cx = static_cast<int>(rng.below(static_cast<std::uint64_t>(t.width)));
    const int cy = static_cast<int>(rng.below(static_cast<std::uint64_t>(t.height)));
    const Box box = cutmix_box(t.height, t.width, lambda, cx, cy);
    // Label weight follows the pixels actually pasted, after clipping.
    const double kept = 1.0 - static_cast<double>(box.area()) / (static_cast<double>(t.height) * t.width);
    out.images.push_back(paste(t, batch.images[j], box));
    out.labels.push_back(SoftLabel::mix(batch.labels[i], batch.labels[j], kept, batch.num_classes));
    out.provenance.push_back({i, j, kept, box.x0, box.y0, box.w, box.h});
  }
  return out;
}

MixedBatch resizemix(const LabeledBatch& batch, double scale_lo, double scale_hi, Rng& rng,
                     bool resize_source_region) {
  require_pairable(batch, "resizemix");
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi && scale_hi < 1.0)) {
    throw ConfigError("resizemix: need 0 < scale_lo <= scale_hi < 1");
  }
  const auto perm = rng.permutation(batch.images.size());
  MixedBatch out;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const std::size_t j = perm[i];
    const ImageTensor& t = batch.images[i];
    const ImageTensor& s = batch.images[j];
    const double scale = rng.uniform(scale_lo, scale_hi);
    const int ph = static_cast<int>(std::lround(scale * t.height));
    const int pw = static_cast<int>(std::lround(scale * t.width));
    if (ph < 1 || pw < 1) throw DataError("resizemix: scaled patch is smaller than 1x1");

    ImageTensor src = s;
    if (resize_source_region) {
      const double u = rng.uniform(scale, 1.0);
      const int rw = std::clamp(static_cast<int>(std::lround(u * s.width)), 1, s.width);
      const int rh = std::clamp(static_cast<int>(std::lround(u * s.height)), 1, s.height);
      const int rx = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.width - rw + 1)));
      const int ry = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.height - rh + 1)));
      src = crop(s, {rx, ry, rw, rh});
    }
    const ImageTensor patch = resize_bilinear(src, ph, pw);
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(t.width - pw + 1)));
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(t.height - ph + 1)));
    const double src_share = static_cast<double>(ph) * pw / (static_cast<double>(t.height) * t.width);
    out.images.push_back(paste_patch(t, patch, x0, y0));
    out.labels.push_back(SoftLabel::mix(batch.labels[i], batch.labels[j], 1.0 - src_share, batch.num_classes));
    out.provenance.push_back({i, j, 1.0 - src_share, x0, y0, pw, ph});
  }
  return out;
}

MixedBatch apply(const LabeledBatch& batch, const AugmentConfig& cfg, Rng& rng) {
  if (cfg.kind == Kind::None || batch.images.size() < 2) return passthrough(batch);
  switch (cfg.kind) {
    case Kind::MixUp: return mixup(batch, cfg.mixup_alpha, rng);
    case Kind::CutMix: return cutmix(batch, cfg.cutmix_alpha, rng);
    case Kind::ResizeMix:
      return resizemix(batch, cfg.resizemix_scale_lo, cfg.resizemix_scale_hi, rng, cfg.resize_source_region);
    case Kind::None: break;
  }
  return passthrough(batch);
}

}  // namespace cloe::augment
