#include "cloe/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cloe/ppm.hpp"

namespace cloe::synth {

namespace {

constexpr int kMinSide = 16;

// Working image on the 8-bit grid, channel-planar like ImageTensor.
struct ByteImage {
  int c, h, w;
  std::vector<int> v;
  int& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  int at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
};

ByteImage to_bytes(const ImageTensor& img) {
  ByteImage b{img.channels, img.height, img.width, std::vector<int>(img.size())};
  for (std::size_t i = 0; i < img.size(); ++i) b.v[i] = ppm::quantize(img.pixels[i]);
  return b;
}

ImageTensor from_bytes(const ByteImage& b) {
  ImageTensor img(b.c, b.h, b.w);
  for (std::size_t i = 0; i < b.v.size(); ++i) img.pixels[i] = static_cast<float>(b.v[i]) / 255.0f;
  return img;
}

// Separable box blur; the window is clipped at the border and each pass
// rounds its integer mean half up.
void box_blur(ByteImage& img, int r) {
  if (r <= 0) return;
  std::vector<int> tmp(img.v.size());
  for (int ch = 0; ch < img.c; ++ch) {
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) {
        const int x0 = std::max(0, x - r), x1 = std::min(img.w - 1, x + r);
        int sum = 0;
        for (int xx = x0; xx <= x1; ++xx) sum += img.at(ch, y, xx);
        const int n = x1 - x0 + 1;
        tmp[(static_cast<std::size_t>(ch) * img.h + y) * img.w + x] = (2 * sum + n) / (2 * n);
      }
    }
  }
  for (int ch = 0; ch < img.c; ++ch) {
    for (int y = 0; y < img.h; ++y) {
      const int y0 = std::max(0, y - r), y1 = std::min(img.h - 1, y + r);
      const int n = y1 - y0 + 1;
      for (int x = 0; x < img.w; ++x) {
        int sum = 0;
        for (int yy = y0; yy <= y1; ++yy) sum += tmp[(static_cast<std::size_t>(ch) * img.h + yy) * img.w + x];
        img.at(ch, y, x) = (2 * sum + n) / (2 * n);
      }
    }
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (num_classes < 2) throw ConfigError("synth: num_classes must be >= 2");
  if (static_cast<int>(class_counts.size()) != num_classes) {
    throw ConfigError("synth: class_counts must have num_classes entries");
  }
  if (static_cast<int>(quality_mix.size()) != num_classes) {
    throw ConfigError("synth: quality_mix must have num_classes entries");
  }
  for (int c : class_counts) {
    if (c < 1) throw ConfigError("synth: every class count must be >= 1");
  }
  for (double m : quality_mix) {
    if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("synth: quality_mix entries must lie in [0, 1]");
  }
  if (!(noise_flip_prob >= 0.0 && noise_flip_prob <= 1.0)) {
    throw ConfigError("synth: noise_flip_prob must lie in [0, 1]");
  }
  if (channels != 3) throw ConfigError("synth: only 3-channel images are generated");
  if (height < kMinSide || width < kMinSide) {
    throw ConfigError("synth: images must be at least 16x16 to place blobs");
  }
}

QualityProfile quality_profile(double q, int height, int width) {
  QualityProfile p;
  if (q >= 0.5) return p;
  const double d = 0.5 - q;
  p.blur_radius = static_cast<int>(std::lround(4.0 * d * 2.0));
  p.occluder_count = 1 + static_cast<int>(std::floor(6.0 * d));
  p.occluder_size = std::max(2, static_cast<int>(std::lround(std::min(height, width) * d / 2.0)));
  return p;
}

int blob_contrast_byte(int k) {
  // round(255 * (0.3 + 0.2 k)) without floating point.
  return (255 * (3 + 2 * k) * 2 + 10) / 20;
}

ImageTensor degrade_image(const ImageTensor& img, double q, Rng& rng) {
  if (q >= 0.5) return img;
  const QualityProfile prof = quality_profile(q, img.height, img.width);
  ByteImage b = to_bytes(img);
  box_blur(b, prof.blur_radius);
  for (int i = 0; i < prof.occluder_count; ++i) {
    const int cx = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width)));
    const int cy = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height)));
    const int half = prof.occluder_size / 2;
    const int x0 = std::max(0, cx - half), x1 = std::min(img.width, cx - half + prof.occluder_size);
    const int y0 = std::max(0, cy - half), y1 = std::min(img.height, cy - half + prof.occluder_size);
    for (int ch = 0; ch < b.c; ++ch) {
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) b.at(ch, y, x) = kOccluderByte;
      }
    }
  }
  return from_bytes(b);
}

ImageTensor render_clean(int label, int height, int width, int channels, Rng& rng) {
  if (height < kMinSide || width < kMinSide) {
    throw ConfigError("synth: images must be at least 16x16 to place blobs");
  }
  ByteImage b{channels, height, width, std::vector<int>(static_cast<std::size_t>(channels) * height * width)};
  // Reddish diagonal gradient, identical for every sample.
  static constexpr int kBase[3] = {90, 50, 45};
  static constexpr int kSlope[3] = {40, 20, 20};
  const int span = height + width - 2;
  for (int ch = 0; ch < channels; ++ch) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        b.at(ch, y, x) = kBase[ch % 3] + kSlope[ch % 3] * (x + y) / span;
      }
    }
  }

  const int side = std::min(height, width);
  const int rmin = std::max(2, side / 16);
  const int rmax = std::max(rmin, side / 8);
  const int boost = blob_contrast_byte(label);
  std::vector<char> mask(static_cast<std::size_t>(height) * width, 0);
  for (int n = 0; n <= label; ++n) {
    const int ax = rmin + static_cast<int>(rng.below(static_cast<std::uint64_t>(rmax - rmin + 1)));
    const int ay = rmin + static_cast<int>(rng.below(static_cast<std::uint64_t>(rmax - rmin + 1)));
    const int cx = ax + static_cast<int>(rng.below(static_cast<std::uint64_t>(width - 2 * ax)));
    const int cy = ay + static_cast<int>(rng.below(static_cast<std::uint64_t>(height - 2 * ay)));
    const long a2 = static_cast<long>(ax) * ax, b2 = static_cast<long>(ay) * ay;
    for (int y = cy - ay; y <= cy + ay; ++y) {
      for (int x = cx - ax; x <= cx + ax; ++x) {
        const long dx = x - cx, dy = y - cy;
        if (dx * dx * b2 + dy * dy * a2 <= a2 * b2) mask[static_cast<std::size_t>(y) * width + x] = 1;
      }
    }
  }
  for (int ch = 0; ch < channels; ++ch) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if (mask[static_cast<std::size_t>(y) * width + x]) b.at(ch, y, x) = std::min(255, b.at(ch, y, x) + boost);
      }
    }
  }
  return from_bytes(b);
}

Dataset generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  std::vector<int> labels;
  for (int k = 0; k < cfg.num_classes; ++k) labels.insert(labels.end(), static_cast<std::size_t>(cfg.class_counts[k]), k);
  rng.shuffle(labels);

  Dataset ds{{}, cfg.num_classes, cfg.split};
  ds.samples.reserve(labels.size());
  char buf[32];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int k = labels[i];
    Sample s;
    std::snprintf(buf, sizeof buf, "%06zu", i);
    s.id = cfg.id_prefix + buf;

    const bool low = rng.bernoulli(cfg.quality_mix[static_cast<std::size_t>(k)]);
    const double u = rng.uniform();
    const double q = low ? 0.5 * u : 1.0 - 0.5 * u;
    s.true_quality = q;

    ImageTensor clean = render_clean(k, cfg.height, cfg.width, cfg.channels, rng);
    s.image = degrade_image(clean, q, rng);

    s.label = k;
    s.label_was_flipped = false;
    if (q < 0.5 && rng.bernoulli(cfg.noise_flip_prob)) {
      const bool up = rng.bernoulli(0.5);
      // At the ends of the scale the only neighbour is taken.
      if (k == 0) {
        s.label = 1;
      } else if (k == cfg.num_classes - 1) {
        s.label = k - 1;
      } else {
        s.label = up ? k + 1 : k - 1;
      }
      s.label_was_flipped = true;
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace cloe::synth
