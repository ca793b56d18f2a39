#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cloe/core.hpp"
#include "cloe/rng.hpp"

namespace cloe::synth {

/// Parameters of the synthetic ordinal benchmark. Class k renders k+1 bright
/// blobs on a fixed gradient; a fraction quality_mix[k] of each class is
/// degraded, and only degraded samples may have their label moved to an
/// adjacent grade.
struct SynthConfig {
  int num_classes = 4;
  std::vector<int> class_counts{518, 259, 108, 75};
  int height = 32;
  int width = 32;
  int channels = 3;
  std::vector<double> quality_mix{0.5, 0.4, 0.2, 0.1};
  double noise_flip_prob = 0.3;
  std::uint64_t seed = 0;
  std::string id_prefix = "s";
  Split split = Split::Train;

  /// Throws ConfigError on the first violated invariant.
  void validate() const;
};

struct QualityProfile {
  int blur_radius = 0;
  int occluder_count = 0;
  int occluder_size = 0;
};

/// q >= 0.5 means no degradation; below that the blur radius is
/// round(8 (0.5 - q)), occluders number 1 + floor(6 (0.5 - q)) and have side
/// max(2, round(min(H, W) (0.5 - q) / 2)).
QualityProfile quality_profile(double q, int height, int width);

/// Occluder fill, 0.05 snapped to the 8-bit grid so generated images survive
/// a PPM round trip unchanged.
inline constexpr int kOccluderByte = 13;

/// Box blur then dark occluders, evaluated in integer arithmetic on the 8-bit
/// grid. q >= 0.5 returns the input untouched. Occluder centers are drawn
/// before sizes are applied, so for a fixed rng stream lower q only grows
/// the covered rectangles.
ImageTensor degrade_image(const ImageTensor& img, double q, Rng& rng);

/// Clean rendering of class `label` (no degradation); consumes rng for blob
/// placement.
ImageTensor render_clean(int label, int height, int width, int channels, Rng& rng);

Dataset generate_dataset(const SynthConfig& cfg);

/// Blob contrast for class k: 0.3 + 0.2 k, as an 8-bit increment.
int blob_contrast_byte(int k);

}  // namespace cloe::synth
