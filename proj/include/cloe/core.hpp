#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cloe {

// Error hierarchy. Every failure surfaced by the library derives from Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration or arguments (CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data; carries the byte offset or row number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t location)
      : Error(what), location_(location) {}
  std::size_t location() const { return location_; }

 private:
  std::size_t location_;
};

/// Any other data or shape problem detected at runtime.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Ordinal class index in [0, num_classes).
struct OrdinalLabel {
  int value = 0;
  int num_classes = 2;

  bool valid() const { return num_classes >= 2 && value >= 0 && value < num_classes; }
};

/// Channel-planar image, pixels in [0, 1].
struct ImageTensor {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  ImageTensor() = default;
  ImageTensor(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w),
        pixels(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const { return pixels.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  float& at(int c, int y, int x) { return pixels[(c * plane()) + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const { return pixels[(c * plane()) + static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(const ImageTensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool operator==(const ImageTensor&) const = default;
};

enum class Split { Train, Val, Test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct Sample {
  std::string id;
  ImageTensor image;
  int label = 0;
  // Synthetic ground truth; both absent for real data.
  std::optional<double> true_quality;
  std::optional<bool> label_was_flipped;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  int num_classes = 2;
  Split split = Split::Train;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  bool operator==(const Dataset&) const = default;
};

struct Violation {
  std::string sample_id;
  std::string rule;
};

/// Checks every type invariant; an empty result means the dataset is well-formed.
std::vector<Violation> validate_dataset(const Dataset& ds);

/// Per-class sample counts, length num_classes. Labels out of range are ignored.
std::vector<std::size_t> class_histogram(const Dataset& ds);

/// Stratified split: for every class, round-half-up(frac * count) samples go to
/// validation, chosen by a seeded shuffle; both outputs keep manifest order.
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double frac, std::uint64_t seed);

/// Index of samples by id, for subset selection.
Dataset select(const Dataset& ds, const std::vector<std::string>& ids);

std::vector<std::string> ids_of(const Dataset& ds);

/// Shortest decimal text that parses back to the same double.
std::string format_real(double v);

}  // namespace cloe
