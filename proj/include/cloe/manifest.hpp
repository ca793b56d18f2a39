#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cloe/core.hpp"

namespace cloe::manifest {

inline constexpr const char* kFileName = "manifest.csv";

/// Writes every dataset's images to <dir>/images/<id>.ppm and one CSV
/// `id,path,label,split` (plus `true_quality,label_was_flipped` when the data
/// is synthetic) to <dir>/manifest.csv. Returns the manifest path.
std::filesystem::path write(std::span<const Dataset> datasets, const std::filesystem::path& dir);
std::filesystem::path write(const Dataset& ds, const std::filesystem::path& dir);

struct ReadOptions {
  /// Defaults to max(label) + 1 over the whole file (at least 2).
  std::optional<int> num_classes;
  /// Keep only rows of this split. Without a filter the file must hold one split.
  std::optional<Split> only;
};

/// Row numbers in errors are 1-based and count the header as row 1.
Dataset read(const std::filesystem::path& path, const ReadOptions& opts = {});

/// Every split present in the file, in train/val/test order, sharing one K.
std::vector<Dataset> read_all(const std::filesystem::path& path, std::optional<int> num_classes = {});

}  // namespace cloe::manifest
