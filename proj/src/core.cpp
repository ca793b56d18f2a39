#include "cloe/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "cloe/rng.hpp"

namespace cloe {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(s) + "'");
}

std::vector<Violation> validate_dataset(const Dataset& ds) {
  std::vector<Violation> out;
  if (ds.num_classes < 2) {
    out.push_back({"", "num_classes must be >= 2"});
  }
  std::unordered_set<std::string> seen;
  std::size_t with_quality = 0;
  std::size_t with_flip = 0;
  for (const auto& s : ds.samples) {
    if (!seen.insert(s.id).second) {
      out.push_back({s.id, "duplicate id"});
    }
    if (s.label < 0 || s.label >= ds.num_classes) {
      out.push_back({s.id, "label " + std::to_string(s.label) + " outside [0, " +
                               std::to_string(ds.num_classes - 1) + "]"});
    }
    const auto& img = s.image;
    if (img.channels <= 0 || img.height <= 0 || img.width <= 0 ||
        img.pixels.size() != static_cast<std::size_t>(img.channels) * img.height * img.width) {
      out.push_back({s.id, "pixel count does not match channels*height*width"});
    } else if (std::any_of(img.pixels.begin(), img.pixels.end(),
                           [](float p) { return !(p >= 0.0f && p <= 1.0f); })) {
      out.push_back({s.id, "pixel value outside [0, 1]"});
    }
    if (s.true_quality) {
      ++with_quality;
      if (!(*s.true_quality >= 0.0 && *s.true_quality <= 1.0)) {
        out.push_back({s.id, "true_quality outside [0, 1]"});
      }
    }
    if (s.label_was_flipped) ++with_flip;
  }
  // Ground-truth fields are all-or-nothing: present iff the dataset is synthetic.
  const bool synthetic = with_quality > 0 || with_flip > 0;
  if (synthetic) {
    for (const auto& s : ds.samples) {
      if (!s.true_quality || !s.label_was_flipped) {
        out.push_back({s.id, "synthetic ground-truth fields missing"});
      }
    }
  }
  return out;
}

std::vector<std::size_t> class_histogram(const Dataset& ds) {
  std::vector<std::size_t> h(static_cast<std::size_t>(std::max(ds.num_classes, 0)), 0);
  for (const auto& s : ds.samples) {
    if (s.label >= 0 && s.label < ds.num_classes) ++h[static_cast<std::size_t>(s.label)];
  }
  return h;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double frac, std::uint64_t seed) {
  if (!(frac > 0.0 && frac < 1.0)) {
    throw ConfigError("split_train_val: fraction must lie in (0, 1)");
  }
  if (ds.split != Split::Train) {
    throw DataError("split_train_val: input must be a train split");
  }
  const int k = ds.num_classes;
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const int y = ds.samples[i].label;
    if (y < 0 || y >= k) throw DataError("split_train_val: label out of range for " + ds.samples[i].id);
    members[static_cast<std::size_t>(y)].push_back(i);
  }

  Rng rng(seed);
  std::vector<char> to_val(ds.samples.size(), 0);
  for (int c = 0; c < k; ++c) {
    auto& idx = members[static_cast<std::size_t>(c)];
    if (idx.empty()) continue;
    if (idx.size() < 2) {
      throw DataError("split_train_val: class " + std::to_string(c) +
                      " has fewer than 2 samples");
    }
    // Round half up; the epsilon absorbs binary error in frac*count (0.1*745 = 74.5).
    const auto n_val = static_cast<std::size_t>(
        std::floor(frac * static_cast<double>(idx.size()) + 0.5 + 1e-9));
    Rng class_rng = rng.fork(static_cast<std::uint64_t>(c));
    class_rng.shuffle(idx);
    for (std::size_t j = 0; j < n_val && j < idx.size(); ++j) to_val[idx[j]] = 1;
  }

  Dataset train{{}, k, Split::Train};
  Dataset val{{}, k, Split::Val};
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    (to_val[i] ? val : train).samples.push_back(ds.samples[i]);
  }
  return {std::move(train), std::move(val)};
}

Dataset select(const Dataset& ds, const std::vector<std::string>& ids) {
  std::unordered_map<std::string_view, std::size_t> index;
  index.reserve(ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) index.emplace(ds.samples[i].id, i);
  Dataset out{{}, ds.num_classes, ds.split};
  out.samples.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw DataError("unknown sample id '" + id + "'");
    out.samples.push_back(ds.samples[it->second]);
  }
  return out;
}

std::vector<std::string> ids_of(const Dataset& ds) {
  std::vector<std::string> ids;
  ids.reserve(ds.samples.size());
  for (const auto& s : ds.samples) ids.push_back(s.id);
  return ids;
}

std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace cloe
