#include "cloe/ppm.hpp"

#include <cctype>
#include <fstream>
#include <iterator>

namespace cloe::ppm {

std::string encode(const ImageTensor& img) {
  if (img.channels != 3) throw DataError("ppm: only 3-channel images can be written");
  if (img.pixels.size() != img.size() || img.height <= 0 || img.width <= 0) {
    throw DataError("ppm: inconsistent image shape");
  }
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + img.size());
  std::size_t o = header;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) out[o++] = static_cast<char>(quantize(img.at(c, y, x)));
    }
  }
  return out;
}

namespace {

class HeaderReader {
 public:
  HeaderReader(std::string_view b, std::size_t start) : bytes_(b), pos_(start) {}

  std::size_t pos() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000) throw ParseError(std::string("ppm: ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) {
      throw ParseError(std::string("ppm: expected ") + what + " at byte " + std::to_string(start), start);
    }
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw ParseError("ppm: expected whitespace after maxval at byte " + std::to_string(pos_), pos_);
    }
    ++pos_;
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

ImageTensor decode(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw ParseError("ppm: missing P6 magic at byte 0", 0);
  }
  HeaderReader hr(bytes, 2);
  const long width = hr.number("width");
  const long height = hr.number("height");
  const long maxval = hr.number("maxval");
  hr.single_space();
  const std::size_t raster = hr.pos();
  if (width <= 0 || height <= 0) throw ParseError("ppm: zero image dimension", 2);
  if (maxval <= 0 || maxval > 255) {
    throw ParseError("ppm: unsupported maxval " + std::to_string(maxval), 2);
  }
  const std::size_t expected = static_cast<std::size_t>(width) * height * 3;
  const std::size_t actual = bytes.size() - raster;
  if (actual < expected) {
    throw ParseError("ppm: truncated payload, expected " + std::to_string(expected) +
                         " bytes but found " + std::to_string(actual) + " at byte " +
                         std::to_string(raster),
                     raster + actual);
  }
  ImageTensor img(3, static_cast<int>(height), static_cast<int>(width));
  const auto denom = static_cast<float>(maxval);
  std::size_t i = raster;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const auto v = static_cast<unsigned char>(bytes[i++]);
        if (v > maxval) throw ParseError("ppm: sample exceeds maxval", i - 1);
        img.at(c, y, x) = static_cast<float>(v) / denom;
      }
    }
  }
  return img;
}

void write_file(const std::filesystem::path& path, const ImageTensor& img) {
  const std::string bytes = encode(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed for " + path.string());
}

ImageTensor read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open image " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.location());
  }
}

}  // namespace cloe::ppm
