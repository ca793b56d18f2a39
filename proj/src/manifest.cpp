#include "cloe/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "cloe/ppm.hpp"

namespace cloe::manifest {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

bool is_synthetic(const Dataset& ds) {
  return !ds.samples.empty() && ds.samples.front().true_quality.has_value();
}

struct Row {
  std::size_t row_no;
  std::string id;
  std::string path;
  int label;
  Split split;
  std::optional<double> true_quality;
  std::optional<bool> flipped;
};

template <class T>
T parse_number(const std::string& text, std::size_t row, const char* column) {
  T v{};
  const char* b = text.data();
  const char* e = b + text.size();
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e || text.empty()) {
    throw ParseError("manifest row " + std::to_string(row) + ": cannot parse " + column + " '" + text + "'", row);
  }
  return v;
}

std::vector<Row> parse_rows(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw ParseError("manifest row 1: missing header", 1);
  const auto header = split_csv_line(line);
  const bool base_ok = header.size() >= 4 && header[0] == "id" && header[1] == "path" &&
                       header[2] == "label" && header[3] == "split";
  const bool with_truth = header.size() == 6 && header[4] == "true_quality" && header[5] == "label_was_flipped";
  if (!base_ok || !(header.size() == 4 || with_truth)) {
    throw ParseError("manifest row 1: expected header id,path,label,split[,true_quality,label_was_flipped]", 1);
  }

  std::vector<Row> rows;
  std::size_t row_no = 1;
  while (std::getline(f, line)) {
    ++row_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("manifest row " + std::to_string(row_no) + ": expected " +
                           std::to_string(header.size()) + " columns, found " + std::to_string(cells.size()),
                       row_no);
    }
    Row r{row_no, cells[0], cells[1], 0, Split::Train, {}, {}};
    if (r.id.empty()) throw ParseError("manifest row " + std::to_string(row_no) + ": empty id", row_no);
    r.label = parse_number<int>(cells[2], row_no, "label");
    try {
      r.split = parse_split(cells[3]);
    } catch (const DataError&) {
      throw ParseError("manifest row " + std::to_string(row_no) + ": unknown split '" + cells[3] + "'", row_no);
    }
    if (with_truth) {
      r.true_quality = parse_number<double>(cells[4], row_no, "true_quality");
      const auto& fl = cells[5];
      if (fl == "1" || fl == "true") {
        r.flipped = true;
      } else if (fl == "0" || fl == "false") {
        r.flipped = false;
      } else {
        throw ParseError("manifest row " + std::to_string(row_no) + ": cannot parse label_was_flipped '" + fl + "'",
                         row_no);
      }
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

Sample load_sample(const Row& r, const fs::path& base) {
  Sample s;
  s.id = r.id;
  s.label = r.label;
  s.true_quality = r.true_quality;
  s.label_was_flipped = r.flipped;
  const fs::path img = base / r.path;
  if (!fs::exists(img)) {
    throw ParseError("manifest row " + std::to_string(r.row_no) + ": missing image file " + img.string(), r.row_no);
  }
  try {
    s.image = ppm::read_file(img);
  } catch (const ParseError& e) {
    throw ParseError("manifest row " + std::to_string(r.row_no) + ": " + e.what(), r.row_no);
  }
  return s;
}

int infer_classes(const std::vector<Row>& rows, std::optional<int> k) {
  if (k) return *k;
  int mx = 1;
  for (const auto& r : rows) mx = std::max(mx, r.label + 1);
  return mx;
}

}  // namespace

fs::path write(std::span<const Dataset> datasets, const fs::path& dir) {
  fs::create_directories(dir / "images");
  bool synthetic = false;
  for (const auto& ds : datasets) synthetic = synthetic || is_synthetic(ds);

  std::ostringstream csv;
  csv << "id,path,label,split";
  if (synthetic) csv << ",true_quality,label_was_flipped";
  csv << '\n';
  for (const auto& ds : datasets) {
    for (const auto& s : ds.samples) {
      if (s.id.find_first_of(",\n\r/\\") != std::string::npos) {
        throw DataError("sample id '" + s.id + "' cannot be stored in a manifest");
      }
      const std::string rel = "images/" + s.id + ".ppm";
      ppm::write_file(dir / rel, s.image);
      csv << s.id << ',' << rel << ',' << s.label << ',' << to_string(ds.split);
      if (synthetic) {
        if (!s.true_quality || !s.label_was_flipped) {
          throw DataError("sample '" + s.id + "' lacks synthetic ground truth");
        }
        csv << ',' << format_real(*s.true_quality) << ',' << (*s.label_was_flipped ? 1 : 0);
      }
      csv << '\n';
    }
  }
  const fs::path out = dir / kFileName;
  std::ofstream f(out, std::ios::binary);
  if (!f) throw DataError("cannot write " + out.string());
  f << csv.str();
  return out;
}

fs::path write(const Dataset& ds, const fs::path& dir) { return write(std::span<const Dataset>(&ds, 1), dir); }

Dataset read(const fs::path& path, const ReadOptions& opts) {
  const auto rows = parse_rows(path);
  const fs::path base = path.parent_path();
  Dataset ds;
  ds.num_classes = infer_classes(rows, opts.num_classes);
  std::optional<Split> split = opts.only;
  for (const auto& r : rows) {
    if (opts.only && r.split != *opts.only) continue;
    if (!split) split = r.split;
    if (r.split != *split) {
      throw ParseError("manifest row " + std::to_string(r.row_no) +
                           ": mixed splits; select one with a split filter",
                       r.row_no);
    }
    ds.samples.push_back(load_sample(r, base));
  }
  ds.split = split.value_or(Split::Train);
  return ds;
}

std::vector<Dataset> read_all(const fs::path& path, std::optional<int> num_classes) {
  const auto rows = parse_rows(path);
  const fs::path base = path.parent_path();
  const int k = infer_classes(rows, num_classes);
  std::vector<Dataset> out;
  for (Split sp : {Split::Train, Split::Val, Split::Test}) {
    Dataset ds{{}, k, sp};
    for (const auto& r : rows) {
      if (r.split == sp) ds.samples.push_back(load_sample(r, base));
    }
    if (!ds.samples.empty()) out.push_back(std::move(ds));
  }
  return out;
}

}  // namespace cloe::manifest
