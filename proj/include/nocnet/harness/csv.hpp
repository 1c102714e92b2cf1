#pragma once

// CSV and plain-text table emitters. LF line endings, header row first.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nocnet/datapipe/image.hpp"
#include "nocnet/error.hpp"
#include "nocnet/eval/matrix.hpp"
#include "nocnet/eval/metrics.hpp"
#include "nocnet/optim.hpp"

namespace nocnet {

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos) s = decimals ? "0." + std::string(decimals, '0') : "0";
  return s;
}

/// Quotes a field when it holds a comma, quote or line break.
inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

class CsvBuilder {
 public:
  explicit CsvBuilder(std::vector<std::string> header) : width_(header.size()) { line(header); }

  CsvBuilder& row(const std::vector<std::string>& fields) {
    if (fields.size() != width_) throw SizeMismatch("csv row has " + std::to_string(fields.size()) + " fields");
    line(fields);
    return *this;
  }
  std::string str() const { return out_.str(); }

 private:
  void line(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << csv_field(fields[i]);
    out_ << '\n';
  }
  std::size_t width_;
  std::ostringstream out_;
};

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << is.rdbuf();
  return s.str();
}

inline std::string loss_csv(std::span<const LossRecord> trace) {
  CsvBuilder b({"step", "partition", "alpha", "loss"});
  for (const auto& r : trace)
    b.row({std::to_string(r.step), std::to_string(r.partition), fixed(r.alpha, 8), fixed(r.loss, 8)});
  return b.str();
}

/// Long form: one row per (truth, pred) cell.
inline std::string confusion_csv(const Metrics& m) {
  CsvBuilder b({"truth", "pred", "count"});
  for (std::size_t t = 0; t < m.confusion.size(); ++t)
    for (std::size_t p = 0; p < m.confusion[t].size(); ++p)
      b.row({std::to_string(t), std::to_string(p), std::to_string(m.confusion[t][p])});
  return b.str();
}

inline std::string embedding_csv(const Matrix& coords, std::span<const std::size_t> class_ids,
                                 std::span<const Source> sources) {
  if (coords.cols != 2 || coords.rows != class_ids.size() || coords.rows != sources.size())
    throw SizeMismatch("embedding rows, labels and sources disagree");
  CsvBuilder b({"x", "y", "class_id", "source"});
  for (std::size_t i = 0; i < coords.rows; ++i)
    b.row({fixed(coords.at(i, 0), 6), fixed(coords.at(i, 1), 6), std::to_string(class_ids[i]),
           std::string(source_name(sources[i]))});
  return b.str();
}

/// Space-padded columns; the first row is the header. Columns past `text_columns` are right-aligned.
inline std::string aligned_table(const std::vector<std::vector<std::string>>& cells, std::size_t text_columns = 1) {
  if (cells.empty()) return {};
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& r : cells)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& r) {
    std::string s;
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) s += "  ";
      s += c >= text_columns ? std::string(width[c] - r[c].size(), ' ') + r[c]
                             : r[c] + std::string(width[c] - r[c].size(), ' ');
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    os << s << '\n';
  };
  line(cells.front());
  std::size_t total = 0;
  for (auto w : width) total += w;
  os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (std::size_t i = 1; i < cells.size(); ++i) line(cells[i]);
  return os.str();
}

}  // namespace nocnet
