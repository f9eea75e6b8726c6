#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ssn/errors.hpp"
#include "ssn/linalg.hpp"

namespace ssn {

/// Column-oriented table of numeric and categorical columns, the input of
/// design construction and the in-memory form of a CSV file.
class DataTable {
 public:
  using NumericColumn = std::vector<double>;
  using TextColumn = std::vector<std::string>;

  void add_numeric(std::string name, NumericColumn values) { add(std::move(name), std::move(values)); }
  void add_text(std::string name, TextColumn values) { add(std::move(name), std::move(values)); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  bool has(std::string_view name) const { return find(name) != names_.size(); }
  bool is_numeric(std::string_view name) const {
    return std::holds_alternative<NumericColumn>(columns_[index_of(name)]);
  }

  const NumericColumn& numeric(std::string_view name) const {
    const auto& col = columns_[index_of(name)];
    if (const auto* v = std::get_if<NumericColumn>(&col)) return *v;
    throw SchemaError("column '" + std::string(name) + "' is not numeric");
  }

  /// Column values as category labels. Numeric columns are formatted with
  /// 17 significant digits.
  TextColumn categorical(std::string_view name) const {
    const auto& col = columns_[index_of(name)];
    if (const auto* t = std::get_if<TextColumn>(&col)) return *t;
    const auto& v = std::get<NumericColumn>(col);
    TextColumn out;
    out.reserve(v.size());
    char buf[64];
    for (double x : v) {
      std::snprintf(buf, sizeof buf, "%.17g", x);
      out.emplace_back(buf);
    }
    return out;
  }

  /// Numeric columns stacked into an n x k matrix.
  DenseMatrix matrix(const std::vector<std::string>& names) const {
    DenseMatrix m(static_cast<Index>(rows_), static_cast<Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) {
      const auto& v = numeric(names[j]);
      for (std::size_t i = 0; i < rows_; ++i) m(static_cast<Index>(i), static_cast<Index>(j)) = v[i];
    }
    return m;
  }

  DenseVector vector(std::string_view name) const {
    const auto& v = numeric(name);
    return Eigen::Map<const DenseVector>(v.data(), static_cast<Index>(v.size()));
  }

  DataTable subset(const std::vector<Index>& rows) const {
    DataTable out;
    for (std::size_t j = 0; j < names_.size(); ++j) {
      std::visit(
          [&](const auto& col) {
            std::decay_t<decltype(col)> sub;
            sub.reserve(rows.size());
            for (Index r : rows) sub.push_back(col.at(static_cast<std::size_t>(r)));
            out.add(names_[j], std::move(sub));
          },
          columns_[j]);
    }
    if (names_.empty()) out.rows_ = rows.size();
    return out;
  }

 private:
  template <typename Col>
  void add(std::string name, Col values) {
    if (has(name)) throw SchemaError("duplicate column '" + name + "'");
    if (!names_.empty() && values.size() != rows_)
      throw DimensionError("column '" + name + "' has " + std::to_string(values.size()) +
                           " rows, table has " + std::to_string(rows_));
    rows_ = values.size();
    names_.push_back(std::move(name));
    columns_.emplace_back(std::move(values));
  }

  std::size_t find(std::string_view name) const {
    return static_cast<std::size_t>(std::find(names_.begin(), names_.end(), name) - names_.begin());
  }
  std::size_t index_of(std::string_view name) const {
    const auto i = find(name);
    if (i == names_.size()) throw SchemaError("missing column '" + std::string(name) + "'");
    return i;
  }

  std::vector<std::string> names_;
  std::vector<std::variant<NumericColumn, TextColumn>> columns_;
  std::size_t rows_ = 0;
};

namespace csv {

inline bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline std::vector<std::string> split_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (quoted) throw DataError("unterminated quote on line " + std::to_string(line_no));
  cells.push_back(std::move(cur));
  return cells;
}

/// Reads a comma-separated file with a header row. A column is numeric when
/// every cell parses as a decimal number; otherwise it is categorical.
inline DataTable read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV input");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_line(line, 1);
  std::vector<std::vector<std::string>> cells(header.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto row = split_line(line, line_no);
    if (row.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(row.size()));
    for (std::size_t j = 0; j < row.size(); ++j) cells[j].push_back(std::move(row[j]));
  }
  DataTable table;
  for (std::size_t j = 0; j < header.size(); ++j) {
    std::vector<double> values(cells[j].size());
    bool numeric = true;
    for (std::size_t i = 0; i < cells[j].size() && numeric; ++i) numeric = parse_double(cells[j][i], values[i]);
    if (numeric)
      table.add_numeric(header[j], std::move(values));
    else
      table.add_text(header[j], std::move(cells[j]));
  }
  return table;
}

inline DataTable read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read(in);
}

/// 17 significant digits; parses back to the identical double.
inline std::string format(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace csv
}  // namespace ssn
