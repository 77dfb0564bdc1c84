#pragma once

// Number formatting and small CSV writer shared by all reports.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace emdecay {

/// 15 significant digits, scientific notation.
inline std::string fmt_num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.14e", x);
  return buf;
}

/// JSON numbers cannot hold inf/nan; those become strings.
/// Finite values are rounded to 15 significant digits.
inline nlohmann::json json_num(double x) {
  if (std::isfinite(x)) return std::stod(fmt_num(x));
  return fmt_num(x);
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

  void row(const std::vector<double>& values) {
    if (values.size() != header_.size()) throw std::invalid_argument("csv row width mismatch");
    std::vector<std::string> cells;
    for (double v : values) cells.push_back(fmt_num(v));
    rows_.push_back(std::move(cells));
  }
  void row_cells(std::vector<std::string> cells) {
    if (cells.size() != header_.size()) throw std::invalid_argument("csv row width mismatch");
    rows_.push_back(std::move(cells));
  }

  std::string str() const {
    std::string out;
    auto line = [&out](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << str();
  }

  std::size_t size() const { return rows_.size(); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << '\n';
}

}  // namespace emdecay
