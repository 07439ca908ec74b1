#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "swe/trace.hpp"

namespace swe {

Trace::Trace(std::vector<std::string> columns) : columns_(std::move(columns)) {
  if (columns_.empty() || columns_.front() != "step") {
    throw std::invalid_argument("Trace: first column must be 'step'");
  }
}

void Trace::add_row(Row row) {
  if (row.size() != columns_.size()) {
    throw std::invalid_argument("Trace: row has " + std::to_string(row.size()) +
                                " cells, schema has " + std::to_string(columns_.size()));
  }
  if (!row.front()) throw std::invalid_argument("Trace: step cell is empty");
  if (!rows_.empty() && !(*row.front() > *rows_.back().front())) {
    throw std::invalid_argument("Trace: steps must be strictly increasing");
  }
  rows_.push_back(std::move(row));
}

std::size_t Trace::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i)
    if (columns_[i] == name) return i;
  throw std::out_of_range("Trace: no column '" + std::string(name) + "'");
}

bool Trace::has_column(std::string_view name) const {
  for (const auto& c : columns_)
    if (c == name) return true;
  return false;
}

Trace::Cell Trace::at(std::size_t row, std::string_view column) const {
  return rows_.at(row)[column_index(column)];
}

std::vector<double> Trace::column_values(std::string_view name) const {
  const std::size_t c = column_index(name);
  std::vector<double> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_)
    if (r[c]) out.push_back(*r[c]);
  return out;
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf.data(), end);
}

double parse_double(std::string_view text) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (!text.empty() && text.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    // from_chars rejects "inf"/"nan" spellings emitted by to_chars on some
    // platforms; accept them explicitly.
    if (text == "inf") return INFINITY;
    if (text == "-inf") return -INFINITY;
    if (text == "nan" || text == "-nan") return NAN;
    throw std::invalid_argument("parse_double: '" + std::string(text) + "' is not a number");
  }
  return v;
}

std::string to_csv(const Trace& t) {
  std::string out;
  for (std::size_t i = 0; i < t.columns().size(); ++i) {
    if (i) out += ',';
    out += t.columns()[i];
  }
  out += '\n';
  for (const auto& row : t.rows()) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      if (row[i]) out += format_double(*row[i]);
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

Trace parse_csv(std::string_view text, const std::vector<std::string>& expected_columns) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    start = end + 1;
  }
  if (lines.empty()) throw std::invalid_argument("parse_csv: missing header");

  std::vector<std::string> columns;
  for (auto c : split_commas(lines.front())) columns.emplace_back(c);
  if (!expected_columns.empty() && columns != expected_columns) {
    throw std::invalid_argument("parse_csv: header '" + std::string(lines.front()) +
                                "' does not match the expected schema");
  }
  Trace t(columns);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto cells = split_commas(lines[i]);
    if (cells.size() != columns.size()) {
      throw std::invalid_argument("parse_csv: line " + std::to_string(i + 1) + " has " +
                                  std::to_string(cells.size()) + " cells");
    }
    Trace::Row row;
    row.reserve(cells.size());
    for (auto c : cells) {
      if (c.empty()) row.emplace_back();
      else row.emplace_back(parse_double(c));
    }
    t.add_row(std::move(row));
  }
  return t;
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace swe
