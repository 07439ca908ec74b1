#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace swe {

/// Column-named table of per-step records. Cells may be empty (for example
/// the stem eigenvalue columns after untying). The first column is always
/// "step".
class Trace {
 public:
  using Cell = std::optional<double>;
  using Row = std::vector<Cell>;

  Trace() = default;
  explicit Trace(std::vector<std::string> columns);

  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<Row>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }

  /// Appends a row; throws if the width is wrong or steps do not increase.
  void add_row(Row row);

  std::size_t column_index(std::string_view name) const;
  bool has_column(std::string_view name) const;
  Cell at(std::size_t row, std::string_view column) const;
  /// All non-empty values of a column, in row order.
  std::vector<double> column_values(std::string_view name) const;
  const Row& back() const { return rows_.back(); }

  /// Free-form run metadata (schedule, η, seed). Not part of the CSV body.
  std::map<std::string, std::string> metadata;

  bool operator==(const Trace& o) const { return columns_ == o.columns_ && rows_ == o.rows_; }

 private:
  std::vector<std::string> columns_;
  std::vector<Row> rows_;
};

/// Shortest decimal string that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text);

std::string to_csv(const Trace& t);
/// Parses CSV text; when `expected_columns` is non-empty the header must match.
Trace parse_csv(std::string_view text, const std::vector<std::string>& expected_columns = {});

void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace swe
