#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "langtyp/predict.hpp"

namespace langtyp {

// Category x aux accuracy grid, one row per method. Columns are ordered
// syntax -Aux, syntax +Aux, phonology -Aux, ..., inventory +Aux.
struct AccuracyTable {
  struct Row {
    std::string method;
    std::array<std::optional<double>, 6> cells;
  };
  std::vector<Row> rows;

  static std::size_t column(Category c, bool aux);
  void set(const std::string& method, Category c, bool aux, double accuracy);
};

AccuracyTable accuracy_table(const EvalReport& report);

// Long form: method, category, aux, accuracy.
void write_accuracy_tsv(std::ostream& out, const AccuracyTable& table);
AccuracyTable read_accuracy_tsv(std::istream& in, const std::string& source_name = "<accuracy>");

// Column maxima are bolded; absent cells print "-".
std::string render_accuracy_markdown(const AccuracyTable& table);

struct GainSection {
  Category category = Category::Syntax;
  std::vector<GainRow> rows;
};

void write_gains_tsv(std::ostream& out, const std::vector<GainSection>& sections);
std::vector<GainSection> read_gains_tsv(std::istream& in, const std::string& source_name = "<gains>");
std::string render_gains_markdown(const std::vector<GainSection>& sections);

std::string format_fixed2(double v);

}  // namespace langtyp
