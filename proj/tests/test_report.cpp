#include <doctest.h>

#include <sstream>

#include "langtyp/error.hpp"
#include "langtyp/report.hpp"
#include "langtyp/util.hpp"

using namespace langtyp;

namespace {
std::string data(const std::string& rel) { return std::string(LANGTYP_TEST_DATA) + "/" + rel; }
}  // namespace

TEST_CASE("fixture tables render to the golden layouts") {
  std::istringstream t1(read_file(data("fixtures/table1.tsv")));
  AccuracyTable acc = read_accuracy_tsv(t1);
  CHECK(render_accuracy_markdown(acc) == read_file(data("golden/table1.md")));

  std::istringstream t2(read_file(data("fixtures/table2.tsv")));
  auto gains = read_gains_tsv(t2);
  REQUIRE(gains.size() == 3);
  CHECK(gains[0].rows[0].feature == "S_NUMERAL_AFTER_NOUN");
  CHECK(gains[0].rows[0].gain == 43.86);
  CHECK(render_gains_markdown(gains) == read_file(data("golden/table2.md")));
}

TEST_CASE("accuracy TSV round-trips") {
  AccuracyTable t;
  t.set("None", Category::Syntax, false, 50.0);
  t.set("MTBoth", Category::Inventory, true, 100.0 / 3.0);
  std::ostringstream out;
  write_accuracy_tsv(out, t);
  std::istringstream in(out.str());
  AccuracyTable back = read_accuracy_tsv(in);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[1].cells[AccuracyTable::column(Category::Inventory, true)] == 100.0 / 3.0);
  CHECK_FALSE(back.rows[1].cells[0].has_value());
  CHECK_THROWS_AS(t.set("x", Category::Syntax, false, 101.0), ValidationError);
  std::istringstream bad("method\tcategory\taux\taccuracy\nNone\tsyntax\tmaybe\t3\n");
  CHECK_THROWS_AS(read_accuracy_tsv(bad), ParseError);
}

TEST_CASE("missing cells and tied maxima") {
  AccuracyTable t;
  t.set("A", Category::Syntax, false, 70.004);
  t.set("B", Category::Syntax, false, 69.996);
  t.set("B", Category::Phonology, true, 1.0);
  const std::string md = render_accuracy_markdown(t);
  CHECK(md.find("| A | **70.00** | - | - | - | - | - |") != std::string::npos);
  CHECK(md.find("| B | **70.00** | - | - | **1.00** | - | - |") != std::string::npos);
}

TEST_CASE("gain sections") {
  std::vector<GainSection> s = {{Category::Syntax, {{"S_X", 10, 20.005, 10.005}}}, {Category::Inventory, {}}};
  std::ostringstream out;
  write_gains_tsv(out, s);
  std::istringstream in(out.str());
  auto back = read_gains_tsv(in);
  REQUIRE(back.size() == 1);
  CHECK(back[0].rows[0].after == 20.005);
  CHECK(format_fixed2(2.0) == "2.00");
}

TEST_CASE("accuracy table from an evaluation report") {
  EvalReport rep;
  ConditionResult c;
  c.method = Method::MTVec;
  c.aux = true;
  c.features = {{0, "S_A", Category::Syntax, 3, 4}, {1, "S_B", Category::Syntax, 1, 2}};
  rep.conditions.push_back(c);
  AccuracyTable t = accuracy_table(rep);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].method == "MTVec");
  CHECK(*t.rows[0].cells[1] == doctest::Approx(62.5));
  CHECK_FALSE(t.rows[0].cells[2].has_value());
}
