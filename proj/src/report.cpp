#include "langtyp/report.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "langtyp/error.hpp"
#include "langtyp/util.hpp"

namespace langtyp {

namespace {

constexpr std::array<Category, 3> kCategories = {Category::Syntax, Category::Phonology, Category::Inventory};

std::string display_category(Category c) {
  std::string s(category_name(c));
  s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

std::string aux_label(bool aux) { return aux ? "+Aux" : "-Aux"; }

bool parse_aux(std::string_view s, const std::string& source, std::size_t line) {
  if (s == "+Aux") return true;
  if (s == "-Aux") return false;
  throw ParseError(source, line, "aux must be +Aux or -Aux, got '" + std::string(s) + "'");
}

}  // namespace

std::string format_fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::size_t AccuracyTable::column(Category c, bool aux) {
  return 2 * static_cast<std::size_t>(c) + (aux ? 1 : 0);
}

void AccuracyTable::set(const std::string& method, Category c, bool aux, double accuracy) {
  if (!(accuracy >= 0.0 && accuracy <= 100.0))
    throw ValidationError("accuracy for " + method + " outside [0,100]: " + format_double(accuracy));
  for (auto& r : rows)
    if (r.method == method) {
      r.cells[column(c, aux)] = accuracy;
      return;
    }
  rows.push_back({method, {}});
  rows.back().cells[column(c, aux)] = accuracy;
}

AccuracyTable accuracy_table(const EvalReport& report) {
  AccuracyTable t;
  for (const auto& cond : report.conditions)
    for (Category c : kCategories)
      if (cond.has(c)) t.set(eval_method_name(cond.method), c, cond.aux, cond.accuracy(c));
  return t;
}

void write_accuracy_tsv(std::ostream& out, const AccuracyTable& table) {
  out << "method\tcategory\taux\taccuracy\n";
  for (const auto& r : table.rows)
    for (Category c : kCategories)
      for (bool aux : {false, true})
        if (auto v = r.cells[AccuracyTable::column(c, aux)])
          out << r.method << '\t' << category_name(c) << '\t' << aux_label(aux) << '\t' << format_double(*v) << '\n';
}

AccuracyTable read_accuracy_tsv(std::istream& in, const std::string& source_name) {
  AccuracyTable t;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1) {
      if (line != "method\tcategory\taux\taccuracy") throw ParseError(source_name, n, "unexpected header");
      continue;
    }
    if (trim(line).empty()) continue;
    auto f = split(line, '\t');
    if (f.size() != 4) throw ParseError(source_name, n, "expected 4 fields");
    try {
      t.set(f[0], parse_category(f[1]), parse_aux(f[2], source_name, n), parse_double(f[3]));
    } catch (const ParseError&) {
      throw;
    } catch (const ValidationError& e) {
      throw ParseError(source_name, n, e.what());
    }
  }
  return t;
}

std::string render_accuracy_markdown(const AccuracyTable& table) {
  std::array<std::optional<double>, 6> best;
  for (const auto& r : table.rows)
    for (std::size_t j = 0; j < 6; ++j)
      if (r.cells[j] && (!best[j] || *r.cells[j] > *best[j])) best[j] = r.cells[j];

  std::ostringstream out;
  out << "| Method |";
  for (Category c : kCategories)
    for (bool aux : {false, true}) out << ' ' << display_category(c) << ' ' << aux_label(aux) << " |";
  out << "\n|---|";
  for (int j = 0; j < 6; ++j) out << "---:|";
  out << '\n';
  for (const auto& r : table.rows) {
    out << "| " << r.method << " |";
    for (std::size_t j = 0; j < 6; ++j) {
      if (!r.cells[j]) {
        out << " - |";
        continue;
      }
      const std::string v = format_fixed2(*r.cells[j]);
      // Compare at printed precision so equal-looking maxima are all bold.
      if (v == format_fixed2(*best[j]))
        out << " **" << v << "** |";
      else
        out << ' ' << v << " |";
    }
    out << '\n';
  }
  return out.str();
}

void write_gains_tsv(std::ostream& out, const std::vector<GainSection>& sections) {
  out << "category\tfeature\tnone\tmt\tgain\n";
  for (const auto& s : sections)
    for (const auto& r : s.rows)
      out << category_name(s.category) << '\t' << r.feature << '\t' << format_double(r.before) << '\t'
          << format_double(r.after) << '\t' << format_double(r.gain) << '\n';
}

std::vector<GainSection> read_gains_tsv(std::istream& in, const std::string& source_name) {
  std::vector<GainSection> sections;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1) {
      if (line != "category\tfeature\tnone\tmt\tgain") throw ParseError(source_name, n, "unexpected header");
      continue;
    }
    if (trim(line).empty()) continue;
    auto f = split(line, '\t');
    if (f.size() != 5) throw ParseError(source_name, n, "expected 5 fields");
    try {
      const Category c = parse_category(f[0]);
      if (sections.empty() || sections.back().category != c) sections.push_back({c, {}});
      sections.back().rows.push_back({f[1], parse_double(f[2]), parse_double(f[3]), parse_double(f[4])});
    } catch (const ParseError&) {
      throw;
    } catch (const ValidationError& e) {
      throw ParseError(source_name, n, e.what());
    }
  }
  return sections;
}

std::string render_gains_markdown(const std::vector<GainSection>& sections) {
  std::ostringstream out;
  out << "| Feature | None | MT | Gain |\n|---|---:|---:|---:|\n";
  for (std::size_t i = 0; i < sections.size(); ++i) {
    if (i > 0) out << "| | | | |\n";
    for (const auto& r : sections[i].rows)
      out << "| " << r.feature << " | " << format_fixed2(r.before) << " | " << format_fixed2(r.after) << " | "
          << format_fixed2(r.gain) << " |\n";
  }
  return out.str();
}

}  // namespace langtyp
