#include "herdlab/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace herdlab::csv {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write(const Table& t, const std::filesystem::path& to) {
  std::ofstream out(to, std::ios::binary);
  if (!out) throw std::runtime_error("csv::write: cannot open " + to.string());
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    if (i) out << ',';
    out << t.header[i];
  }
  out << "\r\n";
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) {
      throw std::runtime_error("csv::write: ragged row in " + to.string());
    }
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << format_double(row[i]);
    }
    out << "\r\n";
  }
  if (!out) throw std::runtime_error("csv::write: write failed " + to.string());
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Table read(const std::filesystem::path& from) {
  std::ifstream in(from, std::ios::binary);
  if (!in) throw std::runtime_error("csv::read: cannot open " + from.string());
  Table t;
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("csv::read: empty file " + from.string());
  }
  t.header = split_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_line(line);
    if (cells.size() != t.header.size()) {
      throw std::runtime_error("csv::read: wrong cell count at line " +
                               std::to_string(lineno) + " of " + from.string());
    }
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      try {
        std::size_t pos = 0;
        row[i] = std::stod(cells[i], &pos);
        if (pos != cells[i].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw std::runtime_error("csv::read: non-numeric cell '" + cells[i] +
                                 "' at line " + std::to_string(lineno) +
                                 " of " + from.string());
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace herdlab::csv
