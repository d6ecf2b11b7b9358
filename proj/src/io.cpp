#include "mm/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

namespace mm {

std::string format_full(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::ostringstream out;
  out << in.rdbuf();
  if (in.bad()) throw IoError("read failure: " + path);
  return out.str();
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << contents;
  out.flush();
  if (!out) throw IoError("write failure: " + path);
}

void save_matrix(const std::string& path, const Matrix& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      if (!std::isfinite(m(r, c))) {
        throw IoError("non-finite entry at (" + std::to_string(r) + "," + std::to_string(c) +
                      ") while writing " + path);
      }
    }
  }
  std::ostringstream out;
  out << m.rows() << "," << m.cols() << "\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ",";
      out << format_full(m(r, c));
    }
    out << "\n";
  }
  write_text_file(path, out.str());
}

namespace {

// Splits one CSV line; throws ParseError with the 0-based row on mismatch.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double_cell(const std::string& cell, Eigen::Index row, Eigen::Index col) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  const double value = std::strtod(begin, &end);
  while (end && *end == ' ') ++end;
  if (end == begin || (end && *end != '\0')) {
    throw ParseError("bad numeric cell at row " + std::to_string(row) + ", col " +
                     std::to_string(col) + ": '" + cell + "'");
  }
  return value;
}

}  // namespace

Matrix load_matrix(const std::string& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty matrix file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.size() != 2) throw ParseError("header must be 'rows,cols' in " + path);
  long rows = 0, cols = 0;
  try {
    rows = std::stol(header[0]);
    cols = std::stol(header[1]);
  } catch (const std::exception&) {
    throw ParseError("bad header '" + line + "' in " + path);
  }
  if (rows < 0 || cols < 0) throw ParseError("negative dimensions in " + path);
  Matrix m(rows, cols);
  for (long r = 0; r < rows; ++r) {
    if (!std::getline(in, line)) {
      throw ParseError("missing row " + std::to_string(r) + " in " + path);
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto cells = split_csv_line(line);
    if (static_cast<long>(cells.size()) != cols) {
      throw ParseError("row " + std::to_string(r) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(cols) + " in " + path);
    }
    for (long c = 0; c < cols; ++c) m(r, c) = parse_double_cell(cells[c], r, c);
  }
  return m;
}

nlohmann::json load_json(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid JSON in ") + path + ": " + e.what());
  }
}

void save_json(const std::string& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& context) {
  if (!j.is_object()) throw BadConfig(context + ": expected a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const auto& key : allowed) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) throw BadConfig(context + ": unknown key '" + item.key() + "'");
  }
}

nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vector vector_from_json(const nlohmann::json& j, const std::string& context) {
  if (!j.is_array()) throw ParseError(context + ": expected an array");
  Vector v(j.size());
  Eigen::Index i = 0;
  for (const auto& item : j) {
    if (!item.is_number()) throw ParseError(context + ": expected numeric entries");
    v[i++] = item.get<double>();
  }
  return v;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j, const std::string& context) {
  if (!j.is_array()) throw ParseError(context + ": expected an array of rows");
  const Eigen::Index n_rows = static_cast<Eigen::Index>(j.size());
  if (n_rows == 0) return Matrix(0, 0);
  if (!j[0].is_array()) throw ParseError(context + ": expected row arrays");
  const Eigen::Index n_cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(n_rows, n_cols);
  for (Eigen::Index r = 0; r < n_rows; ++r) {
    const auto& row = j[r];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n_cols) {
      throw ParseError(context + ": ragged rows");
    }
    for (Eigen::Index c = 0; c < n_cols; ++c) {
      if (!row[c].is_number()) throw ParseError(context + ": expected numeric entries");
      m(r, c) = row[c].get<double>();
    }
  }
  return m;
}

}  // namespace mm
