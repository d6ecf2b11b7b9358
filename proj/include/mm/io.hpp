#pragma once

#include "mm/common.hpp"
#include "mm/errors.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace mm {

// Text matrix format: first line "rows,cols", then one comma-separated line
// per row.  Values are written with 17 significant digits, which round-trips
// IEEE doubles bit-exactly.
void save_matrix(const std::string& path, const Matrix& m);
Matrix load_matrix(const std::string& path);

// %.17g rendering used by every text artifact the toolkit writes.
std::string format_full(double value);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);

// JSON helpers with library error wrapping.  nlohmann::json keeps object keys
// sorted, so serialization is deterministic.
nlohmann::json load_json(const std::string& path);
void save_json(const std::string& path, const nlohmann::json& j);

// Throws BadConfig when `j` contains a key outside `allowed` (strict schema
// checking for configs and manifests).
void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& context);

// Conversions between Eigen types and JSON arrays.
nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j, const std::string& context);
nlohmann::json matrix_to_json(const Matrix& m);  // array of row arrays
Matrix matrix_from_json(const nlohmann::json& j, const std::string& context);

}  // namespace mm
