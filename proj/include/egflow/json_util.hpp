#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "egflow/errors.hpp"
#include "egflow/tensor.hpp"

namespace egflow {

/// Throws ConfigError naming the first key of `j` not in `allowed`.
inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                                std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || item.key() == a;
    if (!ok) throw ConfigError("unknown key '" + std::string(where) + "." + item.key() + "'");
  }
}

/// j[key] converted to T, or `fallback` when absent. Type errors name the key.
template <typename T>
T json_get(const nlohmann::json& j, const char* key, const T& fallback, std::string_view where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("bad value for '" + std::string(where) + "." + key + "'");
  }
}

inline nlohmann::json tensor_to_json(const Tensor& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    rows.push_back(std::vector<float>(row.begin(), row.end()));
  }
  return rows;
}

inline Tensor tensor_from_json(const nlohmann::json& j, std::string_view where) {
  try {
    const auto rows = j.get<std::vector<std::vector<float>>>();
    if (rows.empty()) return Tensor();
    Tensor t = Tensor::matrix(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != t.cols()) throw ConfigError(std::string(where) + ": ragged matrix");
      for (std::size_t c = 0; c < t.cols(); ++c) t(r, c) = rows[r][c];
    }
    return t;
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(where) + ": expected a matrix");
  }
}

}  // namespace egflow
