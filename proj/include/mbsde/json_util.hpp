#pragma once

#include "mbsde/core.hpp"

#include <json.hpp>

#include <algorithm>
#include <initializer_list>
#include <string>
#include <vector>

namespace mbsde {

using json = nlohmann::json;

/// Reject keys not in `allowed` (configs are fail-fast on typos).
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::config, where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; });
    if (!ok) fail(ErrorKind::config, where + ": unknown key '" + it.key() + "'");
  }
}

inline Vec json_vec(const json& j, const std::string& where) {
  if (!j.is_array()) fail(ErrorKind::config, where + ": expected an array of numbers");
  if (j.size() > static_cast<std::size_t>(kMaxDim)) fail(ErrorKind::config, where + ": vector too long");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail(ErrorKind::config, where + ": expected numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline json to_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json to_json(const Mat& m) {
  json a = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}

template <class T>
T json_get(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace mbsde
