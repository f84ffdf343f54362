#pragma once

#include "mbsde/json_util.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace mbsde {

/// Outcome of one numerical check. Margins are signed: negative means violation.
struct VerificationReport {
  std::string name;
  std::size_t samples = 0;
  double margin = std::numeric_limits<double>::infinity();
  double tolerance = 0.0;
  bool pass = false;
  std::vector<double> witness;
  json extra = json::object();

  VerificationReport() = default;
  VerificationReport(std::string n, double tol) : name(std::move(n)), tolerance(tol) {}

  template <class V>
  void observe(double m, const V& w) {
    ++samples;
    if (std::isnan(m)) m = -std::numeric_limits<double>::infinity();
    if (witness.empty() || m < margin) {
      margin = m;
      witness.assign(w.data(), w.data() + w.size());
    }
  }

  /// pass iff margin >= -tolerance
  VerificationReport& finalize() {
    pass = margin >= -tolerance;
    return *this;
  }
};

inline json to_json(const VerificationReport& r) {
  json j;
  j["test"] = r.name;
  j["samples"] = r.samples;
  j["margin"] = std::isfinite(r.margin) ? json(r.margin) : json(r.margin > 0 ? "inf" : "-inf");
  j["tolerance"] = r.tolerance;
  j["pass"] = r.pass;
  j["witness"] = r.witness;
  if (!r.extra.empty()) j["extra"] = r.extra;
  return j;
}

}  // namespace mbsde
