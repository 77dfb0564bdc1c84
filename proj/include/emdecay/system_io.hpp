#pragma once

// JSON ingestion of systems:
//   {"builtin": "euler_maxwell", "params": {"n_inf":1, "B_inf":[0,0,0], "gamma":2, "K":0.5}}
//   {"m":..., "n":..., "A0":[[...]], "A":[[[...]]], "L":[[...]], "Q":[[[...]]], "R":[[...]]}
// Matrices are row-major nested arrays.

#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "emdecay/system.hpp"

namespace emdecay {

using json = nlohmann::json;

inline MatR matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols,
                             const std::string& name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw std::invalid_argument(name + ": expected " + std::to_string(rows) + " rows");
  MatR m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw std::invalid_argument(name + ": expected " + std::to_string(cols) + " columns");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline json matrix_to_json(const MatR& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(row);
  }
  return out;
}

inline EulerMaxwellParams euler_maxwell_params_from_json(const json& j) {
  EulerMaxwellParams p;
  if (j.is_null()) return p;
  p.n_inf = j.value("n_inf", p.n_inf);
  p.pressure_gamma = j.value("gamma", p.pressure_gamma);
  p.pressure_K = j.value("K", p.pressure_K);
  if (j.contains("B_inf")) {
    const auto& b = j.at("B_inf");
    if (!b.is_array() || b.size() != 3) throw std::invalid_argument("B_inf must be a 3-vector");
    for (int i = 0; i < 3; ++i) p.B_inf(i) = b[static_cast<std::size_t>(i)].get<double>();
  }
  p.validate();
  return p;
}

inline json euler_maxwell_params_to_json(const EulerMaxwellParams& p) {
  return json{{"n_inf", p.n_inf},
              {"B_inf", {p.B_inf(0), p.B_inf(1), p.B_inf(2)}},
              {"gamma", p.pressure_gamma},
              {"K", p.pressure_K}};
}

inline HyperbolicSystem system_from_json(const json& j) {
  if (j.contains("builtin")) {
    const auto name = j.at("builtin").get<std::string>();
    if (name != "euler_maxwell") throw std::invalid_argument("unknown builtin system: " + name);
    return build_euler_maxwell(euler_maxwell_params_from_json(j.value("params", json())));
  }
  const auto m = j.at("m").get<Eigen::Index>();
  const auto n = j.at("n").get<Eigen::Index>();
  if (m <= 0 || n <= 0) throw std::invalid_argument("m and n must be positive");
  MatR a0 = matrix_from_json(j.at("A0"), m, m, "A0");
  const auto& ja = j.at("A");
  if (!ja.is_array() || static_cast<Eigen::Index>(ja.size()) != n)
    throw std::invalid_argument("A: expected n flux matrices");
  std::vector<MatR> a;
  for (Eigen::Index k = 0; k < n; ++k)
    a.push_back(matrix_from_json(ja[static_cast<std::size_t>(k)], m, m, "A[" + std::to_string(k) + "]"));
  MatR l = matrix_from_json(j.at("L"), m, m, "L");
  std::optional<ConstraintPair> c;
  if (j.contains("R") || j.contains("Q")) {
    const auto& jr = j.at("R");
    const auto m1 = static_cast<Eigen::Index>(jr.size());
    ConstraintPair pair;
    pair.R = matrix_from_json(jr, m1, m, "R");
    const auto& jq = j.at("Q");
    if (!jq.is_array() || static_cast<Eigen::Index>(jq.size()) != n)
      throw std::invalid_argument("Q: expected n constraint matrices");
    for (Eigen::Index k = 0; k < n; ++k)
      pair.Q.push_back(matrix_from_json(jq[static_cast<std::size_t>(k)], m1, m, "Q[" + std::to_string(k) + "]"));
    c = std::move(pair);
  }
  return HyperbolicSystem(std::move(a0), std::move(a), std::move(l), std::move(c));
}

inline json system_to_json(const HyperbolicSystem& sys) {
  json j{{"m", sys.m()}, {"n", sys.n()}, {"A0", matrix_to_json(sys.A0())}, {"L", matrix_to_json(sys.L())}};
  j["A"] = json::array();
  for (const auto& a : sys.fluxes()) j["A"].push_back(matrix_to_json(a));
  if (sys.has_constraints()) {
    j["R"] = matrix_to_json(sys.constraints()->R);
    j["Q"] = json::array();
    for (const auto& q : sys.constraints()->Q) j["Q"].push_back(matrix_to_json(q));
  }
  return j;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  return json::parse(in);
}

}  // namespace emdecay
