#pragma once

#include <cmath>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "syndesi/error.hpp"
#include "syndesi/floorplan.hpp"

namespace syndesi {

struct RssSample {
  ApId ap_id;
  double t = 0.0;
  double rss = 0.0;  // dBm

  friend bool operator==(const RssSample&, const RssSample&) = default;
};

// Per-AP constants of the exponential ranging model d = alpha * exp(rss * beta).
struct ApCalibration {
  ApId ap_id;
  double alpha = 1.0;
  double beta = 0.0;

  friend bool operator==(const ApCalibration&, const ApCalibration&) = default;
};

struct RangeEstimate {
  ApId ap_id;
  double t = 0.0;
  double d = 0.0;
};

struct CalibrationPair {
  double rss = 0.0;
  double distance = 0.0;
};

inline RangeEstimate range_from_rss(const RssSample& s, const ApCalibration& cal) {
  if (s.ap_id != cal.ap_id)
    throw Error(ErrorCode::contract, "range_from_rss: sample ap '" + s.ap_id + "' vs calibration '" + cal.ap_id + "'");
  return {s.ap_id, s.t, cal.alpha * std::exp(s.rss * cal.beta)};
}

// Ordinary least squares on ln d = ln alpha + beta * rss.
inline ApCalibration fit_calibration(std::span<const CalibrationPair> pairs, const ApId& ap_id) {
  for (const auto& p : pairs) {
    if (!(p.distance > 0.0) || !std::isfinite(p.distance))
      throw Error(ErrorCode::validation, "fit_calibration: non-positive distance for ap '" + ap_id + "'");
    if (!std::isfinite(p.rss)) throw Error(ErrorCode::validation, "fit_calibration: non-finite rss");
  }
  bool distinct = false;
  for (const auto& p : pairs) distinct = distinct || p.rss != pairs.front().rss;
  if (pairs.size() < 2 || !distinct)
    throw Error(ErrorCode::underdetermined, "fit_calibration: need two distinct rss values for ap '" + ap_id + "'");

  const double n = static_cast<double>(pairs.size());
  double mean_x = 0.0;
  double mean_y = 0.0;
  for (const auto& p : pairs) {
    mean_x += p.rss;
    mean_y += std::log(p.distance);
  }
  mean_x /= n;
  mean_y /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& p : pairs) {
    const double dx = p.rss - mean_x;
    sxx += dx * dx;
    sxy += dx * (std::log(p.distance) - mean_y);
  }
  const double beta = sxy / sxx;
  return {ap_id, std::exp(mean_y - beta * mean_x), beta};
}

// ---------------------------------------------------------------------------
// Calibration file: [{"ap_id":..., "alpha":..., "beta":...}]

inline nlohmann::json to_json(const ApCalibration& c) {
  return {{"ap_id", c.ap_id}, {"alpha", c.alpha}, {"beta", c.beta}};
}

inline ApCalibration calibration_from_json(const nlohmann::json& j) {
  try {
    ApCalibration c{j.at("ap_id").get<std::string>(), j.at("alpha").get<double>(), j.at("beta").get<double>()};
    if (!(c.alpha > 0.0)) throw Error(ErrorCode::validation, "calibration '" + c.ap_id + "': alpha must be > 0");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("calibration: ") + e.what());
  }
}

inline std::vector<ApCalibration> calibrations_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::parse, "calibration file: expected an array");
  std::vector<ApCalibration> out;
  for (const auto& e : j) out.push_back(calibration_from_json(e));
  return out;
}

inline nlohmann::json to_json(std::span<const ApCalibration> cals) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : cals) out.push_back(to_json(c));
  return out;
}

// RSS trace file, JSON-lines: {"t":..., "ap_id":..., "rss":...}

inline nlohmann::json to_json(const RssSample& s) { return {{"t", s.t}, {"ap_id", s.ap_id}, {"rss", s.rss}}; }

inline std::vector<RssSample> read_rss_trace(std::istream& in) {
  std::vector<RssSample> trace;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      trace.push_back({j.at("ap_id").get<std::string>(), j.at("t").get<double>(), j.at("rss").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse, "rss trace line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!std::isfinite(trace.back().rss))
      throw Error(ErrorCode::validation, "rss trace line " + std::to_string(lineno) + ": non-finite rss");
  }
  return trace;
}

inline void write_rss_trace(std::ostream& out, std::span<const RssSample> trace) {
  for (const auto& s : trace) out << to_json(s).dump() << '\n';
}

}  // namespace syndesi
