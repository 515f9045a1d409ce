#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "syndesi/error.hpp"

namespace syndesi {

using Vec3 = std::array<double, 3>;

inline constexpr double kGravity = 9.81;

struct ImuSample {
  double t = 0.0;
  Vec3 accel{};
  Vec3 mag{};

  friend bool operator==(const ImuSample&, const ImuSample&) = default;
};

struct StepEvent {
  double t = 0.0;
};

struct MotionVector {
  double theta = 0.0;  // radians, [-pi, pi)
  double ell = 0.0;    // meters
};

struct PdrConfig {
  double stride_length = 0.7;
  // Threshold on smoothed |accel| minus gravity.
  double peak_threshold = 1.5;
  double min_step_interval = 0.3;
  std::size_t smoothing_window = 5;
  // Window for gravity estimation in heading_at (samples).
  std::size_t gravity_window = 25;

  void validate() const {
    if (!(stride_length > 0.0)) throw Error(ErrorCode::validation, "pdr: stride_length must be > 0");
    if (!(min_step_interval > 0.0))
      throw Error(ErrorCode::validation, "pdr: min_step_interval must be > 0");
    if (smoothing_window == 0 || gravity_window == 0)
      throw Error(ErrorCode::validation, "pdr: windows must be >= 1 sample");
  }
};

// Wraps any finite angle into [-pi, pi).
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a + std::numbers::pi, two_pi);
  if (r < 0.0) r += two_pi;
  r -= std::numbers::pi;
  if (r >= std::numbers::pi) r -= two_pi;
  return r;
}

namespace detail {

inline double magnitude(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

inline double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline Vec3 cross3(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

// Centered moving average, window clipped at the trace edges.
inline std::vector<double> moving_average(std::span<const double> xs, std::size_t window) {
  std::vector<double> out(xs.size());
  const std::size_t half = window / 2;
  std::vector<double> prefix(xs.size() + 1, 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) prefix[i + 1] = prefix[i] + xs[i];
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(xs.size(), i + (window - half));
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

inline std::size_t nearest_index(std::span<const ImuSample> trace, double t) {
  auto it = std::lower_bound(trace.begin(), trace.end(), t,
                             [](const ImuSample& s, double v) { return s.t < v; });
  if (it == trace.end()) return trace.size() - 1;
  const auto i = static_cast<std::size_t>(it - trace.begin());
  if (i > 0 && (t - trace[i - 1].t) <= (trace[i].t - t)) return i - 1;
  return i;
}

}  // namespace detail

// Peaks of the smoothed acceleration magnitude (gravity removed) that exceed
// the threshold, with a refractory period of min_step_interval.
inline std::vector<StepEvent> detect_steps(std::span<const ImuSample> trace, const PdrConfig& cfg) {
  cfg.validate();
  std::vector<StepEvent> steps;
  if (trace.size() < 3) return steps;

  std::vector<double> mag(trace.size());
  for (std::size_t i = 0; i < trace.size(); ++i) mag[i] = detail::magnitude(trace[i].accel) - kGravity;
  const auto smooth = detail::moving_average(mag, cfg.smoothing_window);

  for (std::size_t i = 1; i + 1 < smooth.size(); ++i) {
    const bool peak = smooth[i] > cfg.peak_threshold && smooth[i] >= smooth[i - 1] && smooth[i] > smooth[i + 1];
    if (!peak) continue;
    if (!steps.empty() && trace[i].t - steps.back().t < cfg.min_step_interval) continue;
    steps.push_back({trace[i].t});
  }
  return steps;
}

// Tilt-compensated compass heading at time t. 0 is map north (+y) and the
// angle grows toward +x; the result is in [-pi, pi).
inline double heading_at(std::span<const ImuSample> trace, double t, std::size_t gravity_window = 25) {
  if (trace.empty()) throw Error(ErrorCode::contract, "heading_at: empty trace");
  if (gravity_window == 0) gravity_window = 1;
  const std::size_t i = detail::nearest_index(trace, t);

  const std::size_t half = gravity_window / 2;
  const std::size_t lo = i >= half ? i - half : 0;
  const std::size_t hi = std::min(trace.size(), i + (gravity_window - half));
  Vec3 g{0.0, 0.0, 0.0};
  for (std::size_t k = lo; k < hi; ++k)
    for (int c = 0; c < 3; ++c) g[c] += trace[k].accel[c];

  const double gn = detail::magnitude(g);
  if (!(gn > 0.0)) throw Error(ErrorCode::degenerate_heading, "heading_at: no gravity estimate");
  const Vec3 up{g[0] / gn, g[1] / gn, g[2] / gn};

  const Vec3& m = trace[i].mag;
  const double mu = detail::dot3(m, up);
  const Vec3 m_h{m[0] - mu * up[0], m[1] - mu * up[1], m[2] - mu * up[2]};
  const double mn = detail::magnitude(m);
  if (!(mn > 0.0) || detail::magnitude(m_h) <= 1e-9 * mn)
    throw Error(ErrorCode::degenerate_heading, "heading_at: magnetic vector parallel to gravity");

  // Horizontal frame: forward = device +y projected, right = forward x up.
  Vec3 fwd{0.0 - up[1] * up[0], 1.0 - up[1] * up[1], 0.0 - up[1] * up[2]};
  double fn = detail::magnitude(fwd);
  if (fn < 1e-9) {
    // Device standing on its y axis; fall back to -z as forward.
    const double zu = -up[2];
    fwd = {0.0 - zu * up[0], 0.0 - zu * up[1], -1.0 - zu * up[2]};
    fn = detail::magnitude(fwd);
  }
  fwd = {fwd[0] / fn, fwd[1] / fn, fwd[2] / fn};
  const Vec3 right = detail::cross3(fwd, up);

  return wrap_angle(std::atan2(detail::dot3(m_h, right), detail::dot3(m_h, fwd)));
}

inline std::vector<std::pair<StepEvent, MotionVector>> motion_vectors(std::span<const ImuSample> trace,
                                                                      const PdrConfig& cfg) {
  std::vector<std::pair<StepEvent, MotionVector>> out;
  for (const auto& s : detect_steps(trace, cfg))
    out.push_back({s, MotionVector{heading_at(trace, s.t, cfg.gravity_window), cfg.stride_length}});
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines trace files: {"t":..., "accel":[ax,ay,az], "mag":[mx,my,mz]}

inline nlohmann::json to_json(const ImuSample& s) {
  return {{"t", s.t}, {"accel", s.accel}, {"mag", s.mag}};
}

inline ImuSample imu_sample_from_json(const nlohmann::json& j) {
  try {
    return {j.at("t").get<double>(), j.at("accel").get<Vec3>(), j.at("mag").get<Vec3>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("imu sample: ") + e.what());
  }
}

inline std::vector<ImuSample> read_imu_trace(std::istream& in) {
  std::vector<ImuSample> trace;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::parse, "imu trace line " + std::to_string(lineno) + ": " + e.what());
    }
    trace.push_back(imu_sample_from_json(j));
    if (trace.size() > 1 && !(trace.back().t > trace[trace.size() - 2].t))
      throw Error(ErrorCode::validation, "imu trace line " + std::to_string(lineno) + ": time not increasing");
  }
  return trace;
}

inline void write_imu_trace(std::ostream& out, std::span<const ImuSample> trace) {
  for (const auto& s : trace) out << to_json(s).dump() << '\n';
}

}  // namespace syndesi
