#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "syndesi/error.hpp"
#include "syndesi/fingerprint.hpp"
#include "syndesi/floorplan.hpp"
#include "syndesi/gateway.hpp"
#include "syndesi/motion.hpp"
#include "syndesi/ranging.hpp"
#include "syndesi/tracker.hpp"

namespace syndesi {

struct PhoneProfile {
  std::string name;
  double rss_bias = 0.0;
  double rss_noise_sigma = 2.0;
  double imu_accel_noise_sigma = 0.2;
  double scan_interval = 1.0;

  void validate() const {
    if (!(rss_noise_sigma >= 0.0) || !(imu_accel_noise_sigma >= 0.0))
      throw Error(ErrorCode::validation, "profile '" + name + "': sigmas must be >= 0");
    if (!(scan_interval > 0.0)) throw Error(ErrorCode::validation, "profile '" + name + "': scan_interval must be > 0");
  }
};

// Noise knobs for the three handsets of the evaluation; tunable, not measured.
inline std::vector<PhoneProfile> default_profiles() {
  return {{"samsung-note-3", 0.0, 2.0, 0.20, 1.0},
          {"sony-xperia-z5", -2.0, 2.5, 0.25, 1.0},
          {"lg-nexus-5x", 1.0, 2.2, 0.30, 1.0}};
}

inline PhoneProfile noiseless_profile(std::string name = "noiseless") { return {std::move(name), 0.0, 0.0, 0.0, 1.0}; }

struct Checkpoint {
  std::size_t index = 0;  // 1-based label
  Point2D point;
  RoomId expected_room;
};

struct Scenario {
  FloorPlan plan;
  std::vector<ApCalibration> true_calibrations;
  std::vector<Point2D> waypoints;
  std::vector<Checkpoint> checkpoints;
  double walk_speed = 1.2;
  std::size_t runs = 20;
  std::vector<PhoneProfile> profiles = default_profiles();
  std::uint64_t rng_seed = 7;
  std::size_t survey_points_per_room = 20;
  UserRecord user{"U1", EnvPrefs{}, true};
  std::vector<NodeRecord> nodes;
  PdrConfig pdr;
  NoiseModel noise;
  TrackerConfig tracker;

  void validate() const {
    plan.validate();
    if (!(walk_speed > 0.0)) throw Error(ErrorCode::validation, "scenario: walk_speed must be > 0");
    for (const auto& p : profiles) p.validate();
    for (std::size_t i = 0; i + 1 < waypoints.size(); ++i)
      if (crosses_wall(plan, waypoints[i], waypoints[i + 1]))
        throw Error(ErrorCode::validation, "scenario: waypoint segment " + std::to_string(i) + " crosses a wall");
    for (const auto& w : waypoints)
      if (!room_at(plan, w)) throw Error(ErrorCode::validation, "scenario: waypoint outside every room");
    for (const auto& c : checkpoints) {
      if (plan.find_room(c.expected_room) == nullptr)
        throw Error(ErrorCode::validation, "checkpoint " + std::to_string(c.index) + ": unknown room");
      const auto r = room_at(plan, c.point);
      if (!r || *r != c.expected_room)
        throw Error(ErrorCode::validation, "checkpoint " + std::to_string(c.index) + ": point not in expected room");
    }
  }
};

// Independent stream per (seed, a, b).
inline Rng derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), 0x5eedu};
  return Rng(seq);
}

// ---------------------------------------------------------------------------
// Walks

struct GroundTruthStep {
  double t = 0.0;
  Point2D position;
  std::optional<RoomId> room;
  double heading = 0.0;  // compass heading of the move that ended here
};

struct Walk {
  Point2D start;
  double step_period = 0.0;
  std::vector<GroundTruthStep> steps;

  double duration() const { return steps.empty() ? 0.0 : steps.back().t + 0.5 * step_period; }

  // Piecewise-linear position between step instants.
  Point2D position_at(double t) const {
    Point2D prev = start;
    double prev_t = 0.0;
    for (const auto& s : steps) {
      if (t <= s.t) {
        const double f = s.t > prev_t ? std::clamp((t - prev_t) / (s.t - prev_t), 0.0, 1.0) : 1.0;
        return prev + f * (s.position - prev);
      }
      prev = s.position;
      prev_t = s.t;
    }
    return prev;
  }
};

inline double compass_heading(Point2D from, Point2D to) { return std::atan2(to.x - from.x, to.y - from.y); }

// Steps of one stride along the waypoint polyline (by arclength); step k
// completes at t = k * stride / speed.
inline Walk synth_walk(const FloorPlan& plan, std::span<const Point2D> waypoints, double stride, double speed) {
  if (!(stride > 0.0) || !(speed > 0.0)) throw Error(ErrorCode::validation, "synth_walk: stride and speed must be > 0");
  for (std::size_t i = 0; i + 1 < waypoints.size(); ++i)
    if (crosses_wall(plan, waypoints[i], waypoints[i + 1]))
      throw Error(ErrorCode::validation, "synth_walk: segment " + std::to_string(i) + " crosses a wall");
  Walk walk;
  walk.step_period = stride / speed;
  if (waypoints.empty()) return walk;
  walk.start = waypoints.front();
  if (waypoints.size() < 2) return walk;

  std::vector<double> cum{0.0};
  for (std::size_t i = 0; i + 1 < waypoints.size(); ++i) cum.push_back(cum.back() + distance(waypoints[i], waypoints[i + 1]));
  const double total = cum.back();
  const auto n_steps = static_cast<std::size_t>(std::floor(total / stride + 1e-9));

  std::size_t seg = 0;
  Point2D prev = walk.start;
  for (std::size_t k = 1; k <= n_steps; ++k) {
    const double s = std::min(static_cast<double>(k) * stride, total);
    while (seg + 2 < cum.size() && s > cum[seg + 1]) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double f = len > 0.0 ? (s - cum[seg]) / len : 0.0;
    const Point2D p = waypoints[seg] + f * (waypoints[seg + 1] - waypoints[seg]);
    walk.steps.push_back({static_cast<double>(k) * walk.step_period, p, room_at(plan, p), compass_heading(prev, p)});
    prev = p;
  }
  return walk;
}

inline Walk synth_walk(const Scenario& sc) {
  sc.validate();
  return synth_walk(sc.plan, sc.waypoints, sc.pdr.stride_length, sc.walk_speed);
}

// ---------------------------------------------------------------------------
// IMU synthesis

struct ImuSynthConfig {
  double rate_hz = 50.0;
  double step_amplitude = 3.0;  // m/s^2 above gravity at the step peak
  double field_strength = 48.0;  // uT
  double inclination = 63.0 * std::numbers::pi / 180.0;
};

// Device held flat; each step contributes one raised-cosine bump in |accel|
// centred on its step instant, and the horizontal magnetic field points along
// the step's compass heading.
inline std::vector<ImuSample> synth_imu(const Walk& walk, const PhoneProfile& profile, Rng& rng,
                                        const ImuSynthConfig& cfg = {}) {
  std::vector<ImuSample> trace;
  if (walk.steps.empty()) return trace;
  const double dt = 1.0 / cfg.rate_hz;
  const double T = walk.step_period;
  const auto n = static_cast<std::size_t>(std::floor(walk.duration() / dt)) + 1;
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sigma = profile.imu_accel_noise_sigma;
  trace.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    // Step whose window [t_k - T/2, t_k + T/2) contains t.
    const double kf = std::floor(t / T + 0.5);
    const auto k = static_cast<std::size_t>(std::clamp(kf, 1.0, static_cast<double>(walk.steps.size())));
    const auto& step = walk.steps[k - 1];
    double bump = 0.0;
    if (kf >= 1.0 && kf <= static_cast<double>(walk.steps.size()))
      bump = 0.5 * cfg.step_amplitude * (1.0 + std::cos(2.0 * std::numbers::pi * (t - step.t) / T));
    Vec3 accel{0.0, 0.0, kGravity + bump};
    if (sigma > 0.0)
      for (auto& c : accel) c += sigma * gauss(rng);
    const double h = cfg.field_strength * std::cos(cfg.inclination);
    const Vec3 mag{h * std::sin(step.heading), h * std::cos(step.heading), -cfg.field_strength * std::sin(cfg.inclination)};
    trace.push_back({t, accel, mag});
  }
  return trace;
}

// ---------------------------------------------------------------------------
// RSS synthesis

enum class RssModel {
  inverse_nlr,   // exact inverse of the ranging model
  log_distance,  // independent path-loss generator for mismatch experiments
};

struct RssSynthConfig {
  RssModel model = RssModel::inverse_nlr;
  double min_distance = 0.01;
  double log_distance_p0 = -40.0;   // dBm at 1 m
  double log_distance_exponent = 2.5;
};

inline std::vector<RssSample> synth_scan(Point2D p, double t, const FloorPlan& plan,
                                         std::span<const ApCalibration> cals, const PhoneProfile& profile, Rng& rng,
                                         const RssSynthConfig& cfg = {}) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<RssSample> scan;
  scan.reserve(plan.aps.size());
  for (const auto& ap : plan.aps) {
    const ApCalibration* cal = nullptr;
    for (const auto& c : cals)
      if (c.ap_id == ap.ap_id) cal = &c;
    if (cal == nullptr) throw Error(ErrorCode::validation, "synth_rss: no calibration for ap '" + ap.ap_id + "'");
    if (cal->beta == 0.0) throw Error(ErrorCode::validation, "synth_rss: beta = 0 for ap '" + ap.ap_id + "' is not invertible");
    const double d = std::max(distance(p, ap.position), cfg.min_distance);
    double rss = cfg.model == RssModel::inverse_nlr
                     ? std::log(d / cal->alpha) / cal->beta
                     : cfg.log_distance_p0 - 10.0 * cfg.log_distance_exponent * std::log10(d);
    rss += profile.rss_bias;
    if (profile.rss_noise_sigma > 0.0) rss += profile.rss_noise_sigma * gauss(rng);
    scan.push_back({ap.ap_id, t, rss});
  }
  return scan;
}

// One scan per AP every scan_interval seconds over the walk, starting at t = 0.
inline std::vector<RssSample> synth_rss(const Walk& walk, const FloorPlan& plan, std::span<const ApCalibration> cals,
                                        const PhoneProfile& profile, Rng& rng, const RssSynthConfig& cfg = {}) {
  profile.validate();
  std::vector<RssSample> out;
  const double end = walk.duration();
  for (std::size_t k = 0;; ++k) {
    const double t = static_cast<double>(k) * profile.scan_interval;
    if (t > end) break;
    for (auto& s : synth_scan(walk.position_at(t), t, plan, cals, profile, rng, cfg)) out.push_back(std::move(s));
  }
  return out;
}

inline Point2D sample_in_room(const Room& room, Rng& rng) {
  double x0 = room.polygon[0].x, x1 = x0, y0 = room.polygon[0].y, y1 = y0;
  for (const auto& p : room.polygon) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  std::uniform_real_distribution<double> ux(x0, x1);
  std::uniform_real_distribution<double> uy(y0, y1);
  for (;;) {
    const Point2D p{ux(rng), uy(rng)};
    if (geom::contains(room.polygon, p)) return p;
  }
}

// points_per_room uniform positions per room; profiles are used round-robin.
inline FingerprintDb synth_survey(const FloorPlan& plan, std::span<const ApCalibration> cals,
                                  std::span<const PhoneProfile> profiles, std::size_t points_per_room, Rng& rng,
                                  const RssSynthConfig& cfg = {}) {
  if (points_per_room < 1) throw Error(ErrorCode::validation, "synth_survey: points_per_room must be >= 1");
  if (profiles.empty()) throw Error(ErrorCode::validation, "synth_survey: need at least one profile");
  FingerprintDb db;
  db.ap_order = plan.ap_order();
  std::size_t counter = 0;
  for (const auto& room : plan.rooms) {
    for (std::size_t i = 0; i < points_per_room; ++i) {
      const auto& profile = profiles[counter++ % profiles.size()];
      const Point2D p = sample_in_room(room, rng);
      db.add(room.id, make_fingerprint(db.ap_order, synth_scan(p, 0.0, plan, cals, profile, rng, cfg)));
    }
  }
  return db;
}

// ---------------------------------------------------------------------------
// Environment

struct EnvironmentConfig {
  double baseline_temperature = 21.0;  // degC
  double base_illuminance = 250.0;     // lux with lights off, curtains down
  double baseline_humidity = 45.0;     // %RH
  double drift_temperature = 0.2;      // amplitude, degC
  double drift_illuminance = 10.0;     // amplitude, lux
  double drift_humidity = 2.0;
  double drift_period = 3600.0;        // s
  double fan_cooling_per_min = 0.1;    // degC/min toward baseline
  double occupant_heating_per_min = 0.02;
  double light_lux = 200.0;
  double curtain_lux = 300.0;          // daytime only
  double day_start = 7.0 * 3600.0;     // seconds into the day
  double day_end = 19.0 * 3600.0;
  std::uint64_t seed = 1;
};

// Occupant count of a room at time t.
using OccupancyTimeline = std::function<std::size_t(const RoomId&, double t)>;

class EnvironmentSim {
 public:
  EnvironmentSim(const FloorPlan& plan, EnvironmentConfig cfg, double start_t = 0.0) : cfg_(cfg), now_(start_t) {
    Rng rng = derived_rng(cfg.seed, 0xe17);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    for (const auto& r : plan.rooms) rooms_[r.id] = {0.0, phase(rng), phase(rng), phase(rng)};
  }

  void set_temperature_excess(const RoomId& room, double excess) { rooms_.at(room).excess = excess; }

  // Integrates the temperature state from now() to t with the given actuators
  // and occupancy held constant.
  void advance_to(double t, std::span<const NodeRecord> nodes, const OccupancyTimeline& occupancy = {}) {
    const double dt_min = (t - now_) / 60.0;
    if (dt_min <= 0.0) return;
    for (auto& [id, st] : rooms_) {
      bool fan_on = false;
      for (const auto& n : nodes)
        fan_on = fan_on || (n.room == id && n.capability == Capability::fan && n.status == NodeStatus::on);
      const double occupants = occupancy ? static_cast<double>(occupancy(id, now_)) : 0.0;
      st.excess += cfg_.occupant_heating_per_min * occupants * dt_min;
      if (fan_on) {
        if (st.excess > 0.0) st.excess = std::max(0.0, st.excess - cfg_.fan_cooling_per_min * dt_min);
        else st.excess = std::min(0.0, st.excess + cfg_.fan_cooling_per_min * dt_min);
      }
    }
    now_ = t;
  }

  double now() const { return now_; }

  double temperature(const RoomId& room) const {
    const auto& st = rooms_.at(room);
    return cfg_.baseline_temperature + st.excess + drift(cfg_.drift_temperature, st.phase_t);
  }

  double illuminance(const RoomId& room, std::span<const NodeRecord> nodes) const {
    const auto& st = rooms_.at(room);
    bool light = false;
    bool curtain_up = false;
    for (const auto& n : nodes) {
      if (n.room != room) continue;
      light = light || (n.capability == Capability::light && n.status == NodeStatus::on);
      curtain_up = curtain_up || (n.capability == Capability::curtain && n.status == NodeStatus::up);
    }
    const double tod = std::fmod(now_, 86400.0);
    const bool daytime = tod >= cfg_.day_start && tod < cfg_.day_end;
    return cfg_.base_illuminance + drift(cfg_.drift_illuminance, st.phase_l) + (light ? cfg_.light_lux : 0.0) +
           (curtain_up && daytime ? cfg_.curtain_lux : 0.0);
  }

  double humidity(const RoomId& room) const {
    return cfg_.baseline_humidity + drift(cfg_.drift_humidity, rooms_.at(room).phase_h);
  }

  std::optional<SensorReading> sample(const NodeRecord& sensor, std::span<const NodeRecord> nodes) const {
    if (sensor.kind != NodeKind::sensor || !rooms_.contains(sensor.room)) return std::nullopt;
    double value = 0.0;
    std::string metric(to_string(sensor.capability));
    switch (sensor.capability) {
      case Capability::temperature: value = temperature(sensor.room); break;
      case Capability::illuminance: value = illuminance(sensor.room, nodes); break;
      case Capability::humidity: value = humidity(sensor.room); break;
      default: return std::nullopt;
    }
    return SensorReading{sensor.id, metric, value, sensor.room, std::nullopt, now_};
  }

 private:
  struct RoomState {
    double excess = 0.0;
    double phase_t = 0.0;
    double phase_l = 0.0;
    double phase_h = 0.0;
  };

  double drift(double amplitude, double phase) const {
    return amplitude * std::sin(2.0 * std::numbers::pi * now_ / cfg_.drift_period + phase);
  }

  EnvironmentConfig cfg_;
  double now_;
  std::map<RoomId, RoomState> rooms_;
};

// Reading stream from every sensor in `nodes` every `interval` seconds over
// (t_start, t_end]; actuator statuses come from `actuators` at each tick.
inline std::vector<SensorReading> synth_environment(const FloorPlan& plan, std::span<const NodeRecord> nodes,
                                                    const OccupancyTimeline& occupancy,
                                                    const std::function<std::vector<NodeRecord>(double)>& actuators,
                                                    double t_start, double t_end, double interval,
                                                    const EnvironmentConfig& cfg = {}) {
  if (!(interval > 0.0)) throw Error(ErrorCode::validation, "synth_environment: interval must be > 0");
  EnvironmentSim sim(plan, cfg, t_start);
  std::vector<SensorReading> out;
  std::vector<NodeRecord> state(nodes.begin(), nodes.end());
  for (double t = t_start + interval; t <= t_end + 1e-9; t += interval) {
    sim.advance_to(t, state, occupancy);
    if (actuators) state = actuators(t);
    for (const auto& n : state)
      if (auto r = sim.sample(n, state)) out.push_back(*r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario file

inline nlohmann::json to_json(const PhoneProfile& p) {
  return {{"name", p.name},
          {"rss_bias", p.rss_bias},
          {"rss_noise_sigma", p.rss_noise_sigma},
          {"imu_accel_noise_sigma", p.imu_accel_noise_sigma},
          {"scan_interval", p.scan_interval}};
}

inline PhoneProfile profile_from_json(const nlohmann::json& j) {
  PhoneProfile p;
  p.name = j.at("name").get<std::string>();
  p.rss_bias = j.value("rss_bias", p.rss_bias);
  p.rss_noise_sigma = j.value("rss_noise_sigma", p.rss_noise_sigma);
  p.imu_accel_noise_sigma = j.value("imu_accel_noise_sigma", p.imu_accel_noise_sigma);
  p.scan_interval = j.value("scan_interval", p.scan_interval);
  p.validate();
  return p;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::not_found, "cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::parse, path.string() + ": " + e.what());
  }
}

inline FloorPlan load_floorplan_file(const std::filesystem::path& path) { return floorplan_from_json(read_json_file(path)); }

// Relative "plan" and "nodes" paths resolve against the scenario's directory.
inline Scenario load_scenario(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  const auto base = path.parent_path();
  Scenario sc;
  try {
    sc.plan = load_floorplan_file(base / j.at("plan").get<std::string>());
    if (j.contains("nodes")) sc.nodes = nodes_from_json(read_json_file(base / j.at("nodes").get<std::string>()));
    sc.true_calibrations = calibrations_from_json(j.at("calibrations"));
    for (const auto& w : j.at("waypoints")) sc.waypoints.push_back(point_from_json(w));
    for (const auto& c : j.at("checkpoints"))
      sc.checkpoints.push_back({c.at("index").get<std::size_t>(), point_from_json(c.at("point")), c.at("room").get<std::string>()});
    sc.walk_speed = j.value("walk_speed", sc.walk_speed);
    sc.runs = j.value("runs", sc.runs);
    sc.rng_seed = j.value("seed", sc.rng_seed);
    sc.survey_points_per_room = j.value("survey_points_per_room", sc.survey_points_per_room);
    if (j.contains("profiles")) {
      sc.profiles.clear();
      for (const auto& p : j.at("profiles")) sc.profiles.push_back(profile_from_json(p));
    }
    if (j.contains("user")) sc.user = user_from_json(j.at("user"));
    if (j.contains("stride_length")) sc.pdr.stride_length = j.at("stride_length").get<double>();
    sc.tracker.stride_length = sc.pdr.stride_length;
    if (j.contains("n_particles")) sc.tracker.n_particles = j.at("n_particles").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, path.string() + ": " + e.what());
  }
  sc.validate();
  return sc;
}

}  // namespace syndesi
