#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "syndesi/error.hpp"
#include "syndesi/floorplan.hpp"

namespace syndesi {

using NodeId = std::string;
using UserId = std::string;

enum class NodeKind { sensor, actuator };
enum class Capability { light, fan, curtain, temperature, illuminance, humidity };
enum class NodeStatus { none, on, off, up, down };
enum class ActuationCause { manual, automation };

inline std::string_view to_string(NodeKind k) { return k == NodeKind::sensor ? "sensor" : "actuator"; }

inline std::string_view to_string(Capability c) {
  switch (c) {
    case Capability::light: return "light";
    case Capability::fan: return "fan";
    case Capability::curtain: return "curtain";
    case Capability::temperature: return "temperature";
    case Capability::illuminance: return "illuminance";
    case Capability::humidity: return "humidity";
  }
  return "?";
}

inline std::string_view to_string(NodeStatus s) {
  switch (s) {
    case NodeStatus::none: return "none";
    case NodeStatus::on: return "on";
    case NodeStatus::off: return "off";
    case NodeStatus::up: return "up";
    case NodeStatus::down: return "down";
  }
  return "?";
}

inline std::string_view to_string(ActuationCause c) { return c == ActuationCause::manual ? "manual" : "automation"; }

inline NodeKind parse_node_kind(std::string_view s) {
  if (s == "sensor") return NodeKind::sensor;
  if (s == "actuator") return NodeKind::actuator;
  throw Error(ErrorCode::validation, "unknown node kind '" + std::string(s) + "'");
}

inline Capability parse_capability(std::string_view s) {
  for (auto c : {Capability::light, Capability::fan, Capability::curtain, Capability::temperature,
                 Capability::illuminance, Capability::humidity})
    if (to_string(c) == s) return c;
  throw Error(ErrorCode::validation, "unknown capability '" + std::string(s) + "'");
}

inline NodeStatus parse_node_status(std::string_view s) {
  for (auto v : {NodeStatus::none, NodeStatus::on, NodeStatus::off, NodeStatus::up, NodeStatus::down})
    if (to_string(v) == s) return v;
  throw Error(ErrorCode::invalid_status, "unknown status '" + std::string(s) + "'");
}

inline ActuationCause parse_cause(std::string_view s) {
  if (s == "manual") return ActuationCause::manual;
  if (s == "automation") return ActuationCause::automation;
  throw Error(ErrorCode::validation, "unknown cause '" + std::string(s) + "'");
}

inline bool is_actuator_capability(Capability c) {
  return c == Capability::light || c == Capability::fan || c == Capability::curtain;
}

inline bool status_valid_for(Capability c, NodeStatus s) {
  if (c == Capability::curtain) return s == NodeStatus::up || s == NodeStatus::down;
  if (is_actuator_capability(c)) return s == NodeStatus::on || s == NodeStatus::off;
  return s == NodeStatus::none;
}

inline NodeStatus initial_status(Capability c) {
  if (c == Capability::curtain) return NodeStatus::down;
  return is_actuator_capability(c) ? NodeStatus::off : NodeStatus::none;
}

struct NodeRecord {
  NodeId id;
  NodeKind kind = NodeKind::sensor;
  RoomId room;
  Capability capability = Capability::temperature;
  NodeStatus status = NodeStatus::none;

  friend bool operator==(const NodeRecord&, const NodeRecord&) = default;
};

struct SensorReading {
  std::string source;  // node id or user id
  std::string metric;  // temperature (degC), illuminance (lux), humidity (%RH) or another tag
  double value = 0.0;
  RoomId room;
  std::optional<UserId> user;
  double t = 0.0;

  friend bool operator==(const SensorReading&, const SensorReading&) = default;
};

struct EnvPrefs {
  double desired_temperature = 22.0;
  double desired_illuminance = 500.0;
  double hysteresis_temp = 0.5;
  double hysteresis_lux = 50.0;

  friend bool operator==(const EnvPrefs&, const EnvPrefs&) = default;
};

struct UserRecord {
  UserId id;
  EnvPrefs prefs;
  bool automation_enabled = true;

  friend bool operator==(const UserRecord&, const UserRecord&) = default;
};

struct ActuationRecord {
  std::size_t seq = 0;
  double t = 0.0;
  NodeId node;
  NodeStatus old_status = NodeStatus::none;
  NodeStatus new_status = NodeStatus::none;
  ActuationCause cause = ActuationCause::manual;

  friend bool operator==(const ActuationRecord&, const ActuationRecord&) = default;
};

// ---------------------------------------------------------------------------
// JSON forms

inline nlohmann::json to_json(const NodeRecord& n) {
  return {{"id", n.id},
          {"kind", to_string(n.kind)},
          {"room", n.room},
          {"capability", to_string(n.capability)},
          {"status", to_string(n.status)}};
}

inline NodeRecord node_from_json(const nlohmann::json& j) {
  try {
    NodeRecord n;
    n.id = j.at("id").get<std::string>();
    n.kind = parse_node_kind(j.at("kind").get<std::string>());
    n.room = j.at("room").get<std::string>();
    n.capability = parse_capability(j.at("capability").get<std::string>());
    n.status = j.contains("status") ? parse_node_status(j.at("status").get<std::string>()) : initial_status(n.capability);
    return n;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::validation, std::string("node record: ") + e.what());
  }
}

inline nlohmann::json to_json(const SensorReading& r) {
  nlohmann::json j{{"source", r.source}, {"metric", r.metric}, {"value", r.value}, {"room", r.room}, {"t", r.t}};
  if (r.user) j["user"] = *r.user;
  return j;
}

inline SensorReading reading_from_json(const nlohmann::json& j) {
  try {
    SensorReading r;
    r.source = j.at("source").get<std::string>();
    r.metric = j.at("metric").get<std::string>();
    r.value = j.at("value").get<double>();
    r.room = j.at("room").get<std::string>();
    if (j.contains("user") && !j.at("user").is_null()) r.user = j.at("user").get<std::string>();
    r.t = j.at("t").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::validation, std::string("sensor reading: ") + e.what());
  }
}

inline nlohmann::json to_json(const EnvPrefs& p) {
  return {{"desired_temperature", p.desired_temperature},
          {"desired_illuminance", p.desired_illuminance},
          {"hysteresis_temp", p.hysteresis_temp},
          {"hysteresis_lux", p.hysteresis_lux}};
}

inline EnvPrefs prefs_from_json(const nlohmann::json& j) {
  EnvPrefs p;
  p.desired_temperature = j.value("desired_temperature", p.desired_temperature);
  p.desired_illuminance = j.value("desired_illuminance", p.desired_illuminance);
  p.hysteresis_temp = j.value("hysteresis_temp", p.hysteresis_temp);
  p.hysteresis_lux = j.value("hysteresis_lux", p.hysteresis_lux);
  if (p.hysteresis_temp < 0.0 || p.hysteresis_lux < 0.0)
    throw Error(ErrorCode::validation, "prefs: hysteresis must be >= 0");
  return p;
}

inline nlohmann::json to_json(const UserRecord& u) {
  return {{"id", u.id}, {"prefs", to_json(u.prefs)}, {"automation_enabled", u.automation_enabled}};
}

inline UserRecord user_from_json(const nlohmann::json& j) {
  try {
    UserRecord u;
    u.id = j.at("id").get<std::string>();
    if (j.contains("prefs")) u.prefs = prefs_from_json(j.at("prefs"));
    u.automation_enabled = j.value("automation_enabled", true);
    return u;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::validation, std::string("user record: ") + e.what());
  }
}

inline nlohmann::json to_json(const ActuationRecord& a) {
  return {{"seq", a.seq},
          {"t", a.t},
          {"node", a.node},
          {"old", to_string(a.old_status)},
          {"new", to_string(a.new_status)},
          {"cause", to_string(a.cause)}};
}

inline ActuationRecord actuation_from_json(const nlohmann::json& j) {
  return {j.at("seq").get<std::size_t>(), j.at("t").get<double>(), j.at("node").get<std::string>(),
          parse_node_status(j.at("old").get<std::string>()), parse_node_status(j.at("new").get<std::string>()),
          parse_cause(j.at("cause").get<std::string>())};
}

inline std::vector<NodeRecord> nodes_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::parse, "node fixture: expected an array");
  std::vector<NodeRecord> out;
  for (const auto& e : j) out.push_back(node_from_json(e));
  return out;
}

// ---------------------------------------------------------------------------
// Clock

class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() const = 0;
};

class RealClock : public Clock {
 public:
  double now() const override {
    using namespace std::chrono;
    return duration<double>(system_clock::now().time_since_epoch()).count();
  }
};

class VirtualClock : public Clock {
 public:
  explicit VirtualClock(double start = 0.0) : now_(start) {}
  double now() const override { return now_.load(); }
  void set(double t) { now_.store(t); }
  void advance(double dt) { now_.store(now_.load() + dt); }

 private:
  std::atomic<double> now_;
};

// ---------------------------------------------------------------------------
// Store: append-only logs plus current-state tables.

struct Store {
  std::map<NodeId, NodeRecord> nodes;
  std::vector<NodeRecord> registrations;  // initial records, registration order
  std::map<UserId, UserRecord> users;
  std::vector<SensorReading> readings;
  std::vector<ActuationRecord> actuations;

  nlohmann::json snapshot() const {
    nlohmann::json regs = nlohmann::json::array();
    for (const auto& n : registrations) regs.push_back(to_json(n));
    nlohmann::json us = nlohmann::json::array();
    for (const auto& [_, u] : users) us.push_back(to_json(u));
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : readings) rs.push_back(to_json(r));
    nlohmann::json as = nlohmann::json::array();
    for (const auto& a : actuations) as.push_back(to_json(a));
    return {{"version", 1}, {"registrations", regs}, {"users", us}, {"readings", rs}, {"actuations", as}};
  }

  // Rebuilds current node state by replaying the actuation log.
  static Store restore(const nlohmann::json& j) {
    Store s;
    try {
      for (const auto& n : j.at("registrations")) {
        auto rec = node_from_json(n);
        s.nodes[rec.id] = rec;
        s.registrations.push_back(rec);
      }
      for (const auto& u : j.at("users")) {
        auto rec = user_from_json(u);
        s.users[rec.id] = rec;
      }
      for (const auto& r : j.at("readings")) s.readings.push_back(reading_from_json(r));
      for (const auto& a : j.at("actuations")) {
        auto rec = actuation_from_json(a);
        auto it = s.nodes.find(rec.node);
        if (it == s.nodes.end()) throw Error(ErrorCode::validation, "snapshot: actuation of unknown node '" + rec.node + "'");
        it->second.status = rec.new_status;
        s.actuations.push_back(rec);
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse, std::string("snapshot: ") + e.what());
    }
    return s;
  }
};

// Final status of every node obtained by applying the actuation log, in
// sequence order, to the registered initial records.
inline std::map<NodeId, NodeStatus> replay_actuations(std::span<const NodeRecord> registrations,
                                                      std::span<const ActuationRecord> log) {
  std::map<NodeId, NodeStatus> status;
  for (const auto& n : registrations) status[n.id] = n.status;
  std::vector<ActuationRecord> ordered(log.begin(), log.end());
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.seq < b.seq; });
  for (const auto& a : ordered) {
    auto it = status.find(a.node);
    if (it == status.end()) throw Error(ErrorCode::validation, "replay: unknown node '" + a.node + "'");
    if (it->second != a.old_status)
      throw Error(ErrorCode::validation, "replay: record " + std::to_string(a.seq) + " does not follow from prior state");
    it->second = a.new_status;
  }
  return status;
}

// ---------------------------------------------------------------------------
// Gateway service core

class Gateway {
 public:
  using ReadingListener = std::function<void(const SensorReading&)>;

  explicit Gateway(std::shared_ptr<const Clock> clock = std::make_shared<VirtualClock>())
      : clock_(std::move(clock)) {}

  const Clock& clock() const { return *clock_; }

  void register_node(NodeRecord n) {
    if (n.id.empty()) throw Error(ErrorCode::validation, "register_node: empty id");
    if ((n.kind == NodeKind::actuator) != is_actuator_capability(n.capability))
      throw Error(ErrorCode::validation, "register_node '" + n.id + "': capability inconsistent with kind");
    n.status = initial_status(n.capability);
    std::unique_lock lock(mu_);
    if (store_.nodes.contains(n.id)) throw Error(ErrorCode::conflict, "register_node: duplicate id '" + n.id + "'");
    store_.nodes.emplace(n.id, n);
    store_.registrations.push_back(n);
  }

  std::vector<NodeRecord> list_nodes(const std::optional<RoomId>& room = std::nullopt) const {
    std::shared_lock lock(mu_);
    std::vector<NodeRecord> out;
    for (const auto& [_, n] : store_.nodes)
      if (!room || n.room == *room) out.push_back(n);
    return out;
  }

  std::optional<NodeRecord> node(const NodeId& id) const {
    std::shared_lock lock(mu_);
    auto it = store_.nodes.find(id);
    if (it == store_.nodes.end()) return std::nullopt;
    return it->second;
  }

  // Returns true when the status changed (and a record was appended).
  bool mediate(const NodeId& id, NodeStatus status, ActuationCause cause = ActuationCause::manual) {
    std::unique_lock lock(mu_);
    auto it = store_.nodes.find(id);
    if (it == store_.nodes.end()) throw Error(ErrorCode::not_found, "mediate: unknown node '" + id + "'");
    NodeRecord& n = it->second;
    if (n.kind != NodeKind::actuator) throw Error(ErrorCode::invalid_target, "mediate: '" + id + "' is a sensor");
    if (!status_valid_for(n.capability, status))
      throw Error(ErrorCode::invalid_status, "mediate: status '" + std::string(to_string(status)) + "' invalid for " +
                                                 std::string(to_string(n.capability)));
    if (n.status == status) return false;
    store_.actuations.push_back({store_.actuations.size(), clock_->now(), id, n.status, status, cause});
    n.status = status;
    return true;
  }

  void ingest_reading(const SensorReading& r) {
    if (r.source.empty()) throw Error(ErrorCode::validation, "ingest_reading: empty source");
    if (r.metric.empty()) throw Error(ErrorCode::validation, "ingest_reading: empty metric");
    if (r.room.empty()) throw Error(ErrorCode::validation, "ingest_reading: missing room stamp");
    if (!std::isfinite(r.value)) throw Error(ErrorCode::validation, "ingest_reading: non-finite value");
    if (!(r.t >= 0.0) || !std::isfinite(r.t)) throw Error(ErrorCode::validation, "ingest_reading: negative time");
    ReadingListener listener;
    {
      std::unique_lock lock(mu_);
      store_.readings.push_back(r);
      listener = listener_;
    }
    if (listener) listener(r);
  }

  std::vector<SensorReading> query_readings(const std::optional<RoomId>& room, const std::optional<std::string>& metric,
                                            double t_from, double t_to) const {
    if (t_from > t_to) throw Error(ErrorCode::validation, "query_readings: inverted time range");
    std::vector<SensorReading> out;
    {
      std::shared_lock lock(mu_);
      for (const auto& r : store_.readings) {
        if (r.t < t_from || r.t > t_to) continue;
        if (room && r.room != *room) continue;
        if (metric && r.metric != *metric) continue;
        out.push_back(r);
      }
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    return out;
  }

  void put_user(const UserRecord& u) {
    if (u.id.empty()) throw Error(ErrorCode::validation, "put_user: empty id");
    if (u.prefs.hysteresis_temp < 0.0 || u.prefs.hysteresis_lux < 0.0)
      throw Error(ErrorCode::validation, "put_user: hysteresis must be >= 0");
    std::unique_lock lock(mu_);
    store_.users[u.id] = u;
  }

  std::optional<UserRecord> user(const UserId& id) const {
    std::shared_lock lock(mu_);
    auto it = store_.users.find(id);
    if (it == store_.users.end()) return std::nullopt;
    return it->second;
  }

  std::vector<UserRecord> users() const {
    std::shared_lock lock(mu_);
    std::vector<UserRecord> out;
    for (const auto& [_, u] : store_.users) out.push_back(u);
    return out;
  }

  std::vector<ActuationRecord> actuation_log() const {
    std::shared_lock lock(mu_);
    return store_.actuations;
  }

  std::vector<NodeRecord> registrations() const {
    std::shared_lock lock(mu_);
    return store_.registrations;
  }

  void set_reading_listener(ReadingListener l) {
    std::unique_lock lock(mu_);
    listener_ = std::move(l);
  }

  nlohmann::json snapshot() const {
    std::shared_lock lock(mu_);
    return store_.snapshot();
  }

  void restore(const nlohmann::json& j) {
    Store s = Store::restore(j);
    std::unique_lock lock(mu_);
    store_ = std::move(s);
  }

  void save_snapshot(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::io, "cannot write snapshot '" + path + "'");
    out << snapshot().dump() << '\n';
  }

  void load_snapshot(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::not_found, "cannot read snapshot '" + path + "'");
    try {
      restore(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::parse, std::string("snapshot: ") + e.what());
    }
  }

 private:
  std::shared_ptr<const Clock> clock_;
  mutable std::shared_mutex mu_;
  Store store_;
  ReadingListener listener_;
};

// ---------------------------------------------------------------------------
// Polling scheduler

// Produces the current value of an environmental sensor.
using SensorSampler = std::function<std::optional<SensorReading>(const NodeRecord&, double t)>;

// Resolves the interval to schedule at time t; nullopt means polling is
// currently disabled.
using IntervalPolicy = std::function<std::optional<double>(double t, double base_interval)>;

class PollingScheduler {
 public:
  PollingScheduler(Gateway& gateway, std::vector<NodeId> sensors, double interval, SensorSampler sampler,
                   double start_t = 0.0)
      : gateway_(gateway), sensors_(std::move(sensors)), interval_(interval), sampler_(std::move(sampler)) {
    if (!(interval > 0.0)) throw Error(ErrorCode::validation, "polling: interval must be > 0");
    next_tick_ = start_t + interval;
  }

  // Applies from the next scheduling decision; the pending tick keeps its time.
  void set_interval(double interval) {
    if (!(interval > 0.0)) throw Error(ErrorCode::validation, "polling: interval must be > 0");
    std::lock_guard lock(mu_);
    interval_ = interval;
  }

  void set_policy(IntervalPolicy policy) {
    std::lock_guard lock(mu_);
    policy_ = std::move(policy);
  }

  double interval() const {
    std::lock_guard lock(mu_);
    return interval_;
  }

  // Fires every tick with time <= t; returns the number of readings ingested.
  std::size_t run_until(double t) {
    std::size_t ingested = 0;
    for (;;) {
      double tick;
      {
        std::lock_guard lock(mu_);
        if (next_tick_ > t) break;
        tick = next_tick_;
      }
      const auto effective = current_interval(tick);
      if (effective) {
        for (const auto& id : sensors_) {
          const auto n = gateway_.node(id);
          if (!n || n->kind != NodeKind::sensor) continue;
          if (auto r = sampler_(*n, tick)) {
            gateway_.ingest_reading(*r);
            ++ingested;
          }
        }
        ticks_.push_back(tick);
      }
      std::lock_guard lock(mu_);
      next_tick_ = tick + (effective ? *effective : interval_);
    }
    return ingested;
  }

  // Runs against a real clock until `stop` becomes true.
  void run_realtime(const Clock& clock, const std::atomic<bool>& stop,
                    std::chrono::milliseconds poll = std::chrono::milliseconds(200)) {
    while (!stop.load()) {
      run_until(clock.now());
      std::this_thread::sleep_for(poll);
    }
  }

  const std::vector<double>& tick_times() const { return ticks_; }

 private:
  std::optional<double> current_interval(double t) const {
    std::lock_guard lock(mu_);
    if (policy_) return policy_(t, interval_);
    return interval_;
  }

  Gateway& gateway_;
  std::vector<NodeId> sensors_;
  double interval_;
  SensorSampler sampler_;
  IntervalPolicy policy_;
  double next_tick_ = 0.0;
  std::vector<double> ticks_;
  mutable std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Client interface used by the automation engine and the experiment harness.

class GatewayClient {
 public:
  virtual ~GatewayClient() = default;
  virtual std::vector<NodeRecord> list_nodes(const std::optional<RoomId>& room) = 0;
  virtual void mediate(const NodeId& node, NodeStatus status, ActuationCause cause) = 0;
  virtual std::optional<UserRecord> user(const UserId& id) = 0;
  virtual void put_user(const UserRecord& u) = 0;
};

class LocalGatewayClient : public GatewayClient {
 public:
  explicit LocalGatewayClient(Gateway& gw) : gw_(gw) {}
  std::vector<NodeRecord> list_nodes(const std::optional<RoomId>& room) override { return gw_.list_nodes(room); }
  void mediate(const NodeId& node, NodeStatus status, ActuationCause cause) override {
    gw_.mediate(node, status, cause);
  }
  std::optional<UserRecord> user(const UserId& id) override { return gw_.user(id); }
  void put_user(const UserRecord& u) override { gw_.put_user(u); }

 private:
  Gateway& gw_;
};

}  // namespace syndesi
