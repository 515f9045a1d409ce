#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "syndesi/error.hpp"
#include "syndesi/gateway.hpp"

namespace syndesi {

class OccupancyMap {
 public:
  std::optional<RoomId> room_of(const UserId& user) const {
    auto it = where_.find(user);
    if (it == where_.end()) return std::nullopt;
    return it->second;
  }

  std::set<UserId> occupants(const RoomId& room) const {
    auto it = rooms_.find(room);
    return it == rooms_.end() ? std::set<UserId>{} : it->second;
  }

  void move(const UserId& user, const RoomId& room) {
    if (auto old = room_of(user)) {
      auto& set = rooms_[*old];
      set.erase(user);
      if (set.empty()) rooms_.erase(*old);
    }
    rooms_[room].insert(user);
    where_[user] = room;
  }

  const std::map<RoomId, std::set<UserId>>& rooms() const { return rooms_; }

  friend bool operator==(const OccupancyMap&, const OccupancyMap&) = default;

 private:
  std::map<RoomId, std::set<UserId>> rooms_;
  std::map<UserId, RoomId> where_;
};

enum class AutomationCause { location_change, env_reading };

inline std::string_view to_string(AutomationCause c) {
  return c == AutomationCause::location_change ? "location_change" : "env_reading";
}

struct AutomationAction {
  NodeId node;
  NodeStatus status = NodeStatus::off;

  friend bool operator==(const AutomationAction&, const AutomationAction&) = default;
};

struct AutomationEvent {
  double t = 0.0;
  UserId user;
  AutomationCause cause = AutomationCause::location_change;
  std::vector<AutomationAction> actions;
};

struct BatteryPolicy {
  double base_interval = 60.0;
  double half_threshold = 50.0;
  double off_threshold = 20.0;

  void validate() const {
    if (!(base_interval > 0.0)) throw Error(ErrorCode::validation, "battery policy: base_interval must be > 0");
    if (!(0.0 < off_threshold && off_threshold < half_threshold && half_threshold <= 100.0))
      throw Error(ErrorCode::validation, "battery policy: need 0 < off < half <= 100");
  }
};

// Polling interval for a battery level; nullopt means sensing and
// localization are disabled. Below half_threshold the rate halves (the
// interval doubles).
inline std::optional<double> effective_polling(double battery, const BatteryPolicy& p) {
  p.validate();
  if (!(battery >= 0.0 && battery <= 100.0))
    throw Error(ErrorCode::validation, "effective_polling: battery must be in [0, 100]");
  if (battery < p.off_threshold) return std::nullopt;
  if (battery < p.half_threshold) return 2.0 * p.base_interval;
  return p.base_interval;
}

inline bool occupancy_switched(Capability c) { return c == Capability::light || c == Capability::fan; }

// Lights and fans in the new room go on; those in the vacated room go off
// once nobody is left there. Curtains are left alone.
inline std::pair<AutomationEvent, OccupancyMap> on_location_change(double t, const UserId& user, const RoomId& new_room,
                                                                   const OccupancyMap& occ,
                                                                   std::span<const NodeRecord> nodes,
                                                                   const std::set<RoomId>& known_rooms = {}) {
  if (new_room.empty() || (!known_rooms.empty() && !known_rooms.contains(new_room)))
    throw Error(ErrorCode::validation, "on_location_change: unknown room '" + new_room + "'");
  OccupancyMap next = occ;
  const auto old_room = occ.room_of(user);
  next.move(user, new_room);

  AutomationEvent ev{t, user, AutomationCause::location_change, {}};
  for (const auto& n : nodes)
    if (n.kind == NodeKind::actuator && n.room == new_room && occupancy_switched(n.capability))
      ev.actions.push_back({n.id, NodeStatus::on});
  if (old_room && *old_room != new_room && next.occupants(*old_room).empty()) {
    for (const auto& n : nodes)
      if (n.kind == NodeKind::actuator && n.room == *old_room && occupancy_switched(n.capability))
        ev.actions.push_back({n.id, NodeStatus::off});
  }
  return {std::move(ev), std::move(next)};
}

using PrefsLookup = std::function<std::optional<EnvPrefs>(const UserId&)>;

// Setpoint rules for an occupied room, governed by the lowest-id occupant.
inline std::optional<AutomationEvent> on_env_reading(const SensorReading& r, const std::set<UserId>& occupants,
                                                     const PrefsLookup& prefs_of, std::span<const NodeRecord> nodes) {
  if (occupants.empty()) return std::nullopt;
  const UserId& governor = *occupants.begin();
  const auto prefs = prefs_of(governor);
  if (!prefs) return std::nullopt;

  AutomationEvent ev{r.t, governor, AutomationCause::env_reading, {}};
  auto set_all = [&](Capability cap, NodeStatus status) {
    for (const auto& n : nodes)
      if (n.kind == NodeKind::actuator && n.room == r.room && n.capability == cap) ev.actions.push_back({n.id, status});
  };

  if (r.metric == "temperature") {
    if (r.value > prefs->desired_temperature + prefs->hysteresis_temp) set_all(Capability::fan, NodeStatus::on);
    else if (r.value < prefs->desired_temperature - prefs->hysteresis_temp) set_all(Capability::fan, NodeStatus::off);
  } else if (r.metric == "illuminance") {
    if (r.value < prefs->desired_illuminance - prefs->hysteresis_lux) {
      set_all(Capability::light, NodeStatus::on);
      set_all(Capability::curtain, NodeStatus::up);
    } else if (r.value > prefs->desired_illuminance + prefs->hysteresis_lux) {
      bool curtain_open = false;
      for (const auto& n : nodes)
        curtain_open = curtain_open || (n.room == r.room && n.capability == Capability::curtain && n.status != NodeStatus::down);
      if (curtain_open) set_all(Capability::curtain, NodeStatus::down);
      else set_all(Capability::light, NodeStatus::off);
    }
  }
  if (ev.actions.empty()) return std::nullopt;
  return ev;
}

// ---------------------------------------------------------------------------
// Loop

struct LocationUpdate {
  double t = 0.0;
  UserId user;
  RoomId room;
};

struct ActionOutcome {
  AutomationAction action;
  bool ok = true;
  int attempts = 0;
  std::string error;
};

struct JournalEntry {
  AutomationEvent event;
  std::vector<ActionOutcome> outcomes;
};

inline nlohmann::json to_json(const JournalEntry& e) {
  nlohmann::json actions = nlohmann::json::array();
  for (const auto& o : e.outcomes) {
    nlohmann::json a{{"node", o.action.node}, {"status", to_string(o.action.status)}, {"ok", o.ok}};
    if (!o.ok) a["error"] = o.error;
    actions.push_back(a);
  }
  return {{"t", e.event.t}, {"user", e.event.user}, {"cause", to_string(e.event.cause)}, {"actions", actions}};
}

class AutomationEngine {
 public:
  explicit AutomationEngine(GatewayClient& gateway, std::set<RoomId> known_rooms = {})
      : gateway_(gateway), rooms_(std::move(known_rooms)) {}

  // Every journal entry is also written here as one JSON line.
  void set_journal_sink(std::ostream* sink) { sink_ = sink; }

  void on_location(const LocationUpdate& u) {
    if (occ_.room_of(u.user) == u.room) return;
    const auto nodes = gateway_.list_nodes(std::nullopt);
    auto [ev, next] = on_location_change(u.t, u.user, u.room, occ_, nodes, rooms_);
    occ_ = std::move(next);
    const auto rec = gateway_.user(u.user);
    if (!rec || !rec->automation_enabled) return;
    dispatch(std::move(ev));
  }

  void on_reading(const SensorReading& r) {
    const auto occupants = occ_.occupants(r.room);
    if (occupants.empty()) return;
    const auto nodes = gateway_.list_nodes(r.room);
    PrefsLookup prefs = [this](const UserId& id) -> std::optional<EnvPrefs> {
      const auto u = gateway_.user(id);
      if (!u || !u->automation_enabled) return std::nullopt;
      return u->prefs;
    };
    if (auto ev = on_env_reading(r, occupants, prefs, nodes)) dispatch(std::move(*ev));
  }

  // Merges both streams by timestamp; on equal timestamps location updates go first.
  void run(std::span<const LocationUpdate> locations, std::span<const SensorReading> readings) {
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < locations.size() || j < readings.size()) {
      if (j == readings.size() || (i < locations.size() && locations[i].t <= readings[j].t)) on_location(locations[i++]);
      else on_reading(readings[j++]);
    }
  }

  const OccupancyMap& occupancy() const { return occ_; }
  const std::vector<JournalEntry>& journal() const { return journal_; }

 private:
  void dispatch(AutomationEvent ev) {
    JournalEntry entry{ev, {}};
    for (const auto& a : ev.actions) {
      ActionOutcome out{a, false, 0, {}};
      for (int attempt = 0; attempt < 2 && !out.ok; ++attempt) {
        ++out.attempts;
        try {
          gateway_.mediate(a.node, a.status, ActuationCause::automation);
          out.ok = true;
          out.error.clear();
        } catch (const Error& e) {
          out.error = std::string(to_string(e.code())) + ": " + e.what();
        }
      }
      entry.outcomes.push_back(std::move(out));
    }
    if (sink_ != nullptr) *sink_ << to_json(entry).dump() << '\n' << std::flush;
    journal_.push_back(std::move(entry));
  }

  GatewayClient& gateway_;
  std::set<RoomId> rooms_;
  OccupancyMap occ_;
  std::vector<JournalEntry> journal_;
  std::ostream* sink_ = nullptr;
};

}  // namespace syndesi
