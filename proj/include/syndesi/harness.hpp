#pragma once

#include <cstdint>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "syndesi/automation.hpp"
#include "syndesi/error.hpp"
#include "syndesi/fingerprint.hpp"
#include "syndesi/floorplan.hpp"
#include "syndesi/gateway.hpp"
#include "syndesi/gateway_http.hpp"
#include "syndesi/simulator.hpp"
#include "syndesi/tracker.hpp"

namespace syndesi {

struct TrialResult {
  std::string profile;
  std::size_t run = 0;
  std::size_t checkpoint = 0;
  RoomId expected_room;
  std::optional<RoomId> recognized_room;
  int scans_used = 0;
  bool actuation_ok = false;
  bool in_office = false;

  bool correct() const { return recognized_room && *recognized_room == expected_room; }
};

struct Rate {
  std::size_t trials = 0;
  std::size_t hits = 0;

  double value() const { return trials == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(trials); }
  void add(bool hit) {
    ++trials;
    hits += hit ? 1 : 0;
  }
};

struct Metrics {
  std::vector<TrialResult> trials;
  std::size_t filter_updates = 0;
  std::size_t constraint_violations = 0;
  std::size_t tracker_reinits = 0;

  Rate overall() const { return rate([](const TrialResult&) { return true; }); }
  Rate in_office() const { return rate([](const TrialResult& t) { return t.in_office; }); }
  Rate corridor() const { return rate([](const TrialResult& t) { return !t.in_office; }); }

  // Actuation success over trials whose room was recognized correctly.
  Rate actuation_given_correct() const {
    Rate r;
    for (const auto& t : trials)
      if (t.correct()) r.add(t.actuation_ok);
    return r;
  }

  std::map<std::size_t, Rate> per_checkpoint() const {
    std::map<std::size_t, Rate> m;
    for (const auto& t : trials) m[t.checkpoint].add(t.correct());
    return m;
  }

  std::map<std::string, Rate> per_profile() const {
    std::map<std::string, Rate> m;
    for (const auto& t : trials) m[t.profile].add(t.correct());
    return m;
  }

 private:
  template <typename Pred>
  Rate rate(Pred pred) const {
    Rate r;
    for (const auto& t : trials)
      if (pred(t)) r.add(t.correct());
    return r;
  }
};

struct ExperimentOptions {
  bool track = true;
  int max_attempts = 3;
  TrainOptions train;
  std::ostream* journal = nullptr;
};

namespace detail {

inline bool occupancy_nodes_are(GatewayClient& gw, const RoomId& room, NodeStatus want) {
  for (const auto& n : gw.list_nodes(room))
    if (n.kind == NodeKind::actuator && occupancy_switched(n.capability) && n.status != want) return false;
  return true;
}

inline std::size_t nearest_step(const Walk& walk, Point2D p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < walk.steps.size(); ++i)
    if (distance(walk.steps[i].position, p) < distance(walk.steps[best].position, p)) best = i;
  return best;
}

inline std::size_t count_violations(const FloorPlan& plan, const ParticleSet& set) {
  std::size_t bad = 0;
  for (const auto& p : set.particles) {
    if (!(p.weight > 0.0)) continue;
    const Point2D pos = p.state.position();
    if (!room_at(plan, pos) || crosses_wall(plan, p.origin, pos)) ++bad;
  }
  return bad;
}

}  // namespace detail

// Drives every (profile, run) through the walk: the tracker follows the
// synthesized traces, and at each checkpoint the room recognizer feeds the
// automation engine. Actuation is verified only through the gateway client.
inline Metrics run_experiment(const Scenario& sc, const KnnModel& knn, const SvmModel& svm, GatewayClient& gateway,
                              const ExperimentOptions& opt = {}) {
  sc.validate();
  const Walk walk = synth_walk(sc);
  if (walk.steps.empty()) throw Error(ErrorCode::validation, "experiment: walk has no steps");

  std::set<RoomId> rooms;
  for (const auto& r : sc.plan.rooms) rooms.insert(r.id);
  gateway.put_user(sc.user);
  AutomationEngine engine(gateway, rooms);
  engine.set_journal_sink(opt.journal);

  Metrics m;
  std::optional<RoomId> last_room;
  double t_offset = 0.0;
  const double run_span = walk.duration() + 60.0;

  for (std::size_t pi = 0; pi < sc.profiles.size(); ++pi) {
    const auto& profile = sc.profiles[pi];
    for (std::size_t run = 0; run < sc.runs; ++run, t_offset += run_span) {
      Rng rng = derived_rng(sc.rng_seed, pi + 1, run);

      if (opt.track) {
        const auto imu = synth_imu(walk, profile, rng);
        const auto rss = synth_rss(walk, sc.plan, sc.true_calibrations, profile, rng);
        TrackOptions to;
        to.cfg = sc.tracker;
        to.cfg.rng_seed = rng();
        to.noise = sc.noise;
        to.pdr = sc.pdr;
        to.prior = PointPrior{walk.start, 0.5};
        to.observer = [&](TrackStage, const ParticleSet& set) {
          ++m.filter_updates;
          m.constraint_violations += detail::count_violations(sc.plan, set);
        };
        TrackDiagnostics diag;
        track(sc.plan, sc.true_calibrations, imu, rss, to, &diag);
        for (const auto& e : diag.events)
          if (e.what.find("reinit") != std::string::npos) ++m.tracker_reinits;
      }

      for (const auto& cp : sc.checkpoints) {
        const double t = t_offset + walk.steps[detail::nearest_step(walk, cp.point)].t;
        VectorSource source = [&]() -> std::optional<FingerprintVector> {
          const auto scan = synth_scan(cp.point, t, sc.plan, sc.true_calibrations, profile, rng);
          return make_fingerprint(knn.db.ap_order, scan);
        };
        const Recognition rec = recognize(source, knn, svm, opt.max_attempts);

        TrialResult tr;
        tr.profile = profile.name;
        tr.run = run;
        tr.checkpoint = cp.index;
        tr.expected_room = cp.expected_room;
        tr.recognized_room = rec.room;
        tr.scans_used = rec.scans_used;
        const Room* room = sc.plan.find_room(cp.expected_room);
        tr.in_office = room != nullptr && room->kind == RoomKind::office;

        if (rec.room) {
          try {
            engine.on_location({t, sc.user.id, *rec.room});
            bool ok = detail::occupancy_nodes_are(gateway, *rec.room, NodeStatus::on);
            if (last_room && *last_room != *rec.room)
              ok = ok && detail::occupancy_nodes_are(gateway, *last_room, NodeStatus::off);
            tr.actuation_ok = ok;
          } catch (const Error&) {
            tr.actuation_ok = false;
          }
          last_room = rec.room;
        }
        m.trials.push_back(std::move(tr));
      }
    }
  }
  return m;
}

inline FingerprintDb survey_for(const Scenario& sc) {
  Rng rng = derived_rng(sc.rng_seed, 0, 0xa11);
  return synth_survey(sc.plan, sc.true_calibrations, sc.profiles, sc.survey_points_per_room, rng);
}

// Survey, train and run against a fresh gateway seeded with the scenario's
// nodes. With a port the gateway is served over HTTP (0 picks a free port) and
// the harness talks to it through the network client.
inline Metrics run_full_experiment(const Scenario& sc, const ExperimentOptions& opt = {},
                                   std::optional<int> port = std::nullopt) {
  const auto db = survey_for(sc);
  const auto [knn, svm] = train(db, opt.train);
  Gateway gw;
  for (const auto& n : sc.nodes) gw.register_node(n);
  if (!port) {
    LocalGatewayClient client(gw);
    return run_experiment(sc, knn, svm, client, opt);
  }
  GatewayHttpServer server(gw);
  int bound = *port;
  if (bound == 0) bound = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] {
    if (*port == 0) server.listen_after_bind();
    else server.listen("127.0.0.1", bound);
  });
  server.wait_until_ready();
  if (!server.is_running()) {
    th.join();
    throw Error(ErrorCode::unavailable, "cannot listen on port " + std::to_string(*port));
  }
  try {
    HttpGatewayClient client("127.0.0.1", bound);
    auto m = run_experiment(sc, knn, svm, client, opt);
    server.stop();
    th.join();
    return m;
  } catch (...) {
    server.stop();
    th.join();
    throw;
  }
}

// ---------------------------------------------------------------------------
// Reports

inline void write_trials_csv(std::ostream& out, const Metrics& m) {
  out << "profile,run,checkpoint,expected_room,recognized_room,scans_used,actuation_ok\n";
  for (const auto& t : m.trials)
    out << t.profile << ',' << t.run << ',' << t.checkpoint << ',' << t.expected_room << ','
        << t.recognized_room.value_or("unknown") << ',' << t.scans_used << ',' << (t.actuation_ok ? "true" : "false")
        << '\n';
}

inline nlohmann::json to_json(const Rate& r) {
  return {{"trials", r.trials}, {"hits", r.hits}, {"rate", r.value()}};
}

inline nlohmann::json to_json(const Metrics& m) {
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& t : m.trials) {
    trials.push_back({{"profile", t.profile},
                      {"run", t.run},
                      {"checkpoint", t.checkpoint},
                      {"expected_room", t.expected_room},
                      {"recognized_room", t.recognized_room ? nlohmann::json(*t.recognized_room) : nlohmann::json()},
                      {"scans_used", t.scans_used},
                      {"actuation_ok", t.actuation_ok},
                      {"in_office", t.in_office}});
  }
  nlohmann::json per_cp = nlohmann::json::array();
  for (const auto& [cp, r] : m.per_checkpoint()) {
    auto j = to_json(r);
    j["checkpoint"] = cp;
    per_cp.push_back(j);
  }
  nlohmann::json per_profile = nlohmann::json::object();
  for (const auto& [name, r] : m.per_profile()) per_profile[name] = to_json(r);
  return {{"summary",
           {{"overall", to_json(m.overall())},
            {"in_office", to_json(m.in_office())},
            {"corridor", to_json(m.corridor())},
            {"actuation_given_correct", to_json(m.actuation_given_correct())},
            {"filter_updates", m.filter_updates},
            {"constraint_violations", m.constraint_violations},
            {"tracker_reinits", m.tracker_reinits}}},
          {"per_checkpoint", per_cp},
          {"per_profile", per_profile},
          {"trials", trials}};
}

inline Metrics metrics_from_json(const nlohmann::json& j) {
  Metrics m;
  try {
    for (const auto& t : j.at("trials")) {
      TrialResult tr;
      tr.profile = t.at("profile").get<std::string>();
      tr.run = t.at("run").get<std::size_t>();
      tr.checkpoint = t.at("checkpoint").get<std::size_t>();
      tr.expected_room = t.at("expected_room").get<std::string>();
      if (!t.at("recognized_room").is_null()) tr.recognized_room = t.at("recognized_room").get<std::string>();
      tr.scans_used = t.at("scans_used").get<int>();
      tr.actuation_ok = t.at("actuation_ok").get<bool>();
      tr.in_office = t.at("in_office").get<bool>();
      m.trials.push_back(std::move(tr));
    }
    const auto& s = j.at("summary");
    m.filter_updates = s.value("filter_updates", std::size_t{0});
    m.constraint_violations = s.value("constraint_violations", std::size_t{0});
    m.tracker_reinits = s.value("tracker_reinits", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("metrics: ") + e.what());
  }
  return m;
}

inline std::string summary_text(const Metrics& m) {
  std::ostringstream os;
  auto line = [&os](const std::string& label, const Rate& r) {
    os << std::left << std::setw(28) << label << std::fixed << std::setprecision(3) << r.value() << "  (" << r.hits
       << '/' << r.trials << ")\n";
  };
  line("overall accuracy", m.overall());
  line("in-office accuracy", m.in_office());
  line("corridor accuracy", m.corridor());
  line("actuation | correct", m.actuation_given_correct());
  for (const auto& [cp, r] : m.per_checkpoint()) line("checkpoint " + std::to_string(cp), r);
  for (const auto& [name, r] : m.per_profile()) line("profile " + name, r);
  os << "filter updates              " << m.filter_updates << '\n';
  os << "constraint violations       " << m.constraint_violations << '\n';
  return os.str();
}

}  // namespace syndesi
