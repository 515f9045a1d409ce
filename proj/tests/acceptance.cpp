#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "syndesi/syndesi.hpp"

using namespace syndesi;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const Metrics& demo_metrics(double* elapsed = nullptr) {
  static double took = 0.0;
  static const Metrics m = [] {
    auto sc = load_scenario(std::string(SYNDESI_DATA_DIR) + "/demo_scenario.json");
    sc.runs = 20;
    const auto t0 = Clock::now();
    auto out = run_full_experiment(sc);
    took = seconds_since(t0);
    return out;
  }();
  if (elapsed) *elapsed = took;
  return m;
}

Outcome accuracy() {
  double took = 0.0;
  const auto& m = demo_metrics(&took);
  const double overall = m.overall().value(), office = m.in_office().value();
  return {m.trials.size() == 480 && overall >= 0.90 && office >= 0.95 && took < 60.0,
          fmt("trials=%zu overall=%.4f in_office=%.4f runtime=%.1fs", m.trials.size(), overall, office, took)};
}

Outcome actuation() {
  const auto r = demo_metrics().actuation_given_correct();
  return {r.trials > 0 && r.hits == r.trials, fmt("actuated=%zu/%zu", r.hits, r.trials)};
}

Outcome battery() {
  const BatteryPolicy p{60.0};
  const std::vector<double> levels{100.0, 50.0, 49.9, 20.0, 19.9};
  const std::vector<std::optional<double>> want{60.0, 60.0, 120.0, 120.0, std::nullopt};
  bool ok = true;
  std::string got;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto e = effective_polling(levels[i], p);
    ok = ok && e == want[i];
    got += (i ? "," : "") + (e ? fmt("%g", *e) : std::string("disabled"));
  }
  return {ok, "intervals={" + got + "}"};
}

Outcome calibration() {
  std::vector<CalibrationPair> clean;
  for (int i = 0; i < 200; ++i) {
    const double rss = -95.0 + 65.0 * i / 199.0;
    clean.push_back({rss, 2.0 * std::exp(-0.05 * rss)});
  }
  const auto exact = fit_calibration(clean, "ap");
  const double ea = std::abs(exact.alpha - 2.0) / 2.0, eb = std::abs(exact.beta + 0.05) / 0.05;

  Rng rng = derived_rng(42, 4, 0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> dist(1.0, 30.0);
  std::vector<CalibrationPair> noisy;
  for (int i = 0; i < 200; ++i) {
    const double d = dist(rng);
    noisy.push_back({std::log(d / 2.0) / -0.05 + noise(rng), d});
  }
  const auto fit = fit_calibration(noisy, "ap");
  const double na = std::abs(fit.alpha - 2.0) / 2.0, nb = std::abs(fit.beta + 0.05) / 0.05;
  return {ea <= 1e-9 && eb <= 1e-9 && na <= 0.05 && nb <= 0.05,
          fmt("noiseless rel_err alpha=%.2e beta=%.2e; noisy rel_err alpha=%.4f beta=%.4f", ea, eb, na, nb)};
}

Outcome prediction() {
  Rng rng(5);
  std::uniform_real_distribution<double> u(-10.0, 10.0), ang(-std::numbers::pi, std::numbers::pi), len(0.2, 1.2);
  ParticleSet set;
  for (int i = 0; i < 1000; ++i) set.particles.push_back({{u(rng), u(rng), ang(rng), 0.7}, 1e-3, {0.0, 0.0}});
  double worst = 0.0;
  for (int step = 0; step < 20; ++step) {
    const MotionVector mv{ang(rng), len(rng)};
    const auto before = set;
    predict(set, mv, {0.0, 0.0, 1.0}, rng);
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto& b = before.particles[i].state;
      const auto& a = set.particles[i].state;
      worst = std::max({worst, std::abs(a.x - (b.x + mv.ell * std::cos(mv.theta))),
                        std::abs(a.y - (b.y + mv.ell * std::sin(mv.theta)))});
    }
  }

  ParticleSet cloud;
  cloud.particles.assign(100000, Particle{{0.0, 0.0, 0.0, 0.7}, 1e-5, {0.0, 0.0}});
  const double sigma = 0.1;
  predict(cloud, {0.0, 0.7}, {sigma, 0.05, 2.0}, rng);
  double sx = 0.0, sxx = 0.0;
  for (const auto& p : cloud.particles) {
    sx += p.state.x;
    sxx += p.state.x * p.state.x;
  }
  const double n = static_cast<double>(cloud.size());
  const double mean = sx / n, se = std::sqrt((sxx / n - mean * mean) / n);
  const double expected = 0.7 * std::exp(-sigma * sigma / 2.0);
  const double z = std::abs(mean - expected) / se;
  return {worst <= 1e-12 && z <= 3.0, fmt("max_abs_err=%.2e mean=%.6f expected=%.6f z=%.2f", worst, mean, expected, z)};
}

Outcome dead_reckoning() {
  const auto plan = load_scenario(std::string(SYNDESI_DATA_DIR) + "/demo_scenario.json").plan;
  const std::vector<Point2D> loop{{0.6, 8.6}, {12.5, 8.6}, {12.5, 11.4}, {0.6, 11.4}};
  std::vector<Point2D> wps;
  for (int lap = 0; lap < 3; ++lap) wps.insert(wps.end(), loop.begin(), loop.end());
  Walk walk = synth_walk(plan, wps, 0.7, 1.2);
  walk.steps.resize(std::min<std::size_t>(walk.steps.size(), 100));
  Rng rng(6);
  const auto imu = synth_imu(walk, noiseless_profile(), rng);
  TrackOptions opt;
  opt.noise = {0.0, 0.0, 2.0};
  opt.prior = PointPrior{wps.front(), 0.0};
  const auto est = track(plan, {}, imu, {}, opt);
  double worst = 0.0;
  const std::size_t n = std::min(est.size(), walk.steps.size());
  for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, distance(est[i].position, walk.steps[i].position));
  return {walk.steps.size() == 100 && est.size() == 100 && worst <= 0.35,
          fmt("steps=%zu estimates=%zu max_err=%.4fm", walk.steps.size(), est.size(), worst)};
}

RoomId knn_brute(const FingerprintVector& v, const FingerprintDb& db, std::size_t k) {
  std::vector<std::tuple<double, std::size_t, RoomId>> all;
  for (const auto& e : db.entries) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.values.size(); ++i) s += (v.values[i] - e.vector.values[i]) * (v.values[i] - e.vector.values[i]);
    all.emplace_back(s, e.id, e.room);
  }
  std::sort(all.begin(), all.end());
  std::map<RoomId, std::pair<int, double>> votes;
  for (std::size_t i = 0; i < k && i < all.size(); ++i) {
    votes[std::get<2>(all[i])].first += 1;
    votes[std::get<2>(all[i])].second += std::sqrt(std::get<0>(all[i]));
  }
  std::vector<std::tuple<int, double, RoomId>> ranked;
  for (const auto& [room, vd] : votes) ranked.emplace_back(-vd.first, vd.second / vd.first, room);
  std::sort(ranked.begin(), ranked.end());
  return std::get<2>(ranked.front());
}

Outcome knn_oracle() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> rss(-100, -30), room(0, 4);
  auto draw = [&] {
    FingerprintVector v;
    for (int i = 0; i < 5; ++i) v.values.push_back(rss(rng) / 5 * 5.0);
    return v;
  };
  FingerprintDb db;
  db.ap_order = {"a", "b", "c", "d", "e"};
  for (int i = 0; i < 250; ++i) db.add("room-" + std::to_string(room(rng)), draw());
  std::size_t same = 0;
  const KnnModel m{5, db};
  for (int i = 0; i < 1000; ++i) {
    const auto v = draw();
    same += classify_knn(v, m) == knn_brute(v, db, 5) ? 1 : 0;
  }
  return {same == 1000, fmt("identical=%zu/1000", same)};
}

Outcome constraints() {
  const auto v = demo_metrics().constraint_violations;
  return {v == 0, fmt("violations=%zu filter_updates=%zu", v, demo_metrics().filter_updates)};
}

Outcome last_leaver() {
  const std::vector<RoomId> rooms{"r1", "r2", "r3", "r4"};
  const std::vector<UserId> users{"u1", "u2", "u3"};
  std::vector<NodeRecord> nodes;
  for (const auto& r : rooms) nodes.push_back({r + "-light", NodeKind::actuator, r, Capability::light, NodeStatus::off});
  std::size_t sequences = 0, failures = 0;
  const auto t0 = Clock::now();
  std::function<void(const OccupancyMap&, const std::array<bool, 4>&, int)> dfs =
      [&](const OccupancyMap& occ, const std::array<bool, 4>& lit, int depth) {
        ++sequences;
        std::size_t placed = 0, total = 0;
        for (const auto& u : users) placed += occ.room_of(u) ? 1 : 0;
        for (std::size_t i = 0; i < rooms.size(); ++i) {
          const auto occupants = occ.occupants(rooms[i]);
          total += occupants.size();
          for (const auto& u : occupants) failures += occ.room_of(u) == rooms[i] ? 0 : 1;
          failures += lit[i] == !occupants.empty() ? 0 : 1;
        }
        failures += placed == total ? 0 : 1;
        if (depth == 6) return;
        for (const auto& u : users)
          for (const auto& r : rooms) {
            auto [ev, next] = on_location_change(0.0, u, r, occ, nodes);
            auto l = lit;
            for (const auto& a : ev.actions) l[static_cast<std::size_t>(a.node[1] - '1')] = a.status == NodeStatus::on;
            dfs(next, l, depth + 1);
          }
      };
  dfs(OccupancyMap{}, {false, false, false, false}, 0);
  const double took = seconds_since(t0);
  return {sequences == 3257437 && failures == 0 && took < 10.0,
          fmt("sequences=%zu failures=%zu runtime=%.2fs", sequences, failures, took)};
}

Outcome gateway_replay() {
  Gateway gw;
  for (int i = 0; i < 8; ++i)
    gw.register_node({"A" + std::to_string(i), NodeKind::actuator, "office-1", Capability::light, NodeStatus::off});
  std::atomic<int> ops{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 16; ++t)
    threads.emplace_back([&, t] {
      std::mt19937_64 rng(1000 + t);
      while (ops.fetch_add(1) < 1000) {
        switch (rng() % 3) {
          case 0: gw.mediate("A" + std::to_string(rng() % 8), rng() % 2 ? NodeStatus::on : NodeStatus::off); break;
          case 1: (void)gw.list_nodes(); break;
          default:
            try {
              gw.register_node({"S" + std::to_string(rng() % 64), NodeKind::sensor, "office-2", Capability::temperature,
                                NodeStatus::none});
            } catch (const Error&) {
            }
        }
      }
    });
  for (auto& th : threads) th.join();
  const auto replayed = replay_actuations(gw.registrations(), gw.actuation_log());
  std::size_t mismatched = 0;
  const auto nodes = gw.list_nodes();
  for (const auto& n : nodes) mismatched += replayed.at(n.id) == n.status ? 0 : 1;
  mismatched += replayed.size() == nodes.size() ? 0 : 1;

  Gateway store;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1e9, 1e9);
  std::vector<SensorReading> sent;
  for (int i = 0; i < 10000; ++i) {
    sent.push_back({"s" + std::to_string(i % 13), "temperature", u(rng), "office-1", std::nullopt, i * 0.25});
    store.ingest_reading(sent.back());
  }
  const auto got = store.query_readings(std::nullopt, std::nullopt, 0.0, 1e9);
  std::size_t identical = 0;
  for (std::size_t i = 0; i < std::min(got.size(), sent.size()); ++i)
    identical += std::memcmp(&got[i].value, &sent[i].value, sizeof(double)) == 0 && got[i] == sent[i] ? 1 : 0;
  return {mismatched == 0 && got.size() == 10000 && identical == 10000,
          fmt("nodes=%zu log=%zu replay_mismatches=%zu readings=%zu bit_identical=%zu", nodes.size(),
              gw.actuation_log().size(), mismatched, got.size(), identical)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"room recognition accuracy", accuracy},
      {"actuation given correct recognition", actuation},
      {"battery polling boundaries", battery},
      {"ranging calibration recovery", calibration},
      {"motion prediction", prediction},
      {"dead-reckoning round trip", dead_reckoning},
      {"knn oracle equivalence", knn_oracle},
      {"floor-plan constraint invariant", constraints},
      {"last-leaver property", last_leaver},
      {"gateway linearizability and replay", gateway_replay},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
