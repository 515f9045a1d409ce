#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "syndesi/syndesi.hpp"

namespace fs = std::filesystem;
using namespace syndesi;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop.store(true); }

int report_error(const std::string& code, const std::string& message, int exit_code) {
  std::cerr << nlohmann::json{{"ok", false}, {"error", code}, {"message", message}}.dump() << '\n';
  return exit_code;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::not_found, "cannot open '" + path + "'");
  return in;
}

// "-" writes to stdout.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    file_ = std::make_unique<std::ofstream>(path);
    if (!*file_) throw Error(ErrorCode::io, "cannot write '" + path + "'");
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

std::vector<nlohmann::json> read_json_lines(const std::string& path) {
  auto in = open_in(path);
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::parse, path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

const PhoneProfile& find_profile(const Scenario& sc, const std::string& name) {
  for (const auto& p : sc.profiles)
    if (p.name == name) return p;
  throw Error(ErrorCode::not_found, "unknown profile '" + name + "'");
}

std::pair<std::string, int> split_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) return {"127.0.0.1", std::stoi(addr)};
  return {addr.substr(0, colon), std::stoi(addr.substr(colon + 1))};
}

// ---------------------------------------------------------------------------

struct CalibrateArgs {
  std::string pairs;
  std::string out = "-";
};

int cmd_calibrate(const CalibrateArgs& a) {
  std::vector<ApId> order;
  std::map<ApId, std::vector<CalibrationPair>> by_ap;
  for (const auto& j : read_json_lines(a.pairs)) {
    try {
      const auto ap = j.at("ap_id").get<std::string>();
      if (!by_ap.contains(ap)) order.push_back(ap);
      by_ap[ap].push_back({j.at("rss").get<double>(), j.at("distance").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse, a.pairs + ": " + e.what());
    }
  }
  std::vector<ApCalibration> cals;
  for (const auto& ap : order) cals.push_back(fit_calibration(by_ap[ap], ap));
  Output out(a.out);
  out.stream() << to_json(std::span<const ApCalibration>(cals)).dump(2) << '\n';
  return 0;
}

struct SimulateArgs {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::string profile;
  std::size_t run = 0;
  std::string out_dir = ".";
};

int cmd_simulate(const SimulateArgs& a) {
  auto sc = load_scenario(a.scenario);
  if (a.seed) sc.rng_seed = *a.seed;
  const auto& profile = a.profile.empty() ? sc.profiles.at(0) : find_profile(sc, a.profile);
  std::size_t pi = 0;
  while (sc.profiles[pi].name != profile.name) ++pi;
  Rng rng = derived_rng(sc.rng_seed, pi + 1, a.run);
  const Walk walk = synth_walk(sc);
  const auto imu = synth_imu(walk, profile, rng);
  const auto rss = synth_rss(walk, sc.plan, sc.true_calibrations, profile, rng);

  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  Output imu_out((dir / "imu.jsonl").string());
  write_imu_trace(imu_out.stream(), imu);
  Output rss_out((dir / "rss.jsonl").string());
  write_rss_trace(rss_out.stream(), rss);
  Output cal_out((dir / "calibrations.json").string());
  cal_out.stream() << to_json(std::span<const ApCalibration>(sc.true_calibrations)).dump(2) << '\n';
  Output truth((dir / "truth.csv").string());
  truth.stream() << "t,x,y,room\n";
  for (const auto& s : walk.steps) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,", s.t, s.position.x, s.position.y);
    truth.stream() << buf << s.room.value_or("") << '\n';
  }
  return 0;
}

struct SurveyArgs {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> points;
  std::string out = "-";
};

int cmd_survey(const SurveyArgs& a) {
  auto sc = load_scenario(a.scenario);
  if (a.seed) sc.rng_seed = *a.seed;
  if (a.points) sc.survey_points_per_room = *a.points;
  Output out(a.out);
  out.stream() << to_json(survey_for(sc)).dump() << '\n';
  return 0;
}

struct TrainArgs {
  std::string db;
  std::string plan;
  std::size_t k = 3;
  std::string out = "-";
};

int cmd_train(const TrainArgs& a) {
  const auto db = fingerprint_db_from_json(read_json_file(a.db));
  if (!a.plan.empty()) db.validate_against(load_floorplan_file(a.plan));
  TrainOptions opt;
  opt.k = a.k;
  const auto [knn, svm] = train(db, opt);
  Output out(a.out);
  out.stream() << models_to_json(knn, svm).dump() << '\n';
  return 0;
}

struct TrackArgs {
  std::string plan;
  std::string calibrations;
  std::string imu;
  std::string rss;
  std::uint64_t seed = 1;
  std::size_t particles = 1000;
  std::optional<std::vector<double>> start;
  std::string out = "-";
};

int cmd_track(const TrackArgs& a) {
  const auto plan = load_floorplan_file(a.plan);
  const auto cals = calibrations_from_json(read_json_file(a.calibrations));
  auto imu_in = open_in(a.imu);
  const auto imu = read_imu_trace(imu_in);
  auto rss_in = open_in(a.rss);
  const auto rss = read_rss_trace(rss_in);
  TrackOptions opt;
  opt.cfg.rng_seed = a.seed;
  opt.cfg.n_particles = a.particles;
  if (a.start) {
    if (a.start->size() != 2) throw Error(ErrorCode::validation, "--start takes two numbers");
    opt.prior = PointPrior{{(*a.start)[0], (*a.start)[1]}, 0.5};
  }
  const auto estimates = track(plan, cals, imu, rss, opt);
  Output out(a.out);
  write_estimates_csv(out.stream(), estimates);
  return 0;
}

struct ServeArgs {
  std::string plan;
  std::string nodes;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string clock = "virtual";
  std::string state;
  double poll_interval = 60.0;
  std::uint64_t seed = 1;
};

int cmd_serve(const ServeArgs& a) {
  const auto plan = load_floorplan_file(a.plan);
  const auto nodes = nodes_from_json(read_json_file(a.nodes));
  std::shared_ptr<VirtualClock> vclock;
  std::shared_ptr<const Clock> clock;
  if (a.clock == "virtual") {
    vclock = std::make_shared<VirtualClock>();
    clock = vclock;
  } else {
    clock = std::make_shared<RealClock>();
  }
  Gateway gw(clock);
  if (!a.state.empty() && fs::exists(a.state)) {
    gw.load_snapshot(a.state);
  } else {
    for (const auto& n : nodes) {
      if (plan.find_room(n.room) == nullptr)
        throw Error(ErrorCode::validation, "node '" + n.id + "': unknown room '" + n.room + "'");
      gw.register_node(n);
    }
  }

  EnvironmentConfig env_cfg;
  env_cfg.seed = a.seed;
  auto env = std::make_shared<EnvironmentSim>(plan, env_cfg, clock->now());
  std::mutex env_mu;
  SensorSampler sampler = [&](const NodeRecord& n, double t) -> std::optional<SensorReading> {
    std::lock_guard lock(env_mu);
    const auto all = gw.list_nodes();
    env->advance_to(t, all);
    return env->sample(n, all);
  };
  std::vector<NodeId> sensors;
  for (const auto& n : gw.list_nodes())
    if (n.kind == NodeKind::sensor) sensors.push_back(n.id);
  PollingScheduler poller(gw, sensors, a.poll_interval, sampler, clock->now());

  GatewayHttpServer server(gw, vclock.get(), &poller);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::thread watcher([&] {
    while (!g_stop.load()) {
      if (!vclock) poller.run_until(clock->now());
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    server.stop();
  });
  std::cerr << nlohmann::json{{"ok", true}, {"listening", a.host + ":" + std::to_string(a.port)}}.dump() << '\n';
  const bool ok = server.listen(a.host, a.port);
  g_stop.store(true);
  watcher.join();
  if (!a.state.empty()) gw.save_snapshot(a.state);
  if (!ok) throw Error(ErrorCode::unavailable, "cannot listen on " + a.host + ":" + std::to_string(a.port));
  return 0;
}

struct AutomateArgs {
  std::string gateway;
  std::string journal = "-";
  std::string locations;
  std::string readings;
  std::string plan;
};

int cmd_automate(const AutomateArgs& a) {
  std::vector<LocationUpdate> locations;
  for (const auto& j : read_json_lines(a.locations)) {
    try {
      locations.push_back({j.at("t").get<double>(), j.at("user").get<std::string>(), j.at("room").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse, a.locations + ": " + e.what());
    }
  }
  std::vector<SensorReading> readings;
  if (!a.readings.empty())
    for (const auto& j : read_json_lines(a.readings)) readings.push_back(reading_from_json(j));
  auto by_t = [](const auto& x, const auto& y) { return x.t < y.t; };
  std::stable_sort(locations.begin(), locations.end(), by_t);
  std::stable_sort(readings.begin(), readings.end(), by_t);

  std::set<RoomId> rooms;
  if (!a.plan.empty())
    for (const auto& r : load_floorplan_file(a.plan).rooms) rooms.insert(r.id);

  const auto [host, port] = split_address(a.gateway);
  HttpGatewayClient client(host, port);
  client.list_nodes(std::nullopt);
  AutomationEngine engine(client, rooms);
  Output out(a.journal);
  engine.set_journal_sink(&out.stream());
  engine.run(locations, readings);
  return 0;
}

struct ExperimentArgs {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs;
  std::string out = "-";
  std::string format = "csv";
  std::optional<int> port;
  std::string journal;
  bool no_track = false;
};

int cmd_experiment(const ExperimentArgs& a) {
  auto sc = load_scenario(a.scenario);
  if (a.seed) sc.rng_seed = *a.seed;
  if (a.runs) sc.runs = *a.runs;
  ExperimentOptions opt;
  opt.track = !a.no_track;
  std::unique_ptr<Output> journal;
  if (!a.journal.empty()) {
    journal = std::make_unique<Output>(a.journal);
    opt.journal = &journal->stream();
  }
  const auto m = run_full_experiment(sc, opt, a.port);
  Output out(a.out);
  if (a.format == "json") out.stream() << to_json(m).dump(2) << '\n';
  else if (a.format == "text") out.stream() << summary_text(m);
  else write_trials_csv(out.stream(), m);
  return 0;
}

struct ReportArgs {
  std::string in;
  std::string out = "-";
  std::string format = "text";
};

int cmd_report(const ReportArgs& a) {
  const auto m = metrics_from_json(read_json_file(a.in));
  Output out(a.out);
  if (a.format == "json") out.stream() << to_json(m).dump(2) << '\n';
  else if (a.format == "csv") write_trials_csv(out.stream(), m);
  else out.stream() << summary_text(m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Location-aware smart office toolkit"};
  app.require_subcommand(1);

  CalibrateArgs cal;
  auto* c_cal = app.add_subcommand("calibrate", "Fit per-AP ranging calibrations from (rss, distance) pairs");
  c_cal->add_option("--pairs", cal.pairs, "JSON-lines of {ap_id, rss, distance}")->required();
  c_cal->add_option("--out", cal.out, "Calibration JSON output");

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Write IMU, RSS and ground-truth traces for one scenario run");
  c_sim->add_option("--scenario", sim.scenario)->required();
  c_sim->add_option("--seed", sim.seed);
  c_sim->add_option("--profile", sim.profile, "Phone profile name (default: first)");
  c_sim->add_option("--run", sim.run);
  c_sim->add_option("--out", sim.out_dir, "Output directory");

  SurveyArgs sur;
  auto* c_sur = app.add_subcommand("survey", "Build a fingerprint database for a scenario");
  c_sur->add_option("--scenario", sur.scenario)->required();
  c_sur->add_option("--seed", sur.seed);
  c_sur->add_option("--points", sur.points, "Survey points per room");
  c_sur->add_option("--out", sur.out);

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train KNN and SVM room classifiers");
  c_tr->add_option("--db", tr.db, "Fingerprint database JSON")->required();
  c_tr->add_option("--plan", tr.plan, "Floor plan to check room labels against");
  c_tr->add_option("--k", tr.k);
  c_tr->add_option("--out", tr.out, "Model JSON output");

  TrackArgs tk;
  auto* c_tk = app.add_subcommand("track", "Run the particle filter over IMU and RSS traces");
  c_tk->add_option("--plan", tk.plan)->required();
  c_tk->add_option("--calibrations", tk.calibrations)->required();
  c_tk->add_option("--imu", tk.imu)->required();
  c_tk->add_option("--rss", tk.rss)->required();
  c_tk->add_option("--seed", tk.seed);
  c_tk->add_option("--particles", tk.particles);
  c_tk->add_option("--start", tk.start, "Known start position x y")->expected(2);
  c_tk->add_option("--out", tk.out, "Estimates CSV output");

  ServeArgs sv;
  auto* c_sv = app.add_subcommand("serve", "Run the gateway over HTTP");
  c_sv->add_option("--plan", sv.plan)->required();
  c_sv->add_option("--nodes", sv.nodes)->required();
  c_sv->add_option("--host", sv.host);
  c_sv->add_option("--port", sv.port);
  c_sv->add_option("--clock", sv.clock)->check(CLI::IsMember({"real", "virtual"}));
  c_sv->add_option("--state", sv.state, "Snapshot file loaded at start and written on exit");
  c_sv->add_option("--poll-interval", sv.poll_interval);
  c_sv->add_option("--seed", sv.seed);

  AutomateArgs au;
  auto* c_au = app.add_subcommand("automate", "Run the automation loop against a gateway");
  c_au->add_option("--gateway", au.gateway, "host:port")->required();
  c_au->add_option("--journal", au.journal);
  c_au->add_option("--locations", au.locations, "JSON-lines of {t, user, room}")->required();
  c_au->add_option("--readings", au.readings, "JSON-lines of sensor readings");
  c_au->add_option("--plan", au.plan, "Floor plan used to reject unknown rooms");

  ExperimentArgs ex;
  auto* c_ex = app.add_subcommand("experiment", "Checkpoint walks over all profiles and runs");
  c_ex->add_option("--scenario", ex.scenario)->required();
  c_ex->add_option("--seed", ex.seed);
  c_ex->add_option("--runs", ex.runs);
  c_ex->add_option("--out", ex.out);
  c_ex->add_option("--format", ex.format)->check(CLI::IsMember({"csv", "json", "text"}));
  c_ex->add_option("--port", ex.port, "Serve the gateway over HTTP on this port (0: any)");
  c_ex->add_option("--journal", ex.journal, "Automation journal output");
  c_ex->add_flag("--no-track", ex.no_track, "Skip the particle filter runs");

  ReportArgs rp;
  auto* c_rp = app.add_subcommand("report", "Summarize an experiment JSON report");
  c_rp->add_option("--in", rp.in)->required();
  c_rp->add_option("--out", rp.out);
  c_rp->add_option("--format", rp.format)->check(CLI::IsMember({"text", "csv", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), kExitUsage);
  }

  try {
    if (*c_cal) return cmd_calibrate(cal);
    if (*c_sim) return cmd_simulate(sim);
    if (*c_sur) return cmd_survey(sur);
    if (*c_tr) return cmd_train(tr);
    if (*c_tk) return cmd_track(tk);
    if (*c_sv) return cmd_serve(sv);
    if (*c_au) return cmd_automate(au);
    if (*c_ex) return cmd_experiment(ex);
    if (*c_rp) return cmd_report(rp);
  } catch (const Error& e) {
    return report_error(std::string(to_string(e.code())), e.what(),
                        e.code() == ErrorCode::not_found ? kExitUsage : kExitFailure);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), kExitFailure);
  }
  return kExitUsage;
}
