#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include "syndesi/gateway_http.hpp"
#include "syndesi/harness.hpp"

using namespace syndesi;
namespace fs = std::filesystem;

namespace {

const std::string kCli = SYNDESI_CLI;
const std::string kData = SYNDESI_DATA_DIR;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("syndesi_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Result run(const std::string& args) {
  static int counter = 0;
  const auto dir = fs::temp_directory_path() / "syndesi_cli_io";
  fs::create_directories(dir);
  const auto out = dir / ("out" + std::to_string(counter));
  const auto err = dir / ("err" + std::to_string(counter++));
  const std::string cmd = "'" + kCli + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

}  // namespace

TEST(Cli, UsageErrorsExitTwoWithJson) {
  auto r = run("experiment --scenario /nonexistent/scenario.json");
  EXPECT_EQ(r.code, 2);
  auto j = nlohmann::json::parse(r.err);
  EXPECT_FALSE(j.at("ok").get<bool>());
  EXPECT_EQ(j.at("error"), "not_found");

  r = run("experiment --bogus-flag");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(nlohmann::json::parse(r.err).at("error"), "usage");

  r = run("");
  EXPECT_EQ(r.code, 2);
  r = run("experiment --scenario " + kData + "/demo_scenario.json --format xml");
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, BadInputExitsOne) {
  const auto dir = scratch("bad");
  std::ofstream(dir / "pairs.jsonl") << "{\"ap_id\":\"a\",\"rss\":-50,\"distance\":3}\n";
  const auto r = run("calibrate --pairs " + (dir / "pairs.jsonl").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(nlohmann::json::parse(r.err).at("error"), "underdetermined");
}

TEST(Cli, ExperimentWritesMetricsDeterministically) {
  const auto dir = scratch("experiment");
  const std::string base = "experiment --scenario " + kData + "/demo_scenario.json --runs 2 --format json --out ";
  auto a = run(base + (dir / "a.json").string());
  ASSERT_EQ(a.code, 0) << a.err;
  auto b = run(base + (dir / "b.json").string());
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  const auto m = metrics_from_json(read_json_file(dir / "a.json"));
  EXPECT_EQ(m.trials.size(), 2u * 3u * 8u);

  auto csv = run("report --in " + (dir / "a.json").string() + " --format csv");
  ASSERT_EQ(csv.code, 0);
  EXPECT_EQ(std::count(csv.out.begin(), csv.out.end(), '\n'), 49);
  auto text = run("report --in " + (dir / "a.json").string());
  EXPECT_NE(text.out.find("overall accuracy"), std::string::npos);

  auto journal = run("experiment --scenario " + kData + "/demo_scenario.json --runs 1 --no-track --format text --journal " +
                     (dir / "journal.jsonl").string());
  ASSERT_EQ(journal.code, 0);
  EXPECT_NE(journal.out.find("in-office accuracy"), std::string::npos);
  EXPECT_FALSE(slurp(dir / "journal.jsonl").empty());
}

TEST(Cli, CalibrateRecoversModel) {
  const auto dir = scratch("calibrate");
  {
    std::ofstream pairs(dir / "pairs.jsonl");
    for (double rss = -90.0; rss <= -30.0; rss += 5.0) {
      pairs << nlohmann::json{{"ap_id", "ap-1"}, {"rss", rss}, {"distance", 2.0 * std::exp(-0.05 * rss)}}.dump() << '\n';
      pairs << nlohmann::json{{"ap_id", "ap-2"}, {"rss", rss}, {"distance", 0.5 * std::exp(-0.07 * rss)}}.dump() << '\n';
    }
  }
  const auto r = run("calibrate --pairs " + (dir / "pairs.jsonl").string() + " --out " + (dir / "cal.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cals = calibrations_from_json(read_json_file(dir / "cal.json"));
  ASSERT_EQ(cals.size(), 2u);
  EXPECT_EQ(cals[0].ap_id, "ap-1");
  EXPECT_NEAR(cals[0].alpha, 2.0, 1e-8);
  EXPECT_NEAR(cals[0].beta, -0.05, 1e-10);
  EXPECT_NEAR(cals[1].alpha, 0.5, 1e-8);
  EXPECT_NEAR(cals[1].beta, -0.07, 1e-10);
}

TEST(Cli, SimulateSurveyTrainTrackPipeline) {
  const auto dir = scratch("pipeline");
  const std::string scenario = kData + "/demo_scenario.json";
  auto r = run("simulate --scenario " + scenario + " --profile sony-xperia-z5 --run 3 --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"imu.jsonl", "rss.jsonl", "calibrations.json", "truth.csv"}) EXPECT_TRUE(fs::exists(dir / f)) << f;

  r = run("survey --scenario " + scenario + " --points 10 --out " + (dir / "db.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(fingerprint_db_from_json(read_json_file(dir / "db.json")).entries.size(), 50u);

  r = run("train --db " + (dir / "db.json").string() + " --plan " + kData + "/demo_plan.json --out " +
          (dir / "model.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto [knn, svm] = models_from_json(read_json_file(dir / "model.json"));
  EXPECT_EQ(svm.scorers.size(), 5u);

  r = run("track --plan " + kData + "/demo_plan.json --calibrations " + (dir / "calibrations.json").string() +
          " --imu " + (dir / "imu.jsonl").string() + " --rss " + (dir / "rss.jsonl").string() +
          " --start 1 10 --out " + (dir / "est.csv").string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream est(dir / "est.csv"), truth(dir / "truth.csv");
  std::string le, lt;
  std::getline(est, le);
  EXPECT_EQ(le, "t,x,y,room");
  std::getline(truth, lt);
  std::size_t rows = 0, same_room = 0;
  while (std::getline(est, le) && std::getline(truth, lt)) {
    ++rows;
    const auto room_of = [](const std::string& line) { return line.substr(line.rfind(',') + 1); };
    same_room += room_of(le) == room_of(lt) ? 1 : 0;
  }
  EXPECT_GT(rows, 50u);
  EXPECT_GE(static_cast<double>(same_room) / static_cast<double>(rows), 0.8);

  r = run("track --plan " + kData + "/demo_plan.json --calibrations " + (dir / "calibrations.json").string() +
          " --imu " + (dir / "missing.jsonl").string() + " --rss " + (dir / "rss.jsonl").string());
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, ServeAndAutomate) {
  const auto dir = scratch("serve");
  const int port = free_port();
  const std::string state = (dir / "state.json").string();
  const pid_t pid = fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    const std::string p = std::to_string(port);
    const std::string plan = kData + "/demo_plan.json", nodes = kData + "/demo_nodes.json";
    if (!std::freopen("/dev/null", "w", stderr)) _exit(126);
    execl(kCli.c_str(), kCli.c_str(), "serve", "--plan", plan.c_str(), "--nodes", nodes.c_str(), "--port", p.c_str(),
          "--state", state.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  HttpGatewayClient client("127.0.0.1", port);
  bool up = false;
  for (int i = 0; i < 100 && !up; ++i) {
    try {
      up = client.list_nodes(std::nullopt).size() == 28;
    } catch (const Error&) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
  }
  ASSERT_TRUE(up);
  client.put_user({"U1", {}, true});

  std::ofstream(dir / "loc.jsonl") << R"({"t":0,"user":"U1","room":"office-1"})" << '\n'
                                   << R"({"t":30,"user":"U1","room":"office-2"})" << '\n';
  const auto r = run("automate --gateway 127.0.0.1:" + std::to_string(port) + " --plan " + kData +
                     "/demo_plan.json --locations " + (dir / "loc.jsonl").string() + " --journal " +
                     (dir / "journal.jsonl").string());
  EXPECT_EQ(r.code, 0) << r.err;
  std::ifstream journal(dir / "journal.jsonl");
  std::string line;
  std::size_t entries = 0;
  while (std::getline(journal, line)) ++entries;
  EXPECT_EQ(entries, 2u);
  EXPECT_EQ(client.actuation_log().size(), 9u);

  httplib::Client raw("127.0.0.1", port);
  auto adv = raw.Post("/clock/advance?seconds=120");
  ASSERT_TRUE(adv);
  EXPECT_EQ(nlohmann::json::parse(adv->body).at("ingested").get<int>(), 2 * 12);

  kill(pid, SIGINT);
  int status = 0;
  waitpid(pid, &status, 0);
  EXPECT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  Gateway restored;
  restored.load_snapshot(state);
  EXPECT_EQ(restored.actuation_log().size(), 9u);
  EXPECT_EQ(restored.node("o2-light-1")->status, NodeStatus::on);
  EXPECT_EQ(restored.node("o1-light-1")->status, NodeStatus::off);

  const auto down = run("automate --gateway 127.0.0.1:" + std::to_string(port) + " --locations " +
                        (dir / "loc.jsonl").string());
  EXPECT_EQ(down.code, 1);
  EXPECT_EQ(nlohmann::json::parse(down.err).at("error"), "unavailable");
}
