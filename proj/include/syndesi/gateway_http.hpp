#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "syndesi/error.hpp"
#include "syndesi/gateway.hpp"

namespace syndesi {

inline int http_status_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict: return 409;
    case ErrorCode::unavailable: return 503;
    default: return 400;
  }
}

inline ErrorCode error_code_from_string(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::unavailable); ++i) {
    const auto c = static_cast<ErrorCode>(i);
    if (to_string(c) == s) return c;
  }
  return ErrorCode::unavailable;
}

// REST-style front end:
//   GET /nodes[?room=]            POST /nodes
//   GET|POST /mediate?node=&status=[&cause=]
//   POST /data                    GET /readings?room=&metric=&from=&to=
//   POST /users                   GET /users/<id>
//   GET /actuations               POST /clock/advance?seconds=   (virtual clock only)
class GatewayHttpServer {
 public:
  GatewayHttpServer(Gateway& gw, VirtualClock* virtual_clock = nullptr, PollingScheduler* poller = nullptr)
      : gw_(gw), vclock_(virtual_clock), poller_(poller) {
    routes();
  }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  int bind_to_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  bool is_running() const { return server_.is_running(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  template <typename F>
  void guarded(httplib::Response& res, F&& body) {
    try {
      nlohmann::json out = body();
      out["ok"] = true;
      res.set_content(out.dump(), "application/json");
    } catch (const Error& e) {
      fail(res, e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
      fail(res, ErrorCode::parse, e.what());
    } catch (const std::exception& e) {
      fail(res, ErrorCode::validation, e.what());
    }
  }

  static void fail(httplib::Response& res, ErrorCode code, const std::string& message) {
    res.status = http_status_for(code);
    res.set_content(nlohmann::json{{"ok", false}, {"error", to_string(code)}, {"message", message}}.dump(),
                    "application/json");
  }

  static std::optional<std::string> param(const httplib::Request& req, const char* key) {
    if (!req.has_param(key)) return std::nullopt;
    auto v = req.get_param_value(key);
    if (v.empty()) return std::nullopt;
    return v;
  }

  static double number_param(const httplib::Request& req, const char* key, double fallback) {
    const auto v = param(req, key);
    if (!v) return fallback;
    try {
      std::size_t used = 0;
      const double d = std::stod(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing");
      return d;
    } catch (const std::exception&) {
      throw Error(ErrorCode::validation, std::string("query parameter '") + key + "' is not a number");
    }
  }

  void routes() {
    server_.Get("/nodes", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        nlohmann::json nodes = nlohmann::json::array();
        for (const auto& n : gw_.list_nodes(param(req, "room"))) nodes.push_back(to_json(n));
        return nlohmann::json{{"nodes", nodes}};
      });
    });
    server_.Post("/nodes", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto n = node_from_json(nlohmann::json::parse(req.body));
        gw_.register_node(n);
        return nlohmann::json{{"node", to_json(*gw_.node(n.id))}};
      });
    });

    auto mediate = [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto node = param(req, "node");
        const auto status = param(req, "status");
        if (!node || !status) throw Error(ErrorCode::validation, "mediate: 'node' and 'status' are required");
        const auto cause = param(req, "cause");
        const bool changed = gw_.mediate(*node, parse_node_status(*status),
                                         cause ? parse_cause(*cause) : ActuationCause::manual);
        return nlohmann::json{{"node", *node}, {"status", *status}, {"changed", changed}};
      });
    };
    server_.Get("/mediate", mediate);
    server_.Post("/mediate", mediate);

    server_.Post("/data", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        gw_.ingest_reading(reading_from_json(nlohmann::json::parse(req.body)));
        return nlohmann::json::object();
      });
    });
    server_.Get("/readings", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const double from = number_param(req, "from", 0.0);
        const double to = number_param(req, "to", std::numeric_limits<double>::max());
        nlohmann::json rs = nlohmann::json::array();
        for (const auto& r : gw_.query_readings(param(req, "room"), param(req, "metric"), from, to))
          rs.push_back(to_json(r));
        return nlohmann::json{{"readings", rs}};
      });
    });

    server_.Post("/users", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto u = user_from_json(nlohmann::json::parse(req.body));
        gw_.put_user(u);
        return nlohmann::json{{"user", to_json(u)}};
      });
    });
    server_.Get(R"(/users/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto u = gw_.user(req.matches[1]);
        if (!u) throw Error(ErrorCode::not_found, "unknown user '" + std::string(req.matches[1]) + "'");
        return nlohmann::json{{"user", to_json(*u)}};
      });
    });

    server_.Get("/actuations", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        nlohmann::json log = nlohmann::json::array();
        for (const auto& a : gw_.actuation_log()) log.push_back(to_json(a));
        return nlohmann::json{{"actuations", log}};
      });
    });

    server_.Post("/clock/advance", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (vclock_ == nullptr) throw Error(ErrorCode::unavailable, "clock is not virtual");
        const double dt = number_param(req, "seconds", 0.0);
        if (dt < 0.0) throw Error(ErrorCode::validation, "clock cannot move backwards");
        vclock_->advance(dt);
        std::size_t ingested = 0;
        if (poller_ != nullptr) ingested = poller_->run_until(vclock_->now());
        return nlohmann::json{{"now", vclock_->now()}, {"ingested", ingested}};
      });
    });

    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) fail(res, ErrorCode::not_found, "no such endpoint");
    });
  }

  Gateway& gw_;
  VirtualClock* vclock_;
  PollingScheduler* poller_;
  httplib::Server server_;
};

// Networked GatewayClient. Transport failures surface as Error{unavailable};
// service errors keep the code reported by the server.
class HttpGatewayClient : public GatewayClient {
 public:
  HttpGatewayClient(const std::string& host, int port) : client_(host, port) {
    client_.set_connection_timeout(2, 0);
    client_.set_read_timeout(5, 0);
  }

  std::vector<NodeRecord> list_nodes(const std::optional<RoomId>& room) override {
    httplib::Params p;
    if (room) p.emplace("room", *room);
    const auto j = check(client_.Get("/nodes", p, httplib::Headers{}));
    std::vector<NodeRecord> out;
    for (const auto& n : j.at("nodes")) out.push_back(node_from_json(n));
    return out;
  }

  void mediate(const NodeId& node, NodeStatus status, ActuationCause cause) override {
    httplib::Params p{{"node", node}, {"status", std::string(to_string(status))}, {"cause", std::string(to_string(cause))}};
    check(client_.Get("/mediate", p, httplib::Headers{}));
  }

  std::optional<UserRecord> user(const UserId& id) override {
    auto res = client_.Get("/users/" + id);
    if (res && res->status == 404) return std::nullopt;
    return user_from_json(check(std::move(res)).at("user"));
  }

  void register_node(const NodeRecord& n) { check(client_.Post("/nodes", to_json(n).dump(), "application/json")); }

  void put_user(const UserRecord& u) override { check(client_.Post("/users", to_json(u).dump(), "application/json")); }

  void ingest_reading(const SensorReading& r) { check(client_.Post("/data", to_json(r).dump(), "application/json")); }

  std::vector<SensorReading> query_readings(const std::optional<RoomId>& room, const std::optional<std::string>& metric,
                                            double from, double to) {
    httplib::Params p;
    if (room) p.emplace("room", *room);
    if (metric) p.emplace("metric", *metric);
    p.emplace("from", nlohmann::json(from).dump());
    p.emplace("to", nlohmann::json(to).dump());
    const auto j = check(client_.Get("/readings", p, httplib::Headers{}));
    std::vector<SensorReading> out;
    for (const auto& r : j.at("readings")) out.push_back(reading_from_json(r));
    return out;
  }

  std::vector<ActuationRecord> actuation_log() {
    const auto j = check(client_.Get("/actuations"));
    std::vector<ActuationRecord> out;
    for (const auto& a : j.at("actuations")) out.push_back(actuation_from_json(a));
    return out;
  }

 private:
  static nlohmann::json check(httplib::Result res) {
    if (!res) throw Error(ErrorCode::unavailable, "gateway unreachable: " + httplib::to_string(res.error()));
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error&) {
      throw Error(ErrorCode::unavailable, "gateway returned non-JSON body (HTTP " + std::to_string(res->status) + ")");
    }
    if (!j.value("ok", false))
      throw Error(error_code_from_string(j.value("error", "unavailable")), j.value("message", "gateway error"));
    return j;
  }

  httplib::Client client_;
};

}  // namespace syndesi
