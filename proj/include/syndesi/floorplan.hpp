#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "syndesi/error.hpp"

namespace syndesi {

using RoomId = std::string;
using ApId = std::string;

// Collinearity tolerance in meters (building-scale coordinates).
inline constexpr double kGeomEps = 1e-9;

struct Point2D {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2D&, const Point2D&) = default;
};

inline Point2D operator+(Point2D a, Point2D b) { return {a.x + b.x, a.y + b.y}; }
inline Point2D operator-(Point2D a, Point2D b) { return {a.x - b.x, a.y - b.y}; }
inline Point2D operator*(double s, Point2D p) { return {s * p.x, s * p.y}; }

inline double dot(Point2D a, Point2D b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2D a, Point2D b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point2D a) { return std::hypot(a.x, a.y); }
inline double distance(Point2D a, Point2D b) { return norm(a - b); }

inline bool is_finite(Point2D p) { return std::isfinite(p.x) && std::isfinite(p.y); }

struct WallSegment {
  Point2D a;
  Point2D b;

  friend bool operator==(const WallSegment&, const WallSegment&) = default;
};

enum class RoomKind { office, corridor };

struct Room {
  RoomId id;
  std::string name;
  std::vector<Point2D> polygon;
  RoomKind kind = RoomKind::office;

  friend bool operator==(const Room&, const Room&) = default;
};

struct ApPlacement {
  ApId ap_id;
  Point2D position;

  friend bool operator==(const ApPlacement&, const ApPlacement&) = default;
};

struct Bounds {
  Point2D min;
  Point2D max;

  bool contains(Point2D p, double eps = kGeomEps) const {
    return p.x >= min.x - eps && p.x <= max.x + eps && p.y >= min.y - eps &&
           p.y <= max.y + eps;
  }
  double width() const { return max.x - min.x; }
  double height() const { return max.y - min.y; }

  friend bool operator==(const Bounds&, const Bounds&) = default;
};

namespace geom {

// Sign of the turn a->b->c, with |cross| <= eps treated as collinear.
inline int orientation(Point2D a, Point2D b, Point2D c) {
  const double v = cross(b - a, c - a);
  if (v > kGeomEps) return 1;
  if (v < -kGeomEps) return -1;
  return 0;
}

inline bool on_segment(Point2D p, Point2D a, Point2D b) {
  if (orientation(a, b, p) != 0) return false;
  return p.x >= std::min(a.x, b.x) - kGeomEps && p.x <= std::max(a.x, b.x) + kGeomEps &&
         p.y >= std::min(a.y, b.y) - kGeomEps && p.y <= std::max(a.y, b.y) + kGeomEps;
}

// Closed-segment intersection: touching and collinear overlap both count.
inline bool segments_intersect(Point2D p1, Point2D p2, Point2D q1, Point2D q2) {
  const int o1 = orientation(p1, p2, q1);
  const int o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1);
  const int o4 = orientation(q1, q2, p2);
  if (o1 * o2 < 0 && o3 * o4 < 0) return true;
  if (o1 == 0 && on_segment(q1, p1, p2)) return true;
  if (o2 == 0 && on_segment(q2, p1, p2)) return true;
  if (o3 == 0 && on_segment(p1, q1, q2)) return true;
  return o4 == 0 && on_segment(p2, q1, q2);
}

// Interior crossing only (no shared endpoints, no collinear contact).
inline bool segments_cross_properly(Point2D p1, Point2D p2, Point2D q1, Point2D q2) {
  const int o1 = orientation(p1, p2, q1);
  const int o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1);
  const int o4 = orientation(q1, q2, p2);
  return o1 * o2 < 0 && o3 * o4 < 0;
}

inline bool on_boundary(Point2D p, const std::vector<Point2D>& poly) {
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    if (on_segment(p, poly[i], poly[(i + 1) % n])) return true;
  }
  return false;
}

inline bool strictly_inside(Point2D p, const std::vector<Point2D>& poly) {
  if (on_boundary(p, poly)) return false;
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point2D a = poly[i];
    const Point2D b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_at = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_at) inside = !inside;
    }
  }
  return inside;
}

inline bool contains(const std::vector<Point2D>& poly, Point2D p) {
  return on_boundary(p, poly) || strictly_inside(p, poly);
}

inline double signed_area(const std::vector<Point2D>& poly) {
  double acc = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) acc += cross(poly[i], poly[(i + 1) % n]);
  return 0.5 * acc;
}

inline double area(const std::vector<Point2D>& poly) { return std::abs(signed_area(poly)); }

inline Point2D centroid(const std::vector<Point2D>& poly) {
  const double a = signed_area(poly);
  double cx = 0.0;
  double cy = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const Point2D p = poly[i];
    const Point2D q = poly[(i + 1) % n];
    const double c = cross(p, q);
    cx += (p.x + q.x) * c;
    cy += (p.y + q.y) * c;
  }
  return {cx / (6.0 * a), cy / (6.0 * a)};
}

inline bool is_simple(const std::vector<Point2D>& poly) {
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (poly[i] == poly[(i + 1) % n]) return false;
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) return false;
    }
  }
  return std::abs(signed_area(poly)) > kGeomEps;
}

}  // namespace geom

class FloorPlan {
 public:
  std::vector<Room> rooms;
  std::vector<WallSegment> walls;
  std::vector<ApPlacement> aps;
  Bounds bounds;

  friend bool operator==(const FloorPlan&, const FloorPlan&) = default;

  const Room* find_room(const RoomId& id) const {
    for (const auto& r : rooms)
      if (r.id == id) return &r;
    return nullptr;
  }

  const ApPlacement* find_ap(const ApId& id) const {
    for (const auto& a : aps)
      if (a.ap_id == id) return &a;
    return nullptr;
  }

  std::vector<ApId> ap_order() const {
    std::vector<ApId> out;
    out.reserve(aps.size());
    for (const auto& a : aps) out.push_back(a.ap_id);
    return out;
  }

  double total_room_area() const {
    double acc = 0.0;
    for (const auto& r : rooms) acc += geom::area(r.polygon);
    return acc;
  }

  // Throws Error{validation} naming the offending entity.
  void validate() const;
};

// Unique containing room; boundary points count as inside and ties go to the
// lexicographically lowest room id.
inline std::optional<RoomId> room_at(const FloorPlan& plan, Point2D p) {
  if (!is_finite(p) || !plan.bounds.contains(p)) return std::nullopt;
  const Room* best = nullptr;
  for (const auto& r : plan.rooms) {
    if (geom::contains(r.polygon, p) && (best == nullptr || r.id < best->id)) best = &r;
  }
  if (best == nullptr) return std::nullopt;
  return best->id;
}

inline bool crosses_wall(const FloorPlan& plan, Point2D from, Point2D to) {
  for (const auto& w : plan.walls) {
    if (from == to) {
      if (geom::on_segment(from, w.a, w.b)) return true;
    } else if (geom::segments_intersect(from, to, w.a, w.b)) {
      return true;
    }
  }
  return false;
}

inline void FloorPlan::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::validation, msg); };
  if (!is_finite(bounds.min) || !is_finite(bounds.max) || !(bounds.max.x > bounds.min.x) ||
      !(bounds.max.y > bounds.min.y))
    fail("bounds: empty or non-finite rectangle");

  for (std::size_t i = 0; i < rooms.size(); ++i) {
    const Room& r = rooms[i];
    if (r.id.empty()) fail("room #" + std::to_string(i) + ": empty id");
    for (std::size_t j = 0; j < i; ++j)
      if (rooms[j].id == r.id) fail("room '" + r.id + "': duplicate id");
    if (r.polygon.size() < 3) fail("room '" + r.id + "': polygon needs at least 3 vertices");
    for (const auto& p : r.polygon) {
      if (!is_finite(p)) fail("room '" + r.id + "': non-finite vertex");
      if (!bounds.contains(p)) fail("room '" + r.id + "': vertex outside bounds");
    }
    if (!geom::is_simple(r.polygon)) fail("room '" + r.id + "': polygon is not simple");
  }

  for (std::size_t i = 0; i < rooms.size(); ++i) {
    for (std::size_t j = i + 1; j < rooms.size(); ++j) {
      const auto& pa = rooms[i].polygon;
      const auto& pb = rooms[j].polygon;
      bool overlap = false;
      for (std::size_t u = 0; u < pa.size() && !overlap; ++u)
        for (std::size_t v = 0; v < pb.size() && !overlap; ++v)
          overlap = geom::segments_cross_properly(pa[u], pa[(u + 1) % pa.size()], pb[v],
                                                  pb[(v + 1) % pb.size()]);
      for (const auto& p : pa) overlap = overlap || geom::strictly_inside(p, pb);
      for (const auto& p : pb) overlap = overlap || geom::strictly_inside(p, pa);
      overlap = overlap || geom::strictly_inside(geom::centroid(pa), pb) ||
                geom::strictly_inside(geom::centroid(pb), pa);
      if (overlap) fail("rooms '" + rooms[i].id + "' and '" + rooms[j].id + "': interiors overlap");
    }
  }

  for (std::size_t i = 0; i < walls.size(); ++i) {
    const auto& w = walls[i];
    const std::string tag = "wall #" + std::to_string(i);
    if (!is_finite(w.a) || !is_finite(w.b)) fail(tag + ": non-finite endpoint");
    if (w.a == w.b) fail(tag + ": zero length");
    if (!bounds.contains(w.a) || !bounds.contains(w.b)) fail(tag + ": outside bounds");
  }

  for (std::size_t i = 0; i < aps.size(); ++i) {
    const auto& a = aps[i];
    if (a.ap_id.empty()) fail("ap #" + std::to_string(i) + ": empty id");
    for (std::size_t j = 0; j < i; ++j)
      if (aps[j].ap_id == a.ap_id) fail("ap '" + a.ap_id + "': duplicate id");
    if (!is_finite(a.position) || !bounds.contains(a.position))
      fail("ap '" + a.ap_id + "': position outside bounds");
  }
}

// ---------------------------------------------------------------------------
// JSON document form

inline nlohmann::json point_to_json(Point2D p) { return nlohmann::json::array({p.x, p.y}); }

inline Point2D point_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw Error(ErrorCode::parse, "expected [x, y] number pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline std::string_view to_string(RoomKind k) { return k == RoomKind::office ? "office" : "corridor"; }

inline nlohmann::json to_json(const FloorPlan& plan) {
  nlohmann::json rooms = nlohmann::json::array();
  for (const auto& r : plan.rooms) {
    nlohmann::json verts = nlohmann::json::array();
    for (const auto& p : r.polygon) verts.push_back(point_to_json(p));
    rooms.push_back({{"id", r.id}, {"name", r.name}, {"kind", to_string(r.kind)}, {"vertices", verts}});
  }
  nlohmann::json walls = nlohmann::json::array();
  for (const auto& w : plan.walls) walls.push_back({point_to_json(w.a), point_to_json(w.b)});
  nlohmann::json aps = nlohmann::json::array();
  for (const auto& a : plan.aps) aps.push_back({{"id", a.ap_id}, {"position", point_to_json(a.position)}});
  return {{"bounds", {{"min", point_to_json(plan.bounds.min)}, {"max", point_to_json(plan.bounds.max)}}},
          {"rooms", rooms},
          {"walls", walls},
          {"aps", aps}};
}

inline FloorPlan floorplan_from_json(const nlohmann::json& doc) {
  FloorPlan plan;
  try {
    if (!doc.is_object()) throw Error(ErrorCode::parse, "floor plan: expected a JSON object");
    const auto& b = doc.at("bounds");
    plan.bounds = {point_from_json(b.at("min")), point_from_json(b.at("max"))};
    for (const auto& r : doc.at("rooms")) {
      Room room;
      room.id = r.at("id").get<std::string>();
      room.name = r.value("name", room.id);
      const std::string kind = r.value("kind", "office");
      if (kind == "office") room.kind = RoomKind::office;
      else if (kind == "corridor") room.kind = RoomKind::corridor;
      else throw Error(ErrorCode::validation, "room '" + room.id + "': unknown kind '" + kind + "'");
      for (const auto& v : r.at("vertices")) room.polygon.push_back(point_from_json(v));
      // An explicitly repeated closing vertex is accepted and dropped.
      if (room.polygon.size() > 3 && room.polygon.front() == room.polygon.back()) room.polygon.pop_back();
      plan.rooms.push_back(std::move(room));
    }
    if (doc.contains("walls")) {
      for (const auto& w : doc.at("walls")) {
        if (!w.is_array() || w.size() != 2) throw Error(ErrorCode::parse, "wall: expected [[x,y],[x,y]]");
        plan.walls.push_back({point_from_json(w[0]), point_from_json(w[1])});
      }
    }
    if (doc.contains("aps")) {
      for (const auto& a : doc.at("aps"))
        plan.aps.push_back({a.at("id").get<std::string>(), point_from_json(a.at("position"))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("floor plan: ") + e.what());
  }
  plan.validate();
  return plan;
}

inline FloorPlan load_floorplan(std::istream& in) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::parse, std::string("floor plan: ") + e.what());
  }
  return floorplan_from_json(doc);
}

inline FloorPlan load_floorplan(const std::string& text) {
  std::istringstream in(text);
  return load_floorplan(in);
}

inline std::string serialize(const FloorPlan& plan) { return to_json(plan).dump(2); }

}  // namespace syndesi
