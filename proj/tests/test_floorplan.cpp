#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <string>

#include "syndesi/floorplan.hpp"

using namespace syndesi;

namespace {

const char* kSquare = R"({
  "bounds": {"min": [0, 0], "max": [4, 4]},
  "rooms": [{"id": "r1", "name": "Room", "kind": "office", "vertices": [[0,0],[4,0],[4,4],[0,4]]}],
  "walls": [],
  "aps": [{"id": "ap-1", "position": [2, 2]}]
})";

FloorPlan demo() {
  std::ifstream in(std::string(SYNDESI_DATA_DIR) + "/demo_plan.json");
  return load_floorplan(in);
}

FloorPlan two_rooms_with_wall() {
  return load_floorplan(std::string(R"({
    "bounds": {"min": [0, 0], "max": [10, 4]},
    "rooms": [
      {"id": "a", "kind": "office", "vertices": [[0,0],[5,0],[5,4],[0,4]]},
      {"id": "b", "kind": "office", "vertices": [[5,0],[10,0],[10,4],[5,4]]}],
    "walls": [[[5,0],[5,4]]],
    "aps": []
  })"));
}

// Cramer's-rule intersection for the closed segments p1p2 and q1q2, with the
// collinear case handled by projection onto the dominant axis.
bool oracle_intersect(Point2D p1, Point2D p2, Point2D q1, Point2D q2) {
  const double rx = p2.x - p1.x, ry = p2.y - p1.y;
  const double sx = q2.x - q1.x, sy = q2.y - q1.y;
  const double den = rx * sy - ry * sx;
  const double qpx = q1.x - p1.x, qpy = q1.y - p1.y;
  if (std::abs(den) > 1e-12) {
    const double t = (qpx * sy - qpy * sx) / den;
    const double u = (qpx * ry - qpy * rx) / den;
    return t >= -1e-12 && t <= 1 + 1e-12 && u >= -1e-12 && u <= 1 + 1e-12;
  }
  if (std::abs(qpx * ry - qpy * rx) > 1e-12) return false;  // parallel, not collinear
  const bool use_x = std::abs(rx) + std::abs(sx) >= std::abs(ry) + std::abs(sy);
  auto key = [use_x](Point2D p) { return use_x ? p.x : p.y; };
  const double a0 = std::min(key(p1), key(p2)), a1 = std::max(key(p1), key(p2));
  const double b0 = std::min(key(q1), key(q2)), b1 = std::max(key(q1), key(q2));
  return a0 <= b1 && b0 <= a1;
}

}  // namespace

TEST(FloorPlan, MinimalSquareLoads) {
  const auto plan = load_floorplan(std::string(kSquare));
  EXPECT_EQ(plan.rooms.size(), 1u);
  EXPECT_EQ(plan.aps.size(), 1u);
  EXPECT_DOUBLE_EQ(plan.total_room_area(), 16.0);
}

TEST(FloorPlan, TwoVertexPolygonIsValidationError) {
  try {
    load_floorplan(std::string(R"({"bounds":{"min":[0,0],"max":[4,4]},
      "rooms":[{"id":"bad","vertices":[[0,0],[1,1]]}]})"));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::validation);
    EXPECT_NE(std::string(e.what()).find("bad"), std::string::npos);
  }
}

TEST(FloorPlan, MalformedDocumentIsParseError) {
  try {
    load_floorplan(std::string("{\"bounds\": [1, 2"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::parse);
  }
  try {
    load_floorplan(std::string(R"({"rooms": []})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::parse);
  }
}

TEST(FloorPlan, DuplicateIdsRejected) {
  EXPECT_THROW(load_floorplan(std::string(R"({"bounds":{"min":[0,0],"max":[9,9]},
      "rooms":[{"id":"r","vertices":[[0,0],[1,0],[1,1]]},{"id":"r","vertices":[[5,5],[6,5],[6,6]]}]})")),
               Error);
  EXPECT_THROW(load_floorplan(std::string(R"({"bounds":{"min":[0,0],"max":[9,9]},
      "rooms":[{"id":"r","vertices":[[0,0],[1,0],[1,1]]}],
      "aps":[{"id":"a","position":[0.5,0.2]},{"id":"a","position":[0.6,0.2]}]})")),
               Error);
}

TEST(FloorPlan, InvariantViolationsRejected) {
  // self-intersecting bow tie
  EXPECT_THROW(load_floorplan(std::string(R"({"bounds":{"min":[0,0],"max":[9,9]},
      "rooms":[{"id":"r","vertices":[[0,0],[2,2],[2,0],[0,2]]}]})")),
               Error);
  // overlapping interiors
  EXPECT_THROW(load_floorplan(std::string(R"({"bounds":{"min":[0,0],"max":[9,9]},
      "rooms":[{"id":"a","vertices":[[0,0],[3,0],[3,3],[0,3]]},{"id":"b","vertices":[[2,2],[5,2],[5,5],[2,5]]}]})")),
               Error);
  // zero-length wall
  EXPECT_THROW(load_floorplan(std::string(R"({"bounds":{"min":[0,0],"max":[9,9]},
      "rooms":[{"id":"a","vertices":[[0,0],[3,0],[3,3],[0,3]]}], "walls":[[[1,1],[1,1]]]})")),
               Error);
  // AP outside bounds
  EXPECT_THROW(load_floorplan(std::string(R"({"bounds":{"min":[0,0],"max":[9,9]},
      "rooms":[{"id":"a","vertices":[[0,0],[3,0],[3,3],[0,3]]}], "aps":[{"id":"x","position":[10,1]}]})")),
               Error);
}

TEST(FloorPlan, ExplicitClosingVertexAccepted) {
  const auto plan = load_floorplan(std::string(R"({"bounds":{"min":[0,0],"max":[4,4]},
      "rooms":[{"id":"r","vertices":[[0,0],[4,0],[4,4],[0,4],[0,0]]}]})"));
  EXPECT_EQ(plan.rooms[0].polygon.size(), 4u);
}

TEST(FloorPlan, DemoPlanShape) {
  const auto plan = demo();
  EXPECT_EQ(plan.rooms.size(), 5u);
  EXPECT_EQ(plan.aps.size(), 5u);
  EXPECT_NEAR(plan.total_room_area(), 260.0, 1e-9);
  int offices = 0;
  for (const auto& r : plan.rooms) offices += r.kind == RoomKind::office ? 1 : 0;
  EXPECT_EQ(offices, 4);
}

TEST(FloorPlan, RoomAtCentroidAndOutside) {
  const auto plan = demo();
  for (const auto& r : plan.rooms) EXPECT_EQ(room_at(plan, geom::centroid(r.polygon)), r.id);
  EXPECT_FALSE(room_at(plan, {-1.0, 5.0}).has_value());
  EXPECT_FALSE(room_at(plan, {100.0, 100.0}).has_value());
}

TEST(FloorPlan, SharedBoundaryGoesToLowestId) {
  const auto plan = demo();
  // office-1 spans y in [0, 8]; the corridor starts at y = 8.
  EXPECT_EQ(room_at(plan, {2.0, 8.0}), std::optional<RoomId>("corridor"));
  const auto ab = two_rooms_with_wall();
  EXPECT_EQ(room_at(ab, {5.0, 2.0}), std::optional<RoomId>("a"));
}

TEST(FloorPlan, CrossesWallExamples) {
  const auto plan = two_rooms_with_wall();
  EXPECT_TRUE(crosses_wall(plan, {4.0, 2.0}, {6.0, 2.0}));
  EXPECT_FALSE(crosses_wall(plan, {1.0, 1.0}, {4.0, 3.0}));
  EXPECT_TRUE(crosses_wall(plan, {4.0, 2.0}, {5.0, 2.0}));          // endpoint on the wall
  EXPECT_TRUE(crosses_wall(plan, {5.0, -1.0}, {5.0, 1.0}));         // collinear overlap
  EXPECT_TRUE(crosses_wall(plan, {4.0, 4.0}, {6.0, 4.0}));          // touches wall end
  EXPECT_FALSE(crosses_wall(plan, {4.0, 4.5}, {6.0, 4.5}));         // passes above the wall
}

TEST(FloorPlan, DegenerateSegmentCrossesOnlyOnWall) {
  const auto plan = two_rooms_with_wall();
  EXPECT_TRUE(crosses_wall(plan, {5.0, 1.0}, {5.0, 1.0}));
  EXPECT_FALSE(crosses_wall(plan, {4.9, 1.0}, {4.9, 1.0}));
}

TEST(FloorPlanProperty, CrossesWallSymmetricAndMatchesOracle) {
  const auto plan = demo();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ux(-1.0, 14.0), uy(-1.0, 21.0);
  for (int i = 0; i < 20000; ++i) {
    Point2D a{ux(rng), uy(rng)}, b{ux(rng), uy(rng)};
    if (i % 10 == 0) b = {std::round(b.x * 2) / 2, std::round(b.y * 2) / 2};  // grid-snapped, hits walls exactly
    const bool fwd = crosses_wall(plan, a, b);
    ASSERT_EQ(fwd, crosses_wall(plan, b, a));
    bool expect = false;
    for (const auto& w : plan.walls) expect = expect || oracle_intersect(a, b, w.a, w.b);
    ASSERT_EQ(fwd, expect) << a.x << "," << a.y << " -> " << b.x << "," << b.y;
  }
}

TEST(FloorPlanProperty, RoomAtUniqueAndConsistentWithContainment) {
  const auto plan = demo();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(-1.0, 14.0), uy(-1.0, 21.0);
  for (int i = 0; i < 20000; ++i) {
    const Point2D p{ux(rng), uy(rng)};
    int strictly = 0;
    for (const auto& r : plan.rooms) strictly += geom::strictly_inside(p, r.polygon) ? 1 : 0;
    ASSERT_LE(strictly, 1);
    const auto r = room_at(plan, p);
    if (r) ASSERT_TRUE(geom::contains(plan.find_room(*r)->polygon, p));
    const bool in_box = p.x >= 0 && p.x <= 13 && p.y >= 0 && p.y <= 20;
    ASSERT_EQ(r.has_value(), in_box);
  }
}

TEST(FloorPlanProperty, SerializeRoundTrip) {
  const auto plan = demo();
  const auto again = load_floorplan(serialize(plan));
  EXPECT_EQ(serialize(again), serialize(plan));
  ASSERT_EQ(again.rooms.size(), plan.rooms.size());
  for (std::size_t i = 0; i < plan.rooms.size(); ++i) {
    EXPECT_EQ(again.rooms[i].id, plan.rooms[i].id);
    EXPECT_EQ(again.rooms[i].polygon, plan.rooms[i].polygon);
    EXPECT_EQ(again.rooms[i].kind, plan.rooms[i].kind);
  }
  ASSERT_EQ(again.walls.size(), plan.walls.size());
  ASSERT_EQ(again.aps.size(), plan.aps.size());
}
