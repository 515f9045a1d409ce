#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "syndesi/error.hpp"
#include "syndesi/floorplan.hpp"
#include "syndesi/motion.hpp"
#include "syndesi/ranging.hpp"

namespace syndesi {

using Rng = std::mt19937_64;

// [x, y, theta, ell]; theta is the map angle measured from +x toward +y.
struct TrackState {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double ell = 0.7;

  Point2D position() const { return {x, y}; }
};

struct Particle {
  TrackState state;
  double weight = 0.0;
  // Position before the most recent predict; equals the current position for
  // freshly initialized or redrawn particles.
  Point2D origin;
};

struct NoiseModel {
  double sigma_theta = 0.1;
  double sigma_ell = 0.05;
  double sigma_range = 2.0;

  void validate() const {
    if (!(sigma_theta >= 0.0) || !(sigma_ell >= 0.0) || !(sigma_range >= 0.0))
      throw Error(ErrorCode::validation, "noise model: sigmas must be >= 0");
  }
};

struct TrackerConfig {
  std::size_t n_particles = 1000;
  double ess_threshold = 0.5;
  double wifi_resample_fraction = 0.1;
  std::uint64_t rng_seed = 0;
  double stride_length = 0.7;

  void validate() const {
    if (n_particles < 1) throw Error(ErrorCode::validation, "tracker: n_particles must be >= 1");
    if (!(ess_threshold > 0.0 && ess_threshold <= 1.0))
      throw Error(ErrorCode::validation, "tracker: ess_threshold must be in (0, 1]");
    if (!(wifi_resample_fraction >= 0.0 && wifi_resample_fraction <= 1.0))
      throw Error(ErrorCode::validation, "tracker: wifi_resample_fraction must be in [0, 1]");
    if (!(stride_length > 0.0)) throw Error(ErrorCode::validation, "tracker: stride_length must be > 0");
  }
};

struct UniformPrior {};
struct PointPrior {
  Point2D center;
  double radius = 0.0;
};
using Prior = std::variant<UniformPrior, PointPrior>;

struct ParticleSet {
  std::vector<Particle> particles;
  bool collapsed = false;

  // Outcome of the most recent resample call.
  bool last_resampled = false;
  std::size_t last_redrawn = 0;
  bool last_redraw_skipped = false;

  std::size_t size() const { return particles.size(); }
};

struct LocationEstimate {
  double t = 0.0;
  Point2D position;
  std::optional<RoomId> room;
};

inline double weight_sum(const ParticleSet& set) {
  double s = 0.0;
  for (const auto& p : set.particles) s += p.weight;
  return s;
}

inline double effective_sample_size(const ParticleSet& set) {
  double sq = 0.0;
  for (const auto& p : set.particles) sq += p.weight * p.weight;
  return sq > 0.0 ? 1.0 / sq : 0.0;
}

namespace detail {

inline void normalize_or_collapse(ParticleSet& set, std::string_view stage) {
  const double total = weight_sum(set);
  if (!(total > 0.0) || !std::isfinite(total)) {
    set.collapsed = true;
    throw Error(ErrorCode::collapse, std::string(stage) + ": all particle weights are zero");
  }
  for (auto& p : set.particles) p.weight /= total;
  set.collapsed = false;
}

inline std::optional<Point2D> sample_allowed(const FloorPlan& plan, const Prior& prior, Rng& rng,
                                             std::size_t max_attempts) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    Point2D p;
    if (const auto* pt = std::get_if<PointPrior>(&prior)) {
      const double r = pt->radius * std::sqrt(unit(rng));
      const double a = 2.0 * std::numbers::pi * unit(rng);
      p = {pt->center.x + r * std::cos(a), pt->center.y + r * std::sin(a)};
    } else {
      p = {plan.bounds.min.x + plan.bounds.width() * unit(rng),
           plan.bounds.min.y + plan.bounds.height() * unit(rng)};
    }
    if (room_at(plan, p)) return p;
  }
  return std::nullopt;
}

}  // namespace detail

inline ParticleSet init_particles(const FloorPlan& plan, const TrackerConfig& cfg, const Prior& prior, Rng& rng) {
  cfg.validate();
  if (const auto* pt = std::get_if<PointPrior>(&prior)) {
    if (!plan.bounds.contains(pt->center))
      throw Error(ErrorCode::contract, "init: point prior outside floor-plan bounds");
    if (!(pt->radius >= 0.0)) throw Error(ErrorCode::contract, "init: negative prior radius");
  }
  ParticleSet set;
  set.particles.reserve(cfg.n_particles);
  std::uniform_real_distribution<double> heading(-std::numbers::pi, std::numbers::pi);
  const double w = 1.0 / static_cast<double>(cfg.n_particles);
  for (std::size_t i = 0; i < cfg.n_particles; ++i) {
    const auto p = detail::sample_allowed(plan, prior, rng, 10000);
    if (!p) throw Error(ErrorCode::init_failed, "init: prior region lies entirely in not-allowed space");
    set.particles.push_back({{p->x, p->y, heading(rng), cfg.stride_length}, w, *p});
  }
  return set;
}

// Prediction: x += l cos(theta), y += l sin(theta) with theta and l freshly
// drawn around the motion vector; the previous theta and l are discarded.
inline void predict(ParticleSet& set, const MotionVector& mv, const NoiseModel& noise, Rng& rng) {
  noise.validate();
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& p : set.particles) {
    const double theta = noise.sigma_theta > 0.0 ? mv.theta + noise.sigma_theta * gauss(rng) : mv.theta;
    double ell = mv.ell;
    if (noise.sigma_ell > 0.0) {
      do {
        ell = mv.ell + noise.sigma_ell * gauss(rng);
      } while (!(ell > 0.0));
    }
    p.origin = p.state.position();
    p.state.x += ell * std::cos(theta);
    p.state.y += ell * std::sin(theta);
    p.state.theta = wrap_angle(theta);
    p.state.ell = ell;
  }
}

inline bool particle_allowed(const FloorPlan& plan, Point2D from, Point2D to) {
  return room_at(plan, to).has_value() && !crosses_wall(plan, from, to);
}

inline void apply_floorplan(ParticleSet& set, const FloorPlan& plan, std::span<const Point2D> previous_positions) {
  if (previous_positions.size() != set.size())
    throw Error(ErrorCode::contract, "apply_floorplan: previous positions not aligned with particles");
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto& p = set.particles[i];
    if (p.weight > 0.0 && !particle_allowed(plan, previous_positions[i], p.state.position())) p.weight = 0.0;
  }
  detail::normalize_or_collapse(set, "apply_floorplan");
}

// Uses each particle's recorded origin as its previous position.
inline void apply_floorplan(ParticleSet& set, const FloorPlan& plan) {
  std::vector<Point2D> prev;
  prev.reserve(set.size());
  for (const auto& p : set.particles) prev.push_back(p.origin);
  apply_floorplan(set, plan, prev);
}

// Gaussian kernel on range residuals, evaluated in the log domain.
inline void weight_wifi(ParticleSet& set, std::span<const RangeEstimate> ranges, const FloorPlan& plan,
                        const NoiseModel& noise) {
  noise.validate();
  std::vector<Point2D> anchors;
  for (const auto& r : ranges) {
    const auto* ap = plan.find_ap(r.ap_id);
    if (ap == nullptr) throw Error(ErrorCode::contract, "weight_wifi: unknown ap '" + r.ap_id + "'");
    anchors.push_back(ap->position);
  }
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> logw(set.size(), neg_inf);
  double max_log = neg_inf;
  const double two_var = 2.0 * noise.sigma_range * noise.sigma_range;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& p = set.particles[i];
    if (!(p.weight > 0.0)) continue;
    double lw = std::log(p.weight);
    for (std::size_t j = 0; j < ranges.size(); ++j) {
      const double res = distance(p.state.position(), anchors[j]) - ranges[j].d;
      if (two_var > 0.0) lw -= res * res / two_var;
      else if (res != 0.0) lw = neg_inf;
    }
    logw[i] = lw;
    max_log = std::max(max_log, lw);
  }
  for (std::size_t i = 0; i < set.size(); ++i)
    set.particles[i].weight = max_log == neg_inf ? 0.0 : std::exp(logw[i] - max_log);
  detail::normalize_or_collapse(set, "weight_wifi");
}

// Least-squares position fix from ranges to >= 3 distinct anchors: linearized
// closed form followed by Gauss-Newton refinement.
inline std::optional<Point2D> multilaterate(const FloorPlan& plan, std::span<const RangeEstimate> ranges) {
  std::vector<std::pair<Point2D, double>> obs;
  for (const auto& r : ranges) {
    const auto* ap = plan.find_ap(r.ap_id);
    if (ap == nullptr) throw Error(ErrorCode::contract, "multilaterate: unknown ap '" + r.ap_id + "'");
    bool dup = false;
    for (const auto& o : obs) dup = dup || o.first == ap->position;
    if (!dup) obs.push_back({ap->position, r.d});
  }
  if (obs.size() < 3) return std::nullopt;

  const auto [a0, d0] = obs.front();
  double h11 = 0, h12 = 0, h22 = 0, g1 = 0, g2 = 0;
  for (std::size_t j = 1; j < obs.size(); ++j) {
    const auto [aj, dj] = obs[j];
    const double r1 = 2.0 * (aj.x - a0.x);
    const double r2 = 2.0 * (aj.y - a0.y);
    const double rhs = d0 * d0 - dj * dj + dot(aj, aj) - dot(a0, a0);
    h11 += r1 * r1;
    h12 += r1 * r2;
    h22 += r2 * r2;
    g1 += r1 * rhs;
    g2 += r2 * rhs;
  }
  const double det = h11 * h22 - h12 * h12;
  if (std::abs(det) < 1e-12 * std::max(1.0, h11 * h22)) return std::nullopt;
  Point2D p{(h22 * g1 - h12 * g2) / det, (h11 * g2 - h12 * g1) / det};

  for (int iter = 0; iter < 50; ++iter) {
    double j11 = 0, j12 = 0, j22 = 0, b1 = 0, b2 = 0;
    for (const auto& [a, d] : obs) {
      const double dist = std::max(distance(p, a), 1e-9);
      const double ux = (p.x - a.x) / dist;
      const double uy = (p.y - a.y) / dist;
      const double res = dist - d;
      j11 += ux * ux;
      j12 += ux * uy;
      j22 += uy * uy;
      b1 += ux * res;
      b2 += uy * res;
    }
    const double dj = j11 * j22 - j12 * j12;
    if (std::abs(dj) < 1e-15) break;
    const Point2D step{(j22 * b1 - j12 * b2) / dj, (j11 * b2 - j12 * b1) / dj};
    p = p - step;
    if (norm(step) < 1e-12) break;
  }
  if (!is_finite(p)) return std::nullopt;
  return p;
}

// Systematic resampling when ESS falls below ess_threshold * N. When ranges are
// given and a resample happened, a fraction of the particles is redrawn around
// the WiFi-only multilateration fix.
inline void resample(ParticleSet& set, const TrackerConfig& cfg, const NoiseModel& noise,
                     const std::vector<RangeEstimate>* ranges, const FloorPlan& plan, Rng& rng) {
  set.last_resampled = false;
  set.last_redrawn = 0;
  set.last_redraw_skipped = false;
  const std::size_t n = set.size();
  if (n == 0) return;
  if (effective_sample_size(set) >= cfg.ess_threshold * static_cast<double>(n)) return;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double step = 1.0 / static_cast<double>(n);
  double u = unit(rng) * step;
  std::vector<Particle> out;
  out.reserve(n);
  double cumulative = set.particles[0].weight;
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (u > cumulative && src + 1 < n) cumulative += set.particles[++src].weight;
    // Never copy a zero-weight particle, even under round-off at the tail.
    std::size_t pick = src;
    while (set.particles[pick].weight <= 0.0 && pick > 0) --pick;
    out.push_back(set.particles[pick]);
    out.back().weight = step;
    u += step;
  }
  set.particles = std::move(out);
  set.last_resampled = true;

  if (ranges == nullptr || cfg.wifi_resample_fraction <= 0.0) return;
  const auto fix = multilaterate(plan, *ranges);
  if (!fix) {
    set.last_redraw_skipped = true;
    return;
  }
  const auto count = static_cast<std::size_t>(std::llround(cfg.wifi_resample_fraction * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  // Partial Fisher-Yates: the first `count` entries are a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::normal_distribution<double> gauss(0.0, noise.sigma_range);
  for (std::size_t i = 0; i < count; ++i) {
    auto& p = set.particles[idx[i]];
    for (int attempt = 0; attempt < 100; ++attempt) {
      const Point2D q{fix->x + gauss(rng), fix->y + gauss(rng)};
      if (!room_at(plan, q)) continue;
      p.state.x = q.x;
      p.state.y = q.y;
      p.origin = q;
      ++set.last_redrawn;
      break;
    }
  }
}

inline LocationEstimate estimate(const ParticleSet& set, const FloorPlan& plan, double t) {
  const double total = weight_sum(set);
  if (set.collapsed || !(total > 0.0)) throw Error(ErrorCode::collapse, "estimate: particle set collapsed");
  double x = 0.0;
  double y = 0.0;
  for (const auto& p : set.particles) {
    x += p.weight * p.state.x;
    y += p.weight * p.state.y;
  }
  const Point2D pos{x / total, y / total};
  return {t, pos, room_at(plan, pos)};
}

// ---------------------------------------------------------------------------
// Full pipeline

// Compass heading (0 = +y, growing toward +x) to map angle (0 = +x, growing toward +y).
inline double compass_to_map_angle(double heading) { return wrap_angle(std::numbers::pi / 2.0 - heading); }

enum class TrackStage { floorplan, wifi, resample, reinit };

struct TrackEvent {
  double t = 0.0;
  std::string what;
};

struct TrackDiagnostics {
  std::size_t steps = 0;
  std::size_t wifi_updates = 0;
  std::size_t resamples = 0;
  std::size_t redrawn = 0;
  std::size_t redraw_skipped = 0;
  std::vector<TrackEvent> events;
};

// Called after every filter update with the current particle set.
using TrackObserver = std::function<void(TrackStage, const ParticleSet&)>;

struct TrackOptions {
  TrackerConfig cfg;
  NoiseModel noise;
  PdrConfig pdr;
  Prior prior = UniformPrior{};
  TrackObserver observer;
};

namespace detail {

struct Scan {
  double t = 0.0;
  std::vector<RssSample> samples;
};

inline std::vector<Scan> group_scans(std::span<const RssSample> rss) {
  std::vector<Scan> scans;
  for (const auto& s : rss) {
    if (scans.empty() || scans.back().t != s.t) scans.push_back({s.t, {}});
    scans.back().samples.push_back(s);
  }
  std::stable_sort(scans.begin(), scans.end(), [](const Scan& a, const Scan& b) { return a.t < b.t; });
  return scans;
}

}  // namespace detail

inline std::vector<LocationEstimate> track(const FloorPlan& plan, std::span<const ApCalibration> cals,
                                           std::span<const ImuSample> imu, std::span<const RssSample> rss,
                                           const TrackOptions& opt, TrackDiagnostics* diag = nullptr) {
  std::vector<LocationEstimate> out;
  TrackDiagnostics local;
  TrackDiagnostics& dg = diag != nullptr ? *diag : local;
  if (imu.empty()) return out;

  std::map<ApId, const ApCalibration*> cal_of;
  for (const auto& c : cals) cal_of[c.ap_id] = &c;
  const auto scans = detail::group_scans(rss);

  Rng rng(opt.cfg.rng_seed);
  ParticleSet set = init_particles(plan, opt.cfg, opt.prior, rng);
  const auto notify = [&](TrackStage stage) {
    if (opt.observer) opt.observer(stage, set);
  };

  auto reinit = [&](double t, const std::vector<RangeEstimate>* ranges) {
    std::optional<Point2D> fix;
    if (ranges != nullptr) fix = multilaterate(plan, *ranges);
    if (fix && plan.bounds.contains(*fix)) {
      try {
        set = init_particles(plan, opt.cfg, PointPrior{*fix, std::max(opt.noise.sigma_range, 0.5)}, rng);
        dg.events.push_back({t, "reinit_wifi"});
        notify(TrackStage::reinit);
        return;
      } catch (const Error&) {
      }
    }
    set = init_particles(plan, opt.cfg, UniformPrior{}, rng);
    dg.events.push_back({t, "reinit_uniform"});
    notify(TrackStage::reinit);
  };

  double prev_t = imu.front().t;
  std::size_t next_scan = 0;
  for (const auto& [step, mv_compass] : motion_vectors(imu, opt.pdr)) {
    ++dg.steps;
    const MotionVector mv{compass_to_map_angle(mv_compass.theta), mv_compass.ell};

    // Most recent scan completed within (prev_t, step.t].
    const detail::Scan* scan = nullptr;
    while (next_scan < scans.size() && scans[next_scan].t <= step.t) {
      if (scans[next_scan].t > prev_t) scan = &scans[next_scan];
      ++next_scan;
    }
    std::vector<RangeEstimate> ranges;
    if (scan != nullptr) {
      for (const auto& s : scan->samples) {
        const auto it = cal_of.find(s.ap_id);
        if (it == cal_of.end()) throw Error(ErrorCode::contract, "track: no calibration for ap '" + s.ap_id + "'");
        ranges.push_back(range_from_rss(s, *it->second));
      }
    }
    const auto* ranges_ptr = scan != nullptr ? &ranges : nullptr;

    predict(set, mv, opt.noise, rng);
    try {
      apply_floorplan(set, plan);
      notify(TrackStage::floorplan);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::collapse) throw;
      dg.events.push_back({step.t, "collapse_floorplan"});
      reinit(step.t, ranges_ptr);
    }
    if (ranges_ptr != nullptr) {
      try {
        weight_wifi(set, ranges, plan, opt.noise);
        ++dg.wifi_updates;
        notify(TrackStage::wifi);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::collapse) throw;
        dg.events.push_back({step.t, "collapse_wifi"});
        reinit(step.t, ranges_ptr);
      }
    }
    resample(set, opt.cfg, opt.noise, ranges_ptr, plan, rng);
    if (set.last_resampled) ++dg.resamples;
    dg.redrawn += set.last_redrawn;
    if (set.last_redraw_skipped) {
      ++dg.redraw_skipped;
      dg.events.push_back({step.t, "redraw_skipped"});
    }
    notify(TrackStage::resample);

    out.push_back(estimate(set, plan, step.t));
    prev_t = step.t;
  }
  return out;
}

// Estimates output: CSV "t,x,y,room" (room empty when outside every room).
inline void write_estimates_csv(std::ostream& out, std::span<const LocationEstimate> estimates) {
  out << "t,x,y,room\n";
  for (const auto& e : estimates) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,", e.t, e.position.x, e.position.y);
    out << buf << e.room.value_or("") << '\n';
  }
}

}  // namespace syndesi
