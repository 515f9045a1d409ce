#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "syndesi/error.hpp"
#include "syndesi/floorplan.hpp"
#include "syndesi/ranging.hpp"

namespace syndesi {

// RSS value standing in for an access point that was not heard.
inline constexpr double kMissingRss = -100.0;

struct FingerprintVector {
  std::vector<double> values;

  friend bool operator==(const FingerprintVector&, const FingerprintVector&) = default;
};

struct FingerprintEntry {
  std::size_t id = 0;  // database order; travels with the entry
  RoomId room;
  FingerprintVector vector;
};

struct FingerprintDb {
  std::vector<ApId> ap_order;
  std::vector<FingerprintEntry> entries;

  std::size_t dims() const { return ap_order.size(); }

  void add(RoomId room, FingerprintVector v) {
    const std::size_t id = entries.empty() ? 0 : entries.back().id + 1;
    entries.push_back({id, std::move(room), std::move(v)});
  }

  std::vector<RoomId> labels() const {
    std::set<RoomId> s;
    for (const auto& e : entries) s.insert(e.room);
    return {s.begin(), s.end()};
  }

  void validate() const {
    std::set<std::size_t> ids;
    for (const auto& e : entries) {
      if (e.vector.values.size() != dims())
        throw Error(ErrorCode::validation, "fingerprint entry " + std::to_string(e.id) + ": wrong vector length");
      for (double v : e.vector.values)
        if (!(v <= 0.0 && v >= kMissingRss))
          throw Error(ErrorCode::validation, "fingerprint entry " + std::to_string(e.id) + ": rss out of [-100, 0]");
      if (!ids.insert(e.id).second)
        throw Error(ErrorCode::validation, "fingerprint entry " + std::to_string(e.id) + ": duplicate id");
    }
  }

  void validate_against(const FloorPlan& plan) const {
    for (const auto& e : entries)
      if (plan.find_room(e.room) == nullptr)
        throw Error(ErrorCode::validation, "fingerprint entry " + std::to_string(e.id) + ": unknown room '" + e.room + "'");
  }
};

// Builds a fixed-order vector from one scan; unheard APs get the sentinel and
// readings are clamped into [-100, 0].
inline FingerprintVector make_fingerprint(std::span<const ApId> ap_order, std::span<const RssSample> scan) {
  FingerprintVector v{std::vector<double>(ap_order.size(), kMissingRss)};
  for (const auto& s : scan) {
    const auto it = std::find(ap_order.begin(), ap_order.end(), s.ap_id);
    if (it == ap_order.end()) continue;
    v.values[static_cast<std::size_t>(it - ap_order.begin())] = std::clamp(s.rss, kMissingRss, 0.0);
  }
  return v;
}

struct KnnModel {
  std::size_t k = 3;
  FingerprintDb db;
};

struct SvmScorer {
  RoomId room;
  std::vector<double> w;
  double b = 0.0;
};

struct SvmModel {
  std::vector<double> mean;
  std::vector<double> scale;
  std::vector<SvmScorer> scorers;  // sorted by room id

  std::vector<double> standardize(const FingerprintVector& v) const {
    std::vector<double> z(v.values.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = (v.values[i] - mean[i]) / scale[i];
    return z;
  }

  double decision(std::size_t scorer, const std::vector<double>& z) const {
    const auto& s = scorers[scorer];
    double acc = s.b;
    for (std::size_t i = 0; i < z.size(); ++i) acc += s.w[i] * z[i];
    return acc;
  }
};

struct TrainOptions {
  std::size_t k = 3;
  int svm_iterations = 500;
  double svm_learning_rate = 0.1;
  double svm_lambda = 1e-3;
};

namespace detail {

// Full-batch sub-gradient descent on the L2-regularized hinge loss; the bias
// is not regularized. Step size is learning_rate / sqrt(t).
inline SvmScorer train_binary(const std::vector<std::vector<double>>& xs, const std::vector<double>& ys,
                              RoomId room, const TrainOptions& opt) {
  const std::size_t dims = xs.empty() ? 0 : xs.front().size();
  const double n = static_cast<double>(xs.size());
  SvmScorer s{std::move(room), std::vector<double>(dims, 0.0), 0.0};
  std::vector<double> grad(dims);
  for (int t = 1; t <= opt.svm_iterations; ++t) {
    for (std::size_t d = 0; d < dims; ++d) grad[d] = opt.svm_lambda * s.w[d];
    double grad_b = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double margin = s.b;
      for (std::size_t d = 0; d < dims; ++d) margin += s.w[d] * xs[i][d];
      if (ys[i] * margin < 1.0) {
        for (std::size_t d = 0; d < dims; ++d) grad[d] -= ys[i] * xs[i][d] / n;
        grad_b -= ys[i] / n;
      }
    }
    const double eta = opt.svm_learning_rate / std::sqrt(static_cast<double>(t));
    for (std::size_t d = 0; d < dims; ++d) s.w[d] -= eta * grad[d];
    s.b -= eta * grad_b;
  }
  return s;
}

}  // namespace detail

inline std::pair<KnnModel, SvmModel> train(const FingerprintDb& db, const TrainOptions& opt = {}) {
  db.validate();
  const auto labels = db.labels();
  if (db.entries.empty() || labels.size() < 2)
    throw Error(ErrorCode::training, "train: need at least two distinct room labels");
  if (opt.k < 1 || opt.k > db.entries.size())
    throw Error(ErrorCode::training, "train: k must be in [1, database size]");

  KnnModel knn{opt.k, db};

  const std::size_t dims = db.dims();
  const double n = static_cast<double>(db.entries.size());
  SvmModel svm;
  svm.mean.assign(dims, 0.0);
  svm.scale.assign(dims, 0.0);
  for (const auto& e : db.entries)
    for (std::size_t d = 0; d < dims; ++d) svm.mean[d] += e.vector.values[d] / n;
  for (const auto& e : db.entries)
    for (std::size_t d = 0; d < dims; ++d) {
      const double dv = e.vector.values[d] - svm.mean[d];
      svm.scale[d] += dv * dv / n;
    }
  for (auto& s : svm.scale) s = s > 0.0 ? std::sqrt(s) : 1.0;

  std::vector<std::vector<double>> xs;
  xs.reserve(db.entries.size());
  for (const auto& e : db.entries) xs.push_back(svm.standardize(e.vector));
  for (const auto& label : labels) {
    std::vector<double> ys;
    ys.reserve(db.entries.size());
    for (const auto& e : db.entries) ys.push_back(e.room == label ? 1.0 : -1.0);
    svm.scorers.push_back(detail::train_binary(xs, ys, label, opt));
  }
  return {std::move(knn), std::move(svm)};
}

inline RoomId classify_knn(const FingerprintVector& v, const KnnModel& m) {
  const auto& entries = m.db.entries;
  if (v.values.size() != m.db.dims()) throw Error(ErrorCode::contract, "classify_knn: vector length mismatch");
  if (entries.empty()) throw Error(ErrorCode::contract, "classify_knn: empty model");

  struct Cand {
    double d2;
    std::size_t id;
    const RoomId* room;
  };
  std::vector<Cand> cands;
  cands.reserve(entries.size());
  for (const auto& e : entries) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < v.values.size(); ++i) {
      const double diff = v.values[i] - e.vector.values[i];
      d2 += diff * diff;
    }
    cands.push_back({d2, e.id, &e.room});
  }
  const std::size_t k = std::min(m.k, cands.size());
  const auto by_distance = [](const Cand& a, const Cand& b) { return a.d2 != b.d2 ? a.d2 < b.d2 : a.id < b.id; };
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(), by_distance);

  struct Tally {
    std::size_t votes = 0;
    double dist_sum = 0.0;
  };
  std::map<RoomId, Tally> tally;
  for (std::size_t i = 0; i < k; ++i) {
    auto& t = tally[*cands[i].room];
    ++t.votes;
    t.dist_sum += std::sqrt(cands[i].d2);
  }
  // std::map iterates by ascending room id, so strict comparisons keep the lowest id on ties.
  const RoomId* best = nullptr;
  Tally best_t;
  for (const auto& [room, t] : tally) {
    const double mean = t.dist_sum / static_cast<double>(t.votes);
    const double best_mean = best ? best_t.dist_sum / static_cast<double>(best_t.votes) : 0.0;
    if (best == nullptr || t.votes > best_t.votes || (t.votes == best_t.votes && mean < best_mean)) {
      best = &room;
      best_t = t;
    }
  }
  return *best;
}

inline RoomId classify_svm(const FingerprintVector& v, const SvmModel& m) {
  if (v.values.size() != m.mean.size()) throw Error(ErrorCode::contract, "classify_svm: vector length mismatch");
  if (m.scorers.empty()) throw Error(ErrorCode::contract, "classify_svm: empty model");
  const auto z = m.standardize(v);
  std::size_t best = 0;
  double best_score = m.decision(0, z);
  for (std::size_t i = 1; i < m.scorers.size(); ++i) {
    const double s = m.decision(i, z);
    if (s > best_score || (s == best_score && m.scorers[i].room < m.scorers[best].room)) {
      best = i;
      best_score = s;
    }
  }
  return m.scorers[best].room;
}

// Pulls a fresh vector per attempt; returns nullopt when exhausted.
using VectorSource = std::function<std::optional<FingerprintVector>()>;

struct Recognition {
  std::optional<RoomId> room;  // nullopt = unknown
  int scans_used = 0;
  std::optional<RoomId> last_knn;
  std::optional<RoomId> last_svm;
};

// Both classifiers must agree; on a mismatch a new vector is collected, up to
// max_attempts vectors in total.
inline Recognition recognize(const VectorSource& scan, const KnnModel& knn, const SvmModel& svm,
                             int max_attempts = 3) {
  Recognition r;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    auto v = scan();
    if (!v) break;
    ++r.scans_used;
    r.last_knn = classify_knn(*v, knn);
    r.last_svm = classify_svm(*v, svm);
    if (*r.last_knn == *r.last_svm) {
      r.room = r.last_knn;
      break;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Files

inline nlohmann::json to_json(const FingerprintDb& db) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : db.entries) entries.push_back({{"room", e.room}, {"rss", e.vector.values}});
  return {{"ap_order", db.ap_order}, {"entries", entries}};
}

inline FingerprintDb fingerprint_db_from_json(const nlohmann::json& j) {
  FingerprintDb db;
  try {
    db.ap_order = j.at("ap_order").get<std::vector<ApId>>();
    for (const auto& e : j.at("entries"))
      db.add(e.at("room").get<std::string>(), FingerprintVector{e.at("rss").get<std::vector<double>>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("fingerprint db: ") + e.what());
  }
  db.validate();
  return db;
}

inline constexpr const char* kModelFormat = "syndesi.room-model";
inline constexpr int kModelVersion = 1;

inline nlohmann::json models_to_json(const KnnModel& knn, const SvmModel& svm) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : knn.db.entries) entries.push_back({{"id", e.id}, {"room", e.room}, {"rss", e.vector.values}});
  nlohmann::json scorers = nlohmann::json::array();
  for (const auto& s : svm.scorers) scorers.push_back({{"room", s.room}, {"w", s.w}, {"b", s.b}});
  return {{"format", kModelFormat},
          {"version", kModelVersion},
          {"ap_order", knn.db.ap_order},
          {"knn", {{"k", knn.k}, {"entries", entries}}},
          {"svm", {{"mean", svm.mean}, {"scale", svm.scale}, {"scorers", scorers}}}};
}

inline std::pair<KnnModel, SvmModel> models_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != kModelFormat) throw Error(ErrorCode::parse, "model file: wrong format header");
    if (j.at("version").get<int>() != kModelVersion)
      throw Error(ErrorCode::parse, "model file: unsupported version " + j.at("version").dump());
    KnnModel knn;
    knn.k = j.at("knn").at("k").get<std::size_t>();
    knn.db.ap_order = j.at("ap_order").get<std::vector<ApId>>();
    for (const auto& e : j.at("knn").at("entries"))
      knn.db.entries.push_back({e.at("id").get<std::size_t>(), e.at("room").get<std::string>(),
                                FingerprintVector{e.at("rss").get<std::vector<double>>()}});
    knn.db.validate();
    SvmModel svm;
    svm.mean = j.at("svm").at("mean").get<std::vector<double>>();
    svm.scale = j.at("svm").at("scale").get<std::vector<double>>();
    for (const auto& s : j.at("svm").at("scorers"))
      svm.scorers.push_back({s.at("room").get<std::string>(), s.at("w").get<std::vector<double>>(), s.at("b").get<double>()});
    return {std::move(knn), std::move(svm)};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("model file: ") + e.what());
  }
}

}  // namespace syndesi
