#pragma once

/**
 * @file diff_engine.hpp
 *
 * @brief Differences between states, their magnitudes and impacts, top-n main
 * difference selection, latest difference and spatial variability.
 *
 * Two sign conventions coexist on purpose:
 * - `compute_difference(a, b)` is `f(a) - f(b)` (first minus second);
 * - `temporal_delta(earlier, later)` is `f(later) - f(earlier)`.
 * Hence `temporal_delta(a, b).delta == -compute_difference(a, b).delta`.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diffreason/error.hpp"
#include "diffreason/feature_space.hpp"

namespace diffreason {

enum class Norm { L1, L2, Linf };

constexpr std::string_view to_string(Norm n) noexcept {
  switch (n) {
    case Norm::L1: return "l1";
    case Norm::L2: return "l2";
    case Norm::Linf: return "linf";
  }
  return "l2";
}

inline std::optional<Norm> parse_norm(std::string_view s) {
  if (s == "l1" || s == "L1") return Norm::L1;
  if (s == "l2" || s == "L2") return Norm::L2;
  if (s == "linf" || s == "Linf" || s == "LINF") return Norm::Linf;
  return std::nullopt;
}

inline double norm_of(std::span<const double> v, Norm norm) noexcept {
  double acc = 0.0;
  switch (norm) {
    case Norm::L1:
      for (double x : v) acc += std::abs(x);
      return acc;
    case Norm::L2:
      for (double x : v) acc += x * x;
      return std::sqrt(acc);
    case Norm::Linf:
      for (double x : v) acc = std::max(acc, std::abs(x));
      return acc;
  }
  return acc;
}

inline double norm_of(const FeatureVector& v, Norm norm) {
  const auto values = v.values();
  return norm_of(values, norm);
}

/// Distance between two compatible feature vectors.
inline double distance(const FeatureVector& a, const FeatureVector& b, Norm norm) {
  return norm_of(vector_sub(a, b), norm);
}

enum class DiffKind { Temporal, Spatial, History, External };

constexpr std::string_view to_string(DiffKind k) noexcept {
  switch (k) {
    case DiffKind::Temporal: return "temporal";
    case DiffKind::Spatial: return "spatial";
    case DiffKind::History: return "history";
    case DiffKind::External: return "external";
  }
  return "temporal";
}

inline std::optional<DiffKind> parse_diff_kind(std::string_view s) {
  if (s == "temporal") return DiffKind::Temporal;
  if (s == "spatial") return DiffKind::Spatial;
  if (s == "history") return DiffKind::History;
  if (s == "external") return DiffKind::External;
  return std::nullopt;
}

/**
 * @brief A detected difference between two states.
 *
 * `from_id` and `to_id` follow the argument order of the operation that
 * produced the difference. `magnitude` is always `norm_of(delta, norm)`.
 */
struct Difference {
  std::string from_id;
  std::string to_id;
  DiffKind kind = DiffKind::Temporal;
  FeatureVector delta;
  double magnitude = 0.0;
  Norm norm = Norm::L2;
  std::uint64_t seq = 0;

  friend bool operator==(const Difference&, const Difference&) = default;
};

/// Key order: from_id, to_id, kind, norm, seq, dims, magnitude.
inline Json to_json(const Difference& d) {
  Json j;
  j["from_id"] = d.from_id;
  j["to_id"] = d.to_id;
  j["kind"] = std::string(to_string(d.kind));
  j["norm"] = std::string(to_string(d.norm));
  j["seq"] = d.seq;
  j["dims"] = dims_to_json(d.delta);
  j["magnitude"] = d.magnitude;
  return j;
}

/// Magnitude is recomputed from the dims; a stored value that disagrees is rejected.
inline Difference difference_from_json(const Json& j) {
  if (!j.is_object()) throw Error(Errc::UnparseablePayload, "difference must be a JSON object");
  auto str = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j[key].is_string()) {
      throw Error(Errc::UnparseablePayload, std::string("difference needs a string '") + key + "'");
    }
    return j[key].get<std::string>();
  };
  Difference d;
  d.from_id = str("from_id");
  d.to_id = str("to_id");
  const auto kind = parse_diff_kind(str("kind"));
  if (!kind) throw Error(Errc::UnparseablePayload, "unknown difference kind");
  d.kind = *kind;
  if (j.contains("norm")) {
    const auto norm = parse_norm(str("norm"));
    if (!norm) throw Error(Errc::UnparseablePayload, "unknown norm");
    d.norm = *norm;
  }
  if (j.contains("seq")) {
    if (!j["seq"].is_number_unsigned()) throw Error(Errc::UnparseablePayload, "'seq' must be a non-negative integer");
    d.seq = j["seq"].get<std::uint64_t>();
  }
  d.delta = j.contains("dims") ? dims_from_json(j["dims"]) : FeatureVector{};
  d.magnitude = norm_of(d.delta, d.norm);
  if (j.contains("magnitude")) {
    if (!j["magnitude"].is_number()) throw Error(Errc::UnparseablePayload, "'magnitude' must be numeric");
    const double stored = j["magnitude"].get<double>();
    if (std::abs(stored - d.magnitude) > 1e-12 * std::max(1.0, d.magnitude)) {
      throw Error(Errc::UnparseablePayload, "stored magnitude does not match the norm of dims");
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Impact

/// Per-dimension nonnegative weights; dimensions not listed weigh 1.
struct WeightProfile {
  std::string id = "unit";
  std::map<std::string, double, std::less<>> weights;

  static WeightProfile unit() { return {}; }

  double weight(std::string_view name) const {
    const auto it = weights.find(name);
    return it == weights.end() ? 1.0 : it->second;
  }

  void validate() const {
    for (const auto& [name, w] : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw Error(Errc::NegativeWeight, "weight for '" + name + "' in profile '" + id + "' must be finite and >= 0");
      }
    }
  }
};

struct ImpactScore {
  Difference diff;
  double score = 0.0;
  std::string weights_id;
};

/// Weighted L1 of the delta: sum_k w_k * |delta_k|.
inline ImpactScore impact(const Difference& diff, const WeightProfile& weights) {
  weights.validate();
  double score = 0.0;
  for (const auto& d : diff.delta.dims()) score += weights.weight(d.name) * std::abs(d.value);
  return {diff, score, weights.id};
}

/**
 * @brief Chooses the `n` differences with the largest total impact.
 *
 * Impacts are additive and nonnegative, so the optimal size-n subset is the
 * n largest scores. Equal scores are broken by smaller `seq`. The result is
 * sorted by descending score, then ascending seq. When `n` exceeds the input
 * size every difference is returned.
 */
inline std::vector<Difference> select_main_differences(std::span<const Difference> diffs, std::size_t n,
                                                       const WeightProfile& weights) {
  if (n == 0) throw Error(Errc::InvalidArgument, "n must be at least 1");
  weights.validate();
  std::vector<ImpactScore> scored;
  scored.reserve(diffs.size());
  for (const auto& d : diffs) scored.push_back(impact(d, weights));
  std::stable_sort(scored.begin(), scored.end(), [](const ImpactScore& a, const ImpactScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.diff.seq < b.diff.seq;
  });
  scored.resize(std::min(n, scored.size()));
  std::vector<Difference> out;
  out.reserve(scored.size());
  for (auto& s : scored) out.push_back(std::move(s.diff));
  return out;
}

// ---------------------------------------------------------------------------

/**
 * @brief Produces differences under a fixed norm and stamps each with a
 * monotone detection index.
 *
 * An engine is a session context: the seq counter is not synchronized, so one
 * engine belongs to one logical thread of control. `spatial_variability` does
 * not touch the counter.
 */
class DiffEngine {
 public:
  explicit DiffEngine(Norm norm = Norm::L2, std::uint64_t first_seq = 0) : norm_(norm), next_seq_(first_seq) {}

  Norm norm() const noexcept { return norm_; }
  std::uint64_t next_seq() const noexcept { return next_seq_; }

  /// Wraps an already computed delta into a Difference with the next seq.
  Difference make(std::string from_id, std::string to_id, DiffKind kind, FeatureVector delta) {
    Difference d;
    d.from_id = std::move(from_id);
    d.to_id = std::move(to_id);
    d.kind = kind;
    d.magnitude = norm_of(delta, norm_);
    d.delta = std::move(delta);
    d.norm = norm_;
    d.seq = next_seq_++;
    return d;
  }

  /// `f(x_i) - f(x_j)`. Kind is temporal when both states carry timestamps,
  /// spatial when both carry region labels.
  Difference compute_difference(const StateRecord& x_i, const StateRecord& x_j) {
    DiffKind kind;
    if (x_i.is_temporal() && x_j.is_temporal()) {
      kind = DiffKind::Temporal;
    } else if (x_i.is_spatial() && x_j.is_spatial()) {
      kind = DiffKind::Spatial;
    } else {
      throw Error(Errc::MixedLocation, "'" + x_i.id + "' and '" + x_j.id + "' are not both temporal or both spatial");
    }
    auto delta = vector_sub(x_i.features, x_j.features);
    return make(x_i.id, x_j.id, kind, std::move(delta));
  }

  /// `f(later) - f(earlier)`; requires `later.timestamp > earlier.timestamp`.
  Difference temporal_delta(const StateRecord& earlier, const StateRecord& later) {
    require_ordered(earlier, later);
    auto delta = vector_sub(later.features, earlier.features);
    return make(earlier.id, later.id, DiffKind::Temporal, std::move(delta));
  }

  /// Temporal delta between the last two states of a strictly increasing stream.
  Difference latest_difference(std::span<const StateRecord> stream) {
    if (stream.size() < 2) {
      throw Error(Errc::InsufficientHistory, "latest difference needs at least 2 states, got " +
                                                 std::to_string(stream.size()));
    }
    for (std::size_t i = 1; i < stream.size(); ++i) require_ordered(stream[i - 1], stream[i]);
    return temporal_delta(stream[stream.size() - 2], stream.back());
  }

  /// Temporal deltas between every consecutive pair of a stream.
  std::vector<Difference> consecutive_deltas(std::span<const StateRecord> stream) {
    for (std::size_t i = 1; i < stream.size(); ++i) require_ordered(stream[i - 1], stream[i]);
    std::vector<Difference> out;
    for (std::size_t i = 1; i < stream.size(); ++i) out.push_back(temporal_delta(stream[i - 1], stream[i]));
    return out;
  }

  /// `z_i - z_j` for every ordered pair i != j, row-major in input order.
  std::vector<Difference> pairwise_spatial_differences(std::span<const StateRecord> subs) {
    require_spatial_set(subs);
    std::vector<Difference> out;
    out.reserve(subs.size() * (subs.size() - 1));
    for (std::size_t i = 0; i < subs.size(); ++i) {
      for (std::size_t j = 0; j < subs.size(); ++j) {
        if (i == j) continue;
        out.push_back(make(subs[i].id, subs[j].id, DiffKind::Spatial, vector_sub(subs[i].features, subs[j].features)));
      }
    }
    return out;
  }

  /// Mean norm of pairwise sub-object differences, (1/(m(m-1))) sum_{i!=j} |z_i - z_j|.
  double spatial_variability(std::span<const StateRecord> subs) const {
    require_spatial_set(subs);
    const auto m = subs.size();
    // |z_i - z_j| == |z_j - z_i|, so the unordered half is summed once.
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i + 1; j < m; ++j) sum += distance(subs[i].features, subs[j].features, norm_);
    }
    return sum / (double(m) * double(m - 1) / 2.0);
  }

 private:
  static void require_ordered(const StateRecord& earlier, const StateRecord& later) {
    if (!earlier.is_temporal() || !later.is_temporal()) {
      throw Error(Errc::MixedLocation, "temporal comparison needs timestamps on '" + earlier.id + "' and '" +
                                           later.id + "'");
    }
    if (!(*later.timestamp > *earlier.timestamp)) {
      throw Error(Errc::NotOrdered, "'" + later.id + "' is not strictly after '" + earlier.id + "'");
    }
  }

  static void require_spatial_set(std::span<const StateRecord> subs) {
    if (subs.size() < 2) {
      throw Error(Errc::TooFewSubObjects, "need at least 2 sub-objects, got " + std::to_string(subs.size()));
    }
    for (const auto& s : subs) {
      if (!s.is_spatial()) throw Error(Errc::MixedLocation, "sub-object '" + s.id + "' has no region label");
      require_compatible(subs.front().features, s.features);
    }
  }

  Norm norm_;
  std::uint64_t next_seq_;
};

}  // namespace diffreason
