#pragma once

/**
 * @file anomaly.hpp
 *
 * @brief Normal/abnormal classification by fixed threshold on a difference
 * magnitude, or by distance from the nearest normal state in history.
 *
 * Both rules use a strict comparison: a statistic equal to its bound is normal.
 * Only normal-labeled history takes part in estimation and in the
 * nearest-neighbor set; abnormal and unlabeled records are ignored.
 */

#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "diffreason/diff_engine.hpp"
#include "diffreason/error.hpp"
#include "diffreason/history_store.hpp"

namespace diffreason {

struct ThresholdSpec {
  double theta = 0.0;
  double eta = 0.0;
  double k_sigma = 3.0;

  void validate() const {
    if (!(theta >= 0.0)) throw Error(Errc::NegativeThreshold, "theta must be >= 0");
    if (!(eta >= 0.0)) throw Error(Errc::NegativeThreshold, "eta must be >= 0");
    if (!(k_sigma >= 0.0)) throw Error(Errc::NegativeThreshold, "k_sigma must be >= 0");
  }
};

enum class DetectMethod { Threshold, History };

constexpr std::string_view to_string(DetectMethod m) noexcept {
  return m == DetectMethod::Threshold ? "threshold" : "history";
}

struct AnomalyVerdict {
  bool abnormal = false;
  double statistic = 0.0;
  double bound = 0.0;
  DetectMethod method = DetectMethod::Threshold;
};

/// Key order: abnormal, statistic, bound, method.
inline Json to_json(const AnomalyVerdict& v) {
  Json j;
  j["abnormal"] = v.abnormal;
  j["statistic"] = v.statistic;
  j["bound"] = std::isfinite(v.bound) ? Json(v.bound) : Json("inf");
  j["method"] = std::string(to_string(v.method));
  return j;
}

inline AnomalyVerdict detect_threshold(const Difference& diff, double theta) {
  if (!(theta >= 0.0)) throw Error(Errc::NegativeThreshold, "theta must be >= 0");
  return {diff.magnitude > theta, diff.magnitude, theta, DetectMethod::Threshold};
}

/// mean + k_sigma * sample standard deviation (n - 1 denominator).
inline double estimate_threshold(std::span<const double> normal_magnitudes, double k_sigma) {
  if (!(k_sigma >= 0.0)) throw Error(Errc::NegativeThreshold, "k_sigma must be >= 0");
  const auto n = normal_magnitudes.size();
  if (n < 2) {
    throw Error(Errc::InsufficientNormalHistory, "need at least 2 normal magnitudes, got " + std::to_string(n));
  }
  const double mean = std::accumulate(normal_magnitudes.begin(), normal_magnitudes.end(), 0.0) / double(n);
  double ss = 0.0;
  for (double m : normal_magnitudes) ss += (m - mean) * (m - mean);
  return mean + k_sigma * std::sqrt(ss / double(n - 1));
}

/**
 * Magnitudes of the differences between consecutive normal-labeled states in
 * append order. These are the "normal variations" a threshold is estimated from.
 */
inline std::vector<double> normal_variation_magnitudes(const HistoryStore& store, Norm norm) {
  std::vector<double> out;
  const StateRecord* prev = nullptr;
  const auto rows = store.current();
  for (const auto& r : rows) {
    if (r.label != Label::Normal) continue;
    if (prev) out.push_back(distance(r.state.features, prev->features, norm));
    prev = &r.state;
  }
  return out;
}

inline double estimate_threshold(const HistoryStore& store, Norm norm, double k_sigma) {
  const auto magnitudes = normal_variation_magnitudes(store, norm);
  return estimate_threshold(magnitudes, k_sigma);
}

/// min over normal-labeled history of |f(s_t) - f(h)| under `metric`.
inline double nearest_history_distance(const StateRecord& s_t, std::span<const HistoryRecord> history, Norm metric) {
  double best = std::numeric_limits<double>::infinity();
  bool any = false;
  for (const auto& h : history) {
    if (h.label != Label::Normal) continue;
    any = true;
    best = std::min(best, distance(s_t.features, h.state.features, metric));
  }
  if (!any) throw Error(Errc::EmptyHistory, "history holds no normal-labeled states");
  return best;
}

inline double nearest_history_distance(const StateRecord& s_t, const HistoryStore& store, Norm metric) {
  const auto rows = store.current();
  return nearest_history_distance(s_t, rows, metric);
}

inline AnomalyVerdict detect_history(const StateRecord& s_t, std::span<const HistoryRecord> history, double eta,
                                     Norm metric) {
  if (!(eta >= 0.0)) throw Error(Errc::NegativeThreshold, "eta must be >= 0");
  const double d = nearest_history_distance(s_t, history, metric);
  return {d > eta, d, eta, DetectMethod::History};
}

inline AnomalyVerdict detect_history(const StateRecord& s_t, const HistoryStore& store, double eta, Norm metric) {
  const auto rows = store.current();
  return detect_history(s_t, rows, eta, metric);
}

}  // namespace diffreason
