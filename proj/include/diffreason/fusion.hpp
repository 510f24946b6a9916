#pragma once

/**
 * @file fusion.hpp
 *
 * @brief Internal differences (states alone) and external differences (states
 * fused with evidence observed at the same instant).
 *
 * Fusion is concatenation: the base features followed by each evidence
 * record's dims, renamed `<source>.<name>`, in evidence list order.
 */

#include <string>
#include <unordered_set>
#include <vector>

#include "diffreason/diff_engine.hpp"
#include "diffreason/error.hpp"
#include "diffreason/feature_space.hpp"

namespace diffreason {

struct FusedState {
  std::string base_id;
  std::vector<EvidenceRecord> evidence;
  FeatureVector fused;
};

inline Json to_json(const FusedState& f) {
  Json j;
  j["base_id"] = f.base_id;
  Json ev = Json::array();
  for (const auto& e : f.evidence) ev.push_back(to_json(e));
  j["evidence"] = std::move(ev);
  j["dims"] = dims_to_json(f.fused);
  return j;
}

inline FusedState fuse(const StateRecord& state, const std::vector<EvidenceRecord>& evidence) {
  if (!evidence.empty() && !state.timestamp) {
    throw Error(Errc::TimestampMismatch, "state '" + state.id + "' has no timestamp to match evidence against");
  }
  std::vector<Dim> dims(state.features.dims().begin(), state.features.dims().end());
  std::unordered_set<std::string> names;
  for (const auto& d : dims) names.insert(d.name);
  for (const auto& e : evidence) {
    if (e.timestamp != *state.timestamp) {
      throw Error(Errc::TimestampMismatch, std::string(to_string(e.source)) + " evidence at t=" +
                                               std::to_string(e.timestamp) + " does not match state '" + state.id +
                                               "' at t=" + std::to_string(*state.timestamp));
    }
    for (const auto& d : e.features.dims()) {
      Dim prefixed{std::string(to_string(e.source)) + "." + d.name, d.value, d.unit};
      if (!names.insert(prefixed.name).second) {
        throw Error(Errc::NameCollision, "fused dimension '" + prefixed.name + "' appears twice");
      }
      dims.push_back(std::move(prefixed));
    }
  }
  return {state.id, evidence, FeatureVector(std::move(dims))};
}

/// `f(s_t) - f(s_prev)`; the same delta as `temporal_delta(s_prev, s_t)`.
inline Difference internal_difference(DiffEngine& engine, const StateRecord& s_t, const StateRecord& s_prev) {
  return engine.temporal_delta(s_prev, s_t);
}

/// `g(s_t, E_t) - g(s_prev, E_prev)`. Evidence shape must match at both instants.
inline Difference external_difference(DiffEngine& engine, const StateRecord& s_t,
                                      const std::vector<EvidenceRecord>& e_t, const StateRecord& s_prev,
                                      const std::vector<EvidenceRecord>& e_prev) {
  if (!s_t.timestamp || !s_prev.timestamp) {
    throw Error(Errc::MixedLocation, "external difference needs timestamps on both states");
  }
  if (!(*s_t.timestamp > *s_prev.timestamp)) {
    throw Error(Errc::NotOrdered, "'" + s_t.id + "' is not strictly after '" + s_prev.id + "'");
  }
  const auto now = fuse(s_t, e_t);
  const auto before = fuse(s_prev, e_prev);
  auto delta = vector_sub(now.fused, before.fused);
  return engine.make(s_prev.id, s_t.id, DiffKind::External, std::move(delta));
}

}  // namespace diffreason
