#pragma once

/**
 * @file feature_space.hpp
 *
 * @brief Named feature vectors, observed states, external evidence and the
 * extractor registry that maps raw payloads to feature vectors.
 *
 * All types here are plain values. Their canonical serialization is a
 * single-line JSON object with a fixed key order; that form is used both for
 * persistence and for the command-line exchange format.
 */

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"

#include "diffreason/detail/base64.hpp"
#include "diffreason/error.hpp"

namespace diffreason {

using Json = nlohmann::ordered_json;

/// One named, optionally unit-annotated real component.
struct Dim {
  std::string name;
  double value = 0.0;
  std::optional<std::string> unit;

  friend bool operator==(const Dim&, const Dim&) = default;
};

/**
 * @brief Ordered list of named real-valued dimensions.
 *
 * Names are unique and all values finite; construction enforces both. Two
 * vectors are compatible when their name sequences and unit annotations are
 * identical, and every arithmetic operation requires compatibility.
 */
class FeatureVector {
 public:
  FeatureVector() = default;

  explicit FeatureVector(std::vector<Dim> dims) : dims_(std::move(dims)) {
    std::unordered_set<std::string_view> seen;
    for (const auto& d : dims_) {
      if (!std::isfinite(d.value)) {
        throw Error(Errc::NonFiniteFeature, "dimension '" + d.name + "' is not finite");
      }
      if (!seen.insert(d.name).second) {
        throw Error(Errc::DuplicateDimension, "dimension '" + d.name + "' appears twice");
      }
    }
  }

  std::span<const Dim> dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return dims_.size(); }
  bool empty() const noexcept { return dims_.empty(); }
  const Dim& operator[](std::size_t i) const { return dims_[i]; }

  std::optional<double> value_of(std::string_view name) const {
    for (const auto& d : dims_) {
      if (d.name == name) return d.value;
    }
    return std::nullopt;
  }

  std::vector<double> values() const {
    std::vector<double> out;
    out.reserve(dims_.size());
    for (const auto& d : dims_) out.push_back(d.value);
    return out;
  }

  /// Same names and units, new values. `values.size()` must equal `size()`.
  FeatureVector with_values(std::span<const double> values) const {
    if (values.size() != dims_.size()) {
      throw Error(Errc::IncompatibleVectors, "value count does not match dimension count");
    }
    auto dims = dims_;
    for (std::size_t i = 0; i < dims.size(); ++i) dims[i].value = values[i];
    return FeatureVector(std::move(dims));
  }

  bool compatible_with(const FeatureVector& other) const noexcept {
    return std::equal(dims_.begin(), dims_.end(), other.dims_.begin(), other.dims_.end(),
                      [](const Dim& a, const Dim& b) { return a.name == b.name && a.unit == b.unit; });
  }

  bool is_zero() const noexcept {
    return std::all_of(dims_.begin(), dims_.end(), [](const Dim& d) { return d.value == 0.0; });
  }

  FeatureVector operator-() const {
    auto dims = dims_;
    for (auto& d : dims) d.value = -d.value;
    return FeatureVector(std::move(dims));
  }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;

 private:
  std::vector<Dim> dims_;
};

inline void require_compatible(const FeatureVector& a, const FeatureVector& b) {
  if (a.compatible_with(b)) return;
  if (a.size() != b.size()) {
    throw Error(Errc::IncompatibleVectors, "dimension counts differ (" + std::to_string(a.size()) +
                                               " vs " + std::to_string(b.size()) + ")");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name) {
      throw Error(Errc::IncompatibleVectors,
                  "dimension " + std::to_string(i) + " is '" + a[i].name + "' vs '" + b[i].name + "'");
    }
    if (a[i].unit != b[i].unit) {
      throw Error(Errc::IncompatibleVectors, "unit mismatch on dimension '" + a[i].name + "'");
    }
  }
  throw Error(Errc::IncompatibleVectors, "vectors are not compatible");
}

/// Componentwise `a - b`, keeping the names and units of `a`.
inline FeatureVector vector_sub(const FeatureVector& a, const FeatureVector& b) {
  require_compatible(a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i].value - b[i].value;
  return a.with_values(out);
}

/// Locator for the raw observation behind a state: inline bytes or a URI.
struct RawRef {
  enum class Kind { Inline, Uri };

  Kind kind = Kind::Inline;
  std::string data;

  static RawRef inline_bytes(std::string bytes) { return {Kind::Inline, std::move(bytes)}; }
  static RawRef uri(std::string location) { return {Kind::Uri, std::move(location)}; }

  friend bool operator==(const RawRef&, const RawRef&) = default;
};

inline constexpr std::string_view kSyntheticPrefix = "synthetic:";

/**
 * @brief One observation of an object, located in time (timestamp) or in
 * space (region label), together with its derived features.
 *
 * Synthetic states (ids starting with "synthetic:") are derived aggregates
 * such as a history mean; they carry no raw payload and no location.
 */
struct StateRecord {
  std::string id;
  std::optional<double> timestamp;
  std::optional<std::string> region_label;
  std::string extractor_id;
  std::optional<RawRef> raw_ref;
  FeatureVector features;

  bool is_temporal() const noexcept { return timestamp.has_value(); }
  bool is_spatial() const noexcept { return region_label.has_value(); }
  bool synthetic() const noexcept { return id.starts_with(kSyntheticPrefix); }

  friend bool operator==(const StateRecord&, const StateRecord&) = default;
};

inline void validate_state(const StateRecord& s) {
  if (s.id.empty()) throw Error(Errc::InvalidState, "state id is empty");
  if (s.synthetic()) return;
  if (!s.timestamp && !s.region_label) {
    throw Error(Errc::InvalidState, "state '" + s.id + "' has neither a timestamp nor a region label");
  }
  if (s.timestamp && !std::isfinite(*s.timestamp)) {
    throw Error(Errc::InvalidState, "state '" + s.id + "' has a non-finite timestamp");
  }
}

enum class EvidenceSource { User, Sensor, Database };

constexpr std::string_view to_string(EvidenceSource s) noexcept {
  switch (s) {
    case EvidenceSource::User: return "user";
    case EvidenceSource::Sensor: return "sensor";
    case EvidenceSource::Database: return "database";
  }
  return "user";
}

inline std::optional<EvidenceSource> parse_evidence_source(std::string_view s) {
  if (s == "user") return EvidenceSource::User;
  if (s == "sensor") return EvidenceSource::Sensor;
  if (s == "database") return EvidenceSource::Database;
  return std::nullopt;
}

/// External information observed at a time index.
struct EvidenceRecord {
  EvidenceSource source = EvidenceSource::User;
  double timestamp = 0.0;
  FeatureVector features;

  friend bool operator==(const EvidenceRecord&, const EvidenceRecord&) = default;
};

// ---------------------------------------------------------------------------
// Extractors

enum class ExtractorKind { Passthrough, SelectDims, ScriptedTable };

constexpr std::string_view to_string(ExtractorKind k) noexcept {
  switch (k) {
    case ExtractorKind::Passthrough: return "passthrough";
    case ExtractorKind::SelectDims: return "select_dims";
    case ExtractorKind::ScriptedTable: return "scripted_table";
  }
  return "passthrough";
}

inline std::optional<ExtractorKind> parse_extractor_kind(std::string_view s) {
  if (s == "passthrough") return ExtractorKind::Passthrough;
  if (s == "select_dims") return ExtractorKind::SelectDims;
  if (s == "scripted_table") return ExtractorKind::ScriptedTable;
  return std::nullopt;
}

/**
 * @brief Configuration of one feature extractor.
 *
 * - passthrough: the payload is a serialized feature vector.
 * - select_dims: the payload is a serialized feature vector; `params["dims"]`
 *   is a comma-separated list of names to keep, in output order.
 * - scripted_table: each param maps a payload key to a serialized feature
 *   vector; the (whitespace-trimmed) payload selects the entry.
 */
struct ExtractorSpec {
  std::string id;
  ExtractorKind kind = ExtractorKind::Passthrough;
  std::map<std::string, std::string> params;
};

class ExtractorRegistry {
 public:
  ExtractorRegistry() = default;

  /// Registry holding a single passthrough extractor with id "passthrough".
  static ExtractorRegistry with_defaults() {
    ExtractorRegistry r;
    r.add({"passthrough", ExtractorKind::Passthrough, {}});
    return r;
  }

  void add(ExtractorSpec spec) {
    if (spec.id.empty()) throw Error(Errc::ConfigError, "extractor id is empty");
    const auto id = spec.id;
    if (!specs_.emplace(id, std::move(spec)).second) {
      throw Error(Errc::DuplicateExtractor, "extractor '" + id + "' already registered");
    }
  }

  /// Replaces an existing entry of the same id.
  void put(ExtractorSpec spec) {
    const auto id = spec.id;
    specs_.insert_or_assign(id, std::move(spec));
  }

  bool contains(std::string_view id) const { return specs_.find(std::string(id)) != specs_.end(); }

  const ExtractorSpec& find(std::string_view id) const {
    const auto it = specs_.find(std::string(id));
    if (it == specs_.end()) throw Error(Errc::UnknownExtractor, "no extractor named '" + std::string(id) + "'");
    return it->second;
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : specs_) out.push_back(id);
    return out;
  }

 private:
  std::map<std::string, ExtractorSpec> specs_;
};

// ---------------------------------------------------------------------------
// Canonical JSON

inline Json dims_to_json(const FeatureVector& v) {
  Json arr = Json::array();
  for (const auto& d : v.dims()) {
    Json j;
    j["name"] = d.name;
    j["value"] = d.value;
    if (d.unit) j["unit"] = *d.unit;
    arr.push_back(std::move(j));
  }
  return arr;
}

inline Json to_json(const FeatureVector& v) {
  Json j;
  j["dims"] = dims_to_json(v);
  return j;
}

inline FeatureVector dims_from_json(const Json& arr) {
  if (!arr.is_array()) throw Error(Errc::UnparseablePayload, "'dims' must be an array");
  std::vector<Dim> dims;
  dims.reserve(arr.size());
  for (const auto& e : arr) {
    if (!e.is_object() || !e.contains("name") || !e["name"].is_string() || !e.contains("value") ||
        !e["value"].is_number()) {
      throw Error(Errc::UnparseablePayload, "each dim needs a string 'name' and a numeric 'value'");
    }
    Dim d{e["name"].get<std::string>(), e["value"].get<double>(), std::nullopt};
    if (e.contains("unit") && !e["unit"].is_null()) {
      if (!e["unit"].is_string()) throw Error(Errc::UnparseablePayload, "'unit' must be a string");
      d.unit = e["unit"].get<std::string>();
    }
    dims.push_back(std::move(d));
  }
  return FeatureVector(std::move(dims));
}

inline FeatureVector feature_vector_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("dims")) {
    throw Error(Errc::UnparseablePayload, "feature vector needs a 'dims' array");
  }
  return dims_from_json(j["dims"]);
}

inline Json parse_json(std::string_view text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::UnparseablePayload, e.what());
  } catch (const nlohmann::json::out_of_range& e) {
    // 406: a number literal outside the double range.
    if (e.id == 406) throw Error(Errc::NonFiniteFeature, e.what());
    throw Error(Errc::UnparseablePayload, e.what());
  }
}

/// Single-line dump; the form used on every wire and file.
inline std::string canonical(const Json& j) { return j.dump(); }

inline Json to_json(const RawRef& r) {
  Json j;
  if (r.kind == RawRef::Kind::Uri) {
    j["uri"] = r.data;
  } else if (detail::is_valid_utf8(r.data)) {
    j["inline"] = r.data;
  } else {
    j["inline_b64"] = detail::base64_encode(r.data);
  }
  return j;
}

inline RawRef raw_ref_from_json(const Json& j) {
  if (j.is_object()) {
    if (j.contains("uri") && j["uri"].is_string()) return RawRef::uri(j["uri"].get<std::string>());
    if (j.contains("inline") && j["inline"].is_string()) return RawRef::inline_bytes(j["inline"].get<std::string>());
    if (j.contains("inline_b64") && j["inline_b64"].is_string()) {
      auto bytes = detail::base64_decode(j["inline_b64"].get<std::string>());
      if (!bytes) throw Error(Errc::UnparseablePayload, "raw_ref.inline_b64 is not valid base64");
      return RawRef::inline_bytes(std::move(*bytes));
    }
  }
  throw Error(Errc::UnparseablePayload, "raw_ref must be {uri}, {inline} or {inline_b64}");
}

/// Key order: id, timestamp, region_label, extractor_id, raw_ref, dims.
inline Json to_json(const StateRecord& s) {
  Json j;
  j["id"] = s.id;
  j["timestamp"] = s.timestamp ? Json(*s.timestamp) : Json(nullptr);
  j["region_label"] = s.region_label ? Json(*s.region_label) : Json(nullptr);
  j["extractor_id"] = s.extractor_id;
  j["raw_ref"] = s.raw_ref ? to_json(*s.raw_ref) : Json(nullptr);
  j["dims"] = dims_to_json(s.features);
  return j;
}

inline StateRecord state_from_json(const Json& j) {
  if (!j.is_object()) throw Error(Errc::UnparseablePayload, "state must be a JSON object");
  StateRecord s;
  if (!j.contains("id") || !j["id"].is_string()) throw Error(Errc::UnparseablePayload, "state needs a string 'id'");
  s.id = j["id"].get<std::string>();
  if (j.contains("timestamp") && !j["timestamp"].is_null()) {
    if (!j["timestamp"].is_number()) throw Error(Errc::UnparseablePayload, "'timestamp' must be numeric");
    s.timestamp = j["timestamp"].get<double>();
  }
  if (j.contains("region_label") && !j["region_label"].is_null()) {
    if (!j["region_label"].is_string()) throw Error(Errc::UnparseablePayload, "'region_label' must be a string");
    s.region_label = j["region_label"].get<std::string>();
  }
  if (j.contains("extractor_id") && j["extractor_id"].is_string()) s.extractor_id = j["extractor_id"].get<std::string>();
  if (j.contains("raw_ref") && !j["raw_ref"].is_null()) s.raw_ref = raw_ref_from_json(j["raw_ref"]);
  s.features = j.contains("dims") ? dims_from_json(j["dims"]) : FeatureVector{};
  validate_state(s);
  return s;
}

/// Key order: source, timestamp, dims.
inline Json to_json(const EvidenceRecord& e) {
  Json j;
  j["source"] = std::string(to_string(e.source));
  j["timestamp"] = e.timestamp;
  j["dims"] = dims_to_json(e.features);
  return j;
}

inline EvidenceRecord evidence_from_json(const Json& j) {
  if (!j.is_object()) throw Error(Errc::UnparseablePayload, "evidence must be a JSON object");
  EvidenceRecord e;
  const auto source = j.contains("source") && j["source"].is_string()
                          ? parse_evidence_source(j["source"].get<std::string>())
                          : std::nullopt;
  if (!source) throw Error(Errc::UnparseablePayload, "evidence 'source' must be user, sensor or database");
  e.source = *source;
  if (!j.contains("timestamp") || !j["timestamp"].is_number()) {
    throw Error(Errc::UnparseablePayload, "evidence needs a numeric 'timestamp'");
  }
  e.timestamp = j["timestamp"].get<double>();
  if (!std::isfinite(e.timestamp)) throw Error(Errc::NonFiniteFeature, "evidence timestamp is not finite");
  e.features = j.contains("dims") ? dims_from_json(j["dims"]) : FeatureVector{};
  return e;
}

// ---------------------------------------------------------------------------
// Extraction

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  while (true) {
    const auto pos = s.find(sep);
    const auto item = trim(s.substr(0, pos));
    if (!item.empty()) out.emplace_back(item);
    if (pos == std::string_view::npos) break;
    s.remove_prefix(pos + 1);
  }
  return out;
}

}  // namespace detail

/// Applies `spec` to `payload`. Deterministic for identical inputs.
inline FeatureVector extract(std::string_view payload, const ExtractorSpec& spec) {
  switch (spec.kind) {
    case ExtractorKind::Passthrough:
      return feature_vector_from_json(parse_json(payload));
    case ExtractorKind::SelectDims: {
      const auto source = feature_vector_from_json(parse_json(payload));
      const auto it = spec.params.find("dims");
      if (it == spec.params.end()) {
        throw Error(Errc::ConfigError, "select_dims extractor '" + spec.id + "' has no 'dims' param");
      }
      std::vector<Dim> kept;
      for (const auto& name : detail::split_list(it->second)) {
        const auto found = std::find_if(source.dims().begin(), source.dims().end(),
                                        [&](const Dim& d) { return d.name == name; });
        if (found == source.dims().end()) {
          throw Error(Errc::UnparseablePayload, "payload has no dimension '" + name + "'");
        }
        kept.push_back(*found);
      }
      return FeatureVector(std::move(kept));
    }
    case ExtractorKind::ScriptedTable: {
      const auto key = std::string(detail::trim(payload));
      const auto it = spec.params.find(key);
      if (it == spec.params.end()) {
        throw Error(Errc::UnparseablePayload, "scripted table '" + spec.id + "' has no entry '" + key + "'");
      }
      return feature_vector_from_json(parse_json(it->second));
    }
  }
  throw Error(Errc::UnknownExtractor, spec.id);
}

inline FeatureVector extract(std::string_view payload, const ExtractorRegistry& registry,
                             std::string_view extractor_id) {
  return extract(payload, registry.find(extractor_id));
}

/// Re-runs the recorded extractor on an inline payload and checks the stored
/// features match. URI payloads cannot be checked and return false.
inline bool verify_provenance(const StateRecord& s, const ExtractorRegistry& registry) {
  if (!s.raw_ref || s.raw_ref->kind != RawRef::Kind::Inline) return false;
  return extract(s.raw_ref->data, registry, s.extractor_id) == s.features;
}

}  // namespace diffreason
