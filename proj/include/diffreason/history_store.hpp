#pragma once

/**
 * @file history_store.hpp
 *
 * @brief Append-only store of labeled states with raw payload traceability.
 *
 * The on-disk form is JSON lines (UTF-8, LF terminated), one HistoryRecord per
 * line. Records are never rewritten: relabeling appends a superseding record.
 * A single writer holds an advisory `flock` on the file; readers take no lock
 * and observe a prefix of complete lines.
 */

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "diffreason/diff_engine.hpp"
#include "diffreason/error.hpp"
#include "diffreason/feature_space.hpp"

namespace diffreason {

enum class Label { Normal, Abnormal, Unlabeled };

constexpr std::string_view to_string(Label l) noexcept {
  switch (l) {
    case Label::Normal: return "normal";
    case Label::Abnormal: return "abnormal";
    case Label::Unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "normal") return Label::Normal;
  if (s == "abnormal") return Label::Abnormal;
  if (s == "unlabeled") return Label::Unlabeled;
  return std::nullopt;
}

/// A state paired with its normality label. `supersedes` is set on relabel
/// records and names the `appended_at` of the record whose label it replaces.
struct HistoryRecord {
  StateRecord state;
  Label label = Label::Unlabeled;
  std::uint64_t appended_at = 0;
  std::optional<std::uint64_t> supersedes;

  friend bool operator==(const HistoryRecord&, const HistoryRecord&) = default;
};

inline Json to_json(const HistoryRecord& r) {
  Json j;
  j["appended_at"] = r.appended_at;
  j["label"] = std::string(to_string(r.label));
  j["supersedes"] = r.supersedes ? Json(*r.supersedes) : Json(nullptr);
  j["state"] = to_json(r.state);
  return j;
}

inline HistoryRecord history_record_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("appended_at") || !j["appended_at"].is_number_unsigned() ||
      !j.contains("label") || !j["label"].is_string() || !j.contains("state")) {
    throw Error(Errc::UnparseablePayload, "history record needs appended_at, label and state");
  }
  HistoryRecord r;
  r.appended_at = j["appended_at"].get<std::uint64_t>();
  const auto label = parse_label(j["label"].get<std::string>());
  if (!label) throw Error(Errc::UnparseablePayload, "unknown label");
  r.label = *label;
  if (j.contains("supersedes") && !j["supersedes"].is_null()) {
    if (!j["supersedes"].is_number_unsigned()) throw Error(Errc::UnparseablePayload, "'supersedes' must be an index");
    r.supersedes = j["supersedes"].get<std::uint64_t>();
  }
  r.state = state_from_json(j["state"]);
  return r;
}

enum class ReferenceKind { Latest, Mean, Medoid };

constexpr std::string_view to_string(ReferenceKind k) noexcept {
  switch (k) {
    case ReferenceKind::Latest: return "latest";
    case ReferenceKind::Mean: return "mean";
    case ReferenceKind::Medoid: return "medoid";
  }
  return "latest";
}

inline std::optional<ReferenceKind> parse_reference_kind(std::string_view s) {
  if (s == "latest") return ReferenceKind::Latest;
  if (s == "mean") return ReferenceKind::Mean;
  if (s == "medoid") return ReferenceKind::Medoid;
  return std::nullopt;
}

class HistoryStore {
 public:
  enum class Mode { ReadOnly, ReadWrite };

  /// A store with no backing file; appends live only as long as the object.
  static HistoryStore in_memory() { return HistoryStore(); }

  /**
   * Opens (ReadWrite: creates) the history file at `path`. A writer takes an
   * exclusive non-blocking advisory lock and fails with StorageFailure if
   * another writer holds it. An incomplete trailing line left by an
   * interrupted append is ignored by readers and truncated by the writer.
   */
  static HistoryStore open(const std::filesystem::path& path, Mode mode) {
    HistoryStore store;
    store.path_ = path;
    if (mode == Mode::ReadWrite) {
      store.fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
      if (store.fd_ < 0) throw storage_error("cannot open " + path.string());
      if (::flock(store.fd_, LOCK_EX | LOCK_NB) != 0) {
        throw Error(Errc::StorageFailure, path.string() + " is locked by another writer");
      }
    } else if (!std::filesystem::exists(path)) {
      throw Error(Errc::StorageFailure, path.string() + " does not exist");
    }
    store.load();
    return store;
  }

  HistoryStore(HistoryStore&& other) noexcept { *this = std::move(other); }
  HistoryStore& operator=(HistoryStore&& other) noexcept {
    if (this != &other) {
      close_fd();
      path_ = std::move(other.path_);
      fd_ = std::exchange(other.fd_, -1);
      records_ = std::move(other.records_);
      effective_ = std::move(other.effective_);
    }
    return *this;
  }
  HistoryStore(const HistoryStore&) = delete;
  HistoryStore& operator=(const HistoryStore&) = delete;
  ~HistoryStore() { close_fd(); }

  bool writable() const noexcept { return fd_ >= 0 || path_.empty(); }
  const std::filesystem::path& path() const noexcept { return path_; }

  /// Appends a new state. Returns its sequence number.
  std::uint64_t append(StateRecord state, Label label) {
    validate_state(state);
    if (state.synthetic()) throw Error(Errc::InvalidState, "synthetic states cannot be stored");
    if (!state.raw_ref) throw Error(Errc::InvalidState, "state '" + state.id + "' has no raw payload");
    if (effective_.contains(state.id)) throw Error(Errc::DuplicateStateId, "state '" + state.id + "' already stored");
    HistoryRecord r{std::move(state), label, next_seq(), std::nullopt};
    write_record(r);
    return r.appended_at;
  }

  /// Appends a record superseding the current label of `state_id`.
  std::uint64_t relabel(std::string_view state_id, Label label) {
    const auto it = effective_.find(std::string(state_id));
    if (it == effective_.end()) throw Error(Errc::UnknownState, "no stored state '" + std::string(state_id) + "'");
    const auto& latest = records_[it->second.latest];
    HistoryRecord r{latest.state, label, next_seq(), latest.appended_at};
    write_record(r);
    return r.appended_at;
  }

  /// Every record in append order, including relabel records.
  std::span<const HistoryRecord> records() const noexcept { return records_; }

  /**
   * One record per stored state in first-append order, carrying the label of
   * its most recent relabel and the `appended_at` of its first append.
   */
  std::vector<HistoryRecord> current() const {
    std::vector<std::pair<std::uint64_t, HistoryRecord>> rows;
    rows.reserve(effective_.size());
    for (const auto& [id, idx] : effective_) {
      auto r = records_[idx.first];
      r.label = records_[idx.latest].label;
      rows.emplace_back(idx.first, std::move(r));
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<HistoryRecord> out;
    out.reserve(rows.size());
    for (auto& [_, r] : rows) out.push_back(std::move(r));
    return out;
  }

  std::size_t state_count() const noexcept { return effective_.size(); }
  bool empty() const noexcept { return effective_.empty(); }

  std::optional<HistoryRecord> find(std::string_view state_id) const {
    const auto it = effective_.find(std::string(state_id));
    if (it == effective_.end()) return std::nullopt;
    auto r = records_[it->second.first];
    r.label = records_[it->second.latest].label;
    return r;
  }

  /// The stored payload exactly as appended. URIs are returned unresolved.
  RawRef raw_lookup(std::string_view state_id) const {
    const auto r = find(state_id);
    if (!r) throw Error(Errc::UnknownState, "no stored state '" + std::string(state_id) + "'");
    return *r->state.raw_ref;
  }

  /// Re-reads the backing file, picking up records appended by a writer.
  void reload() {
    if (!path_.empty()) load();
  }

 private:
  struct Index {
    std::size_t first = 0;
    std::size_t latest = 0;
  };

  HistoryStore() = default;

  static Error storage_error(const std::string& what) {
    return Error(Errc::StorageFailure, what + ": " + std::strerror(errno));
  }

  std::uint64_t next_seq() const noexcept { return records_.empty() ? 0 : records_.back().appended_at + 1; }

  void close_fd() noexcept {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
      fd_ = -1;
    }
  }

  void index(const HistoryRecord& r, std::size_t pos) {
    if (r.supersedes) {
      const auto it = effective_.find(r.state.id);
      if (it == effective_.end() || records_[it->second.latest].appended_at != *r.supersedes) {
        throw Error(Errc::StorageFailure, "record " + std::to_string(r.appended_at) + " supersedes an unknown record");
      }
      it->second.latest = pos;
    } else {
      if (effective_.contains(r.state.id)) {
        throw Error(Errc::StorageFailure, "state '" + r.state.id + "' appended twice");
      }
      effective_.emplace(r.state.id, Index{pos, pos});
    }
  }

  void write_record(HistoryRecord& r) {
    if (!path_.empty()) {
      if (fd_ < 0) throw Error(Errc::StorageFailure, "store opened read-only");
      const auto line = canonical(to_json(r)) + "\n";
      std::size_t done = 0;
      while (done < line.size()) {
        const auto n = ::write(fd_, line.data() + done, line.size() - done);
        if (n < 0) {
          if (errno == EINTR) continue;
          throw storage_error("write to " + path_.string());
        }
        done += std::size_t(n);
      }
      if (::fsync(fd_) != 0) throw storage_error("fsync " + path_.string());
    }
    records_.push_back(r);
    index(records_.back(), records_.size() - 1);
  }

  void load() {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw storage_error("cannot read " + path_.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const auto content = buf.str();

    records_.clear();
    effective_.clear();
    std::size_t pos = 0;
    std::size_t line_no = 1;
    while (pos < content.size()) {
      const auto eol = content.find('\n', pos);
      if (eol == std::string::npos) break;  // incomplete tail
      const auto line = std::string_view(content).substr(pos, eol - pos);
      pos = eol + 1;
      HistoryRecord r;
      try {
        r = history_record_from_json(parse_json(line));
      } catch (const Error& e) {
        throw Error(Errc::StorageFailure, path_.string() + ":" + std::to_string(line_no) + ": " + e.detail());
      }
      if (!records_.empty() && r.appended_at <= records_.back().appended_at) {
        throw Error(Errc::StorageFailure, path_.string() + ":" + std::to_string(line_no) + ": appended_at not increasing");
      }
      records_.push_back(std::move(r));
      index(records_.back(), records_.size() - 1);
      ++line_no;
    }
    if (fd_ >= 0 && pos < content.size()) {
      if (::ftruncate(fd_, off_t(pos)) != 0) throw storage_error("truncate torn tail of " + path_.string());
    }
  }

  std::filesystem::path path_;
  int fd_ = -1;
  std::vector<HistoryRecord> records_;
  std::unordered_map<std::string, Index> effective_;
};

// ---------------------------------------------------------------------------

inline constexpr std::string_view kSyntheticMeanId = "synthetic:mean";

/// Componentwise mean of compatible states, as a synthetic state with no raw payload.
inline StateRecord mean_state(std::span<const StateRecord> states) {
  if (states.empty()) throw Error(Errc::EmptyHistory, "no states to average");
  std::vector<double> sum(states.front().features.size(), 0.0);
  for (const auto& s : states) {
    require_compatible(states.front().features, s.features);
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += s.features[k].value;
  }
  for (auto& v : sum) v /= double(states.size());
  StateRecord out;
  out.id = std::string(kSyntheticMeanId);
  out.extractor_id = std::string(kSyntheticMeanId);
  out.features = states.front().features.with_values(sum);
  return out;
}

/// Index of the state minimizing the summed L2 distance to all others; ties go to the earlier index.
inline std::size_t medoid_index(std::span<const StateRecord> states) {
  if (states.empty()) throw Error(Errc::EmptyHistory, "no states for medoid");
  std::size_t best = 0;
  double best_sum = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < states.size(); ++j) {
      if (i != j) sum += distance(states[i].features, states[j].features, Norm::L2);
    }
    if (i == 0 || sum < best_sum) {
      best = i;
      best_sum = sum;
    }
  }
  return best;
}

/// Picks the reference state among all stored states (every label).
inline StateRecord select_reference(const HistoryStore& store, ReferenceKind kind) {
  if (store.empty()) throw Error(Errc::EmptyHistory, "history is empty");
  const auto rows = store.current();
  std::vector<StateRecord> states;
  states.reserve(rows.size());
  for (const auto& r : rows) states.push_back(r.state);
  switch (kind) {
    case ReferenceKind::Latest:
      return states.back();
    case ReferenceKind::Mean:
      return mean_state(states);
    case ReferenceKind::Medoid:
      for (const auto& s : states) require_compatible(states.front().features, s.features);
      return states[medoid_index(states)];
  }
  return states.back();
}

/// `f(current) - f(reference)`, kind history.
inline Difference compare_with_history(DiffEngine& engine, const StateRecord& current, const HistoryStore& store,
                                       ReferenceKind kind) {
  const auto reference = select_reference(store, kind);
  auto delta = vector_sub(current.features, reference.features);
  return engine.make(current.id, reference.id, DiffKind::History, std::move(delta));
}

}  // namespace diffreason
