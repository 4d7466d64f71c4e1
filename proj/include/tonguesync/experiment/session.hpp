#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "tonguesync/experiment/design.hpp"

namespace tonguesync::experiment {

inline constexpr std::size_t kMaxPlaysPerSide = 6;

bool valid_speed(double speed);

struct PlayEntry {
  std::string stimulus_id;
  Side side = Side::kA;
  double speed = 1.0;
  std::int64_t timestamp_ms = 0;
  friend bool operator==(const PlayEntry&, const PlayEntry&) = default;
};

struct JudgmentEntry {
  std::string stimulus_id;
  Choice choice = Choice::kA;
  std::int64_t timestamp_ms = 0;
  friend bool operator==(const JudgmentEntry&, const JudgmentEntry&) = default;
};

/// One participant's progress. Mutated only through the checks below so a
/// replayed log reaches the same state as the live session did.
struct SessionState {
  std::string participant_id;
  std::vector<std::string> stimulus_ids;
  std::size_t cursor = 0;
  std::vector<PlayEntry> plays;
  std::vector<JudgmentEntry> judgments;

  bool completed() const { return cursor >= stimulus_ids.size(); }
  /// Stimulus awaiting judgment. Throws PreconditionError when complete.
  const std::string& current() const;
  std::size_t play_count(const std::string& stimulus_id, Side side) const;
  friend bool operator==(const SessionState&, const SessionState&) = default;
};

SessionState initial_state(const SessionSpec& spec);

/// Throws ValidationError for a bad side or speed, PreconditionError when
/// the session is complete, SequenceError for a stimulus other than the
/// current one and LimitError beyond six plays of a side.
void check_play(const SessionState& s, const std::string& stimulus_id, Side side, double speed);
void apply_play(SessionState& s, PlayEntry entry);

/// Throws ConflictError for a stimulus already judged, SequenceError for a
/// stimulus other than the current one, ValidationError for C in a
/// preference experiment and PreconditionError until both sides are played.
void check_judgment(const SessionState& s, ExperimentKind kind, const std::string& stimulus_id, Choice choice);
void apply_judgment(SessionState& s, JudgmentEntry entry);

/// Sessions backed by an append-only line-delimited event log. Each event
/// is a single write; judgments are flushed to disk before returning.
/// Opening an existing log replays it, dropping a torn final line.
class ExperimentStore {
 public:
  using Clock = std::function<std::int64_t()>;

  ExperimentStore(Experiment experiment, std::filesystem::path log_path, Clock clock = {});
  ~ExperimentStore();
  ExperimentStore(const ExperimentStore&) = delete;
  ExperimentStore& operator=(const ExperimentStore&) = delete;

  const Experiment& experiment() const { return experiment_; }
  const std::filesystem::path& log_path() const { return path_; }

  /// Snapshot of a session. Throws NotFoundError for an unknown token.
  SessionState session(const std::string& token) const;
  SessionState session_by_participant(const std::string& participant_id) const;

  void record_play(const std::string& token, const std::string& stimulus_id, Side side, double speed);
  stats::JudgmentRecord record_judgment(const std::string& token, const std::string& stimulus_id, Choice choice);

  /// Every judgment in log order, with the stimulus truth attached.
  std::vector<stats::JudgmentRecord> judgments() const;
  std::size_t event_count() const;
  /// Bytes of torn trailing data removed when the log was opened.
  std::size_t truncated_bytes() const { return truncated_bytes_; }
  bool all_complete() const;

 private:
  void replay();
  void append(const std::string& line, bool sync);
  const std::string& participant_for_token(const std::string& token) const;
  stats::JudgmentRecord make_record(const std::string& participant_id, const JudgmentEntry& j) const;

  Experiment experiment_;
  std::filesystem::path path_;
  Clock clock_;
  int fd_ = -1;
  std::size_t seq_ = 0;
  std::size_t truncated_bytes_ = 0;
  std::map<std::string, SessionState> sessions_;  // by participant id
  std::map<std::string, std::string> token_to_participant_;
  std::vector<std::pair<std::string, JudgmentEntry>> judgment_log_;
  mutable std::mutex mutex_;
};

}  // namespace tonguesync::experiment
