#include "tonguesync/experiment/session.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

#include "json.hpp"
#include "tonguesync/data_io.hpp"
#include "tonguesync/error.hpp"

namespace tonguesync::experiment {

bool valid_speed(double speed) { return speed == 1.0 || speed == 0.5 || speed == 0.25; }

const std::string& SessionState::current() const {
  if (completed()) throw PreconditionError("session " + participant_id + " is complete");
  return stimulus_ids[cursor];
}

std::size_t SessionState::play_count(const std::string& stimulus_id, Side side) const {
  std::size_t n = 0;
  for (const auto& p : plays) n += (p.stimulus_id == stimulus_id && p.side == side) ? 1 : 0;
  return n;
}

SessionState initial_state(const SessionSpec& spec) {
  SessionState s;
  s.participant_id = spec.participant_id;
  s.stimulus_ids = spec.stimulus_ids;
  return s;
}

void check_play(const SessionState& s, const std::string& stimulus_id, Side side, double speed) {
  if (side == Side::kNone) throw ValidationError("play side must be A or B");
  if (!valid_speed(speed)) throw ValidationError("speed must be 1.0, 0.5 or 0.25");
  const std::string& cur = s.current();
  if (stimulus_id != cur) throw SequenceError("stimulus " + stimulus_id + " is not the current stimulus");
  if (s.play_count(stimulus_id, side) >= kMaxPlaysPerSide) {
    throw LimitError("side " + std::string(stats::to_string(side)) + " of " + stimulus_id + " already played " +
                     std::to_string(kMaxPlaysPerSide) + " times");
  }
}

void apply_play(SessionState& s, PlayEntry entry) { s.plays.push_back(std::move(entry)); }

void check_judgment(const SessionState& s, ExperimentKind kind, const std::string& stimulus_id, Choice choice) {
  for (const auto& j : s.judgments) {
    if (j.stimulus_id == stimulus_id) throw ConflictError("stimulus " + stimulus_id + " already judged");
  }
  if (s.completed() || stimulus_id != s.stimulus_ids[s.cursor]) {
    throw SequenceError("stimulus " + stimulus_id + " is not the current stimulus");
  }
  if (kind == ExperimentKind::kPreference && choice == Choice::kC) {
    throw ValidationError("choice C is not offered in a preference experiment");
  }
  for (Side side : {Side::kA, Side::kB}) {
    if (s.play_count(stimulus_id, side) == 0) {
      throw PreconditionError("side " + std::string(stats::to_string(side)) + " of " + stimulus_id +
                              " has not been played");
    }
  }
}

void apply_judgment(SessionState& s, JudgmentEntry entry) {
  s.judgments.push_back(std::move(entry));
  ++s.cursor;
}

namespace {

std::int64_t system_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

}  // namespace

ExperimentStore::ExperimentStore(Experiment experiment, std::filesystem::path log_path, Clock clock)
    : experiment_(std::move(experiment)), path_(std::move(log_path)), clock_(clock ? std::move(clock) : system_clock_ms) {
  for (const auto& spec : experiment_.sessions) {
    if (!sessions_.emplace(spec.participant_id, initial_state(spec)).second) {
      throw ValidationError("participant " + spec.participant_id + " has two sessions");
    }
    if (!token_to_participant_.emplace(spec.token, spec.participant_id).second) {
      throw ValidationError("session token reused");
    }
    for (const auto& id : spec.stimulus_ids) experiment_.stimulus(id);
  }
  replay();
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError("cannot open event log " + path_.string() + ": " + std::strerror(errno));
}

ExperimentStore::~ExperimentStore() {
  if (fd_ >= 0) ::close(fd_);
}

void ExperimentStore::replay() {
  if (!std::filesystem::exists(path_)) return;
  const std::string text = read_file_text(path_);
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;
    ++line_no;
    const std::string_view line(text.data() + pos, nl - pos);
    const std::string where = path_.string() + " line " + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("seq").get<std::size_t>() != seq_ + 1) throw FormatError(where + ": sequence number out of order");
      const std::string participant = j.at("participant_id").get<std::string>();
      auto it = sessions_.find(participant);
      if (it == sessions_.end()) throw FormatError(where + ": unknown participant " + participant);
      SessionState& s = it->second;
      const std::string event = j.at("event").get<std::string>();
      const std::string stimulus = j.at("stimulus_id").get<std::string>();
      const auto ts = j.at("timestamp_ms").get<std::int64_t>();
      if (event == "play") {
        const Side side = stats::parse_side(j.at("side").get<std::string>());
        const double speed = j.at("speed").get<double>();
        check_play(s, stimulus, side, speed);
        apply_play(s, {stimulus, side, speed, ts});
      } else if (event == "judgment") {
        const Choice choice = stats::parse_choice(j.at("choice").get<std::string>());
        check_judgment(s, experiment_.kind, stimulus, choice);
        JudgmentEntry entry{stimulus, choice, ts};
        judgment_log_.emplace_back(participant, entry);
        apply_judgment(s, std::move(entry));
      } else {
        throw FormatError(where + ": unknown event '" + event + "'");
      }
      ++seq_;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    } catch (const FormatError&) {
      throw;
    } catch (const Error& e) {
      throw FormatError(where + ": event violates the session rules: " + e.what());
    }
    pos = nl + 1;
  }
  // A crash mid-write leaves a partial last line; it was never acknowledged.
  if (pos < text.size()) {
    truncated_bytes_ = text.size() - pos;
    std::filesystem::resize_file(path_, pos);
  }
}

void ExperimentStore::append(const std::string& line, bool sync) {
  const std::string data = line + "\n";
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd_, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("event log write failed: " + std::string(std::strerror(errno)));
    }
    done += static_cast<std::size_t>(n);
  }
  if (sync && ::fsync(fd_) != 0) throw IoError("event log fsync failed: " + std::string(std::strerror(errno)));
}

const std::string& ExperimentStore::participant_for_token(const std::string& token) const {
  const auto it = token_to_participant_.find(token);
  if (it == token_to_participant_.end()) throw NotFoundError("unknown session token");
  return it->second;
}

SessionState ExperimentStore::session(const std::string& token) const {
  std::lock_guard lock(mutex_);
  return sessions_.at(participant_for_token(token));
}

SessionState ExperimentStore::session_by_participant(const std::string& participant_id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(participant_id);
  if (it == sessions_.end()) throw NotFoundError("unknown participant " + participant_id);
  return it->second;
}

void ExperimentStore::record_play(const std::string& token, const std::string& stimulus_id, Side side, double speed) {
  std::lock_guard lock(mutex_);
  SessionState& s = sessions_.at(participant_for_token(token));
  check_play(s, stimulus_id, side, speed);
  PlayEntry entry{stimulus_id, side, speed, clock_()};
  nlohmann::ordered_json j;
  j["seq"] = seq_ + 1;
  j["event"] = "play";
  j["participant_id"] = s.participant_id;
  j["stimulus_id"] = stimulus_id;
  j["side"] = stats::to_string(side);
  j["speed"] = speed;
  j["timestamp_ms"] = entry.timestamp_ms;
  append(j.dump(), false);
  ++seq_;
  apply_play(s, std::move(entry));
}

stats::JudgmentRecord ExperimentStore::make_record(const std::string& participant_id, const JudgmentEntry& j) const {
  const StimulusPair& st = experiment_.stimulus(j.stimulus_id);
  stats::JudgmentRecord r;
  r.participant_id = participant_id;
  r.stimulus_id = j.stimulus_id;
  r.choice = j.choice;
  r.correct_side = st.correct_side;
  r.error_ms = st.error_ms;
  r.kind = experiment_.kind;
  return r;
}

stats::JudgmentRecord ExperimentStore::record_judgment(const std::string& token, const std::string& stimulus_id,
                                                       Choice choice) {
  std::lock_guard lock(mutex_);
  SessionState& s = sessions_.at(participant_for_token(token));
  check_judgment(s, experiment_.kind, stimulus_id, choice);
  JudgmentEntry entry{stimulus_id, choice, clock_()};
  const stats::JudgmentRecord record = make_record(s.participant_id, entry);
  nlohmann::ordered_json j;
  j["seq"] = seq_ + 1;
  j["event"] = "judgment";
  j["participant_id"] = s.participant_id;
  j["stimulus_id"] = stimulus_id;
  j["choice"] = stats::to_string(choice);
  j["correct_side"] = stats::to_string(record.correct_side);
  j["error_ms"] = record.error_ms;
  j["timestamp_ms"] = entry.timestamp_ms;
  append(j.dump(), true);
  ++seq_;
  judgment_log_.emplace_back(s.participant_id, entry);
  apply_judgment(s, std::move(entry));
  return record;
}

std::vector<stats::JudgmentRecord> ExperimentStore::judgments() const {
  std::lock_guard lock(mutex_);
  std::vector<stats::JudgmentRecord> out;
  out.reserve(judgment_log_.size());
  for (const auto& [participant, entry] : judgment_log_) out.push_back(make_record(participant, entry));
  return out;
}

std::size_t ExperimentStore::event_count() const {
  std::lock_guard lock(mutex_);
  return seq_;
}

bool ExperimentStore::all_complete() const {
  std::lock_guard lock(mutex_);
  for (const auto& [id, s] : sessions_) {
    if (!s.completed()) return false;
  }
  return true;
}

}  // namespace tonguesync::experiment
