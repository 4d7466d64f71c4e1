#include "tonguesync/experiment/design.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include "json.hpp"
#include "tonguesync/error.hpp"
#include "tonguesync/rng.hpp"

namespace tonguesync::experiment {

using nlohmann::ordered_json;

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::kThresholdError: return "threshold-error";
    case Provenance::kModelVsHardware: return "model-vs-hardware";
    case Provenance::kControl: return "control";
  }
  return "?";
}

Provenance parse_provenance(std::string_view text) {
  if (text == "threshold-error") return Provenance::kThresholdError;
  if (text == "model-vs-hardware") return Provenance::kModelVsHardware;
  if (text == "control") return Provenance::kControl;
  throw FormatError("unknown stimulus provenance '" + std::string(text) + "'");
}

const StimulusPair& Experiment::stimulus(const std::string& id) const {
  for (const auto& s : stimuli) {
    if (s.stimulus_id == id) return s;
  }
  throw NotFoundError("no stimulus " + id);
}

const SessionSpec& Experiment::session_by_token(const std::string& token) const {
  for (const auto& s : sessions) {
    if (s.token == token) return s;
  }
  throw NotFoundError("no session " + token);
}

const SessionSpec& Experiment::session_by_participant(const std::string& participant_id) const {
  for (const auto& s : sessions) {
    if (s.participant_id == participant_id) return s;
  }
  throw NotFoundError("no participant " + participant_id);
}

namespace {

std::string numbered(const char* prefix, std::size_t i, std::size_t total) {
  const int width = static_cast<int>(std::to_string(total).size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i + 1);
  return buf;
}

std::string make_token(Rng& rng) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng.next()));
  return buf;
}

// Stimulus ids are handed out after a shuffle so they carry no hint of the
// error or side they were built with.
void assign_stimulus_ids(std::vector<StimulusPair>& stimuli, std::vector<std::vector<std::size_t>>& lists, Rng& rng,
                         std::vector<SessionSpec>& sessions) {
  std::vector<std::size_t> perm(stimuli.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);
  std::vector<std::size_t> rank(stimuli.size());
  for (std::size_t k = 0; k < perm.size(); ++k) rank[perm[k]] = k;
  for (std::size_t i = 0; i < stimuli.size(); ++i) stimuli[i].stimulus_id = numbered("s", rank[i], stimuli.size());
  for (std::size_t p = 0; p < sessions.size(); ++p) {
    rng.shuffle(lists[p]);
    for (std::size_t idx : lists[p]) sessions[p].stimulus_ids.push_back(stimuli[idx].stimulus_id);
  }
  std::sort(stimuli.begin(), stimuli.end(),
            [](const StimulusPair& a, const StimulusPair& b) { return a.stimulus_id < b.stimulus_id; });
}

void check_distinct_pool(const std::vector<PoolEntry>& pool) {
  std::set<std::string> seen;
  for (const auto& p : pool) {
    if (!seen.insert(p.utterance_id).second) throw ValidationError("utterance " + p.utterance_id + " listed twice");
  }
}

}  // namespace

Experiment build_threshold_experiment(const std::vector<PoolEntry>& pool, const ThresholdPlan& plan) {
  const std::size_t errors = plan.errors_ms.size();
  if (errors == 0 || plan.quotas.size() != errors) throw ValidationError("errors and quotas must be non-empty and aligned");
  if (std::set<double>(plan.errors_ms.begin(), plan.errors_ms.end()).size() != errors) {
    throw ValidationError("errors must be distinct");
  }
  const std::size_t p_count = plan.participants;
  if (p_count < 2 || p_count % 2 != 0) throw ValidationError("participants must be an even number of at least 2");
  if (plan.shared_per_pair > plan.per_participant) throw ValidationError("shared subset exceeds the per-participant count");
  const std::size_t q_total = std::accumulate(plan.quotas.begin(), plan.quotas.end(), std::size_t{0});
  const std::size_t shared = plan.shared_per_pair;
  const std::size_t unique = plan.per_participant - shared;
  if ((p_count / 2) * shared + p_count * unique != q_total) {
    throw ValidationError("quotas total " + std::to_string(q_total) + " but the schedule needs " +
                          std::to_string((p_count / 2) * shared + p_count * unique) + " stimuli");
  }
  std::vector<std::size_t> shared_e(errors), unique_e(errors);
  for (std::size_t e = 0; e < errors; ++e) {
    if ((shared * plan.quotas[e]) % q_total != 0 || (unique * plan.quotas[e]) % q_total != 0) {
      throw ValidationError("quota for error " + std::to_string(plan.errors_ms[e]) +
                            " ms cannot be split evenly across participants");
    }
    shared_e[e] = shared * plan.quotas[e] / q_total;
    unique_e[e] = unique * plan.quotas[e] / q_total;
  }
  check_distinct_pool(pool);
  if (pool.size() < q_total) {
    std::string msg = "utterance pool of " + std::to_string(pool.size()) + " is too small; shortfall per error:";
    std::size_t left = pool.size();
    for (std::size_t e = 0; e < errors; ++e) {
      const std::size_t got = std::min(left, plan.quotas[e]);
      left -= got;
      char buf[64];
      std::snprintf(buf, sizeof buf, " %g ms: %zu", plan.errors_ms[e], plan.quotas[e] - got);
      msg += buf;
    }
    throw CapacityError(msg);
  }

  Rng rng(plan.seed);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::size_t> slots;
  for (std::size_t e = 0; e < errors; ++e) slots.insert(slots.end(), plan.quotas[e], e);
  rng.shuffle(slots);

  Experiment exp;
  exp.experiment_id = plan.experiment_id;
  exp.kind = ExperimentKind::kThreshold;
  std::vector<std::vector<std::size_t>> by_error(errors);
  for (std::size_t k = 0; k < q_total; ++k) {
    const PoolEntry& u = pool[order[k]];
    const std::size_t e = slots[k];
    const double err = plan.errors_ms[e];
    StimulusPair s;
    s.utterance_id = u.utterance_id;
    s.utterance_type = u.utterance_type;
    s.error_ms = err;
    if (err == 0.0) {
      s.provenance = Provenance::kControl;
      s.correct_side = Side::kNone;
      s.side_a_offset_ms = s.side_b_offset_ms = u.hardware_offset_ms;
    } else {
      s.provenance = Provenance::kThresholdError;
      s.correct_side = rng.coin() ? Side::kA : Side::kB;
      s.side_a_offset_ms = u.hardware_offset_ms + (s.correct_side == Side::kA ? 0.0 : err);
      s.side_b_offset_ms = u.hardware_offset_ms + (s.correct_side == Side::kB ? 0.0 : err);
    }
    by_error[e].push_back(exp.stimuli.size());
    exp.stimuli.push_back(std::move(s));
  }

  std::vector<std::vector<std::size_t>> lists(p_count);
  for (std::size_t e = 0; e < errors; ++e) {
    std::size_t next = 0;
    for (std::size_t pair = 0; pair < p_count / 2; ++pair) {
      for (std::size_t k = 0; k < shared_e[e]; ++k, ++next) {
        lists[2 * pair].push_back(by_error[e][next]);
        lists[2 * pair + 1].push_back(by_error[e][next]);
      }
    }
    for (std::size_t p = 0; p < p_count; ++p) {
      for (std::size_t k = 0; k < unique_e[e]; ++k, ++next) lists[p].push_back(by_error[e][next]);
    }
  }
  for (std::size_t p = 0; p < p_count; ++p) {
    SessionSpec spec;
    spec.participant_id = numbered("P", p, p_count);
    spec.partner_id = numbered("P", p ^ 1, p_count);
    spec.token = make_token(rng);
    exp.sessions.push_back(std::move(spec));
  }
  assign_stimulus_ids(exp.stimuli, lists, rng, exp.sessions);
  return exp;
}

bool excluded_from_preference(const PreferenceCandidate& c, const PreferencePlan& plan) {
  const double diff = c.model_offset_ms - c.hardware_offset_ms;
  return plan.exclude_lower_ms < diff && diff < plan.exclude_upper_ms;
}

Experiment build_preference_experiment(const std::vector<PreferenceCandidate>& candidates,
                                       const std::vector<PoolEntry>& control_pool, const PreferencePlan& plan) {
  if (plan.participants == 0 || plan.test_per_participant == 0) {
    throw ValidationError("participants and test stimuli per participant must be positive");
  }
  check_distinct_pool(control_pool);
  std::set<std::string> seen;
  std::vector<const PreferenceCandidate*> eligible;
  for (const auto& c : candidates) {
    if (!seen.insert(c.utterance_id).second) throw ValidationError("utterance " + c.utterance_id + " listed twice");
    if (!excluded_from_preference(c, plan)) eligible.push_back(&c);
  }
  const std::size_t need = plan.participants * plan.test_per_participant;
  if (eligible.empty()) throw CapacityError("no model-versus-hardware pairs remain after exclusion");
  if (eligible.size() < need) {
    throw CapacityError(std::to_string(eligible.size()) + " pairs remain after exclusion, " + std::to_string(need) +
                        " needed");
  }

  Rng rng(plan.seed);
  rng.shuffle(eligible);
  eligible.resize(need);
  std::set<std::string> used;
  for (const auto* c : eligible) used.insert(c->utterance_id);
  std::vector<const PoolEntry*> controls;
  for (const auto& p : control_pool) {
    if (!used.count(p.utterance_id)) controls.push_back(&p);
  }
  if (controls.size() < plan.controls) {
    throw CapacityError("control pool has " + std::to_string(controls.size()) + " usable utterances, " +
                        std::to_string(plan.controls) + " needed");
  }
  rng.shuffle(controls);
  controls.resize(plan.controls);

  Experiment exp;
  exp.experiment_id = plan.experiment_id;
  exp.kind = ExperimentKind::kPreference;
  std::vector<std::vector<std::size_t>> lists(plan.participants);
  for (std::size_t k = 0; k < need; ++k) {
    const PreferenceCandidate& c = *eligible[k];
    StimulusPair s;
    s.utterance_id = c.utterance_id;
    s.utterance_type = c.utterance_type;
    s.provenance = Provenance::kModelVsHardware;
    s.correct_side = Side::kNone;
    s.error_ms = c.model_offset_ms - c.hardware_offset_ms;
    s.model_side = rng.coin() ? Side::kA : Side::kB;
    s.side_a_offset_ms = *s.model_side == Side::kA ? c.model_offset_ms : c.hardware_offset_ms;
    s.side_b_offset_ms = *s.model_side == Side::kB ? c.model_offset_ms : c.hardware_offset_ms;
    lists[k / plan.test_per_participant].push_back(exp.stimuli.size());
    exp.stimuli.push_back(std::move(s));
  }
  const std::size_t negatives = (plan.controls + 1) / 2;
  for (std::size_t k = 0; k < controls.size(); ++k) {
    const PoolEntry& u = *controls[k];
    StimulusPair s;
    s.utterance_id = u.utterance_id;
    s.utterance_type = u.utterance_type;
    s.provenance = Provenance::kControl;
    s.error_ms = k < negatives ? plan.control_negative_ms : plan.control_positive_ms;
    s.correct_side = rng.coin() ? Side::kA : Side::kB;
    s.side_a_offset_ms = u.hardware_offset_ms + (s.correct_side == Side::kA ? 0.0 : s.error_ms);
    s.side_b_offset_ms = u.hardware_offset_ms + (s.correct_side == Side::kB ? 0.0 : s.error_ms);
    for (auto& list : lists) list.push_back(exp.stimuli.size());
    exp.stimuli.push_back(std::move(s));
  }
  for (std::size_t p = 0; p < plan.participants; ++p) {
    SessionSpec spec;
    spec.participant_id = numbered("P", p, plan.participants);
    spec.token = make_token(rng);
    exp.sessions.push_back(std::move(spec));
  }
  assign_stimulus_ids(exp.stimuli, lists, rng, exp.sessions);
  return exp;
}

std::string experiment_to_json(const Experiment& e) {
  ordered_json j;
  j["experiment_id"] = e.experiment_id;
  j["kind"] = stats::to_string(e.kind);
  auto stimuli = ordered_json::array();
  for (const auto& s : e.stimuli) {
    ordered_json o;
    o["stimulus_id"] = s.stimulus_id;
    o["utterance_id"] = s.utterance_id;
    o["utterance_type"] = s.utterance_type;
    o["side_a_offset_ms"] = s.side_a_offset_ms;
    o["side_b_offset_ms"] = s.side_b_offset_ms;
    o["correct_side"] = stats::to_string(s.correct_side);
    o["provenance"] = to_string(s.provenance);
    o["error_ms"] = s.error_ms;
    if (s.model_side) o["model_side"] = stats::to_string(*s.model_side);
    stimuli.push_back(std::move(o));
  }
  j["stimuli"] = std::move(stimuli);
  auto sessions = ordered_json::array();
  for (const auto& s : e.sessions) {
    ordered_json o;
    o["participant_id"] = s.participant_id;
    o["token"] = s.token;
    if (s.partner_id) o["partner_id"] = *s.partner_id;
    o["stimulus_ids"] = s.stimulus_ids;
    sessions.push_back(std::move(o));
  }
  j["sessions"] = std::move(sessions);
  return j.dump(2) + "\n";
}

Experiment experiment_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Experiment e;
    e.experiment_id = j.at("experiment_id").get<std::string>();
    e.kind = stats::parse_experiment_kind(j.at("kind").get<std::string>());
    for (const auto& o : j.at("stimuli")) {
      StimulusPair s;
      s.stimulus_id = o.at("stimulus_id").get<std::string>();
      s.utterance_id = o.at("utterance_id").get<std::string>();
      s.utterance_type = o.value("utterance_type", std::string{});
      s.side_a_offset_ms = o.at("side_a_offset_ms").get<double>();
      s.side_b_offset_ms = o.at("side_b_offset_ms").get<double>();
      s.correct_side = stats::parse_side(o.at("correct_side").get<std::string>());
      s.provenance = parse_provenance(o.at("provenance").get<std::string>());
      s.error_ms = o.at("error_ms").get<double>();
      if (o.contains("model_side")) s.model_side = stats::parse_side(o.at("model_side").get<std::string>());
      e.stimuli.push_back(std::move(s));
    }
    for (const auto& o : j.at("sessions")) {
      SessionSpec s;
      s.participant_id = o.at("participant_id").get<std::string>();
      s.token = o.at("token").get<std::string>();
      if (o.contains("partner_id")) s.partner_id = o.at("partner_id").get<std::string>();
      s.stimulus_ids = o.at("stimulus_ids").get<std::vector<std::string>>();
      e.sessions.push_back(std::move(s));
    }
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("experiment file: ") + ex.what());
  } catch (const ValidationError& ex) {
    throw FormatError(std::string("experiment file: ") + ex.what());
  }
}

}  // namespace tonguesync::experiment
