#include "tonguesync/experiment/results.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "tonguesync/error.hpp"
#include "tonguesync/stats.hpp"

namespace tonguesync::experiment {

using nlohmann::ordered_json;

namespace {

struct Tally {
  std::size_t n = 0;
  std::size_t hits = 0;
  void add(bool hit) {
    ++n;
    hits += hit ? 1 : 0;
  }
};

ordered_json proportion(const Tally& t) {
  ordered_json j;
  j["n"] = t.n;
  j["count"] = t.hits;
  if (t.n == 0) {
    j["rate"] = nullptr;
    j["ci_low"] = nullptr;
    j["ci_high"] = nullptr;
    return j;
  }
  const double p = static_cast<double>(t.hits) / static_cast<double>(t.n);
  const stats::Interval ci = stats::wald_ci(p, t.n);
  j["rate"] = p;
  j["ci_low"] = ci.low;
  j["ci_high"] = ci.high;
  return j;
}

ordered_json labelled(const std::string& key, const std::string& label, const Tally& t) {
  ordered_json j;
  j[key] = label;
  const ordered_json p = proportion(t);
  for (const auto& [k, v] : p.items()) j[k] = v;
  return j;
}

bool sessions_complete(const Experiment& e, const std::vector<stats::JudgmentRecord>& judgments) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : judgments) ++counts[r.participant_id];
  for (const auto& s : e.sessions) {
    if (counts[s.participant_id] < s.stimulus_ids.size()) return false;
  }
  return true;
}

ordered_json threshold_results(const Experiment& e, const std::vector<stats::JudgmentRecord>& judgments) {
  Tally all, non_control, a_correct, b_correct, control, negative, positive;
  std::map<double, Tally> per_error, c_choice;
  std::map<std::string, Tally> per_participant;
  for (const auto& r : judgments) {
    const bool hit = r.outcome().value_or(false);
    all.add(hit);
    per_error[r.error_ms].add(hit);
    c_choice[r.error_ms].add(r.choice == Choice::kC);
    per_participant[r.participant_id].add(hit);
    if (r.correct_side == Side::kNone) {
      control.add(hit);
    } else {
      non_control.add(hit);
      (r.correct_side == Side::kA ? a_correct : b_correct).add(hit);
      (r.error_ms < 0 ? negative : positive).add(hit);
    }
  }
  ordered_json j;
  ordered_json overall = ordered_json::array();
  overall.push_back(labelled("subset", "all", all));
  overall.push_back(labelled("subset", "excluding control", non_control));
  overall.push_back(labelled("subset", "A is correct", a_correct));
  overall.push_back(labelled("subset", "B is correct", b_correct));
  overall.push_back(labelled("subset", "control", control));
  j["overall"] = std::move(overall);
  ordered_json by_sign = ordered_json::array();
  by_sign.push_back(labelled("sign", "negative", negative));
  by_sign.push_back(labelled("sign", "zero", control));
  by_sign.push_back(labelled("sign", "positive", positive));
  j["by_sign"] = std::move(by_sign);
  ordered_json by_error = ordered_json::array();
  for (const auto& [err, t] : per_error) {
    ordered_json row = proportion(t);
    row["error_ms"] = err;
    row["c_choice"] = proportion(c_choice[err]);
    by_error.push_back(std::move(row));
  }
  j["by_error"] = std::move(by_error);
  ordered_json by_participant = ordered_json::array();
  for (const auto& [id, t] : per_participant) by_participant.push_back(labelled("participant_id", id, t));
  j["by_participant"] = std::move(by_participant);

  // Agreement between partners over the stimuli both have judged.
  std::map<std::string, std::map<std::string, const stats::JudgmentRecord*>> by_person;
  for (const auto& r : judgments) by_person[r.participant_id][r.stimulus_id] = &r;
  struct Counts {
    std::size_t n = 0, choice = 0, outcome = 0, truth = 0;
  };
  std::map<double, Counts> agree_by_error;
  ordered_json pairs = ordered_json::array();
  std::set<std::string> done;
  for (const auto& s : e.sessions) {
    if (!s.partner_id || done.count(s.participant_id) || done.count(*s.partner_id)) continue;
    done.insert(s.participant_id);
    done.insert(*s.partner_id);
    std::vector<stats::JudgmentRecord> a, b;
    for (const auto& [id, ra] : by_person[s.participant_id]) {
      const auto it = by_person[*s.partner_id].find(id);
      if (it == by_person[*s.partner_id].end()) continue;
      a.push_back(*ra);
      b.push_back(*it->second);
      Counts& c = agree_by_error[ra->error_ms];
      const bool oa = ra->outcome().value_or(false), ob = it->second->outcome().value_or(false);
      ++c.n;
      c.choice += ra->choice == it->second->choice ? 1 : 0;
      c.outcome += oa == ob ? 1 : 0;
      c.truth += (oa && ob) ? 1 : 0;
    }
    ordered_json row;
    row["participants"] = {s.participant_id, *s.partner_id};
    row["n"] = a.size();
    if (a.empty()) {
      row["choice"] = row["outcome"] = row["truth"] = nullptr;
    } else {
      const stats::Agreement ag = stats::pairwise_agreement(a, b);
      row["choice"] = ag.choice;
      row["outcome"] = ag.outcome;
      row["truth"] = ag.truth;
    }
    pairs.push_back(std::move(row));
  }
  ordered_json agreement_by_error = ordered_json::array();
  for (const auto& [err, c] : agree_by_error) {
    const double n = static_cast<double>(c.n);
    agreement_by_error.push_back(ordered_json{{"error_ms", err},
                                              {"n", c.n},
                                              {"choice", static_cast<double>(c.choice) / n},
                                              {"outcome", static_cast<double>(c.outcome) / n},
                                              {"truth", static_cast<double>(c.truth) / n}});
  }
  j["agreement_by_pair"] = std::move(pairs);
  j["agreement_by_error"] = std::move(agreement_by_error);
  return j;
}

ordered_json preference_results(const Experiment& e, const std::vector<stats::JudgmentRecord>& judgments) {
  Tally preference, control;
  std::map<std::string, Tally> per_type, per_participant;
  for (const auto& r : judgments) {
    const StimulusPair& s = e.stimulus(r.stimulus_id);
    if (s.provenance == Provenance::kControl) {
      control.add(r.outcome().value_or(false));
      continue;
    }
    if (!s.model_side) throw ValidationError("stimulus " + s.stimulus_id + " has no model side");
    const bool prefers_model =
        (r.choice == Choice::kA && *s.model_side == Side::kA) || (r.choice == Choice::kB && *s.model_side == Side::kB);
    preference.add(prefers_model);
    per_type[s.utterance_type].add(prefers_model);
    per_participant[r.participant_id].add(prefers_model);
  }
  ordered_json j;
  ordered_json pref = proportion(preference);
  if (preference.n > 0) pref["p_value"] = stats::exact_binomial_test(preference.hits, preference.n, 0.5);
  j["preference"] = std::move(pref);
  j["control"] = proportion(control);
  ordered_json by_type = ordered_json::array();
  for (const auto& [type, t] : per_type) by_type.push_back(labelled("utterance_type", type, t));
  j["by_type"] = std::move(by_type);
  ordered_json by_participant = ordered_json::array();
  for (const auto& [id, t] : per_participant) by_participant.push_back(labelled("participant_id", id, t));
  j["by_participant"] = std::move(by_participant);
  return j;
}

}  // namespace

ordered_json experiment_results(const Experiment& experiment, const std::vector<stats::JudgmentRecord>& judgments,
                                bool allow_partial) {
  if (judgments.empty()) throw EmptyDataError("no judgments recorded for experiment " + experiment.experiment_id);
  const bool complete = sessions_complete(experiment, judgments);
  if (!complete && !allow_partial) {
    throw PreconditionError("experiment " + experiment.experiment_id + " has unfinished sessions");
  }
  ordered_json j;
  j["experiment_id"] = experiment.experiment_id;
  j["kind"] = stats::to_string(experiment.kind);
  j["partial"] = !complete;
  j["judgments"] = judgments.size();
  ordered_json body = experiment.kind == ExperimentKind::kThreshold ? threshold_results(experiment, judgments)
                                                                     : preference_results(experiment, judgments);
  for (auto& [k, v] : body.items()) j[k] = std::move(v);
  return j;
}

LogisticDesign logistic_design(const Experiment& experiment, const std::vector<stats::JudgmentRecord>& judgments,
                               const std::map<std::string, std::string>& prompts,
                               const stats::PronunciationDict& dictionary) {
  if (experiment.kind != ExperimentKind::kThreshold) {
    throw ValidationError("outcome regression needs a threshold experiment");
  }
  if (judgments.empty()) throw EmptyDataError("no judgments to fit");
  std::set<double> errors;
  for (const auto& s : experiment.stimuli) errors.insert(s.error_ms);
  std::vector<std::string> participants;
  for (const auto& s : experiment.sessions) participants.push_back(s.participant_id);
  std::sort(participants.begin(), participants.end());
  const std::vector<std::string> phones = stats::phone_inventory(dictionary);

  LogisticDesign d;
  std::map<double, std::size_t> error_col;
  std::map<std::string, std::size_t> participant_col, phone_col;
  for (double e : errors) {
    error_col[e] = d.columns.size();
    nlohmann::json j = e;
    d.columns.push_back("error:" + j.dump());
  }
  for (const auto& p : participants) {
    participant_col[p] = d.columns.size();
    d.columns.push_back("participant:" + p);
  }
  for (const auto& p : phones) {
    phone_col[p] = d.columns.size();
    d.columns.push_back("phone:" + p);
  }
  d.x = Matrix<double>(judgments.size(), d.columns.size());
  std::map<std::string, std::map<std::string, double>> cache;
  for (std::size_t r = 0; r < judgments.size(); ++r) {
    const auto& j = judgments[r];
    const StimulusPair& st = experiment.stimulus(j.stimulus_id);
    const auto pc = participant_col.find(j.participant_id);
    if (pc == participant_col.end()) throw ValidationError("judgment from unknown participant " + j.participant_id);
    d.x(r, error_col.at(st.error_ms)) = 1.0;
    d.x(r, pc->second) = 1.0;
    auto it = cache.find(st.utterance_id);
    if (it == cache.end()) {
      const auto prompt = prompts.find(st.utterance_id);
      if (prompt == prompts.end()) throw NotFoundError("no prompt for utterance " + st.utterance_id);
      it = cache.emplace(st.utterance_id, stats::phone_features(prompt->second, dictionary)).first;
    }
    for (const auto& [phone, count] : it->second) d.x(r, phone_col.at(phone)) = count;
    d.y.push_back(j.outcome().value_or(false) ? 1 : 0);
  }
  return d;
}

}  // namespace tonguesync::experiment
