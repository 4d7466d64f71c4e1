#include "tonguesync/eval.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "json.hpp"
#include "tonguesync/error.hpp"

namespace tonguesync {

void ScoringBoundary::validate() const {
  if (!(lower_ms < 0 && upper_ms > 0)) {
    throw ValidationError("scoring boundary " + name + " must satisfy lower < 0 < upper");
  }
}

ScoringBoundary ScoringBoundary::custom(int lower_ms, int upper_ms) {
  ScoringBoundary b{"custom", lower_ms, upper_ms};
  b.validate();
  return b;
}

bool score(int disc_ms, const ScoringBoundary& boundary) {
  return boundary.lower_ms < disc_ms && disc_ms < boundary.upper_ms;
}

EvalRow make_row(std::string utterance_id, std::string dataset, std::string type, std::string speaker,
                 int prediction_ms, int truth_ms) {
  return {std::move(utterance_id), std::move(dataset),
          std::move(type),         std::move(speaker),
          prediction_ms,           truth_ms,
          discrepancy(prediction_ms, truth_ms)};
}

GroupKey parse_group_key(std::string_view text) {
  if (text == "dataset") return GroupKey::kDataset;
  if (text == "type") return GroupKey::kType;
  if (text == "speaker") return GroupKey::kSpeaker;
  throw ValidationError("group must be dataset, type or speaker, got '" + std::string(text) + "'");
}

namespace {

ReportRow summarise(std::string group, const std::vector<const EvalRow*>& rows, const ScoringBoundary& hard,
                    const ScoringBoundary& soft) {
  ReportRow r;
  r.group = std::move(group);
  r.n = rows.size();
  // Integer sums keep the mean exact for any realistic row count.
  long long sum = 0;
  for (const EvalRow* row : rows) {
    r.hard_correct += score(row->disc_ms, hard) ? 1 : 0;
    r.soft_correct += score(row->disc_ms, soft) ? 1 : 0;
    sum += row->disc_ms;
  }
  const double n = static_cast<double>(r.n);
  r.hard_accuracy = 100.0 * static_cast<double>(r.hard_correct) / n;
  r.soft_accuracy = 100.0 * static_cast<double>(r.soft_correct) / n;
  r.mean_disc_ms = static_cast<double>(sum) / n;
  double sq = 0.0;
  for (const EvalRow* row : rows) {
    const double d = row->disc_ms - r.mean_disc_ms;
    sq += d * d;
  }
  r.sd_disc_ms = std::sqrt(sq / n);
  return r;
}

}  // namespace

Report aggregate(const std::vector<EvalRow>& rows, GroupKey key, const ScoringBoundary& hard,
                 const ScoringBoundary& soft) {
  if (rows.empty()) throw EmptyDataError("no evaluation rows");
  hard.validate();
  soft.validate();
  std::map<std::string, std::vector<const EvalRow*>> groups;
  std::vector<const EvalRow*> all;
  for (const EvalRow& row : rows) {
    const std::string& g = key == GroupKey::kDataset ? row.dataset : key == GroupKey::kType ? row.type : row.speaker;
    groups[g].push_back(&row);
    all.push_back(&row);
  }
  Report report;
  for (const auto& [name, members] : groups) report.rows.push_back(summarise(name, members, hard, soft));
  report.rows.push_back(summarise("All", all, hard, soft));
  return report;
}

std::string format_report(const Report& report) {
  std::string out = "# accuracy in percent; discrepancy mean and population standard deviation in ms\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %6s %8s %8s %20s\n", "group", "N", "hard%", "soft%", "disc ms");
  out += line;
  for (const ReportRow& r : report.rows) {
    char disc[64];
    std::snprintf(disc, sizeof disc, "%.1f +/- %.1f", r.mean_disc_ms, r.sd_disc_ms);
    std::snprintf(line, sizeof line, "%-16s %6zu %8.1f %8.1f %20s\n", r.group.c_str(), r.n, r.hard_accuracy,
                  r.soft_accuracy, disc);
    out += line;
  }
  return out;
}

std::string report_to_jsonl(const Report& report) {
  std::string out;
  for (const ReportRow& r : report.rows) {
    nlohmann::ordered_json j;
    j["group"] = r.group;
    j["n"] = r.n;
    j["hard_correct"] = r.hard_correct;
    j["soft_correct"] = r.soft_correct;
    j["hard_accuracy"] = r.hard_accuracy;
    j["soft_accuracy"] = r.soft_accuracy;
    j["mean_disc_ms"] = r.mean_disc_ms;
    j["sd_disc_ms"] = r.sd_disc_ms;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace tonguesync
