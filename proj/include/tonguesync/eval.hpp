#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace tonguesync {

struct ScoringBoundary {
  std::string name;
  int lower_ms = 0;
  int upper_ms = 0;

  /// Throws ValidationError unless lower < 0 < upper.
  void validate() const;

  static ScoringBoundary hard() { return {"hard", -125, 45}; }
  static ScoringBoundary soft() { return {"soft", -185, 90}; }
  static ScoringBoundary custom(int lower_ms, int upper_ms);
};

/// prediction − truth.
inline int discrepancy(int prediction_ms, int truth_ms) { return prediction_ms - truth_ms; }

/// Correct iff lower < disc < upper.
bool score(int disc_ms, const ScoringBoundary& boundary);

struct EvalRow {
  std::string utterance_id;
  std::string dataset;
  std::string type;
  std::string speaker;
  int prediction_ms = 0;
  int truth_ms = 0;
  int disc_ms = 0;
};

EvalRow make_row(std::string utterance_id, std::string dataset, std::string type, std::string speaker,
                 int prediction_ms, int truth_ms);

enum class GroupKey { kDataset, kType, kSpeaker };
GroupKey parse_group_key(std::string_view text);

struct ReportRow {
  std::string group;
  std::size_t n = 0;
  std::size_t hard_correct = 0;
  std::size_t soft_correct = 0;
  double hard_accuracy = 0.0;  // percent
  double soft_accuracy = 0.0;  // percent
  double mean_disc_ms = 0.0;
  double sd_disc_ms = 0.0;  // population
};

struct Report {
  std::vector<ReportRow> rows;  // groups in sorted order, then "All"
};

/// Throws EmptyDataError for no rows.
Report aggregate(const std::vector<EvalRow>& rows, GroupKey key, const ScoringBoundary& hard = ScoringBoundary::hard(),
                 const ScoringBoundary& soft = ScoringBoundary::soft());

std::string format_report(const Report& report);
std::string report_to_jsonl(const Report& report);

}  // namespace tonguesync
