#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "tonguesync/experiment/design.hpp"
#include "tonguesync/matrix.hpp"

namespace tonguesync::experiment {

/// Accuracy, preference and agreement tables for a set of judgments, with
/// Wald intervals throughout. Throws EmptyDataError with no judgments and
/// PreconditionError when a session is unfinished unless `allow_partial`.
nlohmann::ordered_json experiment_results(const Experiment& experiment,
                                          const std::vector<stats::JudgmentRecord>& judgments,
                                          bool allow_partial = false);

struct LogisticDesign {
  Matrix<double> x;
  std::vector<int> y;  // 1 correct
  std::vector<std::string> columns;
};

/// One row per threshold judgment: one-hot error, one-hot participant, then
/// the fractional phone counts of the utterance prompt. `prompts` maps
/// utterance id to prompt text.
LogisticDesign logistic_design(const Experiment& experiment, const std::vector<stats::JudgmentRecord>& judgments,
                               const std::map<std::string, std::string>& prompts,
                               const stats::PronunciationDict& dictionary);

}  // namespace tonguesync::experiment
