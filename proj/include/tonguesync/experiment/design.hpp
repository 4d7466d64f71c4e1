#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tonguesync/stats.hpp"

namespace tonguesync::experiment {

using stats::Choice;
using stats::ExperimentKind;
using stats::Side;

enum class Provenance { kThresholdError, kModelVsHardware, kControl };

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view text);

/// Two renderings of one utterance that differ only in offset. Offsets are
/// absolute (the value handed to apply_offset on the raw recording).
struct StimulusPair {
  std::string stimulus_id;
  std::string utterance_id;
  std::string utterance_type;
  double side_a_offset_ms = 0.0;
  double side_b_offset_ms = 0.0;
  Side correct_side = Side::kNone;
  Provenance provenance = Provenance::kThresholdError;
  double error_ms = 0.0;
  /// Preference test pairs: the side rendered with the model's offset.
  std::optional<Side> model_side;

  double offset(Side side) const { return side == Side::kA ? side_a_offset_ms : side_b_offset_ms; }
  friend bool operator==(const StimulusPair&, const StimulusPair&) = default;
};

struct SessionSpec {
  std::string participant_id;
  /// Opaque token used in URLs.
  std::string token;
  std::vector<std::string> stimulus_ids;
  /// Participant sharing a subset with this one, if any.
  std::optional<std::string> partner_id;
  friend bool operator==(const SessionSpec&, const SessionSpec&) = default;
};

struct Experiment {
  std::string experiment_id;
  ExperimentKind kind = ExperimentKind::kThreshold;
  std::vector<StimulusPair> stimuli;
  std::vector<SessionSpec> sessions;

  const StimulusPair& stimulus(const std::string& id) const;
  const SessionSpec& session_by_token(const std::string& token) const;
  const SessionSpec& session_by_participant(const std::string& participant_id) const;
  friend bool operator==(const Experiment&, const Experiment&) = default;
};

struct PoolEntry {
  std::string utterance_id;
  std::string utterance_type;
  /// Offset that synchronises the recording.
  double hardware_offset_ms = 0.0;
};

struct ThresholdPlan {
  std::string experiment_id = "threshold";
  std::vector<double> errors_ms{-305, -245, -185, -125, -95, 0, 22.5, 45, 90, 135, 180};
  std::vector<std::size_t> quotas{50, 50, 50, 50, 25, 50, 25, 50, 50, 50, 50};
  std::size_t participants = 10;
  std::size_t per_participant = 60;
  std::size_t shared_per_pair = 20;
  std::uint64_t seed = 0;
};

/// Assigns errors to distinct utterances under the quotas and deals them
/// so that every participant sees the same count per error and each
/// consecutive participant pair shares `shared_per_pair` stimuli.
/// Throws ValidationError when the quotas do not divide evenly and
/// CapacityError, with the shortfall per error, when the pool is too small.
Experiment build_threshold_experiment(const std::vector<PoolEntry>& pool, const ThresholdPlan& plan);

struct PreferenceCandidate {
  std::string utterance_id;
  std::string utterance_type;
  double model_offset_ms = 0.0;
  double hardware_offset_ms = 0.0;
};

struct PreferencePlan {
  std::string experiment_id = "preference";
  std::size_t participants = 6;
  std::size_t test_per_participant = 50;
  std::size_t controls = 10;
  double control_negative_ms = -305;
  double control_positive_ms = 180;
  /// Model-minus-hardware differences strictly inside this interval are
  /// too small to perceive and are excluded.
  double exclude_lower_ms = -125;
  double exclude_upper_ms = 45;
  std::uint64_t seed = 0;
};

bool excluded_from_preference(const PreferenceCandidate& c, const PreferencePlan& plan);

/// Every participant gets `test_per_participant` distinct model-versus-
/// hardware pairs plus the same control subset, shuffled. Half the controls
/// (rounded up) carry the negative error, the rest the positive one.
Experiment build_preference_experiment(const std::vector<PreferenceCandidate>& candidates,
                                       const std::vector<PoolEntry>& control_pool, const PreferencePlan& plan);

std::string experiment_to_json(const Experiment& e);
Experiment experiment_from_json(std::string_view text);

}  // namespace tonguesync::experiment
