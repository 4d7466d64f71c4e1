#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tonguesync/matrix.hpp"

namespace tonguesync::stats {

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// p ± z·sqrt(p(1−p)/n), clipped to [0, 1].
Interval wald_ci(double p_hat, std::size_t n, double z = 1.96);
/// Wilson score interval, for comparison.
Interval wilson_ci(double p_hat, std::size_t n, double z = 1.96);

/// Natural log of the binomial probability mass function.
double binomial_log_pmf(std::size_t k, std::size_t n, double p);

/// Two-sided exact test: total probability of every outcome no more likely
/// than k under Binomial(n, p0). Summed in log space.
double exact_binomial_test(std::size_t k, std::size_t n, double p0);

// --- judgments --------------------------------------------------------------

enum class Choice { kA, kB, kC };
enum class Side { kA, kB, kNone };
enum class ExperimentKind { kThreshold, kPreference };

std::string_view to_string(Choice c);
std::string_view to_string(Side s);
std::string_view to_string(ExperimentKind k);
Choice parse_choice(std::string_view text);
Side parse_side(std::string_view text);
ExperimentKind parse_experiment_kind(std::string_view text);

struct JudgmentRecord {
  std::string participant_id;
  std::string stimulus_id;
  Choice choice = Choice::kA;
  Side correct_side = Side::kNone;
  double error_ms = 0.0;
  ExperimentKind kind = ExperimentKind::kThreshold;

  /// Correct iff the choice names the correct side; with no correct side,
  /// threshold controls are correct iff the choice is C and preference
  /// pairs have no outcome.
  std::optional<bool> outcome() const;
};

struct Agreement {
  double choice = 0.0;
  double outcome = 0.0;
  double truth = 0.0;
  std::size_t n = 0;
};

/// Agreement of choice, of outcome, and with truth (both correct) between
/// two participants over an identical stimulus set. Throws ValidationError
/// listing the stimuli that are not shared.
Agreement pairwise_agreement(const std::vector<JudgmentRecord>& a, const std::vector<JudgmentRecord>& b);

// --- phone features -----------------------------------------------------------

/// word → alternative pronunciations, each a phone sequence.
using PronunciationDict = std::map<std::string, std::vector<std::vector<std::string>>>;

/// "word<TAB>phone phone ..." per line; a repeated word adds a pronunciation.
PronunciationDict parse_dictionary(std::string_view text);

/// Phone counts over the prompt's words; a word with P pronunciations adds
/// 1/P per phone occurrence in each. Words are matched case-insensitively
/// with surrounding punctuation stripped. Throws ValidationError listing
/// words missing from the dictionary.
std::map<std::string, double> phone_features(std::string_view prompt, const PronunciationDict& dict);

/// Every phone in the dictionary, sorted.
std::vector<std::string> phone_inventory(const PronunciationDict& dict);

// --- logistic regression --------------------------------------------------------

struct LogisticModel {
  std::vector<double> weights;
  double l2_strength = 0.0;
  bool converged = false;
  double log_loss = 0.0;  // mean, without the penalty
  double gradient_norm = 0.0;
  std::size_t iterations = 0;
};

struct LogisticOptions {
  double l2_strength = 1.0;
  double tolerance = 1e-6;  // on the gradient's Euclidean norm
  std::size_t max_iterations = 1000;
  std::size_t history = 10;
};

/// Minimises mean log loss + l2·|w|²/2 with L-BFGS. Rows are observations;
/// there is no separate intercept. Starts from zero unless `initial` is
/// given.
LogisticModel fit_logistic(const Matrix<double>& x, const std::vector<int>& y, const LogisticOptions& options = {},
                           const std::vector<double>* initial = nullptr);

double logistic_probability(const std::vector<double>& weights, const Matrix<double>& x, std::size_t row);
/// Total log-likelihood of the outcomes under the model.
double log_likelihood(const LogisticModel& model, const Matrix<double>& x, const std::vector<int>& y);
/// Log-likelihood of the best constant probability.
double null_log_likelihood(const std::vector<int>& y);
/// 1 − LL_model / LL_null. Throws NumericError when LL_null is 0.
double mcfadden_r2(double model_log_likelihood, double null_log_likelihood);

}  // namespace tonguesync::stats
