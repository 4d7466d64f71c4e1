#include "tonguesync/stats.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>

#include "tonguesync/error.hpp"

namespace tonguesync::stats {

Interval wald_ci(double p_hat, std::size_t n, double z) {
  if (n == 0) throw ValidationError("confidence interval needs n >= 1");
  if (!(p_hat >= 0.0 && p_hat <= 1.0)) throw ValidationError("proportion must lie in [0, 1]");
  const double half = z * std::sqrt(p_hat * (1.0 - p_hat) / static_cast<double>(n));
  return {std::max(0.0, p_hat - half), std::min(1.0, p_hat + half)};
}

Interval wilson_ci(double p_hat, std::size_t n, double z) {
  if (n == 0) throw ValidationError("confidence interval needs n >= 1");
  if (!(p_hat >= 0.0 && p_hat <= 1.0)) throw ValidationError("proportion must lie in [0, 1]");
  const double nn = static_cast<double>(n);
  const double z2 = z * z;
  const double centre = (p_hat + z2 / (2.0 * nn)) / (1.0 + z2 / nn);
  const double half = z * std::sqrt(p_hat * (1.0 - p_hat) / nn + z2 / (4.0 * nn * nn)) / (1.0 + z2 / nn);
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

namespace {

double log_choose(std::size_t n, std::size_t k) {
  const std::size_t m = std::min(k, n - k);
  if (n > 10000) {
    return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
           std::lgamma(static_cast<double>(n - k) + 1.0);
  }
  // Short exact sum; more accurate than lgamma differences at moderate n.
  double s = 0.0;
  for (std::size_t i = 1; i <= m; ++i) {
    s += std::log(static_cast<double>(n - m + i) / static_cast<double>(i));
  }
  return s;
}

}  // namespace

double binomial_log_pmf(std::size_t k, std::size_t n, double p) {
  if (k > n) throw ValidationError("binomial k exceeds n");
  const double kk = static_cast<double>(k);
  const double rest = static_cast<double>(n - k);
  double lp = log_choose(n, k);
  if (k > 0) lp += kk * std::log(p);
  if (n > k) lp += rest * std::log1p(-p);
  return lp;
}

double exact_binomial_test(std::size_t k, std::size_t n, double p0) {
  if (k > n) throw ValidationError("binomial k exceeds n");
  if (!(p0 > 0.0 && p0 < 1.0)) throw ValidationError("binomial p0 must lie in (0, 1)");
  const double observed = binomial_log_pmf(k, n, p0);
  // Relative slack so outcomes tied with the observed one are included.
  const double cutoff = observed + 1e-7;
  std::vector<double> terms;
  for (std::size_t i = 0; i <= n; ++i) {
    const double lp = binomial_log_pmf(i, n, p0);
    if (lp <= cutoff) terms.push_back(lp);
  }
  const double top = *std::max_element(terms.begin(), terms.end());
  double sum = 0.0;
  for (double lp : terms) sum += std::exp(lp - top);
  return std::min(1.0, std::exp(top + std::log(sum)));
}

// --- judgments --------------------------------------------------------------

std::string_view to_string(Choice c) {
  switch (c) {
    case Choice::kA: return "A";
    case Choice::kB: return "B";
    case Choice::kC: return "C";
  }
  return "?";
}

std::string_view to_string(Side s) {
  switch (s) {
    case Side::kA: return "A";
    case Side::kB: return "B";
    case Side::kNone: return "none";
  }
  return "?";
}

std::string_view to_string(ExperimentKind k) { return k == ExperimentKind::kThreshold ? "threshold" : "preference"; }

Choice parse_choice(std::string_view text) {
  if (text == "A") return Choice::kA;
  if (text == "B") return Choice::kB;
  if (text == "C") return Choice::kC;
  throw ValidationError("choice must be A, B or C, got '" + std::string(text) + "'");
}

Side parse_side(std::string_view text) {
  if (text == "A") return Side::kA;
  if (text == "B") return Side::kB;
  if (text == "none") return Side::kNone;
  throw ValidationError("side must be A, B or none, got '" + std::string(text) + "'");
}

ExperimentKind parse_experiment_kind(std::string_view text) {
  if (text == "threshold") return ExperimentKind::kThreshold;
  if (text == "preference") return ExperimentKind::kPreference;
  throw ValidationError("experiment kind must be threshold or preference, got '" + std::string(text) + "'");
}

std::optional<bool> JudgmentRecord::outcome() const {
  switch (correct_side) {
    case Side::kA: return choice == Choice::kA;
    case Side::kB: return choice == Choice::kB;
    case Side::kNone:
      if (kind == ExperimentKind::kThreshold) return choice == Choice::kC;
      return std::nullopt;
  }
  return std::nullopt;
}

Agreement pairwise_agreement(const std::vector<JudgmentRecord>& a, const std::vector<JudgmentRecord>& b) {
  std::map<std::string, const JudgmentRecord*> in_a, in_b;
  for (const auto& r : a) in_a[r.stimulus_id] = &r;
  for (const auto& r : b) in_b[r.stimulus_id] = &r;
  std::vector<std::string> only_a, only_b;
  for (const auto& [id, r] : in_a) {
    if (!in_b.count(id)) only_a.push_back(id);
  }
  for (const auto& [id, r] : in_b) {
    if (!in_a.count(id)) only_b.push_back(id);
  }
  if (!only_a.empty() || !only_b.empty() || in_a.empty()) {
    std::string msg = "stimulus sets differ;";
    if (in_a.empty() && in_b.empty()) msg += " both are empty";
    if (!only_a.empty()) {
      msg += " only in first:";
      for (const auto& id : only_a) msg += " " + id;
    }
    if (!only_b.empty()) {
      msg += (only_a.empty() ? "" : ";");
      msg += " only in second:";
      for (const auto& id : only_b) msg += " " + id;
    }
    throw ValidationError(msg);
  }
  std::size_t same_choice = 0, same_outcome = 0, both_correct = 0;
  for (const auto& [id, ra] : in_a) {
    const JudgmentRecord* rb = in_b.at(id);
    const auto oa = ra->outcome();
    const auto ob = rb->outcome();
    if (!oa || !ob) throw ValidationError("stimulus " + id + " has no defined outcome");
    same_choice += ra->choice == rb->choice ? 1 : 0;
    same_outcome += *oa == *ob ? 1 : 0;
    both_correct += (*oa && *ob) ? 1 : 0;
  }
  const double n = static_cast<double>(in_a.size());
  return {static_cast<double>(same_choice) / n, static_cast<double>(same_outcome) / n,
          static_cast<double>(both_correct) / n, in_a.size()};
}

// --- phone features -----------------------------------------------------------

namespace {

std::string normalise_word(std::string_view raw) {
  std::size_t begin = 0, end = raw.size();
  auto is_word_char = [](unsigned char c) { return std::isalnum(c) || c == '\'' || c >= 0x80; };
  while (begin < end && !is_word_char(static_cast<unsigned char>(raw[begin]))) ++begin;
  while (end > begin && !is_word_char(static_cast<unsigned char>(raw[end - 1]))) --end;
  std::string out(raw.substr(begin, end - begin));
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

PronunciationDict parse_dictionary(std::string_view text) {
  PronunciationDict dict;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError("dictionary line " + std::to_string(line_no) + " has no tab separator");
    }
    const std::string word = normalise_word(line.substr(0, tab));
    std::istringstream phones(line.substr(tab + 1));
    std::vector<std::string> pron;
    for (std::string p; phones >> p;) pron.push_back(p);
    if (word.empty() || pron.empty()) {
      throw FormatError("dictionary line " + std::to_string(line_no) + " needs a word and at least one phone");
    }
    dict[word].push_back(std::move(pron));
  }
  return dict;
}

std::map<std::string, double> phone_features(std::string_view prompt, const PronunciationDict& dict) {
  std::map<std::string, double> counts;
  std::set<std::string> missing;
  std::istringstream in{std::string(prompt)};
  for (std::string raw; in >> raw;) {
    const std::string word = normalise_word(raw);
    if (word.empty()) continue;
    const auto it = dict.find(word);
    if (it == dict.end()) {
      missing.insert(word);
      continue;
    }
    const double share = 1.0 / static_cast<double>(it->second.size());
    for (const auto& pron : it->second) {
      for (const auto& phone : pron) counts[phone] += share;
    }
  }
  if (!missing.empty()) {
    std::string msg = "words missing from the pronunciation dictionary:";
    for (const auto& w : missing) msg += " " + w;
    throw ValidationError(msg);
  }
  return counts;
}

std::vector<std::string> phone_inventory(const PronunciationDict& dict) {
  std::set<std::string> phones;
  for (const auto& [word, prons] : dict) {
    for (const auto& pron : prons) phones.insert(pron.begin(), pron.end());
  }
  return {phones.begin(), phones.end()};
}

// --- logistic regression --------------------------------------------------------

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double row_dot(const Matrix<double>& x, std::size_t row, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.cols; ++j) s += x(row, j) * w[j];
  return s;
}

struct Objective {
  const Matrix<double>& x;
  const std::vector<int>& y;
  double l2;

  // Mean log loss (no penalty) of w.
  double log_loss(const std::vector<double>& w) const {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double z = row_dot(x, i, w);
      s += y[i] ? softplus(-z) : softplus(z);
    }
    return s / static_cast<double>(x.rows);
  }

  double value_and_gradient(const std::vector<double>& w, std::vector<double>& g) const {
    const double n = static_cast<double>(x.rows);
    g.assign(w.size(), 0.0);
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double z = row_dot(x, i, w);
      s += y[i] ? softplus(-z) : softplus(z);
      const double r = (sigmoid(z) - static_cast<double>(y[i])) / n;
      for (std::size_t j = 0; j < x.cols; ++j) g[j] += r * x(i, j);
    }
    for (std::size_t j = 0; j < w.size(); ++j) g[j] += l2 * w[j];
    return s / n + 0.5 * l2 * dot(w, w);
  }
};

}  // namespace

LogisticModel fit_logistic(const Matrix<double>& x, const std::vector<int>& y, const LogisticOptions& options,
                           const std::vector<double>* initial) {
  if (x.rows == 0) throw EmptyDataError("logistic regression needs at least one observation");
  if (y.size() != x.rows) throw ShapeError("outcome count does not match the feature rows");
  for (int v : y) {
    if (v != 0 && v != 1) throw ValidationError("outcomes must be 0 or 1");
  }
  if (!(options.l2_strength >= 0.0)) throw ValidationError("l2 strength must be non-negative");
  if (initial && initial->size() != x.cols) throw ShapeError("initial weights do not match the feature count");

  const Objective obj{x, y, options.l2_strength};
  std::vector<double> w = initial ? *initial : std::vector<double>(x.cols, 0.0);
  std::vector<double> g;
  double f = obj.value_and_gradient(w, g);
  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;

  LogisticModel model;
  model.l2_strength = options.l2_strength;
  std::size_t iter = 0;
  double gnorm = std::sqrt(dot(g, g));
  while (gnorm > options.tolerance && iter < options.max_iterations) {
    // Two-loop recursion for the search direction.
    std::vector<double> q = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * dot(s_hist[k], q);
      for (std::size_t j = 0; j < q.size(); ++j) q[j] -= alpha[k] * y_hist[k][j];
    }
    double gamma = 1.0;
    if (!s_hist.empty()) gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
    for (double& v : q) v *= gamma;
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * dot(y_hist[k], q);
      for (std::size_t j = 0; j < q.size(); ++j) q[j] += s_hist[k][j] * (alpha[k] - beta);
    }
    std::vector<double> dir(q.size());
    for (std::size_t j = 0; j < q.size(); ++j) dir[j] = -q[j];
    double slope = dot(g, dir);
    if (!(slope < 0.0)) {
      // Not a descent direction; fall back to steepest descent.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (std::size_t j = 0; j < dir.size(); ++j) dir[j] = -g[j];
      slope = -gnorm * gnorm;
    }

    // Backtracking line search with the Armijo condition.
    double step = (s_hist.empty() && iter == 0) ? std::min(1.0, 1.0 / gnorm) : 1.0;
    std::vector<double> w_new(w.size()), g_new;
    double f_new = f;
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      for (std::size_t j = 0; j < w.size(); ++j) w_new[j] = w[j] + step * dir[j];
      f_new = obj.value_and_gradient(w_new, g_new);
      if (f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    std::vector<double> s(w.size()), yv(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) {
      s[j] = w_new[j] - w[j];
      yv[j] = g_new[j] - g[j];
    }
    const double sy = dot(s, yv);
    if (sy > 1e-12) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(yv));
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > options.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    w = std::move(w_new);
    g = std::move(g_new);
    f = f_new;
    gnorm = std::sqrt(dot(g, g));
    ++iter;
  }

  model.weights = w;
  model.iterations = iter;
  model.gradient_norm = gnorm;
  model.converged = gnorm <= options.tolerance;
  model.log_loss = obj.log_loss(w);
  return model;
}

double logistic_probability(const std::vector<double>& weights, const Matrix<double>& x, std::size_t row) {
  return sigmoid(row_dot(x, row, weights));
}

double log_likelihood(const LogisticModel& model, const Matrix<double>& x, const std::vector<int>& y) {
  if (y.size() != x.rows) throw ShapeError("outcome count does not match the feature rows");
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double z = row_dot(x, i, model.weights);
    s -= y[i] ? softplus(-z) : softplus(z);
  }
  return s;
}

double null_log_likelihood(const std::vector<int>& y) {
  if (y.empty()) throw EmptyDataError("no outcomes");
  double positives = 0.0;
  for (int v : y) positives += v ? 1.0 : 0.0;
  const double n = static_cast<double>(y.size());
  const double p = positives / n;
  double ll = 0.0;
  if (positives > 0.0) ll += positives * std::log(p);
  if (positives < n) ll += (n - positives) * std::log1p(-p);
  return ll;
}

double mcfadden_r2(double model_log_likelihood, double null_log_likelihood) {
  if (model_log_likelihood > 0.0 || null_log_likelihood > 0.0) {
    throw ValidationError("log-likelihoods must not be positive");
  }
  if (null_log_likelihood == 0.0) throw NumericError("pseudo-R2 is undefined when the null log-likelihood is 0");
  return 1.0 - model_log_likelihood / null_log_likelihood;
}

}  // namespace tonguesync::stats
