#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nextpoi/agents.hpp"

namespace nextpoi {

/// A proportion with the counts behind it. Rates given directly (e.g. copied
/// from a published table) carry no counts.
struct Rate {
  std::optional<double> value;  // nullopt when the denominator is zero
  std::size_t numerator = 0;
  std::size_t denominator = 0;
  bool from_counts = false;

  static Rate counted(std::size_t numerator, std::size_t denominator);
  static Rate given(double value);
  bool defined() const { return value.has_value(); }
};

enum class CandidateStage { kInitial, kProfile, kPattern, kMerged };
inline constexpr std::array<CandidateStage, 4> kAllStages = {CandidateStage::kInitial, CandidateStage::kProfile,
                                                             CandidateStage::kPattern, CandidateStage::kMerged};
std::string_view stage_name(CandidateStage stage);

/// Fraction of instances whose label is in the stage's candidate set.
Rate hit_rate(std::span<const PredictionResult> results, CandidateStage stage);

struct Posteriors {
  Rate global;  // top-1 accuracy of the global-search run
  Rate in;      // top-1 accuracy of the candidate run where label is in merged
  Rate out;     // top-1 accuracy of the candidate run where label is not in merged
};

/// The two runs must cover the same (user, label) instances.
Posteriors conditional_posteriors(std::span<const PredictionResult> candidate_run,
                                  std::span<const PredictionResult> global_run);

struct ErrorDecomposition {
  double error_global = 0.0;
  double error_with_candidate = 0.0;
};

/// error_with_candidate = hit (1 - p_in) + (1 - hit)(1 - p_out); error_global = 1 - p_global.
/// An undefined posterior is allowed only when its weight is zero.
ErrorDecomposition error_decomposition(double hit, std::optional<double> p_in, std::optional<double> p_out,
                                       double p_global);

/// (p_global - p_out) / (p_in - p_out). Requires p_in > p_out.
double lower_bound(double p_global, double p_in, double p_out);

enum class Verdict { kHolds, kFails, kIndeterminate };
std::string_view verdict_name(Verdict v);

struct InequalityCheck {
  Verdict verdict = Verdict::kIndeterminate;
  std::optional<double> lower_bound;
  std::optional<double> margin;  // hit - lower_bound
  std::optional<double> error_global;
  std::optional<double> error_with_candidate;
  bool algebra_agrees = true;  // hit > bound  <=>  error_with_candidate < error_global
  std::string diagnostic;
};

InequalityCheck validate_inequality(double hit, std::optional<double> p_global, std::optional<double> p_in,
                                    std::optional<double> p_out);

struct HitRateReport {
  std::string name;
  std::array<Rate, 4> stages;  // indexed by CandidateStage
  Posteriors posteriors;
  InequalityCheck check;
  std::optional<double> published_lower_bound;

  const Rate& stage(CandidateStage s) const { return stages[static_cast<std::size_t>(s)]; }
  /// "62.15 > 28.31" (or "<=" when the inequality fails, "n/a" when indeterminate).
  std::string verdict_line() const;
  nlohmann::json to_json() const;
};

HitRateReport build_report(std::string name, std::span<const PredictionResult> candidate_run,
                           std::span<const PredictionResult> global_run);

/// Report from bare rates. `hits` is indexed by CandidateStage.
HitRateReport report_from_rates(std::string name, const std::array<double, 4>& hits, double p_global, double p_in,
                                double p_out, std::optional<double> published_lower_bound = std::nullopt);

/// Reads {"datasets":[{"name", "initial", "profile", "pattern", "merged", "p_global", "p_in", "p_out",
/// "published_lower_bound"?}]} with rates in [0, 1].
std::vector<HitRateReport> reports_from_rates_json(const nlohmann::json& j);

/// One column per report, rows shaped like the hit-rate/posterior/validation table.
std::string render_report_table(std::span<const HitRateReport> reports);

struct SimConfig {
  double hit = 0.0;
  double p_in = 0.0;
  double p_out = 0.0;
  double p_global = 0.0;

  void validate() const;
};

struct SimResult {
  SimConfig config;
  std::size_t trials = 0;
  ErrorDecomposition theoretical;
  ErrorDecomposition empirical;
  double stderr_global = 0.0;
  double stderr_with_candidate = 0.0;
  std::optional<double> lower_bound;
};

/// Bernoulli simulation of global-search and candidate-based prediction errors.
SimResult simulate_candidate_error(const SimConfig& config, std::size_t trials, std::uint64_t seed);

/// One independent stream per config (derived from `seed` and the config index).
std::vector<SimResult> simulate_many(std::span<const SimConfig> configs, std::size_t trials, std::uint64_t seed,
                                     std::size_t threads = 1);

/// Configs drawn uniformly with p_in > p_out.
std::vector<SimConfig> random_sim_configs(std::size_t n, std::uint64_t seed);

std::string simulation_csv(std::span<const SimResult> results);

}  // namespace nextpoi
