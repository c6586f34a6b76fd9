#include "nextpoi/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <thread>

#include <fmt/format.h>

namespace nextpoi {
namespace {

using nlohmann::json;

constexpr double kBoundTolerance = 0.002;  // published bound vs recomputed, absolute
constexpr double kAlgebraEps = 1e-12;

// Sequential draws from one splitmix64 stream.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : state_(seed) {}
  double next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return unit_interval(splitmix64(state_));
  }

 private:
  std::uint64_t state_;
};

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError(fmt::format("{} = {} is not a probability", name, p));
}

bool top1_hit(const PredictionResult& r) { return !r.ranked.empty() && r.ranked.front() == r.label; }

bool contains(const std::vector<PoiId>& v, PoiId id) { return std::find(v.begin(), v.end(), id) != v.end(); }

const std::vector<PoiId>& stage_set(const PredictionResult& r, CandidateStage s) {
  switch (s) {
    case CandidateStage::kInitial: return r.candidates.initial;
    case CandidateStage::kProfile: return r.candidates.profile_refined;
    case CandidateStage::kPattern: return r.candidates.pattern_refined;
    case CandidateStage::kMerged: return r.candidates.merged;
  }
  return r.candidates.merged;
}

json rate_json(const Rate& r) {
  json j{{"value", r.value ? json(*r.value) : json(nullptr)}};
  if (r.from_counts) {
    j["numerator"] = r.numerator;
    j["denominator"] = r.denominator;
  }
  return j;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string pct(const std::optional<double>& v) { return v ? fmt::format("{:.2f}", *v * 100.0) : std::string("n/a"); }

}  // namespace

Rate Rate::counted(std::size_t numerator, std::size_t denominator) {
  Rate r;
  r.numerator = numerator;
  r.denominator = denominator;
  r.from_counts = true;
  if (denominator > 0) r.value = static_cast<double>(numerator) / static_cast<double>(denominator);
  return r;
}

Rate Rate::given(double value) {
  check_probability(value, "rate");
  Rate r;
  r.value = value;
  return r;
}

std::string_view stage_name(CandidateStage stage) {
  switch (stage) {
    case CandidateStage::kInitial: return "initial";
    case CandidateStage::kProfile: return "profile";
    case CandidateStage::kPattern: return "pattern";
    case CandidateStage::kMerged: return "merged";
  }
  return "unknown";
}

std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::kHolds: return "holds";
    case Verdict::kFails: return "fails";
    case Verdict::kIndeterminate: return "indeterminate";
  }
  return "indeterminate";
}

Rate hit_rate(std::span<const PredictionResult> results, CandidateStage stage) {
  if (results.empty()) throw DomainError("hit rate of an empty result set");
  std::size_t hits = 0;
  for (const auto& r : results) hits += contains(stage_set(r, stage), r.label) ? 1 : 0;
  return Rate::counted(hits, results.size());
}

Posteriors conditional_posteriors(std::span<const PredictionResult> candidate_run,
                                  std::span<const PredictionResult> global_run) {
  if (candidate_run.empty()) throw DomainError("conditional posteriors need a candidate run");
  if (global_run.empty()) throw DomainError("conditional posteriors need a global-search run");
  std::map<UserId, PoiId> labels;
  for (const auto& r : global_run)
    if (!labels.emplace(r.user, r.label).second) throw DataError(fmt::format("duplicate user {} in global run", r.user));
  if (labels.size() != candidate_run.size()) throw DataError("candidate and global runs cover different instances");
  for (const auto& r : candidate_run) {
    const auto it = labels.find(r.user);
    if (it == labels.end() || it->second != r.label)
      throw DataError(fmt::format("user {} differs between candidate and global runs", r.user));
  }

  std::size_t g_hits = 0;
  for (const auto& r : global_run) g_hits += top1_hit(r) ? 1 : 0;
  std::size_t in_n = 0, in_hits = 0, out_n = 0, out_hits = 0;
  for (const auto& r : candidate_run) {
    if (contains(r.candidates.merged, r.label)) {
      ++in_n;
      in_hits += top1_hit(r) ? 1 : 0;
    } else {
      ++out_n;
      out_hits += top1_hit(r) ? 1 : 0;
    }
  }
  return Posteriors{Rate::counted(g_hits, global_run.size()), Rate::counted(in_hits, in_n),
                    Rate::counted(out_hits, out_n)};
}

ErrorDecomposition error_decomposition(double hit, std::optional<double> p_in, std::optional<double> p_out,
                                       double p_global) {
  check_probability(hit, "hit");
  check_probability(p_global, "p_global");
  if (p_in) check_probability(*p_in, "p_in");
  if (p_out) check_probability(*p_out, "p_out");
  if (!p_in && hit > 0.0) throw DomainError("p_in is undefined but carries weight");
  if (!p_out && hit < 1.0) throw DomainError("p_out is undefined but carries weight");
  ErrorDecomposition e;
  e.error_global = 1.0 - p_global;
  e.error_with_candidate = (p_in ? hit * (1.0 - *p_in) : 0.0) + (p_out ? (1.0 - hit) * (1.0 - *p_out) : 0.0);
  return e;
}

double lower_bound(double p_global, double p_in, double p_out) {
  check_probability(p_global, "p_global");
  check_probability(p_in, "p_in");
  check_probability(p_out, "p_out");
  if (p_in == p_out) throw DomainError("lower bound undefined: p_in equals p_out");
  if (p_in < p_out) throw DomainError("p_in < p_out: the inequality flips direction; no lower bound");
  return (p_global - p_out) / (p_in - p_out);
}

InequalityCheck validate_inequality(double hit, std::optional<double> p_global, std::optional<double> p_in,
                                    std::optional<double> p_out) {
  check_probability(hit, "hit");
  InequalityCheck c;
  if (!p_global || !p_in || !p_out) {
    c.diagnostic = "undefined posterior";
    if (p_global) {
      try {
        const auto e = error_decomposition(hit, p_in, p_out, *p_global);
        c.error_global = e.error_global;
        c.error_with_candidate = e.error_with_candidate;
      } catch (const DomainError&) {
      }
    }
    return c;
  }
  const auto e = error_decomposition(hit, p_in, p_out, *p_global);
  c.error_global = e.error_global;
  c.error_with_candidate = e.error_with_candidate;
  try {
    c.lower_bound = lower_bound(*p_global, *p_in, *p_out);
  } catch (const DomainError& err) {
    c.diagnostic = err.what();
    return c;
  }
  c.margin = hit - *c.lower_bound;
  c.verdict = hit > *c.lower_bound ? Verdict::kHolds : Verdict::kFails;
  const bool error_smaller = e.error_with_candidate < e.error_global;
  c.algebra_agrees = std::abs(*c.margin) <= kAlgebraEps || error_smaller == (c.verdict == Verdict::kHolds);
  if (!c.algebra_agrees) c.diagnostic = "bound and error comparison disagree";
  return c;
}

std::string HitRateReport::verdict_line() const {
  const auto& merged = stage(CandidateStage::kMerged).value;
  if (check.verdict == Verdict::kIndeterminate || !merged || !check.lower_bound)
    return fmt::format("{} vs n/a ({})", pct(merged), check.diagnostic.empty() ? "indeterminate" : check.diagnostic);
  return fmt::format("{} {} {}", pct(merged), check.verdict == Verdict::kHolds ? ">" : "<=", pct(check.lower_bound));
}

json HitRateReport::to_json() const {
  json stages_j = json::object();
  for (auto s : kAllStages) stages_j[std::string(stage_name(s))] = rate_json(stage(s));
  json j{{"name", name},
         {"stage_hit_rates", stages_j},
         {"p_global", rate_json(posteriors.global)},
         {"p_in", rate_json(posteriors.in)},
         {"p_out", rate_json(posteriors.out)},
         {"lower_bound", opt_json(check.lower_bound)},
         {"margin", opt_json(check.margin)},
         {"verdict", std::string(verdict_name(check.verdict))},
         {"inequality_holds", check.verdict == Verdict::kHolds},
         {"error_global", opt_json(check.error_global)},
         {"error_with_candidate", opt_json(check.error_with_candidate)},
         {"algebra_agrees", check.algebra_agrees},
         {"diagnostic", check.diagnostic},
         {"verdict_line", verdict_line()}};
  if (published_lower_bound) {
    j["published_lower_bound"] = *published_lower_bound;
    if (check.lower_bound) {
      const double diff = *check.lower_bound - *published_lower_bound;
      j["bound_discrepancy"] = diff;
      j["published_bound_consistent"] = std::abs(diff) <= kBoundTolerance;
    }
  }
  return j;
}

HitRateReport build_report(std::string name, std::span<const PredictionResult> candidate_run,
                           std::span<const PredictionResult> global_run) {
  HitRateReport r;
  r.name = std::move(name);
  for (auto s : kAllStages) r.stages[static_cast<std::size_t>(s)] = hit_rate(candidate_run, s);
  r.posteriors = conditional_posteriors(candidate_run, global_run);
  r.check = validate_inequality(*r.stage(CandidateStage::kMerged).value, r.posteriors.global.value,
                                r.posteriors.in.value, r.posteriors.out.value);
  return r;
}

HitRateReport report_from_rates(std::string name, const std::array<double, 4>& hits, double p_global, double p_in,
                                double p_out, std::optional<double> published_lower_bound) {
  HitRateReport r;
  r.name = std::move(name);
  for (std::size_t i = 0; i < hits.size(); ++i) r.stages[i] = Rate::given(hits[i]);
  r.posteriors = Posteriors{Rate::given(p_global), Rate::given(p_in), Rate::given(p_out)};
  r.check = validate_inequality(hits[3], p_global, p_in, p_out);
  r.published_lower_bound = published_lower_bound;
  return r;
}

std::vector<HitRateReport> reports_from_rates_json(const json& j) {
  std::vector<HitRateReport> out;
  try {
    for (const auto& d : j.at("datasets")) {
      std::optional<double> published;
      if (d.contains("published_lower_bound") && !d.at("published_lower_bound").is_null())
        published = d.at("published_lower_bound").get<double>();
      out.push_back(report_from_rates(d.at("name").get<std::string>(),
                                      {d.at("initial").get<double>(), d.at("profile").get<double>(),
                                       d.at("pattern").get<double>(), d.at("merged").get<double>()},
                                      d.at("p_global").get<double>(), d.at("p_in").get<double>(),
                                      d.at("p_out").get<double>(), published));
    }
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("rates file: {}", e.what()));
  }
  if (out.empty()) throw ConfigError("rates file lists no datasets");
  return out;
}

std::string render_report_table(std::span<const HitRateReport> reports) {
  struct Row {
    std::string label;
    std::vector<std::string> cells;
  };
  std::vector<Row> rows;
  auto add = [&](std::string label, auto cell) {
    Row row{std::move(label), {}};
    for (const auto& r : reports) row.cells.push_back(cell(r));
    rows.push_back(std::move(row));
  };
  add("Initial candidate set hit rate", [](const HitRateReport& r) { return pct(r.stage(CandidateStage::kInitial).value); });
  add("Profile-based candidate set hit rate",
      [](const HitRateReport& r) { return pct(r.stage(CandidateStage::kProfile).value); });
  add("Pattern-based candidate set hit rate",
      [](const HitRateReport& r) { return pct(r.stage(CandidateStage::kPattern).value); });
  add("Merged candidate set hit rate P(p* in C)",
      [](const HitRateReport& r) { return pct(r.stage(CandidateStage::kMerged).value); });
  add("Global posterior P(p* | Tc)", [](const HitRateReport& r) { return pct(r.posteriors.global.value); });
  add("Candidate posterior P(p* | Tc, p* in C)", [](const HitRateReport& r) { return pct(r.posteriors.in.value); });
  add("Non-candidate posterior P(p* | Tc, p* not in C)",
      [](const HitRateReport& r) { return pct(r.posteriors.out.value); });
  add("Lower bound (recomputed)", [](const HitRateReport& r) { return pct(r.check.lower_bound); });
  bool any_published = false;
  for (const auto& r : reports) any_published = any_published || r.published_lower_bound.has_value();
  if (any_published) {
    add("Lower bound (published)", [](const HitRateReport& r) { return pct(r.published_lower_bound); });
    add("Published bound consistent", [](const HitRateReport& r) -> std::string {
      if (!r.published_lower_bound || !r.check.lower_bound) return "n/a";
      const double diff = *r.check.lower_bound - *r.published_lower_bound;
      return std::abs(diff) <= kBoundTolerance ? "yes" : fmt::format("NO ({:+.2f})", diff * 100.0);
    });
  }
  add("Validation of inequality", [](const HitRateReport& r) { return r.verdict_line(); });

  std::size_t label_w = std::string_view("Metric/Stage").size();
  for (const auto& row : rows) label_w = std::max(label_w, row.label.size());
  std::vector<std::size_t> widths;
  for (std::size_t c = 0; c < reports.size(); ++c) {
    std::size_t w = reports[c].name.size() + 4;
    for (const auto& row : rows) w = std::max(w, row.cells[c].size());
    widths.push_back(w);
  }
  std::string out = fmt::format("{:<{}}", "Metric/Stage", label_w);
  for (std::size_t c = 0; c < reports.size(); ++c) out += fmt::format("  {:>{}}", reports[c].name + " (%)", widths[c]);
  out += '\n';
  for (const auto& row : rows) {
    out += fmt::format("{:<{}}", row.label, label_w);
    for (std::size_t c = 0; c < row.cells.size(); ++c) out += fmt::format("  {:>{}}", row.cells[c], widths[c]);
    out += '\n';
  }
  return out;
}

void SimConfig::validate() const {
  check_probability(hit, "hit");
  check_probability(p_in, "p_in");
  check_probability(p_out, "p_out");
  check_probability(p_global, "p_global");
}

SimResult simulate_candidate_error(const SimConfig& config, std::size_t trials, std::uint64_t seed) {
  config.validate();
  if (trials == 0) throw DomainError("trials must be >= 1");
  Stream global_stream(derive_seed(seed, 1));
  Stream candidate_stream(derive_seed(seed, 2));
  std::size_t err_global = 0;
  std::size_t err_candidate = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    err_global += global_stream.next() < config.p_global ? 0 : 1;
    const bool in = candidate_stream.next() < config.hit;
    err_candidate += candidate_stream.next() < (in ? config.p_in : config.p_out) ? 0 : 1;
  }
  SimResult r;
  r.config = config;
  r.trials = trials;
  const double n = static_cast<double>(trials);
  r.empirical.error_global = static_cast<double>(err_global) / n;
  r.empirical.error_with_candidate = static_cast<double>(err_candidate) / n;
  r.stderr_global = std::sqrt(r.empirical.error_global * (1.0 - r.empirical.error_global) / n);
  r.stderr_with_candidate = std::sqrt(r.empirical.error_with_candidate * (1.0 - r.empirical.error_with_candidate) / n);
  r.theoretical = error_decomposition(config.hit, config.p_in, config.p_out, config.p_global);
  if (config.p_in > config.p_out) r.lower_bound = lower_bound(config.p_global, config.p_in, config.p_out);
  return r;
}

std::vector<SimResult> simulate_many(std::span<const SimConfig> configs, std::size_t trials, std::uint64_t seed,
                                     std::size_t threads) {
  for (const auto& c : configs) c.validate();
  std::vector<SimResult> out(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < configs.size(); i = next.fetch_add(1))
      out[i] = simulate_candidate_error(configs[i], trials, derive_seed(seed, 0x51D, i));
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, configs.size()));
  std::vector<std::jthread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  return out;
}

std::vector<SimConfig> random_sim_configs(std::size_t n, std::uint64_t seed) {
  Stream s(derive_seed(seed, 0xC0F));
  std::vector<SimConfig> out;
  out.reserve(n);
  while (out.size() < n) {
    SimConfig c;
    c.hit = s.next();
    c.p_in = s.next();
    c.p_out = s.next();
    c.p_global = s.next();
    if (c.p_in <= c.p_out) std::swap(c.p_in, c.p_out);
    if (c.p_in == c.p_out) continue;
    out.push_back(c);
  }
  return out;
}

std::string simulation_csv(std::span<const SimResult> results) {
  std::string out =
      "config,hit,p_in,p_out,p_global,trials,lower_bound,theoretical_error_global,theoretical_error_with_candidate,"
      "empirical_error_global,empirical_error_with_candidate,stderr_global,stderr_with_candidate\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    out += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{},{},{:.8f},{:.8f},{:.8f},{:.8f},{:.8f},{:.8f}\n", i,
                       r.config.hit, r.config.p_in, r.config.p_out, r.config.p_global, r.trials,
                       r.lower_bound ? fmt::format("{:.8f}", *r.lower_bound) : std::string(),
                       r.theoretical.error_global, r.theoretical.error_with_candidate, r.empirical.error_global,
                       r.empirical.error_with_candidate, r.stderr_global, r.stderr_with_candidate);
  }
  return out;
}

}  // namespace nextpoi
