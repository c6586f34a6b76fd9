#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "nextpoi/dataset.hpp"
#include "nextpoi/stat_tools.hpp"

namespace nextpoi {

enum class Role { kProfilerLong, kProfilerShort, kForecasterProfile, kForecasterPattern, kPredictor };

inline constexpr std::array<Role, 5> kAllRoles = {Role::kProfilerLong, Role::kProfilerShort, Role::kForecasterProfile,
                                                  Role::kForecasterPattern, Role::kPredictor};

std::string_view role_tag(Role role);
std::optional<Role> parse_role(std::string_view tag);

struct PromptRecord {
  Role role = Role::kPredictor;
  std::string system;
  std::string user;
  std::string context_hash;  // first 16 hex chars of sha256(role, system, user)
};

using SlotMap = std::map<std::string, std::string>;

/// Five role templates with "{{slot}}" placeholders. The built-in set is
/// compiled from templates/*.tmpl; a directory with the same file names can
/// override it at runtime.
class TemplateSet {
 public:
  static const TemplateSet& builtin();
  static TemplateSet load_dir(const std::string& dir);
  static TemplateSet from_sources(const std::map<std::string, std::string>& sources_by_tag);

  PromptRecord render(Role role, const SlotMap& slots) const;
  const std::string& system_text(Role role) const;
  /// Digest over every template source; recorded in run manifests.
  const std::string& version() const { return version_; }

 private:
  struct Template {
    std::string system;
    std::string user;
  };
  std::map<Role, Template> templates_;
  std::string version_;
};

std::string render_trajectory(std::span<const CheckIn> trajectory, const Dataset& dataset);
std::string render_candidate_lines(std::span<const PoiId> candidates, const Dataset& dataset);
std::string render_id_list(std::span<const PoiId> ids);
std::string render_summaries(const SummarySet& summaries);

/// Label-aware section used by reverse sample construction.
std::string render_target_section(const PoiRecord& target);

struct ProfilerInputs {
  UserId user = 0;
  const SummarySet* summaries = nullptr;
  std::span<const CheckIn> trajectory;
  const PoiRecord* target = nullptr;  // set only for reverse construction
};

struct ForecasterInputs {
  UserId user = 0;
  std::string_view context;
  std::span<const CheckIn> trajectory;
  std::span<const PoiId> candidates;
  std::size_t k = 25;
  const PoiRecord* target = nullptr;
};

struct PredictorInputs {
  UserId user = 0;
  std::string_view profile;
  std::string_view pattern;
  std::span<const PoiId> profile_candidates;
  std::span<const PoiId> pattern_candidates;
  std::span<const PoiId> merged_candidates;
  std::span<const CheckIn> current;
  std::size_t k = 10;
};

PromptRecord build_profiler_prompt(const TemplateSet& templates, Role role, const ProfilerInputs& in,
                                   const Dataset& dataset);
PromptRecord build_forecaster_prompt(const TemplateSet& templates, Role role, const ForecasterInputs& in,
                                     const Dataset& dataset);
PromptRecord build_predictor_prompt(const TemplateSet& templates, const PredictorInputs& in, const Dataset& dataset);

}  // namespace nextpoi
