#include "nextpoi/prompts.hpp"

#include <filesystem>

#include <fmt/format.h>

namespace nextpoi {

// Generated from templates/*.tmpl (see src/CMakeLists.txt).
extern const std::map<std::string, std::string>& builtin_template_sources();

namespace {

constexpr std::string_view kNoCandidates = "(none; any known POI may be chosen)";

std::string trim_newlines(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  while (!s.empty() && s.front() == '\n') s.erase(s.begin());
  return s;
}

std::string substitute(const std::string& text, const SlotMap& slots, std::string_view tag) {
  std::string out;
  out.reserve(text.size() + 256);
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("{{", pos);
    if (open == std::string::npos) {
      out.append(text, pos, std::string::npos);
      break;
    }
    const auto close = text.find("}}", open + 2);
    if (close == std::string::npos) throw ConfigError(fmt::format("unterminated slot in template '{}'", tag));
    out.append(text, pos, open - pos);
    const auto name = text.substr(open + 2, close - open - 2);
    const auto it = slots.find(name);
    if (it == slots.end()) throw ConfigError(fmt::format("template '{}' needs slot '{}'", tag, name));
    out += it->second;
    pos = close + 2;
  }
  return out;
}

std::string weekday_abbrev(int wd) { return std::string(weekday_name(wd).substr(0, 3)); }

std::string local_time_label(std::int64_t local) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{local}};
  const auto day = floor<days>(tp);
  const year_month_day ymd{day};
  const auto sod = local - day.time_since_epoch().count() * 86400;
  return fmt::format("{:04d}-{:02d}-{:02d} {:02d}:{:02d} {}", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), sod / 3600,
                     (sod % 3600) / 60, weekday_abbrev(local_weekday(local)));
}

std::string category_of(const Dataset& dataset, PoiId id) {
  const auto* p = dataset.find_poi(id);
  return (p == nullptr || p->category.empty()) ? std::string("unknown") : p->category;
}

}  // namespace

std::string_view role_tag(Role role) {
  switch (role) {
    case Role::kProfilerLong: return "profiler_long";
    case Role::kProfilerShort: return "profiler_short";
    case Role::kForecasterProfile: return "forecaster_profile";
    case Role::kForecasterPattern: return "forecaster_pattern";
    case Role::kPredictor: return "predictor";
  }
  return "unknown";
}

std::optional<Role> parse_role(std::string_view tag) {
  for (Role r : kAllRoles)
    if (role_tag(r) == tag) return r;
  return std::nullopt;
}

TemplateSet TemplateSet::from_sources(const std::map<std::string, std::string>& sources_by_tag) {
  TemplateSet set;
  std::string all;
  for (Role role : kAllRoles) {
    const auto tag = std::string(role_tag(role));
    const auto it = sources_by_tag.find(tag);
    if (it == sources_by_tag.end()) throw ConfigError("missing prompt template: " + tag);
    const std::string& src = it->second;
    const auto sys = src.find("[system]\n");
    const auto usr = src.find("[user]\n");
    if (sys == std::string::npos || usr == std::string::npos || usr < sys)
      throw ConfigError("template " + tag + " needs [system] and [user] sections");
    Template t;
    t.system = trim_newlines(src.substr(sys + 9, usr - sys - 9));
    t.user = trim_newlines(src.substr(usr + 7));
    set.templates_[role] = std::move(t);
    all += tag;
    all += '\0';
    all += src;
  }
  set.version_ = sha256_hex(all).substr(0, 12);
  return set;
}

const TemplateSet& TemplateSet::builtin() {
  static const TemplateSet set = from_sources(builtin_template_sources());
  return set;
}

TemplateSet TemplateSet::load_dir(const std::string& dir) {
  std::map<std::string, std::string> sources;
  for (Role role : kAllRoles) {
    const auto tag = std::string(role_tag(role));
    sources[tag] = read_text_file((std::filesystem::path(dir) / (tag + ".tmpl")).string());
  }
  return from_sources(sources);
}

const std::string& TemplateSet::system_text(Role role) const { return templates_.at(role).system; }

PromptRecord TemplateSet::render(Role role, const SlotMap& slots) const {
  const auto& t = templates_.at(role);
  PromptRecord p;
  p.role = role;
  p.system = substitute(t.system, slots, role_tag(role));
  p.user = substitute(t.user, slots, role_tag(role));
  std::string digest_input(role_tag(role));
  digest_input += '\0';
  digest_input += p.system;
  digest_input += '\0';
  digest_input += p.user;
  p.context_hash = sha256_hex(digest_input).substr(0, 16);
  return p;
}

std::string render_trajectory(std::span<const CheckIn> trajectory, const Dataset& dataset) {
  if (trajectory.empty()) return "(no check-ins)";
  std::string out;
  for (const auto& c : trajectory) {
    if (!out.empty()) out += '\n';
    out += fmt::format("{} | POI {} | {}", local_time_label(c.local_seconds()), c.poi, category_of(dataset, c.poi));
  }
  return out;
}

std::string render_candidate_lines(std::span<const PoiId> candidates, const Dataset& dataset) {
  if (candidates.empty()) return std::string(kNoCandidates);
  std::string out;
  for (PoiId id : candidates) {
    if (!out.empty()) out += '\n';
    if (const auto* p = dataset.find_poi(id)) {
      out += fmt::format("POI {} | {} | ({:.6f}, {:.6f})", id, category_of(dataset, id), p->lat, p->lon);
    } else {
      out += fmt::format("POI {}", id);
    }
  }
  return out;
}

std::string render_id_list(std::span<const PoiId> ids) {
  if (ids.empty()) return std::string(kNoCandidates);
  std::string out;
  for (PoiId id : ids) {
    if (!out.empty()) out += ", ";
    out += std::to_string(id);
  }
  return out;
}

std::string render_summaries(const SummarySet& summaries) {
  std::string out;
  for (const auto& s : summaries) {
    if (!out.empty()) out += '\n';
    out += s.rendered;
  }
  return out;
}

std::string render_target_section(const PoiRecord& target) {
  return fmt::format(
      "\n### Target POI\nThe user's next check-in is POI {} (category: {}, coordinates ({:.6f}, {:.6f})). "
      "Make sure your answer supports this visit.\n",
      target.id, target.category.empty() ? "unknown" : target.category, target.lat, target.lon);
}

PromptRecord build_profiler_prompt(const TemplateSet& templates, Role role, const ProfilerInputs& in,
                                   const Dataset& dataset) {
  if (role != Role::kProfilerLong && role != Role::kProfilerShort) throw ConfigError("not a profiler role");
  if (in.summaries == nullptr) throw ConfigError("profiler prompt needs summaries");
  return templates.render(role, {{"user_id", std::to_string(in.user)},
                                 {"summaries", render_summaries(*in.summaries)},
                                 {"trajectory", render_trajectory(in.trajectory, dataset)},
                                 {"target_section", in.target ? render_target_section(*in.target) : std::string()}});
}

PromptRecord build_forecaster_prompt(const TemplateSet& templates, Role role, const ForecasterInputs& in,
                                     const Dataset& dataset) {
  if (role != Role::kForecasterProfile && role != Role::kForecasterPattern) throw ConfigError("not a forecaster role");
  return templates.render(role, {{"user_id", std::to_string(in.user)},
                                 {"context", in.context.empty() ? std::string("(not available)") : std::string(in.context)},
                                 {"trajectory", render_trajectory(in.trajectory, dataset)},
                                 {"candidates", render_candidate_lines(in.candidates, dataset)},
                                 {"k", std::to_string(in.k)},
                                 {"target_section", in.target ? render_target_section(*in.target) : std::string()}});
}

PromptRecord build_predictor_prompt(const TemplateSet& templates, const PredictorInputs& in, const Dataset& dataset) {
  return templates.render(Role::kPredictor,
                          {{"user_id", std::to_string(in.user)},
                           {"profile", in.profile.empty() ? std::string("(not available)") : std::string(in.profile)},
                           {"pattern", in.pattern.empty() ? std::string("(not available)") : std::string(in.pattern)},
                           {"profile_candidates", render_id_list(in.profile_candidates)},
                           {"pattern_candidates", render_id_list(in.pattern_candidates)},
                           {"merged_candidates", render_candidate_lines(in.merged_candidates, dataset)},
                           {"trajectory", render_trajectory(in.current, dataset)},
                           {"k", std::to_string(in.k)}});
}

}  // namespace nextpoi
