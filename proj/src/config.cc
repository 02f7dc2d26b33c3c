#include "falcon/config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace falcon {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& text) {
  T out{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument("expected a number, got '" + text + "'");
  }
  return out;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "on" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "off" || text == "no") return false;
  throw std::invalid_argument("expected true or false, got '" + text + "'");
}

SigmaRule parse_sigma_rule(const std::string& text) {
  if (text == "posterior") return SigmaRule::kPosterior;
  if (text == "beta") return SigmaRule::kBeta;
  throw std::invalid_argument("expected posterior or beta, got '" + text + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto integer = [&t](const std::string& key, auto member) {
      t[key] = [member](RunConfig& c, const std::string& v) {
        member(c) = parse_number<int>(v);
      };
    };
    auto real = [&t](const std::string& key, auto member) {
      t[key] = [member](RunConfig& c, const std::string& v) {
        member(c) = parse_number<double>(v);
      };
    };

    integer("env.T_o", [](RunConfig& c) -> int& { return c.env.obs_horizon; });
    integer("env.T_a", [](RunConfig& c) -> int& { return c.env.exec_horizon; });
    integer("env.T_p", [](RunConfig& c) -> int& { return c.env.pred_horizon; });
    integer("env.episode_length", [](RunConfig& c) -> int& { return c.env.episode_length; });
    real("env.success_radius", [](RunConfig& c) -> double& { return c.env.success_radius; });
    real("env.component_std", [](RunConfig& c) -> double& { return c.env.component_std; });
    real("env.obs_scale", [](RunConfig& c) -> double& { return c.env.obs_scale; });
    real("env.start_box", [](RunConfig& c) -> double& { return c.env.start_box; });
    real("env.track_speed", [](RunConfig& c) -> double& { return c.env.track_speed; });
    real("env.track_amplitude", [](RunConfig& c) -> double& { return c.env.track_amplitude; });
    real("env.track_period", [](RunConfig& c) -> double& { return c.env.track_period; });
    real("env.goal_distance", [](RunConfig& c) -> double& { return c.env.goal_distance; });
    real("env.push_speed", [](RunConfig& c) -> double& { return c.env.push_speed; });
    real("env.commit_distance", [](RunConfig& c) -> double& { return c.env.commit_distance; });
    real("env.arena", [](RunConfig& c) -> double& { return c.env.arena; });
    real("env.jump_speed", [](RunConfig& c) -> double& { return c.env.jump_speed; });
    real("env.switch_rate", [](RunConfig& c) -> double& { return c.env.switch_rate; });
    real("env.min_jump", [](RunConfig& c) -> double& { return c.env.min_jump; });

    t["sampler.backend"] = [](RunConfig& c, const std::string& v) {
      c.backend = parse_sampler_kind(v);
    };
    integer("sampler.steps", [](RunConfig& c) -> int& { return c.steps; });
    t["schedule.kind"] = [](RunConfig& c, const std::string& v) {
      c.schedule = parse_schedule_kind(v);
    };
    integer("schedule.K", [](RunConfig& c) -> int& { return c.levels; });
    t["schedule.sigma"] = [](RunConfig& c, const std::string& v) {
      c.sigma = parse_sigma_rule(v);
    };

    t["falcon.enabled"] = [](RunConfig& c, const std::string& v) {
      c.falcon_enabled = parse_bool(v);
    };
    real("falcon.epsilon", [](RunConfig& c) -> double& { return c.falcon.epsilon; });
    real("falcon.delta", [](RunConfig& c) -> double& { return c.falcon.delta; });
    real("falcon.kappa", [](RunConfig& c) -> double& { return c.falcon.kappa; });
    integer("falcon.k_min", [](RunConfig& c) -> int& { return c.falcon.k_min; });
    t["falcon.capacity"] = [](RunConfig& c, const std::string& v) {
      const int n = parse_number<int>(v);
      if (n < 1) throw std::invalid_argument("must be >= 1");
      c.falcon.capacity = static_cast<std::size_t>(n);
    };
    t["falcon.distance"] = [](RunConfig& c, const std::string& v) {
      c.falcon.distance = parse_distance_norm(v);
    };
    t["falcon.alignment"] = [](RunConfig& c, const std::string& v) {
      c.falcon.alignment = parse_alignment(v);
    };
    t["falcon.selection"] = [](RunConfig& c, const std::string& v) {
      c.falcon.selection = parse_selection_mode(v);
    };
    integer("falcon.fixed_level", [](RunConfig& c) -> int& { return c.falcon.fixed_level; });

    integer("run.episodes", [](RunConfig& c) -> int& { return c.episodes; });
    t["run.seed"] = [](RunConfig& c, const std::string& v) {
      c.seed = parse_number<std::uint64_t>(v);
    };
    t["run.out_dir"] = [](RunConfig& c, const std::string& v) { c.out_dir = v; };
    return t;
  }();
  return table;
}

}  // namespace

ConfigEntries parse_config_text(std::string_view text, const std::string& source) {
  ConfigEntries entries;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(where + ": expected 'key = value', got '" + std::string(line) + "'");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(where + ": missing key before '='");
    if (auto it = entries.find(key); it != entries.end()) {
      throw ConfigError(where + ": duplicate key '" + key + "' (first set at " +
                        it->second.origin + ")");
    }
    entries[key] = {value, where};
  }
  return entries;
}

void apply_override(ConfigEntries& entries, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("--set: expected KEY=VALUE, got '" + std::string(assignment) + "'");
  }
  const std::string key(trim(assignment.substr(0, eq)));
  if (key.empty()) throw ConfigError("--set: missing key in '" + std::string(assignment) + "'");
  entries[key] = {std::string(trim(assignment.substr(eq + 1))), "--set"};
}

RunConfig build_config(const ConfigEntries& entries) {
  const auto name = entries.find("env.name");
  if (name == entries.end()) throw ConfigError("missing required key 'env.name'");
  RunConfig config;
  try {
    config.env = default_env_spec(parse_env_kind(name->second.value));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(name->second.origin + ": key 'env.name': " + e.what());
  }
  const auto& table = setters();
  for (const auto& [key, entry] : entries) {
    if (key == "env.name") continue;
    const auto it = table.find(key);
    if (it == table.end()) {
      throw ConfigError(entry.origin + ": unknown key '" + key + "'");
    }
    try {
      it->second(config, entry.value);
    } catch (const std::exception& e) {
      throw ConfigError(entry.origin + ": key '" + key + "': " + e.what());
    }
  }
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  ConfigEntries entries = parse_config_text(text.str(), path.string());
  for (const auto& o : overrides) apply_override(entries, o);
  return build_config(entries);
}

std::vector<std::string> known_config_keys() {
  std::vector<std::string> keys{"env.name"};
  for (const auto& [key, setter] : setters()) keys.push_back(key);
  return keys;
}

}  // namespace falcon
