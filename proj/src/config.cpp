#include "dslu/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace dslu {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return out = true, true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return out = false, true;
  return false;
}

void check_value(const std::string& key, RunConfig::Type type, const std::string& v) {
  bool ok = true;
  switch (type) {
    case RunConfig::Type::kInt: {
      long long x;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
      ok = ec == std::errc() && p == v.data() + v.size();
      break;
    }
    case RunConfig::Type::kDouble: {
      std::size_t used = 0;
      try {
        std::stod(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      ok = !v.empty() && used == v.size();
      break;
    }
    case RunConfig::Type::kBool: {
      bool b;
      ok = parse_bool(v, b);
      break;
    }
    case RunConfig::Type::kString:
      break;
  }
  if (!ok)
    throw ConfigError("config key '" + key + "' expects " + type_name(type) + ", got '" + v +
                      "'");
}

}  // namespace

const char* type_name(RunConfig::Type t) {
  switch (t) {
    case RunConfig::Type::kInt: return "int";
    case RunConfig::Type::kDouble: return "double";
    case RunConfig::Type::kBool: return "bool";
    case RunConfig::Type::kString: return "string";
  }
  return "?";
}

void RunConfig::declare(const std::string& key, Type type, const std::string& default_value,
                        const std::string& help) {
  check_value(key, type, default_value);
  entries_[key] = {type, default_value, help, "default"};
}

void RunConfig::set(const std::string& key, const std::string& value, const std::string& source) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  check_value(key, it->second.type, value);
  it->second.value = value;
  it->second.source = source;
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path.string());
}

const RunConfig::Entry& RunConfig::entry(const std::string& key, Type type) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("config key '" + key + "' is not declared");
  if (it->second.type != type)
    throw ConfigError("config key '" + key + "' is " + type_name(it->second.type) + ", read as " +
                      type_name(type));
  return it->second;
}

long long RunConfig::get_int(const std::string& key) const {
  return std::stoll(entry(key, Type::kInt).value);
}
double RunConfig::get_double(const std::string& key) const {
  return std::stod(entry(key, Type::kDouble).value);
}
bool RunConfig::get_bool(const std::string& key) const {
  bool b = false;
  parse_bool(entry(key, Type::kBool).value, b);
  return b;
}
const std::string& RunConfig::get_string(const std::string& key) const {
  return entry(key, Type::kString).value;
}

std::string RunConfig::resolved_text() const {
  std::ostringstream s;
  for (const auto& [k, e] : entries_) s << k << " = " << e.value << '\n';
  return s.str();
}

}  // namespace dslu
