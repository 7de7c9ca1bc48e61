#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dslu {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat typed key/value configuration. Precedence: declared defaults < file <
// explicit overrides. Every key must be declared before it is set.
//
//   # comment
//   key = value
class RunConfig {
 public:
  enum class Type { kInt, kDouble, kBool, kString };

  struct Entry {
    Type type = Type::kString;
    std::string value;
    std::string help;
    std::string source = "default";
  };

  void declare(const std::string& key, Type type, const std::string& default_value,
               const std::string& help);
  bool declared(const std::string& key) const { return entries_.count(key) != 0; }

  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin);
  void set(const std::string& key, const std::string& value, const std::string& source = "flag");

  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;
  const std::map<std::string, Entry>& entries() const { return entries_; }

  // Loadable "key = value" text of every key, sorted.
  std::string resolved_text() const;

 private:
  const Entry& entry(const std::string& key, Type type) const;
  std::map<std::string, Entry> entries_;
};

const char* type_name(RunConfig::Type t);

}  // namespace dslu
