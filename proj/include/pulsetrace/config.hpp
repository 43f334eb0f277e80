#ifndef PULSETRACE_CONFIG_HPP
#define PULSETRACE_CONFIG_HPP

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "pulsetrace/errors.hpp"

// Plain-text config files: one `key=value` per line, UTF-8, '#' comments.
// Keys name long options of the invoked subcommand; flags given on the
// command line override file values.

namespace pulsetrace {

inline std::vector<std::pair<std::string, std::string>> parse_config_text(
    const std::string& text, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string line = text.substr(
        pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    // strip comment and whitespace
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": expected key=value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": empty key");
    }
    if (key == "config") {
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": 'config' cannot be set from a config file");
    }
    entries.emplace_back(key, value);
  }
  return entries;
}

inline std::vector<std::pair<std::string, std::string>> load_config_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config_text(text, path);
}

}  // namespace pulsetrace

#endif  // PULSETRACE_CONFIG_HPP
