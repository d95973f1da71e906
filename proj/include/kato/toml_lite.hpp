#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace kato::toml {

/// Carries the 1-based line of the offending input.
class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] int line() const { return line_; }

 private:
  int line_;
};

/// Parses the TOML subset used by scenario files into a JSON object:
/// [table] and [a.b] headers, bare, quoted and dotted keys, basic and literal
/// strings, integers (with _ separators, hex/oct/bin), floats (inf, nan),
/// booleans, arrays (multi-line, trailing comma) and inline tables.
/// Redefining a key is an error. Dates and arrays of tables are rejected.
[[nodiscard]] nlohmann::json parse(std::string_view text);
[[nodiscard]] nlohmann::json parse_file(const std::string& path);

/// Parses a single value, as it would appear on the right of `key =`.
[[nodiscard]] nlohmann::json parse_value(std::string_view text);

}  // namespace kato::toml
