#include "kato/toml_lite.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

namespace kato::toml {

namespace {

using json = nlohmann::json;

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  json document() {
    json root = json::object();
    json* table = &root;
    for (;;) {
      skip_blank_lines();
      if (done()) break;
      if (peek() == '[') {
        if (peek(1) == '[') fail("arrays of tables are not supported");
        ++pos_;
        skip_ws();
        const std::vector<std::string> path = key_path();
        skip_ws();
        expect(']');
        table = &open_table(root, path, true);
      } else {
        const std::vector<std::string> path = key_path();
        skip_ws();
        expect('=');
        skip_ws();
        assign(*table, path, value());
      }
      end_of_line();
    }
    return root;
  }

  json lone_value() {
    skip_ws();
    json v = value();
    skip_ws();
    if (!done()) fail("trailing characters after value");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(line_, what); }
  [[nodiscard]] bool done() const { return pos_ >= s_.size(); }
  [[nodiscard]] char peek(std::size_t ahead = 0) const {
    return pos_ + ahead < s_.size() ? s_[pos_ + ahead] : '\0';
  }
  char get() {
    if (done()) fail("unexpected end of input");
    const char c = s_[pos_++];
    if (c == '\n') ++line_;
    return c;
  }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    get();
  }
  void skip_ws() {
    while (peek() == ' ' || peek() == '\t') ++pos_;
  }
  void skip_comment() {
    if (peek() == '#')
      while (!done() && peek() != '\n') ++pos_;
  }
  void skip_blank_lines() {
    for (;;) {
      skip_ws();
      skip_comment();
      if (peek() == '\r') ++pos_;
      if (peek() != '\n') return;
      get();
    }
  }
  /// Whitespace, comments and newlines inside arrays and inline tables.
  void skip_layout() {
    for (;;) {
      skip_ws();
      skip_comment();
      if (peek() == '\r' || peek() == '\n') {
        get();
        continue;
      }
      return;
    }
  }
  void end_of_line() {
    skip_ws();
    skip_comment();
    if (peek() == '\r') ++pos_;
    if (done()) return;
    if (peek() != '\n') fail("expected end of line");
    get();
  }

  static bool bare_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '-';
  }

  std::string key_part() {
    if (peek() == '"') return basic_string();
    if (peek() == '\'') return literal_string();
    std::string k;
    while (bare_char(peek())) k += get();
    if (k.empty()) fail("expected a key");
    return k;
  }

  std::vector<std::string> key_path() {
    std::vector<std::string> path{key_part()};
    for (;;) {
      skip_ws();
      if (peek() != '.') return path;
      ++pos_;
      skip_ws();
      path.push_back(key_part());
    }
  }

  json& open_table(json& root, const std::vector<std::string>& path, bool header) {
    json* t = &root;
    for (std::size_t i = 0; i < path.size(); ++i) {
      json& child = (*t)[path[i]];
      if (child.is_null()) {
        child = json::object();
      } else if (!child.is_object()) {
        fail("key '" + path[i] + "' is not a table");
      } else if (header && i + 1 == path.size()) {
        for (const auto& d : defined_)
          if (d == &child) fail("table '" + path[i] + "' defined twice");
      }
      t = &child;
    }
    if (header) defined_.push_back(t);
    return *t;
  }

  void assign(json& table, const std::vector<std::string>& path, json v) {
    json& parent = open_table(table, {path.begin(), path.end() - 1}, false);
    if (parent.contains(path.back())) fail("key '" + path.back() + "' defined twice");
    parent[path.back()] = std::move(v);
  }

  json value() {
    const char c = peek();
    if (c == '"') return basic_string();
    if (c == '\'') return literal_string();
    if (c == '[') return array();
    if (c == '{') return inline_table();
    if (s_.substr(pos_, 4) == "true" && !bare_char(peek(4))) {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "false" && !bare_char(peek(5))) {
      pos_ += 5;
      return false;
    }
    return number();
  }

  std::string basic_string() {
    expect('"');
    if (peek() == '"' && peek(1) == '"') fail("multi-line strings are not supported");
    std::string out;
    for (;;) {
      const char c = get();
      if (c == '"') return out;
      if (c == '\n') fail("newline in string");
      if (c != '\\') {
        out += c;
        continue;
      }
      const char e = get();
      switch (e) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case 'b': out += '\b'; break;
        case 'f': out += '\f'; break;
        case 'u':
        case 'U': {
          const int digits = e == 'u' ? 4 : 8;
          unsigned long cp = 0;
          for (int i = 0; i < digits; ++i) {
            const char h = get();
            cp <<= 4;
            if (h >= '0' && h <= '9') cp |= unsigned(h - '0');
            else if (h >= 'a' && h <= 'f') cp |= unsigned(h - 'a' + 10);
            else if (h >= 'A' && h <= 'F') cp |= unsigned(h - 'A' + 10);
            else fail("bad unicode escape");
          }
          append_utf8(out, cp);
          break;
        }
        default: fail(std::string("unknown escape \\") + e);
      }
    }
  }

  static void append_utf8(std::string& out, unsigned long cp) {
    if (cp < 0x80) {
      out += char(cp);
    } else if (cp < 0x800) {
      out += char(0xC0 | (cp >> 6));
      out += char(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      out += char(0xE0 | (cp >> 12));
      out += char(0x80 | ((cp >> 6) & 0x3F));
      out += char(0x80 | (cp & 0x3F));
    } else {
      out += char(0xF0 | (cp >> 18));
      out += char(0x80 | ((cp >> 12) & 0x3F));
      out += char(0x80 | ((cp >> 6) & 0x3F));
      out += char(0x80 | (cp & 0x3F));
    }
  }

  std::string literal_string() {
    expect('\'');
    if (peek() == '\'' && peek(1) == '\'') fail("multi-line strings are not supported");
    std::string out;
    for (;;) {
      const char c = get();
      if (c == '\'') return out;
      if (c == '\n') fail("newline in string");
      out += c;
    }
  }

  json array() {
    expect('[');
    json out = json::array();
    for (;;) {
      skip_layout();
      if (peek() == ']') break;
      out.push_back(value());
      skip_layout();
      if (peek() == ',') {
        get();
        continue;
      }
      if (peek() != ']') fail("expected ',' or ']' in array");
    }
    get();
    return out;
  }

  json inline_table() {
    expect('{');
    json out = json::object();
    skip_ws();
    if (peek() == '}') {
      get();
      return out;
    }
    for (;;) {
      skip_ws();
      const std::vector<std::string> path = key_path();
      skip_ws();
      expect('=');
      skip_ws();
      assign(out, path, value());
      skip_ws();
      if (peek() == ',') {
        get();
        continue;
      }
      expect('}');
      return out;
    }
  }

  json number() {
    std::string tok;
    while (bare_char(peek()) || peek() == '+' || peek() == '.') tok += get();
    if (tok.empty()) fail("expected a value");
    std::string body = tok;
    bool negative = false;
    if (body[0] == '+' || body[0] == '-') {
      negative = body[0] == '-';
      body.erase(0, 1);
    }
    if (body == "inf") return negative ? -std::numeric_limits<double>::infinity()
                                       : std::numeric_limits<double>::infinity();
    if (body == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (body.find(':') != std::string::npos ||
        (body.size() >= 10 && body[4] == '-' && body[7] == '-'))
      fail("dates are not supported");
    // Underscores must sit between digits.
    std::string digits;
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (body[i] != '_') {
        digits += body[i];
        continue;
      }
      if (i == 0 || i + 1 == body.size() || !std::isalnum(static_cast<unsigned char>(body[i - 1])) ||
          !std::isalnum(static_cast<unsigned char>(body[i + 1])))
        fail("misplaced '_' in number '" + tok + "'");
    }
    int base = 10;
    if (digits.size() > 2 && digits[0] == '0' &&
        (digits[1] == 'x' || digits[1] == 'o' || digits[1] == 'b')) {
      if (negative || tok[0] == '+') fail("sign on prefixed integer");
      base = digits[1] == 'x' ? 16 : digits[1] == 'o' ? 8 : 2;
      digits.erase(0, 2);
    }
    const bool is_float = base == 10 && digits.find_first_of(".eE") != std::string::npos;
    if (base == 10 && digits.size() > 1 && digits[0] == '0' && digits[1] != '.' &&
        digits[1] != 'e' && digits[1] != 'E')
      fail("leading zero in number '" + tok + "'");
    std::size_t used = 0;
    try {
      if (is_float) {
        if (digits.front() == '.' || digits.back() == '.' ||
            digits.find(".e") != std::string::npos || digits.find(".E") != std::string::npos)
          fail("malformed float '" + tok + "'");
        const double v = std::stod(digits, &used);
        if (used != digits.size()) fail("malformed float '" + tok + "'");
        return negative ? -v : v;
      }
      const long long v = std::stoll(digits, &used, base);
      if (used != digits.size()) fail("malformed integer '" + tok + "'");
      return negative ? -v : v;
    } catch (const std::invalid_argument&) {
      fail("malformed value '" + tok + "'");
    } catch (const std::out_of_range&) {
      fail("number out of range '" + tok + "'");
    }
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  int line_ = 1;
  std::vector<const json*> defined_;
};

}  // namespace

nlohmann::json parse(std::string_view text) { return Parser(text).document(); }

nlohmann::json parse_value(std::string_view text) { return Parser(text).lone_value(); }

nlohmann::json parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

}  // namespace kato::toml
