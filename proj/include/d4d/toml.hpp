#pragma once

// Reader for the TOML subset the config files use: [table] headers,
// key = value pairs, basic and literal strings, integers, floats, booleans,
// and (possibly multi-line) arrays of those. Inline tables, arrays of tables,
// dates and multi-line strings are rejected with a ConfigError.

#include "d4d/core.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace d4d::toml {

struct Value;
using Array = std::vector<Value>;

struct Value {
  std::variant<bool, std::int64_t, double, std::string, Array> data;

  bool is_bool() const { return std::holds_alternative<bool>(data); }
  bool is_int() const { return std::holds_alternative<std::int64_t>(data); }
  bool is_float() const { return std::holds_alternative<double>(data); }
  bool is_number() const { return is_int() || is_float(); }
  bool is_string() const { return std::holds_alternative<std::string>(data); }
  bool is_array() const { return std::holds_alternative<Array>(data); }
};

// Flat document: dotted key path -> value, e.g. "dynamic.lambda_tv".
using Document = std::map<std::string, Value>;

namespace detail {

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  Document parse() {
    Document doc;
    std::string prefix;
    while (true) {
      skip_ws_comments_newlines();
      if (eof()) break;
      if (peek() == '[') {
        ++pos_;
        if (!eof() && peek() == '[') fail("arrays of tables are not supported");
        skip_inline_ws();
        prefix = parse_key();
        skip_inline_ws();
        expect(']');
        end_of_line();
        if (!tables_.insert(prefix).second) fail("duplicate table [" + prefix + "]");
        continue;
      }
      std::string key = parse_key();
      skip_inline_ws();
      expect('=');
      skip_inline_ws();
      Value v = parse_value();
      end_of_line();
      const std::string full = prefix.empty() ? key : prefix + "." + key;
      if (!doc.emplace(full, std::move(v)).second) fail("duplicate key '" + full + "'");
    }
    return doc;
  }

 private:
  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return s_[pos_]; }

  [[noreturn]] void fail(const std::string& what) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < pos_ && i < s_.size(); ++i) line += s_[i] == '\n';
    throw ConfigError("TOML line " + std::to_string(line) + ": " + what);
  }

  void expect(char c) {
    if (eof() || peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_inline_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }

  void skip_comment() {
    if (!eof() && peek() == '#')
      while (!eof() && peek() != '\n') ++pos_;
  }

  void skip_ws_comments_newlines() {
    while (!eof()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') ++pos_;
      else if (c == '#') skip_comment();
      else break;
    }
  }

  void end_of_line() {
    skip_inline_ws();
    skip_comment();
    if (!eof() && peek() == '\r') ++pos_;
    if (!eof() && peek() != '\n') fail("unexpected trailing characters");
  }

  std::string parse_key() {
    std::string key;
    while (true) {
      skip_inline_ws();
      if (eof()) fail("expected a key");
      std::string part;
      if (peek() == '"') {
        part = parse_basic_string();
      } else if (peek() == '\'') {
        part = parse_literal_string();
      } else {
        while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' ||
                          peek() == '-'))
          part += s_[pos_++];
        if (part.empty()) fail("expected a key");
      }
      key += part;
      skip_inline_ws();
      if (!eof() && peek() == '.') {
        ++pos_;
        key += '.';
        continue;
      }
      return key;
    }
  }

  std::string parse_basic_string() {
    expect('"');
    if (s_.substr(pos_, 2) == "\"\"") fail("multi-line strings are not supported");
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = s_[pos_++];
      if (c == '"') return out;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (eof()) fail("unterminated escape");
      const char e = s_[pos_++];
      switch (e) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case 'b': out += '\b'; break;
        case 'f': out += '\f'; break;
        case 'u': out += parse_unicode(4); break;
        case 'U': out += parse_unicode(8); break;
        default: fail(std::string("invalid escape \\") + e);
      }
    }
  }

  std::string parse_unicode(int digits) {
    if (pos_ + digits > s_.size()) fail("truncated unicode escape");
    std::uint32_t cp = 0;
    auto [p, ec] = std::from_chars(s_.data() + pos_, s_.data() + pos_ + digits, cp, 16);
    if (ec != std::errc() || p != s_.data() + pos_ + digits) fail("invalid unicode escape");
    pos_ += digits;
    std::string out;
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
    return out;
  }

  std::string parse_literal_string() {
    expect('\'');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = s_[pos_++];
      if (c == '\'') return out;
      out += c;
    }
  }

  Value parse_value() {
    if (eof()) fail("expected a value");
    const char c = peek();
    if (c == '"') return {parse_basic_string()};
    if (c == '\'') return {parse_literal_string()};
    if (c == '[') return parse_array();
    if (c == '{') fail("inline tables are not supported");
    if (s_.substr(pos_, 4) == "true") {
      pos_ += 4;
      return {true};
    }
    if (s_.substr(pos_, 5) == "false") {
      pos_ += 5;
      return {false};
    }
    return parse_number();
  }

  Value parse_array() {
    expect('[');
    Array items;
    while (true) {
      skip_ws_comments_newlines();
      if (eof()) fail("unterminated array");
      if (peek() == ']') {
        ++pos_;
        return {std::move(items)};
      }
      items.push_back(parse_value());
      skip_ws_comments_newlines();
      if (!eof() && peek() == ',') {
        ++pos_;
        continue;
      }
      skip_ws_comments_newlines();
      expect(']');
      return {std::move(items)};
    }
  }

  Value parse_number() {
    const std::size_t start = pos_;
    while (!eof() && std::string_view("+-0123456789_.eEinfa").find(peek()) != std::string_view::npos)
      ++pos_;
    std::string tok;
    for (char ch : s_.substr(start, pos_ - start))
      if (ch != '_') tok += ch;
    if (tok.empty()) fail("expected a value");
    std::string_view body = tok;
    const bool neg = body.front() == '-';
    if (body.front() == '+' || body.front() == '-') body.remove_prefix(1);
    if (body == "inf") return {neg ? -std::numeric_limits<double>::infinity()
                                   : std::numeric_limits<double>::infinity()};
    if (body == "nan") return {std::numeric_limits<double>::quiet_NaN()};
    const bool is_float = tok.find_first_of(".eE") != std::string::npos;
    if (!is_float) {
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
      if (ec != std::errc() || p != body.data() + body.size()) fail("invalid integer '" + tok + "'");
      return {neg ? -v : v};
    }
    double v = 0;
    auto [p, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
    if (ec != std::errc() || p != body.data() + body.size()) fail("invalid number '" + tok + "'");
    return {neg ? -v : v};
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::set<std::string> tables_;
};

}  // namespace detail

inline Document parse(std::string_view text) { return detail::Parser(text).parse(); }

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, p);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out + "\"";
}

}  // namespace d4d::toml
