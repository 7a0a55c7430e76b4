/*
 Copyright 2026 The deepsafempc Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#include "dsmpc/toml_lite.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "dsmpc/error.hpp"

namespace dsmpc {
namespace {

class Cursor {
 public:
  Cursor(std::string_view line, int line_no) : s_(line), line_no_(line_no) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::ConfigInvalid, "toml line " + std::to_string(line_no_) + ": " + what);
  }
  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }
  bool at_end_or_comment() {
    skip_ws();
    return pos_ >= s_.size() || s_[pos_] == '#';
  }
  bool eat(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!eat(c)) fail(std::string("expected '") + c + "'");
  }

  std::string bare_key() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) ||
                                s_[pos_] == '_' || s_[pos_] == '-')) {
      ++pos_;
    }
    if (pos_ == start) fail("expected a key");
    return std::string(s_.substr(start, pos_ - start));
  }

  nlohmann::json value() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '"') return string();
    if (c == '[') return array();
    return scalar();
  }

 private:
  nlohmann::json string() {
    ++pos_;
    std::string out;
    while (true) {
      if (pos_ >= s_.size()) fail("unterminated string");
      const char c = s_[pos_++];
      if (c == '"') return out;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (pos_ >= s_.size()) fail("bad escape");
      switch (s_[pos_++]) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        default: fail("unsupported escape");
      }
    }
  }

  nlohmann::json array() {
    ++pos_;
    nlohmann::json out = nlohmann::json::array();
    if (eat(']')) return out;
    while (true) {
      out.push_back(value());
      if (eat(']')) return out;
      expect(',');
      if (eat(']')) return out;  // trailing comma
    }
  }

  nlohmann::json scalar() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != '#' &&
           s_[pos_] != ' ' && s_[pos_] != '\t') {
      ++pos_;
    }
    std::string tok(s_.substr(start, pos_ - start));
    if (tok == "true") return true;
    if (tok == "false") return false;
    if (tok == "inf" || tok == "+inf") return std::numeric_limits<double>::infinity();
    if (tok == "-inf") return -std::numeric_limits<double>::infinity();
    if (tok == "nan" || tok == "+nan" || tok == "-nan") return std::numeric_limits<double>::quiet_NaN();
    std::string digits;
    for (std::size_t i = 0; i < tok.size(); ++i) {
      if (tok[i] == '_') {
        if (i == 0 || i + 1 == tok.size() || !std::isdigit(static_cast<unsigned char>(tok[i - 1])) ||
            !std::isdigit(static_cast<unsigned char>(tok[i + 1]))) {
          fail("misplaced underscore in '" + tok + "'");
        }
        continue;
      }
      digits += tok[i];
    }
    if (digits.empty()) fail("missing value");
    const char* first = digits.data() + (digits[0] == '+' ? 1 : 0);
    const char* last = digits.data() + digits.size();
    const bool is_float = digits.find_first_of(".eE") != std::string::npos;
    if (!is_float) {
      std::int64_t v = 0;
      const auto [p, ec] = std::from_chars(first, last, v);
      if (ec == std::errc() && p == last) return v;
      fail("bad integer '" + tok + "'");
    }
    double v = 0.0;
    const auto [p, ec] = std::from_chars(first, last, v);
    if (ec == std::errc() && p == last) return v;
    fail("bad value '" + tok + "'");
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  int line_no_;
};

std::string format_value(const nlohmann::json& v) {
  if (v.is_array()) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ", ";
      out += format_value(v[i]);
    }
    return out + "]";
  }
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::isnan(d)) return "nan";
    if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
    std::string s = nlohmann::json(d).dump();
    if (s.find_first_of(".eE") == std::string::npos) s += ".0";
    return s;
  }
  return v.dump();
}

}  // namespace

nlohmann::json parse_toml(std::string_view text) {
  nlohmann::json doc = nlohmann::json::object();
  nlohmann::json* table = &doc;
  int line_no = 0;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    std::size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(begin, end - begin);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    begin = end + 1;
    ++line_no;
    Cursor cur(line, line_no);
    if (cur.at_end_or_comment()) continue;
    if (cur.eat('[')) {
      const std::string name = cur.bare_key();
      cur.expect(']');
      if (!cur.at_end_or_comment()) cur.fail("trailing characters after table header");
      if (doc.contains(name)) cur.fail("duplicate table [" + name + "]");
      doc[name] = nlohmann::json::object();
      table = &doc[name];
      continue;
    }
    const std::string key = cur.bare_key();
    cur.expect('=');
    nlohmann::json value = cur.value();
    if (!cur.at_end_or_comment()) cur.fail("trailing characters after value");
    if (table->contains(key)) cur.fail("duplicate key '" + key + "'");
    (*table)[key] = std::move(value);
  }
  return doc;
}

std::string to_toml(const nlohmann::json& doc) {
  std::ostringstream out;
  for (const auto& [key, value] : doc.items()) {
    if (!value.is_object()) out << key << " = " << format_value(value) << '\n';
  }
  for (const auto& [key, value] : doc.items()) {
    if (!value.is_object()) continue;
    out << "\n[" << key << "]\n";
    for (const auto& [k, v] : value.items()) out << k << " = " << format_value(v) << '\n';
  }
  return out.str();
}

}  // namespace dsmpc
