#include "toml_lite.hpp"

#include <cctype>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace evkit {

namespace {

class LineParser
{
public:
  LineParser(const std::string& s, int line) : s_(s), line_(line) {}

  [[noreturn]] void fail(const std::string& what) const
  {
    throw std::invalid_argument("schedule line " + std::to_string(line_) + ": " + what);
  }

  void skip_ws()
  {
    while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t'))
      ++i_;
  }
  bool at_end_or_comment()
  {
    skip_ws();
    return i_ >= s_.size() || s_[i_] == '#';
  }
  bool peek(char c)
  {
    skip_ws();
    return i_ < s_.size() && s_[i_] == c;
  }
  void expect(char c)
  {
    if (!peek(c))
      fail(std::string("expected '") + c + "'");
    ++i_;
  }

  std::string key()
  {
    skip_ws();
    if (i_ < s_.size() && (s_[i_] == '"' || s_[i_] == '\''))
      return quoted();
    const std::size_t start = i_;
    while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_' || s_[i_] == '-'))
      ++i_;
    if (i_ == start)
      fail("expected a key");
    return s_.substr(start, i_ - start);
  }

  std::vector<std::string> dotted_key()
  {
    std::vector<std::string> parts{key()};
    while (peek('.')) {
      ++i_;
      parts.push_back(key());
    }
    return parts;
  }

  nlohmann::json value()
  {
    skip_ws();
    if (i_ >= s_.size())
      fail("missing value");
    const char c = s_[i_];
    if (c == '"' || c == '\'')
      return quoted();
    if (c == '[') {
      ++i_;
      nlohmann::json arr = nlohmann::json::array();
      while (!peek(']')) {
        arr.push_back(value());
        if (peek(','))
          ++i_;
        else if (!peek(']'))
          fail("expected ',' or ']' in array");
      }
      ++i_;
      return arr;
    }
    const std::size_t start = i_;
    while (i_ < s_.size() && s_[i_] != ',' && s_[i_] != ']' && s_[i_] != '#' && s_[i_] != ' ' && s_[i_] != '\t')
      ++i_;
    std::string tok = s_.substr(start, i_ - start);
    if (tok == "true")
      return true;
    if (tok == "false")
      return false;
    std::string clean;
    for (char ch : tok)
      if (ch != '_')
        clean.push_back(ch);
    if (clean.empty())
      fail("missing value");
    const bool is_float = clean.find_first_of(".eE") != std::string::npos || clean == "inf" || clean == "nan";
    try {
      std::size_t used = 0;
      if (is_float) {
        const double v = std::stod(clean, &used);
        if (used == clean.size())
          return v;
      } else {
        const long long v = std::stoll(clean, &used, 10);
        if (used == clean.size())
          return v;
      }
    } catch (const std::exception&) {
    }
    fail("unsupported value '" + tok + "'");
  }

private:
  std::string quoted()
  {
    const char q = s_[i_++];
    std::string out;
    while (i_ < s_.size() && s_[i_] != q) {
      char c = s_[i_++];
      if (q == '"' && c == '\\') {
        if (i_ >= s_.size())
          fail("dangling escape");
        const char e = s_[i_++];
        switch (e) {
        case 'n': c = '\n'; break;
        case 't': c = '\t'; break;
        case '\\': c = '\\'; break;
        case '"': c = '"'; break;
        default: fail(std::string("unsupported escape \\") + e);
        }
      }
      out.push_back(c);
    }
    if (i_ >= s_.size())
      fail("unterminated string");
    ++i_;
    return out;
  }

  const std::string& s_;
  int line_;
  std::size_t i_ = 0;
};

nlohmann::json* descend(nlohmann::json& root, const std::vector<std::string>& path, LineParser& p)
{
  nlohmann::json* node = &root;
  for (const std::string& part : path) {
    if (node->is_array())
      node = &node->back();
    if (!node->is_object())
      p.fail("key '" + part + "' is not a table");
    node = &(*node)[part];
    if (node->is_null())
      *node = nlohmann::json::object();
  }
  return node;
}

} // namespace

nlohmann::json parse_toml_subset(const std::string& text)
{
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* table = &root;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    LineParser p(line, n);
    if (p.at_end_or_comment())
      continue;
    if (p.peek('[')) {
      p.expect('[');
      const bool array_table = p.peek('[');
      if (array_table)
        p.expect('[');
      const auto path = p.dotted_key();
      p.expect(']');
      if (array_table)
        p.expect(']');
      if (!p.at_end_or_comment())
        p.fail("unexpected text after table header");
      if (array_table) {
        std::vector<std::string> parent(path.begin(), path.end() - 1);
        nlohmann::json* owner = descend(root, parent, p);
        nlohmann::json& arr = (*owner)[path.back()];
        if (arr.is_null())
          arr = nlohmann::json::array();
        if (!arr.is_array())
          p.fail("'" + path.back() + "' is not an array of tables");
        arr.push_back(nlohmann::json::object());
        table = &arr.back();
      } else {
        table = descend(root, path, p);
      }
      continue;
    }
    const auto path = p.dotted_key();
    p.expect('=');
    nlohmann::json v = p.value();
    if (!p.at_end_or_comment())
      p.fail("unexpected text after value");
    std::vector<std::string> parent(path.begin(), path.end() - 1);
    nlohmann::json* owner = descend(*table, parent, p);
    if (owner->contains(path.back()))
      p.fail("duplicate key '" + path.back() + "'");
    (*owner)[path.back()] = std::move(v);
  }
  return root;
}

} // namespace evkit
