#include "sensorgrad/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace sensorgrad {

namespace {

std::string trim(const std::string& s) {
  std::size_t begin = 0, end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return s.substr(begin, end - begin);
}

bool valid_key(const std::string& key) {
  if (key.empty() || key.front() == '.' || key.back() == '.') return false;
  for (char c : key) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) return false;
  }
  return key.find("..") == std::string::npos;
}

/// Removes a trailing comment that is not inside quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

/// Recursive-descent reader for numeric values, vectors and matrices.
class ValueReader {
 public:
  explicit ValueReader(const std::string& text) : text_(text) {}

  double expression() {
    double value = term();
    for (;;) {
      skip();
      if (peek('+')) {
        ++pos_;
        value += term();
      } else if (peek('-')) {
        ++pos_;
        value -= term();
      } else {
        return value;
      }
    }
  }

  double term() {
    double value = signed_factor();
    for (;;) {
      skip();
      if (peek('*')) {
        ++pos_;
        value *= signed_factor();
      } else if (peek('/')) {
        ++pos_;
        value /= signed_factor();
      } else {
        return value;
      }
    }
  }

  Vector vector() {
    std::vector<double> items;
    expect('[');
    skip();
    if (peek(']')) {
      ++pos_;
      return Vector(0);
    }
    for (;;) {
      items.push_back(expression());
      skip();
      if (peek(',')) {
        ++pos_;
        continue;
      }
      expect(']');
      break;
    }
    return Eigen::Map<Vector>(items.data(), static_cast<Eigen::Index>(items.size()));
  }

  Matrix matrix() {
    skip();
    Matrix m;
    if (word_ahead("diag")) {
      pos_ += 4;
      const Vector d = call_arguments();
      m = d.asDiagonal();
    } else if (word_ahead("identity")) {
      pos_ += 8;
      const Vector args = call_arguments();
      if (args.size() != 1 || args(0) < 0 || args(0) != std::floor(args(0))) fail("identity takes one non-negative integer");
      m = Matrix::Identity(static_cast<Eigen::Index>(args(0)), static_cast<Eigen::Index>(args(0)));
    } else if (peek('[')) {
      m = rows();
    } else {
      const double scale = signed_factor();
      skip();
      if (!peek('*')) fail("expected a matrix");
      ++pos_;
      return scale * matrix();
    }
    skip();
    if (peek('*')) {
      ++pos_;
      m *= expression();
    }
    return m;
  }

  void finish() {
    skip();
    if (pos_ != text_.size()) fail("unexpected trailing text '" + text_.substr(pos_) + "'");
  }

 private:
  [[noreturn]] void fail(const std::string& message) const { throw Error(message); }

  void skip() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool peek(char c) const { return pos_ < text_.size() && text_[pos_] == c; }
  void expect(char c) {
    skip();
    if (!peek(c)) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  bool word_ahead(const std::string& word) const {
    if (text_.compare(pos_, word.size(), word) != 0) return false;
    const std::size_t after = pos_ + word.size();
    return after >= text_.size() || !std::isalnum(static_cast<unsigned char>(text_[after]));
  }

  Vector call_arguments() {
    skip();
    expect('(');
    std::vector<double> args;
    skip();
    if (!peek(')')) {
      for (;;) {
        args.push_back(expression());
        skip();
        if (peek(',')) {
          ++pos_;
          continue;
        }
        break;
      }
    }
    expect(')');
    return Eigen::Map<Vector>(args.data(), static_cast<Eigen::Index>(args.size()));
  }

  Matrix rows() {
    expect('[');
    std::vector<Vector> rows;
    skip();
    if (!peek(']')) {
      for (;;) {
        skip();
        rows.push_back(vector());
        skip();
        if (peek(',')) {
          ++pos_;
          continue;
        }
        break;
      }
    }
    expect(']');
    if (rows.empty()) return Matrix(0, 0);
    Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != m.cols()) fail("matrix rows have different lengths");
      m.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    }
    return m;
  }

  double signed_factor() {
    skip();
    if (peek('-')) {
      ++pos_;
      return -signed_factor();
    }
    if (peek('+')) {
      ++pos_;
      return signed_factor();
    }
    return factor();
  }

  double factor() {
    skip();
    if (peek('(')) {
      ++pos_;
      const double v = expression();
      expect(')');
      return v;
    }
    if (word_ahead("pi")) {
      pos_ += 2;
      return std::numbers::pi;
    }
    const char* begin = text_.c_str() + pos_;
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin) fail("expected a number");
    pos_ += static_cast<std::size_t>(end - begin);
    if (!std::isfinite(v)) fail("number is not finite");
    return v;
  }

  const std::string& text_;
  std::size_t pos_ = 0;
};

}  // namespace

ConfigError::ConfigError(const std::string& source, int line, const std::string& key, const std::string& message)
    : Error(source + (line > 0 ? ":" + std::to_string(line) : std::string()) + (key.empty() ? "" : ": " + key) + ": " +
            message),
      line_(line),
      key_(key) {}

Config Config::parse(const std::string& text, const std::string& source) {
  Config config;
  config.source_ = source;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string content = trim(strip_comment(raw));
    if (content.empty()) continue;
    const std::size_t eq = content.find('=');
    if (eq == std::string::npos) throw ConfigError(source, line, "", "expected 'key = value'");
    const std::string key = trim(content.substr(0, eq));
    const std::string value = trim(content.substr(eq + 1));
    if (!valid_key(key)) throw ConfigError(source, line, key, "invalid key name");
    if (value.empty()) throw ConfigError(source, line, key, "missing value");
    if (config.entries_.count(key)) {
      throw ConfigError(source, line, key, "duplicate key (first set on line " +
                                               std::to_string(config.entries_[key].line) + ")");
    }
    config.entries_[key] = Entry{value, line};
  }
  return config;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "", "cannot open configuration file");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path);
}

const Config::Entry* Config::find(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

const Config::Entry& Config::entry(const std::string& key) const {
  const Entry* e = find(key);
  if (!e) throw ConfigError(source_, 0, key, "required key is missing");
  return *e;
}

ConfigError Config::error(const std::string& key, const std::string& message) const {
  const auto it = entries_.find(key);
  return ConfigError(source_, it == entries_.end() ? 0 : it->second.line, key, message);
}

double Config::real(const std::string& key) const {
  const Entry& e = entry(key);
  try {
    ValueReader reader(e.value);
    const double v = reader.expression();
    reader.finish();
    if (!std::isfinite(v)) throw Error("value is not finite");
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& err) {
    throw ConfigError(source_, e.line, key, std::string("expected a real number: ") + err.what());
  }
}

double Config::real(const std::string& key, double fallback) const { return has(key) ? real(key) : fallback; }

std::int64_t Config::integer(const std::string& key) const {
  const Entry& e = entry(key);
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(e.value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != e.value.size()) throw ConfigError(source_, e.line, key, "expected an integer");
  return v;
}

std::int64_t Config::integer(const std::string& key, std::int64_t fallback) const {
  return has(key) ? integer(key) : fallback;
}

std::size_t Config::count(const std::string& key) const {
  const std::int64_t v = integer(key);
  if (v < 0) throw error(key, "expected a non-negative integer");
  return static_cast<std::size_t>(v);
}

std::size_t Config::count(const std::string& key, std::size_t fallback) const {
  return has(key) ? count(key) : fallback;
}

bool Config::boolean(const std::string& key, bool fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  if (e->value == "true") return true;
  if (e->value == "false") return false;
  throw ConfigError(source_, e->line, key, "expected true or false");
}

std::string Config::string(const std::string& key) const {
  const Entry& e = entry(key);
  if (e.value.size() >= 2 && e.value.front() == '"' && e.value.back() == '"') return e.value.substr(1, e.value.size() - 2);
  return e.value;
}

std::string Config::string(const std::string& key, const std::string& fallback) const {
  return has(key) ? string(key) : fallback;
}

Vector Config::vector(const std::string& key) const {
  const Entry& e = entry(key);
  try {
    ValueReader reader(e.value);
    Vector v = reader.vector();
    reader.finish();
    return v;
  } catch (const Error& err) {
    throw ConfigError(source_, e.line, key, std::string("expected a vector [a, b, ...]: ") + err.what());
  }
}

Vector Config::vector(const std::string& key, const Vector& fallback) const {
  return has(key) ? vector(key) : fallback;
}

Matrix Config::matrix(const std::string& key) const {
  const Entry& e = entry(key);
  try {
    ValueReader reader(e.value);
    Matrix m = reader.matrix();
    reader.finish();
    return m;
  } catch (const Error& err) {
    throw ConfigError(source_, e.line, key, std::string("expected a matrix: ") + err.what());
  }
}

Matrix Config::matrix(const std::string& key, const Matrix& fallback) const {
  return has(key) ? matrix(key) : fallback;
}

std::vector<std::string> Config::strings(const std::string& key) const {
  const Entry& e = entry(key);
  const std::string& v = e.value;
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
    throw ConfigError(source_, e.line, key, "expected a list [a, b, ...]");
  }
  std::vector<std::string> out;
  int depth = 0;
  std::string current;
  for (std::size_t i = 1; i + 1 < v.size(); ++i) {
    const char c = v[i];
    if (c == '(' || c == '[') ++depth;
    if (c == ')' || c == ']') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(trim(current));
      current.clear();
    } else {
      current += c;
    }
  }
  if (!trim(current).empty() || !out.empty()) out.push_back(trim(current));
  for (const auto& item : out) {
    if (item.empty()) throw ConfigError(source_, e.line, key, "empty list element");
  }
  return out;
}

std::vector<std::string> Config::strings(const std::string& key, const std::vector<std::string>& fallback) const {
  return has(key) ? strings(key) : fallback;
}

void Config::set(const std::string& key, const std::string& value) {
  if (!valid_key(key)) throw ConfigError(source_, 0, key, "invalid key name");
  entries_[key] = Entry{trim(value), 0};
}

void Config::reject_unused() const {
  for (const auto& [key, e] : entries_) {
    if (!used_.count(key)) throw ConfigError(source_, e.line, key, "unknown key");
  }
}

std::string Config::canonical_text(const std::set<std::string>& excluded) const {
  std::string out;
  for (const auto& [key, e] : entries_) {
    if (excluded.count(key)) continue;
    std::string compact;
    bool quoted = false;
    for (char c : e.value) {
      if (c == '"') quoted = !quoted;
      if (!quoted && std::isspace(static_cast<unsigned char>(c))) continue;
      compact += c;
    }
    out += key + " = " + compact + "\n";
  }
  return out;
}

std::string Config::hash(const std::set<std::string>& excluded) const {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : canonical_text(excluded)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace sensorgrad
