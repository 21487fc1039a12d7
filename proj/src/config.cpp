#include "racer/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <climits>
#include <fstream>
#include <sstream>

namespace racer::config {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string collapse_ws(const std::string& s) {
  std::string out;
  bool in_ws = false;
  for (char ch : s) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      in_ws = true;
      continue;
    }
    if (in_ws && !out.empty()) out.push_back(' ');
    in_ws = false;
    out.push_back(ch);
  }
  return out;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

bool parse_long(const std::string& s, long long& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

}  // namespace

KV KV::parse_string(const std::string& text, const std::string& name) {
  KV kv;
  kv.name_ = name;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string stripped = trim(raw);
    if (stripped.empty()) continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      kv.errors_.push_back(name + ":" + std::to_string(line) +
                           ": expected `key = value`, got \"" + stripped + "\"");
      continue;
    }
    Entry ent;
    ent.key = trim(stripped.substr(0, eq));
    ent.value = collapse_ws(trim(stripped.substr(eq + 1)));
    ent.line = line;
    if (ent.key.empty()) {
      kv.errors_.push_back(name + ":" + std::to_string(line) + ": empty key");
      continue;
    }
    kv.entries_.push_back(std::move(ent));
  }
  return kv;
}

KV KV::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    KV kv;
    kv.name_ = path;
    kv.errors_.push_back(path + ": cannot open file");
    return kv;
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

void KV::set(const std::string& key, const std::string& value) {
  const std::string v = collapse_ws(trim(value));
  bool replaced = false;
  for (auto it = entries_.begin(); it != entries_.end();) {
    if (it->key == key) {
      if (!replaced) {
        it->value = v;
        it->line = 0;
        replaced = true;
        ++it;
      } else {
        it = entries_.erase(it);
      }
    } else {
      ++it;
    }
  }
  if (!replaced) entries_.push_back({key, v, 0});
}

bool KV::has(const std::string& key) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.key == key; });
}

std::string KV::loc(const std::string& key) const {
  for (const Entry& e : entries_)
    if (e.key == key) return name_ + ":" + std::to_string(e.line) + ": " + key;
  return name_ + ": " + key;
}

double KV::get_double(const std::string& key, double fallback) {
  consumed_.insert(key);
  for (const Entry& e : entries_) {
    if (e.key != key) continue;
    double v;
    if (!parse_double(e.value, v)) {
      errors_.push_back(loc(key) + ": expected a number, got \"" + e.value + "\"");
      return fallback;
    }
    return v;
  }
  return fallback;
}

int KV::get_int(const std::string& key, int fallback) {
  consumed_.insert(key);
  for (const Entry& e : entries_) {
    if (e.key != key) continue;
    long long v;
    if (!parse_long(e.value, v) || v < INT_MIN || v > INT_MAX) {
      errors_.push_back(loc(key) + ": expected an integer, got \"" + e.value + "\"");
      return fallback;
    }
    return static_cast<int>(v);
  }
  return fallback;
}

bool KV::get_bool(const std::string& key, bool fallback) {
  consumed_.insert(key);
  for (const Entry& e : entries_) {
    if (e.key != key) continue;
    if (e.value == "true" || e.value == "1") return true;
    if (e.value == "false" || e.value == "0") return false;
    errors_.push_back(loc(key) + ": expected true/false, got \"" + e.value + "\"");
    return fallback;
  }
  return fallback;
}

std::string KV::get_string(const std::string& key, const std::string& fallback) {
  consumed_.insert(key);
  for (const Entry& e : entries_)
    if (e.key == key) return e.value;
  return fallback;
}

double KV::require_double(const std::string& key) {
  if (!has(key)) {
    consumed_.insert(key);
    errors_.push_back(name_ + ": missing required key `" + key + "`");
    return 0.0;
  }
  return get_double(key, 0.0);
}

std::string KV::require_string(const std::string& key) {
  if (!has(key)) {
    consumed_.insert(key);
    errors_.push_back(name_ + ": missing required key `" + key + "`");
    return {};
  }
  return get_string(key, {});
}

std::vector<double> KV::get_doubles(const std::string& key) {
  consumed_.insert(key);
  std::vector<double> out;
  for (const Entry& e : entries_) {
    if (e.key != key) continue;
    for (const std::string& tok : split_ws(e.value)) {
      double v;
      if (!parse_double(tok, v)) {
        errors_.push_back(name_ + ":" + std::to_string(e.line) + ": " + key +
                          ": expected numbers, got \"" + tok + "\"");
        continue;
      }
      out.push_back(v);
    }
  }
  return out;
}

std::vector<long long> KV::get_longs(const std::string& key) {
  consumed_.insert(key);
  std::vector<long long> out;
  for (const Entry& e : entries_) {
    if (e.key != key) continue;
    for (const std::string& tok : split_ws(e.value)) {
      long long v;
      if (!parse_long(tok, v)) {
        errors_.push_back(name_ + ":" + std::to_string(e.line) + ": " + key +
                          ": expected integers, got \"" + tok + "\"");
        continue;
      }
      out.push_back(v);
    }
  }
  return out;
}

std::vector<std::string> KV::get_strings(const std::string& key) {
  consumed_.insert(key);
  std::vector<std::string> out;
  for (const Entry& e : entries_) {
    if (e.key != key) continue;
    for (std::string& tok : split_ws(e.value)) out.push_back(std::move(tok));
  }
  return out;
}

void KV::add_error(const std::string& msg) { errors_.push_back(name_ + ": " + msg); }

std::vector<std::string> KV::unknown_keys() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const Entry& e : entries_) {
    if (consumed_.count(e.key) || seen.count(e.key)) continue;
    seen.insert(e.key);
    out.push_back(name_ + ":" + std::to_string(e.line) + ": unknown key `" + e.key + "`");
  }
  return out;
}

std::string KV::canonical() const {
  std::vector<Entry> sorted = entries_;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Entry& a, const Entry& b) { return a.key < b.key; });
  std::string out;
  for (const Entry& e : sorted) {
    out += e.key;
    out += '=';
    out += e.value;
    out += '\n';
  }
  return out;
}

std::uint64_t KV::hash() const { return fnv1a(canonical()); }

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace racer::config
