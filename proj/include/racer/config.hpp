#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace racer::config {

/// One key/value pair as it appeared in the file.
struct Entry {
  std::string key;
  std::string value;  // trimmed, internal whitespace collapsed
  int line = 0;
};

/// Flat key=value configuration file.
///
/// Format: one `key = value` per line, `#` starts a comment, blank lines
/// ignored. A key may repeat; list getters concatenate the occurrences in
/// file order. Getters record errors instead of throwing and mark keys as
/// consumed; keys never consumed are reported by unknown_keys() so typos
/// fail validation.
class KV {
 public:
  KV() = default;

  static KV parse_file(const std::string& path);
  static KV parse_string(const std::string& text, const std::string& name);

  /// Replaces every occurrence of key (or appends if absent). Used for
  /// command-line overrides, so the entry reports line 0.
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;

  double get_double(const std::string& key, double fallback);
  int get_int(const std::string& key, int fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::string get_string(const std::string& key, const std::string& fallback);

  /// Missing-key variants that record an error.
  double require_double(const std::string& key);
  std::string require_string(const std::string& key);

  /// All occurrences of key, each value split on whitespace, concatenated.
  std::vector<double> get_doubles(const std::string& key);
  std::vector<long long> get_longs(const std::string& key);
  std::vector<std::string> get_strings(const std::string& key);

  void add_error(const std::string& msg);
  const std::vector<std::string>& errors() const { return errors_; }
  bool ok() const { return errors_.empty(); }

  /// Keys present in the file that no getter ever consumed.
  std::vector<std::string> unknown_keys() const;

  /// Entries sorted by key (stable, so repeats keep file order), one
  /// "key=value" per line. Reordering the file does not change this.
  std::string canonical() const;
  std::uint64_t hash() const;

  const std::string& name() const { return name_; }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::string loc(const std::string& key) const;

  std::string name_ = "<empty>";
  std::vector<Entry> entries_;
  std::set<std::string> consumed_;
  std::vector<std::string> errors_;
};

std::uint64_t fnv1a(const std::string& bytes);

}  // namespace racer::config
