#pragma once

#include <map>
#include <span>
#include <string>
#include <variant>

namespace conpvp {

// Flat key-value run configuration: one JSON file plus key=value overrides.
// Unknown keys are rejected; the canonical serialization (defaults
// materialized, keys sorted) is hashed into every report record.
class RunConfig {
 public:
  using Value = std::variant<bool, long, double, std::string>;

  static RunConfig defaults();
  static RunConfig from_file(const std::string& path);
  static RunConfig from_json_text(const std::string& text);

  void apply_override(const std::string& key_equals_value);

  bool get_bool(const std::string& key) const;
  long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;

  bool explicitly_set(const std::string& key) const;
  // Throws naming every listed key that was never explicitly provided.
  void require(std::span<const std::string> keys) const;

  std::string canonical_json() const;
  std::string pretty_json() const;
  std::string config_hash() const;

 private:
  const Value& lookup(const std::string& key) const;
  void set_checked(const std::string& key, const Value& raw);

  std::map<std::string, Value> values_;
  std::map<std::string, bool> provided_;
};

}  // namespace conpvp
