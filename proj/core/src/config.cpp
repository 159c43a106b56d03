#include "conpvp/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "conpvp/util.hpp"

namespace conpvp {
namespace {

using nlohmann::json;

enum class KeyType { boolean, integer, floating, text };

struct KeySpec {
  const char* key;
  KeyType type;
  RunConfig::Value default_value;
};

// Every module's knobs, flat. Required-for-train keys keep placeholder
// defaults; cmd_train demands that they were explicitly provided.
const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"train_path", KeyType::text, std::string()},
      {"dev_path", KeyType::text, std::string()},
      {"template_file", KeyType::text, std::string()},
      {"backbone", KeyType::text, std::string("builtin-tiny")},
      {"pretrained_path", KeyType::text, std::string()},
      {"hidden_dim", KeyType::integer, 64L},
      {"num_layers", KeyType::integer, 2L},
      {"num_heads", KeyType::integer, 4L},
      {"max_length", KeyType::integer, 64L},
      {"dropout_rate", KeyType::floating, 0.1},
      {"prompt_length", KeyType::integer, 4L},
      {"max_vocab", KeyType::integer, 8192L},
      {"temperature", KeyType::floating, 0.05},
      {"loss_mode", KeyType::text, std::string("full")},
      {"template_mode", KeyType::text, std::string("independent")},
      {"anchor_mode", KeyType::text, std::string("continuous")},
      {"debias_prototypes", KeyType::boolean, false},
      {"eval_debias", KeyType::boolean, false},
      {"batch_size", KeyType::integer, 8L},
      {"learning_rate", KeyType::floating, 0.0},
      {"epochs", KeyType::integer, 1L},
      {"eval_every_steps", KeyType::integer, 125L},
      {"max_steps", KeyType::integer, -1L},
      {"weight_decay", KeyType::floating, 0.01},
      {"grad_clip", KeyType::floating, 1.0},
      {"seed", KeyType::integer, 13L},
      {"checkpoint_dir", KeyType::text, std::string()},
      {"report_path", KeyType::text, std::string()},
      {"sts_aggregation", KeyType::text, std::string("mean")},
  };
  return table;
}

const KeySpec* find_spec(const std::string& key) {
  for (const KeySpec& spec : key_table()) {
    if (key == spec.key) return &spec;
  }
  return nullptr;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  for (const KeySpec& spec : key_table()) {
    cfg.values_[spec.key] = spec.default_value;
    cfg.provided_[spec.key] = false;
  }
  return cfg;
}

void RunConfig::set_checked(const std::string& key, const Value& raw) {
  const KeySpec* spec = find_spec(key);
  if (spec == nullptr) {
    throw std::invalid_argument("unknown configuration key \"" + key + "\"");
  }
  Value value = raw;
  // ints are accepted where floats are expected
  if (spec->type == KeyType::floating && std::holds_alternative<long>(value)) {
    value = static_cast<double>(std::get<long>(value));
  }
  const bool ok = (spec->type == KeyType::boolean && std::holds_alternative<bool>(value)) ||
                  (spec->type == KeyType::integer && std::holds_alternative<long>(value)) ||
                  (spec->type == KeyType::floating && std::holds_alternative<double>(value)) ||
                  (spec->type == KeyType::text && std::holds_alternative<std::string>(value));
  if (!ok) {
    throw std::invalid_argument("wrong type for configuration key \"" + key + "\"");
  }
  values_[key] = std::move(value);
  provided_[key] = true;
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json doc = json::parse(text);
  if (!doc.is_object()) {
    throw std::invalid_argument("configuration must be a JSON object");
  }
  RunConfig cfg = defaults();
  for (const auto& [key, value] : doc.items()) {
    if (value.is_boolean()) {
      cfg.set_checked(key, value.get<bool>());
    } else if (value.is_number_integer()) {
      cfg.set_checked(key, value.get<long>());
    } else if (value.is_number_float()) {
      cfg.set_checked(key, value.get<double>());
    } else if (value.is_string()) {
      cfg.set_checked(key, value.get<std::string>());
    } else {
      throw std::invalid_argument("unsupported value type for key \"" + key + "\"");
    }
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open config file: " + path);
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return from_json_text(buffer.str());
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
}

void RunConfig::apply_override(const std::string& key_equals_value) {
  const size_t eq = key_equals_value.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override must look like key=value: " + key_equals_value);
  }
  const std::string key = key_equals_value.substr(0, eq);
  const std::string text = key_equals_value.substr(eq + 1);
  const KeySpec* spec = find_spec(key);
  if (spec == nullptr) {
    throw std::invalid_argument("unknown configuration key \"" + key + "\"");
  }
  switch (spec->type) {
    case KeyType::boolean: {
      if (text == "true" || text == "1") {
        set_checked(key, true);
      } else if (text == "false" || text == "0") {
        set_checked(key, false);
      } else {
        throw std::invalid_argument("expected true/false for key \"" + key + "\"");
      }
      break;
    }
    case KeyType::integer: {
      long v = 0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw std::invalid_argument("expected an integer for key \"" + key + "\"");
      }
      set_checked(key, v);
      break;
    }
    case KeyType::floating: {
      try {
        size_t pos = 0;
        const double v = std::stod(text, &pos);
        if (pos != text.size()) throw std::invalid_argument("trailing characters");
        set_checked(key, v);
      } catch (const std::exception&) {
        throw std::invalid_argument("expected a number for key \"" + key + "\"");
      }
      break;
    }
    case KeyType::text:
      set_checked(key, text);
      break;
  }
}

const RunConfig::Value& RunConfig::lookup(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw std::invalid_argument("unknown configuration key \"" + key + "\"");
  }
  return it->second;
}

bool RunConfig::get_bool(const std::string& key) const {
  return std::get<bool>(lookup(key));
}
long RunConfig::get_int(const std::string& key) const {
  return std::get<long>(lookup(key));
}
double RunConfig::get_double(const std::string& key) const {
  return std::get<double>(lookup(key));
}
const std::string& RunConfig::get_string(const std::string& key) const {
  return std::get<std::string>(lookup(key));
}

bool RunConfig::explicitly_set(const std::string& key) const {
  auto it = provided_.find(key);
  return it != provided_.end() && it->second;
}

void RunConfig::require(std::span<const std::string> keys) const {
  std::string missing;
  for (const std::string& key : keys) {
    if (!explicitly_set(key)) {
      if (!missing.empty()) missing += ", ";
      missing += "\"" + key + "\"";
    }
  }
  if (!missing.empty()) {
    throw std::invalid_argument("missing required key " + missing);
  }
}

std::string RunConfig::canonical_json() const {
  json doc;
  for (const auto& [key, value] : values_) {
    std::visit([&doc, &key](const auto& v) { doc[key] = v; }, value);
  }
  return doc.dump();  // nlohmann objects serialize with sorted keys
}

std::string RunConfig::pretty_json() const {
  json doc;
  for (const auto& [key, value] : values_) {
    std::visit([&doc, &key](const auto& v) { doc[key] = v; }, value);
  }
  return doc.dump(2);
}

std::string RunConfig::config_hash() const {
  return to_hex(fnv1a64(canonical_json()));
}

}  // namespace conpvp
