#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cxmx/common.hpp"
#include "cxmx/model.hpp"
#include "cxmx/training.hpp"

namespace cxmx {

enum class KeyType { real, integer, choice };

struct KeySpec {
  std::string name;
  KeyType type = KeyType::real;
  std::string default_value;
  double lo = 0.0, hi = 0.0;  // inclusive range for numbers
  bool lo_open = false;
  std::vector<std::string> choices;
  std::string help;
};

// Every key a pretraining run accepts. Optimizer defaults follow the
// reference two-stage recipe; model size and step counts are desk scale.
inline const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema = {
      {"lr_peak", KeyType::real, "3e-4", 0.0, 1.0, true, {}, "peak learning rate (cosine decay to zero)"},
      {"adam_beta1", KeyType::real, "0.9", 0.0, 1.0, false, {}, "AdamW first-moment decay"},
      {"adam_beta2", KeyType::real, "0.98", 0.0, 1.0, false, {}, "AdamW second-moment decay"},
      {"adam_eps", KeyType::real, "1e-6", 0.0, 1.0, true, {}, "AdamW epsilon"},
      {"weight_decay", KeyType::real, "0.1", 0.0, 10.0, false, {}, "decoupled weight decay on matrices"},
      {"clip_norm", KeyType::real, "1.0", 0.0, 1e9, true, {}, "global gradient-norm clip"},
      {"mask_ratio", KeyType::real, "0.5", 0.0, 1.0, true, {}, "stage s2 fraction of masked tokens"},
      {"batch_size", KeyType::integer, "4", 1, 1 << 20, false, {}, "sequences per micro-batch"},
      {"grad_accum", KeyType::integer, "1", 1, 1 << 20, false, {}, "micro-batches per optimizer step"},
      {"steps", KeyType::integer, "1000", 1, 1e12, false, {}, "optimizer steps"},
      {"seed", KeyType::integer, "0", 0, 9.0e15, false, {}, "training seed"},
      {"loss_rule", KeyType::choice, "follow_mask", 0, 0, false, {"follow_mask", "at_mask"}, "stage s2 loss positions"},
      {"context_cap", KeyType::integer, "132", 8, 1 << 16, false, {}, "maximum assembled sequence length"},
      {"checkpoint_every", KeyType::integer, "0", 0, 1e12, false, {}, "intermediate checkpoint interval (0: off)"},
      {"layers", KeyType::integer, "4", 1, 64, false, {}, "transformer blocks"},
      {"model_dim", KeyType::integer, "128", 2, 8192, false, {}, "hidden width"},
      {"heads", KeyType::integer, "4", 1, 256, false, {}, "attention heads"},
      {"mlp_ratio", KeyType::real, "4", 0.0, 64.0, true, {}, "MLP width / hidden width"},
      {"attention", KeyType::choice, "causal", 0, 0, false, {"causal", "bidirectional_image"}, "attention mask variant"},
      {"rope_base", KeyType::real, "10000", 1.0, 1e9, false, {}, "rotary frequency base"},
      {"model_seed", KeyType::integer, "0", 0, 9.0e15, false, {}, "parameter initialisation seed"},
  };
  return schema;
}

struct ConfigValue {
  std::string value;
  std::string source;  // "default", "file" or "override"
};

class Config {
 public:
  Config() {
    for (const auto& k : config_schema()) values_[k.name] = {k.default_value, "default"};
  }

  // Validates and stores one key; unknown keys and bad values throw.
  void set(std::string_view key, std::string_view value, std::string source) {
    const KeySpec& spec = lookup(key);
    check(spec, value);
    values_[spec.name] = {std::string(value), std::move(source)};
  }

  double real(std::string_view key) const { return parse_real(lookup(key).name, get(key).value); }
  std::int64_t integer(std::string_view key) const { return parse_int(lookup(key).name, get(key).value); }
  const std::string& text(std::string_view key) const { return get(key).value; }
  const ConfigValue& get(std::string_view key) const { return values_.at(lookup(key).name); }

  nlohmann::json echo() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) j[k] = {{"value", v.value}, {"source", v.source}};
    return j;
  }

  ModelConfig model_config(const VocabLayout& vocab = {}) const {
    ModelConfig m;
    m.layers = static_cast<int>(integer("layers"));
    m.model_dim = static_cast<int>(integer("model_dim"));
    m.heads = static_cast<int>(integer("heads"));
    m.mlp_ratio = real("mlp_ratio");
    m.vocab = vocab;
    m.max_len = static_cast<int>(integer("context_cap"));
    m.attention = text("attention") == "causal" ? AttentionVariant::causal : AttentionVariant::bidirectional_image;
    m.rope_base = real("rope_base");
    m.validate();
    return m;
  }

  TrainConfig train_config(Stage stage) const {
    TrainConfig t;
    t.stage = stage;
    t.mask_ratio = real("mask_ratio");
    t.lr_peak = real("lr_peak");
    t.adam = {real("adam_beta1"), real("adam_beta2"), real("adam_eps"), real("weight_decay")};
    t.clip_norm = real("clip_norm");
    t.batch_size = static_cast<int>(integer("batch_size"));
    t.grad_accum = static_cast<int>(integer("grad_accum"));
    t.steps = integer("steps");
    t.seed = static_cast<std::uint64_t>(integer("seed"));
    t.loss_rule = text("loss_rule") == "follow_mask" ? LossRule::follow_mask : LossRule::at_mask;
    t.context_cap = static_cast<int>(integer("context_cap"));
    t.checkpoint_every = integer("checkpoint_every");
    t.validate();
    return t;
  }

 private:
  static const KeySpec& lookup(std::string_view key) {
    for (const auto& k : config_schema()) {
      if (k.name == key) return k;
    }
    throw ValidationError("config: unknown key '" + std::string(key) + "'");
  }

  static double parse_real(const std::string& key, std::string_view v) {
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
      throw ValidationError("config: " + key + " expects a real number, got '" + std::string(v) + "'");
    }
    return out;
  }

  static std::int64_t parse_int(const std::string& key, std::string_view v) {
    std::int64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
      throw ValidationError("config: " + key + " expects an integer, got '" + std::string(v) + "'");
    }
    return out;
  }

  static void check(const KeySpec& spec, std::string_view v) {
    auto range_error = [&]() {
      return ValidationError("config: " + spec.name + "=" + std::string(v) + " is out of range " +
                             (spec.lo_open ? "(" : "[") + format_number(spec.lo) + ", " + format_number(spec.hi) + "]");
    };
    switch (spec.type) {
      case KeyType::real: {
        const double x = parse_real(spec.name, v);
        if (!std::isfinite(x) || x > spec.hi || x < spec.lo || (spec.lo_open && x == spec.lo)) throw range_error();
        break;
      }
      case KeyType::integer: {
        const auto x = static_cast<double>(parse_int(spec.name, v));
        if (x > spec.hi || x < spec.lo) throw range_error();
        break;
      }
      case KeyType::choice: {
        if (std::find(spec.choices.begin(), spec.choices.end(), v) == spec.choices.end()) {
          std::string opts;
          for (const auto& c : spec.choices) opts += (opts.empty() ? "" : ", ") + c;
          throw ValidationError("config: " + spec.name + " must be one of {" + opts + "}, got '" + std::string(v) + "'");
        }
        break;
      }
    }
  }

  static std::string format_number(double x) {
    std::ostringstream s;
    s << x;
    return s.str();
  }

  std::map<std::string, ConfigValue> values_;
};

inline std::string_view trim_ws(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// key=value lines; '#' starts a comment; blank lines ignored.
inline Config parse_config(std::string_view text) {
  Config cfg;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim_ws(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    cfg.set(trim_ws(line.substr(0, eq)), trim_ws(line.substr(eq + 1)), "file");
  }
  return cfg;
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_config(s.str());
}

}  // namespace cxmx
