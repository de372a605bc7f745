#include "hemb/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "hemb/errors.hpp"

namespace hemb {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_integer(std::string_view key, std::string_view value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || value[0] == '-' || ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("key '" + std::string(key) + "' expects a non-negative integer, got '" + std::string(value) +
                      "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(out)) {
    throw ConfigError("key '" + std::string(key) + "' expects a number, got '" + std::string(value) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("key '" + std::string(key) + "' expects true or false, got '" + std::string(value) + "'");
}

std::string format_real(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename T>
Field size_field(std::string key, T RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return std::to_string(c.*member); },
          [key, member](RunConfig& c, std::string_view v) { c.*member = parse_integer<T>(key, v); }};
}

Field model_size(std::string key, std::size_t ModelConfig::*member) {
  return {key, [member](const RunConfig& c) { return std::to_string(c.model.*member); },
          [key, member](RunConfig& c, std::string_view v) { c.model.*member = parse_integer<std::size_t>(key, v); }};
}

Field model_flag(std::string key, bool ModelConfig::*member) {
  return {key, [member](const RunConfig& c) { return std::string(c.model.*member ? "true" : "false"); },
          [key, member](RunConfig& c, std::string_view v) { c.model.*member = parse_bool(key, v); }};
}

Field optimizer_real(std::string key, double OptimizerConfig::*member) {
  return {key, [member](const RunConfig& c) { return format_real(c.optimizer.*member); },
          [key, member](RunConfig& c, std::string_view v) { c.optimizer.*member = parse_real(key, v); }};
}

Field optimizer_size(std::string key, std::size_t OptimizerConfig::*member) {
  return {key, [member](const RunConfig& c) { return std::to_string(c.optimizer.*member); },
          [key, member](RunConfig& c, std::string_view v) {
            c.optimizer.*member = parse_integer<std::size_t>(key, v);
          }};
}

Field text_field(std::string key, std::string RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return c.*member; },
          [member](RunConfig& c, std::string_view v) { c.*member = std::string(v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(model_size("depth", &ModelConfig::depth));
    f.push_back(model_size("dim", &ModelConfig::dim));
    f.push_back(model_size("num_groups", &ModelConfig::num_groups));
    f.push_back(model_size("group_size", &ModelConfig::group_size));
    f.push_back(model_size("lgp_neighbors", &ModelConfig::lgp_neighbors));
    f.push_back(model_size("cofe_groups", &ModelConfig::cofe_groups));
    f.push_back(model_size("ssm_state", &ModelConfig::ssm_state));
    f.push_back(model_size("num_classes", &ModelConfig::num_classes));
    f.push_back(model_size("pos_hidden", &ModelConfig::pos_hidden));
    f.push_back(model_size("head_hidden", &ModelConfig::head_hidden));
    f.push_back({"drop_path_rate", [](const RunConfig& c) { return format_real(c.model.drop_path_rate); },
                 [](RunConfig& c, std::string_view v) { c.model.drop_path_rate = parse_real("drop_path_rate", v); }});
    f.push_back(model_flag("use_lgp", &ModelConfig::use_lgp));
    f.push_back(model_flag("lgp_gaussian", &ModelConfig::lgp_gaussian));
    f.push_back(model_flag("use_cofe", &ModelConfig::use_cofe));
    f.push_back(model_flag("ssm_gate", &ModelConfig::ssm_gate));
    f.push_back(model_flag("share_reverse", &ModelConfig::share_reverse));
    f.push_back(model_flag("head_pool_concat", &ModelConfig::head_pool_concat));
    f.push_back(optimizer_real("lr", &OptimizerConfig::lr));
    f.push_back(optimizer_real("min_lr", &OptimizerConfig::min_lr));
    f.push_back(optimizer_real("weight_decay", &OptimizerConfig::weight_decay));
    f.push_back(optimizer_size("warmup_epochs", &OptimizerConfig::warmup_epochs));
    f.push_back(optimizer_size("epochs", &OptimizerConfig::epochs));
    f.push_back(size_field("batch_size", &RunConfig::batch_size));
    f.push_back(size_field("train_per_class", &RunConfig::train_per_class));
    f.push_back(size_field("test_per_class", &RunConfig::test_per_class));
    f.push_back(size_field("num_points", &RunConfig::num_points));
    f.push_back(text_field("train_data", &RunConfig::train_data));
    f.push_back(text_field("test_data", &RunConfig::test_data));
    f.push_back(text_field("output_dir", &RunConfig::output_dir));
    f.push_back({"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, std::string_view v) {
                   c.seed = parse_integer<std::uint64_t>("seed", v);
                   c.model.seed = c.seed;
                 }});
    return f;
  }();
  return table;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.optimizer.lr = 1e-3;
  c.optimizer.weight_decay = 0.05;
  c.optimizer.warmup_epochs = 1;
  c.optimizer.epochs = 8;
  // The class row only reaches patch tokens through the CoFE gate, so a head
  // that reads it alone trains far too slowly at this size.
  c.model.head_pool_concat = true;
  return c;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void set_key(RunConfig& config, std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(config, trim(value));
      return;
    }
  }
  std::string valid;
  for (const auto& k : config_keys()) valid += (valid.empty() ? "" : ", ") + k;
  throw ConfigError("unknown config key '" + std::string(key) + "'; valid keys: " + valid);
}

void apply_config_text(RunConfig& config, std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto end = text.find('\n');
    std::string_view line = text.substr(0, end);
    text = end == std::string_view::npos ? std::string_view{} : text.substr(end + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    set_key(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::string config_text(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace hemb
