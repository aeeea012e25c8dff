#include "ssn/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <type_traits>

namespace ssn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const std::string t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError("config: bad value '" + text + "' for " + key);
  }
  return v;
}

void assign(const std::string& key, const std::string& text, int& out) { out = parse_number<int>(key, text); }
void assign(const std::string& key, const std::string& text, double& out) {
  out = parse_number<double>(key, text);
}
void assign(const std::string& key, const std::string& text, std::uint64_t& out) {
  out = parse_number<std::uint64_t>(key, text);
}
void assign(const std::string&, const std::string& text, std::string& out) { out = trim(text); }
void assign(const std::string& key, const std::string& text, bool& out) {
  const std::string t = trim(text);
  if (t == "true" || t == "1") out = true;
  else if (t == "false" || t == "0") out = false;
  else throw ConfigError("config: bad boolean '" + text + "' for " + key);
}
void assign(const std::string& key, const std::string& text, std::vector<int>& out) {
  std::vector<int> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(parse_number<int>(key, item));
  if (v.empty()) throw ConfigError("config: empty list for " + key);
  out = std::move(v);
}
void assign(const std::string& key, const std::string& text, PathLengthMode& out) {
  const std::string t = trim(text);
  if (t == "standard") out = PathLengthMode::standard;
  else if (t == "spatial") out = PathLengthMode::spatial;
  else throw ConfigError("config: " + key + " must be standard or spatial, got '" + text + "'");
}

std::string format(int v) { return std::to_string(v); }
std::string format(std::uint64_t v) { return std::to_string(v); }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(const std::string& v) { return v; }
std::string format(PathLengthMode m) { return to_string(m); }
std::string format(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}
std::string format(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

}  // namespace

std::string to_string(PathLengthMode m) { return m == PathLengthMode::standard ? "standard" : "spatial"; }

void GeneratorConfig::validate() const {
  require(latent_rows > 0 && latent_cols > 0, "latent grid must be non-empty");
  require(n_z > 0, "n_z must be positive");
  require(mapping_depth >= 0, "mapping_depth must be non-negative");
  require(mapping_lr_mul > 0.0, "mapping_lr_mul must be positive");
  require(!channels.empty(), "g_channels must list at least one resolution");
  for (int c : channels) require(c > 0, "g_channels entries must be positive");
  require(image_channels > 0, "image_channels must be positive");
  require(!conditional || cond_channels > 0, "cond_channels must be positive");
}

void DiscriminatorConfig::validate(const GeneratorConfig& g) const {
  require(!channels.empty(), "d_channels must list at least one resolution");
  for (int c : channels) require(c > 0, "d_channels entries must be positive");
  const int stages = static_cast<int>(channels.size()) - 1;
  require((g.output_height() >> stages) >= 1 && (g.output_width() >> stages) >= 1 &&
              (g.output_height() % (1 << stages)) == 0 && (g.output_width() % (1 << stages)) == 0,
          "d_channels has more downsampling stages than the image allows");
}

void RegularizerSettings::validate() const {
  require(lambda_r1 >= 0.0 && lambda_pl >= 0.0 && lambda_d >= 0.0, "regularizer weights must be >= 0");
  if (pl_mode == PathLengthMode::spatial) {
    require(gamma_plus > gamma_minus && gamma_minus >= 0.0, "spatial path length needs gamma_plus > gamma_minus >= 0");
  }
  require(pl_decay > 0.0 && pl_decay <= 1.0, "pl_decay must be in (0, 1]");
  require(pl_batch_shrink >= 1, "pl_batch_shrink must be >= 1");
  require(lazy_interval >= 1 && rd_interval >= 1, "intervals must be >= 1");
}

void TrainConfig::validate() const {
  generator.validate();
  discriminator.validate(generator);
  reg.validate();
  require(steps >= 0, "steps must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(batch_size / reg.pl_batch_shrink >= 1, "path-length batch would be empty");
  require(lr > 0.0, "lr must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must be in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
  require(eval_samples >= 2 && eval_pairs >= 1 && ppl_samples >= 1, "evaluation sizes must be positive");
  require(ppl_epsilon > 0.0, "ppl_epsilon must be positive");
  require(log_interval >= 1, "log_interval must be >= 1");
}

std::string TrainConfig::partition_spec() const {
  if (!partition.empty()) return partition;
  return std::to_string(generator.latent_rows) + "x" + std::to_string(generator.latent_cols);
}

void set_field(TrainConfig& c, const std::string& key, const std::string& value) {
  bool found = false;
  visit_fields(c, [&](const char* k, auto& field) {
    if (key == k) {
      assign(key, value, field);
      found = true;
    }
  });
  if (!found) throw ConfigError("config: unknown key '" + key + "'");
}

std::vector<std::string> config_keys() {
  TrainConfig c;
  std::vector<std::string> keys;
  visit_fields(c, [&](const char* k, auto&) { keys.emplace_back(k); });
  return keys;
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    set_field(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  base.validate();
  return base;
}

TrainConfig load_config(const std::string& path, TrainConfig base) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string to_text(const TrainConfig& c) {
  TrainConfig copy = c;
  std::string out;
  visit_fields(copy, [&](const char* k, auto& field) { out += std::string(k) + " = " + format(field) + "\n"; });
  return out;
}

}  // namespace ssn
