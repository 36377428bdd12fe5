#include "contra/config_toml.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "contra/errors.hpp"

namespace contra::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s = buf;
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

double as_double(const std::string& key, const std::string& raw) {
  double v = 0.0;
  const auto res = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (res.ec != std::errc{} || res.ptr != raw.data() + raw.size()) {
    throw ConfigError("config: " + key + " expects a number, got '" + raw + "'");
  }
  return v;
}

long long as_int(const std::string& key, const std::string& raw) {
  long long v = 0;
  const auto res = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (res.ec != std::errc{} || res.ptr != raw.data() + raw.size()) {
    throw ConfigError("config: " + key + " expects an integer, got '" + raw + "'");
  }
  return v;
}

std::size_t as_size(const std::string& key, const std::string& raw) {
  const long long v = as_int(key, raw);
  if (v < 0) throw ConfigError("config: " + key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

bool as_bool(const std::string& key, const std::string& raw) {
  if (raw == "true") return true;
  if (raw == "false") return false;
  throw ConfigError("config: " + key + " expects true or false, got '" + raw + "'");
}

std::string as_string(const std::string& key, const std::string& raw) {
  if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"') {
    throw ConfigError("config: " + key + " expects a quoted string, got '" + raw + "'");
  }
  return raw.substr(1, raw.size() - 2);
}

std::vector<std::size_t> as_size_list(const std::string& key, const std::string& raw) {
  if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']') {
    throw ConfigError("config: " + key + " expects an array, got '" + raw + "'");
  }
  std::vector<std::size_t> out;
  std::stringstream ss(raw.substr(1, raw.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(as_size(key, item));
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> parse_toml(const std::string& text) {
  std::map<std::string, std::string> out;
  std::string section;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key or value");
    const std::string full = section.empty() ? key : section + "." + key;
    if (!out.emplace(full, value).second) throw ConfigError("config: duplicate key " + full);
  }
  return out;
}

std::string to_toml(const train::TrainConfig& c) {
  std::ostringstream o;
  o << "preset = \"" << c.preset << "\"\n"
    << "lr_d = " << fmt_double(c.lr_d) << "\n"
    << "lr_g = " << fmt_double(c.lr_g) << "\n"
    << "beta1 = " << fmt_double(c.beta1) << "\n"
    << "beta2 = " << fmt_double(c.beta2) << "\n"
    << "batch_size = " << c.batch_size << "\n"
    << "temperature = " << fmt_double(c.temperature) << "\n"
    << "n_dis = " << c.n_dis << "\n"
    << "lambda = " << fmt_double(c.lambda) << "\n"
    << "loss = \"" << models::to_string(c.loss) << "\"\n"
    << "adv_loss = \"" << train::to_string(c.adv_loss) << "\"\n"
    << "iterations = " << c.iterations << "\n"
    << "eval_interval = " << c.eval_interval << "\n"
    << "seed = " << c.seed << "\n"
    << "noise_dim = " << c.noise_dim << "\n"
    << "g_hidden = " << fmt_list(c.g_hidden) << "\n"
    << "g_embed_dim = " << c.g_embed_dim << "\n"
    << "d_trunk = " << fmt_list(c.d_trunk) << "\n"
    << "proj_dim = " << c.proj_dim << "\n"
    << "proj_type = \"" << models::to_string(c.proj_type) << "\"\n"
    << "d_spectral = " << (c.d_spectral ? "true" : "false") << "\n"
    << "g_spectral = " << (c.g_spectral ? "true" : "false") << "\n"
    << "aug_sigma = " << fmt_double(c.aug_sigma) << "\n"
    << "eval_per_class = " << c.eval_per_class << "\n"
    << "log_wallclock = " << (c.log_wallclock ? "true" : "false") << "\n"
    << "\n[ema]\n"
    << "decay = " << fmt_double(c.ema.decay) << "\n"
    << "start = " << c.ema.start << "\n"
    << "\n[cr]\n"
    << "enabled = " << (c.cr.enabled ? "true" : "false") << "\n"
    << "coefficient = " << fmt_double(c.cr.coefficient) << "\n"
    << "jitter_sigma = " << fmt_double(c.cr.jitter_sigma) << "\n";
  return o.str();
}

train::TrainConfig from_toml(const std::string& text, train::TrainConfig base) {
  auto values = parse_toml(text);
  train::TrainConfig c = std::move(base);
  if (auto it = values.find("preset"); it != values.end()) {
    c = train::apply_preset(c, as_string("preset", it->second));
    values.erase(it);
  }
  for (const auto& [key, raw] : values) {
    if (key == "lr_d") c.lr_d = as_double(key, raw);
    else if (key == "lr_g") c.lr_g = as_double(key, raw);
    else if (key == "beta1") c.beta1 = as_double(key, raw);
    else if (key == "beta2") c.beta2 = as_double(key, raw);
    else if (key == "batch_size") c.batch_size = as_size(key, raw);
    else if (key == "temperature") c.temperature = as_double(key, raw);
    else if (key == "n_dis") c.n_dis = static_cast<int>(as_int(key, raw));
    else if (key == "lambda") c.lambda = as_double(key, raw);
    else if (key == "loss") c.loss = models::parse_mode(as_string(key, raw));
    else if (key == "adv_loss") c.adv_loss = train::parse_adv_loss(as_string(key, raw));
    else if (key == "iterations") c.iterations = as_int(key, raw);
    else if (key == "eval_interval") c.eval_interval = as_int(key, raw);
    else if (key == "seed") c.seed = as_size(key, raw);
    else if (key == "noise_dim") c.noise_dim = as_size(key, raw);
    else if (key == "g_hidden") c.g_hidden = as_size_list(key, raw);
    else if (key == "g_embed_dim") c.g_embed_dim = as_size(key, raw);
    else if (key == "d_trunk") c.d_trunk = as_size_list(key, raw);
    else if (key == "proj_dim") c.proj_dim = as_size(key, raw);
    else if (key == "proj_type") c.proj_type = models::parse_projection_type(as_string(key, raw));
    else if (key == "d_spectral") c.d_spectral = as_bool(key, raw);
    else if (key == "g_spectral") c.g_spectral = as_bool(key, raw);
    else if (key == "aug_sigma") c.aug_sigma = as_double(key, raw);
    else if (key == "eval_per_class") c.eval_per_class = as_size(key, raw);
    else if (key == "log_wallclock") c.log_wallclock = as_bool(key, raw);
    else if (key == "ema.decay") c.ema.decay = as_double(key, raw);
    else if (key == "ema.start") c.ema.start = as_int(key, raw);
    else if (key == "cr.enabled") c.cr.enabled = as_bool(key, raw);
    else if (key == "cr.coefficient") c.cr.coefficient = as_double(key, raw);
    else if (key == "cr.jitter_sigma") c.cr.jitter_sigma = as_double(key, raw);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

}  // namespace contra::config
