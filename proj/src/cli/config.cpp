#include "fpx/cli/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace fpx::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigFile ConfigFile::parse(std::istream& in, const std::string& source) {
  ConfigFile cfg;
  cfg.source_ = source;
  std::string line, section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError(source + ":" + std::to_string(number) + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(number) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(number) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.values_.count(full)) {
      throw ConfigError(source + ":" + std::to_string(number) + ": duplicate key '" + full + "'");
    }
    cfg.values_[full] = trim(line.substr(eq + 1));
    cfg.lines_[full] = number;
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in, path.string());
}

std::string ConfigFile::where(const std::string& key) const {
  const auto it = lines_.find(key);
  return it == lines_.end() ? source_ + ": '" + key + "'"
                            : source_ + ":" + std::to_string(it->second) + ": '" + key + "'";
}

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string ConfigFile::require_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(source_ + ": missing required key '" + key + "'");
  return it->second;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(where(key) + " is not a number: " + it->second);
  }
}

long long ConfigFile::get_int(const std::string& key, long long fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  long long v = 0;
  const auto& s = it->second;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError(where(key) + " is not an integer: " + s);
  }
  return v;
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& s = it->second;
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(where(key) + " is not a boolean: " + s);
}

std::vector<std::string> ConfigFile::get_list(const std::string& key,
                                              const std::vector<std::string>& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<std::string> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> ConfigFile::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  for (const auto& s : get_list(key, {})) {
    try {
      out.push_back(std::stod(s));
    } catch (const std::exception&) {
      throw ConfigError(where(key) + " has a non-numeric entry: " + s);
    }
  }
  return out;
}

std::string ConfigFile::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

Task parse_task(const std::string& s) {
  if (s == "toybox") return Task::Toybox;
  if (s == "denoise") return Task::Denoise;
  if (s == "multilabel") return Task::Multilabel;
  if (s == "gradcheck") return Task::Gradcheck;
  throw ConfigError("unknown task '" + s + "' (expected toybox, denoise, multilabel or gradcheck)");
}

ModelKind parse_model(const std::string& s) {
  if (s == "fpi_nn") return ModelKind::FpiNn;
  if (s == "fpi_gd") return ModelKind::FpiGd;
  if (s == "feedforward") return ModelKind::Feedforward;
  throw ConfigError("unknown model '" + s + "' (expected fpi_nn, fpi_gd or feedforward)");
}

std::string to_string(Task t) {
  switch (t) {
    case Task::Toybox: return "toybox";
    case Task::Denoise: return "denoise";
    case Task::Multilabel: return "multilabel";
    case Task::Gradcheck: return "gradcheck";
  }
  return "?";
}

std::string to_string(ModelKind m) {
  switch (m) {
    case ModelKind::FpiNn: return "fpi_nn";
    case ModelKind::FpiGd: return "fpi_gd";
    case ModelKind::Feedforward: return "feedforward";
  }
  return "?";
}

namespace {

Criterion parse_criterion(const ConfigFile& f, const std::string& key, Criterion fallback) {
  if (!f.has(key)) return fallback;
  const auto s = f.get_string(key, "");
  if (s == "relative" || s == "relative_beta") return Criterion::RelativeBeta;
  if (s == "absolute" || s == "absolute_beta") return Criterion::AbsoluteBeta;
  throw ConfigError("'" + key + "' must be relative or absolute, got '" + s + "'");
}

FpiConfig read_fpi(const ConfigFile& f, const std::string& section, const FpiConfig& base) {
  FpiConfig c = base;
  c.tol = f.get_double(section + ".tol", c.tol);
  c.criterion = parse_criterion(f, section + ".criterion", c.criterion);
  c.max_iter = static_cast<int>(f.get_int(section + ".max_iter", c.max_iter));
  c.gamma = f.get_double(section + ".gamma", c.gamma);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("[" + section + "] " + e.what());
  }
  return c;
}

}  // namespace

ExperimentConfig experiment_from(const ConfigFile& f, const std::filesystem::path& base_dir) {
  ExperimentConfig e;
  e.raw = f;
  e.task = parse_task(f.require_string("experiment.task"));
  for (const auto& m : f.get_list("experiment.models", {"fpi_nn"})) e.models.push_back(parse_model(m));
  e.seed = static_cast<std::uint64_t>(f.get_int("experiment.seed", 0));
  e.epochs = static_cast<int>(f.get_int("experiment.epochs", 1));
  e.batch_size = static_cast<int>(f.get_int("experiment.batch_size", 1));
  e.init_scale = f.get_double("experiment.init_scale", 1.0);
  e.adam.lr = f.get_double("experiment.lr", e.adam.lr);
  e.grad_clip = f.get_double("experiment.grad_clip", 0.0);
  const auto mode = f.get_string("experiment.clamp_mode", "global");
  if (mode == "global") e.clamp_mode = ClampMode::GlobalNorm;
  else if (mode == "per_tensor") e.clamp_mode = ClampMode::PerTensorNorm;
  else if (mode == "value") e.clamp_mode = ClampMode::Value;
  else throw ConfigError("experiment.clamp_mode must be global, per_tensor or value");
  e.run_id = f.get_string("experiment.run_id", to_string(e.task));
  if (f.has("experiment.data_dir")) {
    e.data_dir = f.get_string("experiment.data_dir", "");
    if (e.data_dir.is_relative() && !base_dir.empty()) e.data_dir = base_dir / e.data_dir;
  }
  e.out_dir = f.get_string("experiment.out_dir", "runs");

  e.fpi.forward = read_fpi(f, "fpi", FpiConfig{});
  FpiConfig back_base;
  back_base.tol = e.fpi.forward.tol;
  back_base.max_iter = e.fpi.forward.max_iter;
  e.fpi.backward = read_fpi(f, "backward", back_base);
  const auto policy = f.get_string("fpi.policy", "warn");
  if (policy == "warn") e.fpi.policy = UnconvergedPolicy::Warn;
  else if (policy == "abort") e.fpi.policy = UnconvergedPolicy::Abort;
  else throw ConfigError("fpi.policy must be warn or abort");

  if (e.epochs < 0 || e.batch_size < 1) throw ConfigError("epochs must be >= 0 and batch_size >= 1");
  if (!(e.init_scale > 0.0)) throw ConfigError("init_scale must be positive");
  if (e.grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
  return e;
}

}  // namespace fpx::cli
