#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fpx/fpi.hpp"
#include "fpx/train.hpp"

namespace fpx::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` text with `[section]` headers; `#` starts a comment.
/// Keys are addressed as "section.key" (bare "key" before any header).
class ConfigFile {
 public:
  static ConfigFile parse(std::istream& in, const std::string& source = "<config>");
  static ConfigFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  /// Canonical text: sorted keys, one `key = value` per line.
  std::string canonical() const;

 private:
  std::string where(const std::string& key) const;

  std::string source_;
  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
};

enum class Task { Toybox, Denoise, Multilabel, Gradcheck };
enum class ModelKind { FpiNn, FpiGd, Feedforward };

Task parse_task(const std::string& s);
ModelKind parse_model(const std::string& s);
std::string to_string(Task t);
std::string to_string(ModelKind m);

struct ExperimentConfig {
  Task task = Task::Toybox;
  std::vector<ModelKind> models;
  FpiLayerConfig fpi;
  double init_scale = 1.0;
  int epochs = 1;
  int batch_size = 1;
  std::uint64_t seed = 0;
  AdamConfig adam;
  double grad_clip = 0.0;  // 0 disables clamping
  ClampMode clamp_mode = ClampMode::GlobalNorm;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir = "runs";
  std::string run_id;
  /// Every key of the source file, for task-specific settings.
  ConfigFile raw;
};

/// Reads the [experiment], [fpi] and [backward] sections; the task's own
/// section stays in `raw`. Relative data paths resolve against `base_dir`.
ExperimentConfig experiment_from(const ConfigFile& file, const std::filesystem::path& base_dir = {});

}  // namespace fpx::cli
