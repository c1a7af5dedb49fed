#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "scopeformer/dataset.hpp"
#include "scopeformer/model.hpp"
#include "scopeformer/trainer.hpp"

namespace scopeformer {

struct SynthConfig {
  std::string dir;
  std::size_t count = 0;
  std::size_t val_count = 0;
  std::size_t size = 32;
  std::uint64_t seed = 0;
  double positive_rate = 0.3;
  SampleFormat format = SampleFormat::Sfi;

  bool operator==(const SynthConfig&) const = default;
};

struct DataConfig {
  std::string manifest;
  std::string val_manifest;
  /// When set, `train` generates the data before reading the manifests.
  std::optional<SynthConfig> synth;

  bool operator==(const DataConfig&) const = default;
};

/// Everything a run needs. JSON layout:
///
///   { "model": {...}, "train": {...}, "data": {...}, "loss": {"weights", "eps"} }
///
/// Unknown keys and wrong types raise ConfigError naming the dotted path.
/// Relative paths are taken as given, i.e. against the working directory.
struct RunConfig {
  ScopeformerConfig model;
  TrainConfig train;
  DataConfig data;

  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Pretty-printed, keys sorted; parse_run_config(to_json(c)) == c.
std::string run_config_to_json(const RunConfig& config);

ScopeformerConfig parse_model_config(const std::string& json_text);
/// Compact canonical form; the input to config_digest.
std::string model_config_to_json(const ScopeformerConfig& config);

}  // namespace scopeformer
