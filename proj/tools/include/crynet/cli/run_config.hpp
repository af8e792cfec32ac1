#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "crynet/data.hpp"
#include "crynet/features.hpp"
#include "crynet/fusion.hpp"
#include "crynet/model.hpp"

namespace crynet::cli {

/// Every module setting in one place. The JSON form has the sections
/// features, model, train, split, fusion and synth; unknown keys are errors.
struct RunConfig {
  FeatureConfig features;
  ModelConfig model;
  TrainConfig train;
  SplitSpec split;
  FusionConfig fusion;
  SynthSpec synth;

  /// Defaults when `path` is empty.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig from_json(const nlohmann::json& j);
  [[nodiscard]] nlohmann::ordered_json to_json() const;
  [[nodiscard]] std::string hash() const;
};

/// `<artifact>.meta.json` with the config hash, tool version and command, for
/// outputs (CSV, JSON lines) that have no header of their own.
void write_meta(const std::filesystem::path& artifact, const std::string& config_hash, const std::string& command);

}  // namespace crynet::cli
