#pragma once

#include <filesystem>
#include <string>

#include "crynet/features.hpp"

namespace crynet {

/// Metadata stored next to every CRYF file as `<file>.json`.
struct FeatureSidecar {
  std::string source;             // audio path the tensor was extracted from
  int source_sample_rate = 0;
  int sample_rate = kTargetSampleRate;
  double duration_s = 0.0;
  std::string config_hash;
  std::string subset = "mfcc,stft,f0,wave";
  std::string tool_version;
};

/// Binary container: "CRYF", u32 version (1), u32 channels, u32 frames, then
/// row-major little-endian float32 values.
void write_cryf(const std::filesystem::path& path, const AlignedFeatureTensor& tensor);
AlignedFeatureTensor read_cryf(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& cryf_path);

/// The sidecar also carries the fixed channel layout so consumers need not
/// hard-code row offsets.
void write_feature_sidecar(const std::filesystem::path& path, const FeatureSidecar& meta);
FeatureSidecar read_feature_sidecar(const std::filesystem::path& path);

}  // namespace crynet
