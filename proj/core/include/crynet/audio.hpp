#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "crynet/errors.hpp"

namespace crynet {

inline constexpr int kTargetSampleRate = 16000;

/// Mono audio at its native floating-point amplitude scale.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kTargetSampleRate;

  [[nodiscard]] double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

/// Reads a RIFF/WAVE file. Integer PCM (16/24/32-bit) is scaled by 2^(bits-1),
/// IEEE float (32/64-bit) is taken as is, and channels are averaged to mono.
/// Throws ParseError, UnsupportedFormat or EmptyAudio.
AudioClip load_wav(const std::filesystem::path& path);

/// Header-only probe used when building manifests.
struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  std::uint64_t frames = 0;
  [[nodiscard]] double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(frames) / sample_rate : 0.0;
  }
};
WavInfo probe_wav(const std::filesystem::path& path);

/// Writes mono 16-bit PCM, clipping to [-1, 1].
void write_wav_pcm16(const std::filesystem::path& path, const AudioClip& clip);

/// Writes mono 32-bit IEEE float.
void write_wav_float32(const std::filesystem::path& path, const AudioClip& clip);

/// Band-limited windowed-sinc resampling to 16 kHz. Identity when the clip is
/// already at 16 kHz. Throws UnsupportedRate below 4 kHz.
AudioClip resample_to_16k(const AudioClip& clip);

/// General form of the above, exposed for tests.
AudioClip resample(const AudioClip& clip, int target_rate);

/// Validates the AudioClip invariants (non-empty, finite, positive rate).
void validate(const AudioClip& clip);

}  // namespace crynet
