#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "crynet/audio.hpp"

namespace crynet {

enum class Modality { Mfcc, Stft, F0, F0Conf, Wave };

std::string_view to_string(Modality m);

/// Which modalities survive into the fused tensor. F0 and its confidence are
/// toggled together since neither is meaningful alone.
class FeatureSet {
 public:
  static FeatureSet all() { return FeatureSet(true, true, true, true); }
  static FeatureSet none() { return FeatureSet(false, false, false, false); }
  /// Parses a comma list drawn from {mfcc, stft, f0, wave}; "all" is accepted.
  static FeatureSet parse(std::string_view spec);

  FeatureSet() : FeatureSet(true, true, true, true) {}
  FeatureSet(bool mfcc, bool stft, bool f0, bool wave)
      : mfcc_(mfcc), stft_(stft), f0_(f0), wave_(wave) {}

  [[nodiscard]] bool contains(Modality m) const;
  [[nodiscard]] bool is_all() const { return mfcc_ && stft_ && f0_ && wave_; }
  [[nodiscard]] std::string to_string() const;

  bool operator==(const FeatureSet&) const = default;

 private:
  bool mfcc_, stft_, f0_, wave_;
};

struct StftConfig {
  int fft_size = 512;
  int window_len = 480;  // 30 ms
  int hop = 240;         // 50% overlap
  double epsilon = 1e-10;

  void validate() const;
};

struct MfccConfig {
  int window_len = 480;  // 30 ms Hamming
  int hop = 160;         // 10 ms
  int fft_size = 512;
  int n_mels = 26;
  int n_coeffs = 13;
  double f_min_hz = 0.0;
  double f_max_hz = 8000.0;
  double log_floor = 1e-10;

  void validate() const;
};

struct PitchConfig {
  int frame_len = 1024;  // 64 ms
  int hop = 240;         // matches the STFT hop
  double f0_min_hz = 80.0;
  double f0_max_hz = 600.0;
  double voicing_threshold = 0.3;

  void validate(int sample_rate) const;
};

/// Channel layout of the fused tensor, rows top to bottom.
struct ChannelLayout {
  static constexpr int kMfccRows = 13;
  static constexpr int kStftRows = 257;
  static constexpr int kMfccBegin = 0;
  static constexpr int kStftBegin = kMfccBegin + kMfccRows;  // 13
  static constexpr int kF0Row = kStftBegin + kStftRows;      // 270
  static constexpr int kF0ConfRow = kF0Row + 1;              // 271
  static constexpr int kWaveRow = kF0ConfRow + 1;            // 272
  static constexpr int kChannels = kWaveRow + 1;             // 273
};

inline constexpr int kDefaultFrames = 233;

struct FeatureConfig {
  StftConfig stft;
  MfccConfig mfcc;
  PitchConfig pitch;
  int n_frames = kDefaultFrames;
  FeatureSet subset = FeatureSet::all();

  void validate() const;
  /// Stable hex digest of every field that influences the extracted tensor.
  [[nodiscard]] std::string hash() const;
};

/// One modality on its native time grid: rows are coefficients, columns frames.
struct FeatureMatrix {
  Modality modality = Modality::Stft;
  Eigen::MatrixXd data;

  [[nodiscard]] Eigen::Index frames() const { return data.cols(); }
};

struct MelFilterbank {
  Eigen::MatrixXd weights;            // n_mels x (fft_size / 2 + 1)
  std::vector<double> center_hz;      // one per filter, increasing
  std::vector<int> center_bin;
};

struct PitchTrack {
  std::vector<double> f0_hz;       // 0 for unvoiced frames
  std::vector<double> confidence;  // in [0, 1]
};

/// Fused (channels x frames) tensor; see ChannelLayout.
struct AlignedFeatureTensor {
  Eigen::MatrixXd data;

  [[nodiscard]] Eigen::Index channels() const { return data.rows(); }
  [[nodiscard]] Eigen::Index frames() const { return data.cols(); }
};

/// Source of (f0, confidence) contours. The built-in estimator is
/// AutocorrelationPitch; SidecarPitch replays an externally computed track.
class PitchEstimator {
 public:
  virtual ~PitchEstimator() = default;
  [[nodiscard]] virtual PitchTrack estimate(const AudioClip& clip) const = 0;
};

class AutocorrelationPitch final : public PitchEstimator {
 public:
  explicit AutocorrelationPitch(PitchConfig cfg = {}) : cfg_(cfg) {}
  [[nodiscard]] PitchTrack estimate(const AudioClip& clip) const override;

 private:
  PitchConfig cfg_;
};

class SidecarPitch final : public PitchEstimator {
 public:
  explicit SidecarPitch(PitchTrack track) : track_(std::move(track)) {}
  [[nodiscard]] PitchTrack estimate(const AudioClip&) const override { return track_; }

 private:
  PitchTrack track_;
};

/// Reads `time_s,f0_hz,confidence` CSV rows. Values are clamped into the
/// PitchTrack invariants (f0 >= 0, confidence in [0, 1]).
PitchTrack load_pitch_sidecar(const std::filesystem::path& path);

/// `<clip>.f0.csv` next to the audio file.
std::filesystem::path pitch_sidecar_path(const std::filesystem::path& audio_path);

/// |X(k, n)|^2 with a Hamming window, frames zero-padded to fft_size.
/// Returns (fft_size / 2 + 1) x frames.
Eigen::MatrixXd power_spectrogram(const AudioClip& clip, int window_len, int hop, int fft_size);

/// Number of full analysis frames: floor((len - window) / hop) + 1.
int frame_count(std::size_t n_samples, int window_len, int hop);

FeatureMatrix stft_logpower(const AudioClip& clip, const StftConfig& cfg = {});

MelFilterbank build_mel_filterbank(const MfccConfig& cfg, int fft_size, int sample_rate);

FeatureMatrix mfcc(const AudioClip& clip, const MfccConfig& cfg, const MelFilterbank& fb);

/// DCT of per-frame log mel energies (n_mels x frames) into n_coeffs rows.
Eigen::MatrixXd cepstrum_from_log_mel(const Eigen::MatrixXd& log_mel, int n_coeffs);

PitchTrack estimate_pitch(const AudioClip& clip, const PitchConfig& cfg = {});

/// Linear interpolation of the raw samples onto `n_frames` points.
FeatureMatrix waveform_channel(const AudioClip& clip, int n_frames = kDefaultFrames);

/// Nearest-index alignment: column t (1-based) takes source column
/// clamp(floor(T_m * t / T), 1, T_m).
FeatureMatrix align_time(const FeatureMatrix& fm, int n_frames = kDefaultFrames);

/// Full extraction: MFCC, STFT, pitch and waveform channels on one timeline.
/// Excluded modalities are zeroed; the shape never changes.
AlignedFeatureTensor fuse_features(const AudioClip& clip, const FeatureConfig& cfg = {},
                                   const PitchEstimator* pitch = nullptr);

/// Median STFT frame count over clip durations; the timeline length the
/// alignment defaults to when recomputed from a corpus.
int median_frame_count(const std::vector<double>& durations_s, const StftConfig& cfg = {},
                       int sample_rate = kTargetSampleRate);

}  // namespace crynet
