#include "crynet/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>

#include "crynet/errors.hpp"
#include "crynet/hash.hpp"

namespace crynet {
namespace {

std::vector<double> hamming(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  if (n == 1) {
    w[0] = 1.0;
    return w;
  }
  for (int i = 0; i < n; ++i) {
    w[static_cast<std::size_t>(i)] =
        0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (n - 1));
  }
  return w;
}

// One lock for every FFTW planner call in the process.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// FFTW planning is not thread-safe, execution on distinct buffers is. Plans
// are built once per size under a lock and executed with the new-array API.
class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    std::lock_guard lock(planner_mutex());
    auto* in = fftw_alloc_real(static_cast<std::size_t>(n));
    auto* out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    plan_ = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(in);
    fftw_free(out);
    if (plan_ == nullptr) throw ConfigError("fftw could not plan a transform of size " + std::to_string(n));
  }
  ~RealFft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  void execute(std::vector<double>& in, std::vector<std::complex<double>>& out) const {
    out.resize(static_cast<std::size_t>(n_ / 2 + 1));
    fftw_execute_dft_r2c(plan_, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
  }

 private:
  int n_;
  fftw_plan plan_ = nullptr;
};

// Linear autocorrelation of a real frame through a zero-padded FFT pair.
class FftAutocorrelation {
 public:
  explicit FftAutocorrelation(int frame_len) : n_(1) {
    while (n_ < 2 * frame_len) n_ *= 2;
    std::lock_guard lock(planner_mutex());
    auto* in = fftw_alloc_real(static_cast<std::size_t>(n_));
    auto* out = fftw_alloc_complex(static_cast<std::size_t>(n_ / 2 + 1));
    forward_ = fftw_plan_dft_r2c_1d(n_, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
    inverse_ = fftw_plan_dft_c2r_1d(n_, out, in, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(in);
    fftw_free(out);
    if (forward_ == nullptr || inverse_ == nullptr) throw ConfigError("fftw could not plan the autocorrelation");
  }
  ~FftAutocorrelation() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }
  FftAutocorrelation(const FftAutocorrelation&) = delete;
  FftAutocorrelation& operator=(const FftAutocorrelation&) = delete;

  /// out[lag] = sum_i x[i] x[i + lag] for every lag below x.size().
  void run(const std::vector<double>& x, std::vector<double>& out) {
    buf_.assign(static_cast<std::size_t>(n_), 0.0);
    std::copy(x.begin(), x.end(), buf_.begin());
    spec_.resize(static_cast<std::size_t>(n_ / 2 + 1));
    fftw_execute_dft_r2c(forward_, buf_.data(), reinterpret_cast<fftw_complex*>(spec_.data()));
    for (auto& c : spec_) c = std::norm(c);
    fftw_execute_dft_c2r(inverse_, reinterpret_cast<fftw_complex*>(spec_.data()), buf_.data());
    out.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = buf_[i] / n_;
  }

 private:
  int n_;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
  std::vector<double> buf_;
  std::vector<std::complex<double>> spec_;
};

void require_length(const AudioClip& clip, int window_len) {
  if (clip.samples.size() < static_cast<std::size_t>(window_len)) {
    throw TooShort("clip of " + std::to_string(clip.samples.size()) +
                   " samples cannot fill one " + std::to_string(window_len) +
                   "-sample analysis window");
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

void check_finite(const Eigen::MatrixXd& m, std::string_view what) {
  if (!m.allFinite()) throw NumericalError(std::string(what) + " produced non-finite values");
}

}  // namespace

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::Mfcc: return "mfcc";
    case Modality::Stft: return "stft";
    case Modality::F0: return "f0";
    case Modality::F0Conf: return "f0_conf";
    case Modality::Wave: return "wave";
  }
  return "unknown";
}

FeatureSet FeatureSet::parse(std::string_view spec) {
  FeatureSet out = none();
  std::size_t start = 0;
  while (start <= spec.size()) {
    const std::size_t comma = spec.find(',', start);
    std::string tok(spec.substr(start, comma == std::string_view::npos ? spec.npos : comma - start));
    tok.erase(std::remove_if(tok.begin(), tok.end(), [](unsigned char c) { return std::isspace(c); }),
              tok.end());
    std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
    if (tok == "mfcc") out.mfcc_ = true;
    else if (tok == "stft") out.stft_ = true;
    else if (tok == "f0" || tok == "pitch") out.f0_ = true;
    else if (tok == "wave" || tok == "waveform") out.wave_ = true;
    else if (tok == "all") out = all();
    else if (!tok.empty()) throw ConfigError("unknown feature modality '" + tok + "'");
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (out == none()) throw ConfigError("feature subset is empty");
  return out;
}

bool FeatureSet::contains(Modality m) const {
  switch (m) {
    case Modality::Mfcc: return mfcc_;
    case Modality::Stft: return stft_;
    case Modality::F0:
    case Modality::F0Conf: return f0_;
    case Modality::Wave: return wave_;
  }
  return false;
}

std::string FeatureSet::to_string() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(mfcc_, "mfcc");
  add(stft_, "stft");
  add(f0_, "f0");
  add(wave_, "wave");
  return out;
}

void StftConfig::validate() const {
  if (fft_size <= 0 || window_len <= 0 || hop <= 0) throw ConfigError("stft sizes must be positive");
  if (window_len > fft_size) throw ConfigError("stft window_len exceeds fft_size");
  if (hop > window_len) throw ConfigError("stft hop exceeds window_len");
  if (!(epsilon > 0.0)) throw ConfigError("stft epsilon must be positive");
}

void MfccConfig::validate() const {
  if (window_len <= 0 || hop <= 0 || fft_size < window_len) throw ConfigError("invalid mfcc framing");
  if (n_coeffs < 1) throw ConfigError("mfcc needs at least one coefficient");
  if (n_mels < n_coeffs) throw ConfigError("mfcc needs n_mels >= n_coeffs");
  if (!(f_max_hz > f_min_hz) || f_min_hz < 0.0) throw ConfigError("invalid mel frequency span");
  if (!(log_floor > 0.0)) throw ConfigError("mel log floor must be positive");
}

void PitchConfig::validate(int sample_rate) const {
  if (!(f0_min_hz > 0.0) || !(f0_max_hz > f0_min_hz)) throw ConfigError("invalid pitch search band");
  if (frame_len < 2.0 * sample_rate / f0_max_hz) throw ConfigError("pitch frame shorter than two periods");
  if (frame_len <= static_cast<int>(std::floor(sample_rate / f0_min_hz))) {
    throw ConfigError("pitch frame must exceed the longest searched lag");
  }
  if (hop <= 0) throw ConfigError("pitch hop must be positive");
  if (voicing_threshold < 0.0 || voicing_threshold > 1.0) throw ConfigError("voicing threshold outside [0, 1]");
}

void FeatureConfig::validate() const {
  stft.validate();
  mfcc.validate();
  pitch.validate(kTargetSampleRate);
  if (stft.fft_size / 2 + 1 != ChannelLayout::kStftRows) {
    throw ConfigError("fused layout requires a 512-point STFT (257 bins)");
  }
  if (mfcc.n_coeffs != ChannelLayout::kMfccRows) throw ConfigError("fused layout requires 13 MFCCs");
  if (n_frames < 1) throw ConfigError("timeline length must be >= 1");
}

std::string FeatureConfig::hash() const {
  std::ostringstream s;
  s.precision(17);
  s << "stft:" << stft.fft_size << ',' << stft.window_len << ',' << stft.hop << ',' << stft.epsilon
    << ";mfcc:" << mfcc.window_len << ',' << mfcc.hop << ',' << mfcc.fft_size << ',' << mfcc.n_mels
    << ',' << mfcc.n_coeffs << ',' << mfcc.f_min_hz << ',' << mfcc.f_max_hz << ',' << mfcc.log_floor
    << ";pitch:" << pitch.frame_len << ',' << pitch.hop << ',' << pitch.f0_min_hz << ','
    << pitch.f0_max_hz << ',' << pitch.voicing_threshold << ";T:" << n_frames
    << ";subset:" << subset.to_string();
  return digest(s.str());
}

int frame_count(std::size_t n_samples, int window_len, int hop) {
  if (n_samples < static_cast<std::size_t>(window_len)) return 0;
  return static_cast<int>((n_samples - static_cast<std::size_t>(window_len)) / static_cast<std::size_t>(hop)) + 1;
}

Eigen::MatrixXd power_spectrogram(const AudioClip& clip, int window_len, int hop, int fft_size) {
  require_length(clip, window_len);
  const int frames = frame_count(clip.samples.size(), window_len, hop);
  const int bins = fft_size / 2 + 1;
  const auto window = hamming(window_len);
  const RealFft fft(fft_size);

  Eigen::MatrixXd power(bins, frames);
  std::vector<double> buf(static_cast<std::size_t>(fft_size));
  std::vector<std::complex<double>> spec;
  for (int n = 0; n < frames; ++n) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const std::size_t offset = static_cast<std::size_t>(n) * static_cast<std::size_t>(hop);
    for (int i = 0; i < window_len; ++i) {
      buf[static_cast<std::size_t>(i)] =
          clip.samples[offset + static_cast<std::size_t>(i)] * window[static_cast<std::size_t>(i)];
    }
    fft.execute(buf, spec);
    for (int k = 0; k < bins; ++k) power(k, n) = std::norm(spec[static_cast<std::size_t>(k)]);
  }
  return power;
}

FeatureMatrix stft_logpower(const AudioClip& clip, const StftConfig& cfg) {
  cfg.validate();
  validate(clip);
  Eigen::MatrixXd p = power_spectrogram(clip, cfg.window_len, cfg.hop, cfg.fft_size);
  const double eps = cfg.epsilon;
  FeatureMatrix out{Modality::Stft, p.unaryExpr([eps](double v) { return std::log(v + eps); })};
  check_finite(out.data, "stft");
  return out;
}

MelFilterbank build_mel_filterbank(const MfccConfig& cfg, int fft_size, int sample_rate) {
  cfg.validate();
  const int bins = fft_size / 2 + 1;
  const double nyquist = sample_rate / 2.0;
  const double f_max = std::min(cfg.f_max_hz, nyquist);
  const double mel_lo = hz_to_mel(cfg.f_min_hz);
  const double mel_hi = hz_to_mel(f_max);
  const int m_count = cfg.n_mels;

  // n_mels + 2 mel-uniform edge points, snapped to FFT bins so every
  // triangle peaks at exactly 1.
  std::vector<int> edge(static_cast<std::size_t>(m_count + 2));
  std::vector<double> edge_hz(edge.size());
  for (int i = 0; i < m_count + 2; ++i) {
    const double hz = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (m_count + 1));
    edge_hz[static_cast<std::size_t>(i)] = hz;
    edge[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(hz * fft_size / sample_rate));
  }
  for (std::size_t i = 1; i < edge.size(); ++i) {
    if (edge[i] <= edge[i - 1]) {
      throw ConfigError("mel filterbank too dense for the FFT resolution (" +
                        std::to_string(m_count) + " filters, " + std::to_string(fft_size) + "-point FFT)");
    }
  }

  MelFilterbank fb;
  fb.weights = Eigen::MatrixXd::Zero(m_count, bins);
  for (int m = 0; m < m_count; ++m) {
    const int lo = edge[static_cast<std::size_t>(m)];
    const int mid = edge[static_cast<std::size_t>(m + 1)];
    const int hi = edge[static_cast<std::size_t>(m + 2)];
    for (int k = lo; k <= hi && k < bins; ++k) {
      double w = k <= mid ? static_cast<double>(k - lo) / (mid - lo)
                          : static_cast<double>(hi - k) / (hi - mid);
      fb.weights(m, k) = std::max(0.0, w);
    }
    fb.center_hz.push_back(edge_hz[static_cast<std::size_t>(m + 1)]);
    fb.center_bin.push_back(mid);
  }
  return fb;
}

Eigen::MatrixXd cepstrum_from_log_mel(const Eigen::MatrixXd& log_mel, int n_coeffs) {
  const auto m_count = log_mel.rows();
  Eigen::MatrixXd dct(n_coeffs, m_count);
  for (int d = 0; d < n_coeffs; ++d) {
    for (Eigen::Index m = 0; m < m_count; ++m) {
      dct(d, m) = std::cos(std::numbers::pi * d * (static_cast<double>(m) + 0.5) / static_cast<double>(m_count));
    }
  }
  return dct * log_mel;
}

FeatureMatrix mfcc(const AudioClip& clip, const MfccConfig& cfg, const MelFilterbank& fb) {
  cfg.validate();
  validate(clip);
  if (fb.weights.cols() != cfg.fft_size / 2 + 1 || fb.weights.rows() != cfg.n_mels) {
    throw ShapeError("mel filterbank does not match the mfcc config");
  }
  const Eigen::MatrixXd power = power_spectrogram(clip, cfg.window_len, cfg.hop, cfg.fft_size);
  const double floor = cfg.log_floor;
  const Eigen::MatrixXd log_mel =
      (fb.weights * power).unaryExpr([floor](double e) { return std::log(std::max(e, floor)); });
  FeatureMatrix out{Modality::Mfcc, cepstrum_from_log_mel(log_mel, cfg.n_coeffs)};
  check_finite(out.data, "mfcc");
  return out;
}

PitchTrack AutocorrelationPitch::estimate(const AudioClip& clip) const {
  validate(clip);
  cfg_.validate(clip.sample_rate);
  const int sr = clip.sample_rate;
  const int n = cfg_.frame_len;
  const int lag_min = static_cast<int>(std::ceil(sr / cfg_.f0_max_hz));
  const int lag_max = static_cast<int>(std::floor(sr / cfg_.f0_min_hz));
  const int frames = std::max(1, frame_count(clip.samples.size(), n, cfg_.hop));

  PitchTrack track;
  track.f0_hz.resize(static_cast<std::size_t>(frames), 0.0);
  track.confidence.resize(static_cast<std::size_t>(frames), 0.0);

  std::vector<double> x(static_cast<std::size_t>(n));
  // Autocorrelation over lag_min - 1 .. lag_max + 1 so the chosen peak always
  // has neighbours for parabolic refinement.
  const int r_lo = std::max(1, lag_min - 1);
  const int r_hi = std::min(n - 1, lag_max + 1);
  std::vector<double> r(static_cast<std::size_t>(r_hi + 1), 0.0);
  std::vector<double> prefix(static_cast<std::size_t>(n + 1));
  std::vector<double> raw;
  FftAutocorrelation acf(n);

  for (int f = 0; f < frames; ++f) {
    const std::size_t offset = static_cast<std::size_t>(f) * static_cast<std::size_t>(cfg_.hop);
    double mean = 0.0;
    int filled = 0;
    for (int i = 0; i < n; ++i) {
      const std::size_t idx = offset + static_cast<std::size_t>(i);
      x[static_cast<std::size_t>(i)] = idx < clip.samples.size() ? clip.samples[idx] : 0.0;
      if (idx < clip.samples.size()) {
        mean += x[static_cast<std::size_t>(i)];
        ++filled;
      }
    }
    mean /= std::max(filled, 1);
    for (int i = 0; i < filled; ++i) x[static_cast<std::size_t>(i)] -= mean;

    prefix[0] = 0.0;
    for (int i = 0; i < n; ++i) {
      prefix[static_cast<std::size_t>(i + 1)] = prefix[static_cast<std::size_t>(i)] + x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
    }
    if (prefix[static_cast<std::size_t>(n)] < 1e-12) continue;  // silence

    acf.run(x, raw);
    for (int lag = r_lo; lag <= r_hi; ++lag) {
      const double num = raw[static_cast<std::size_t>(lag)];
      const double e_head = prefix[static_cast<std::size_t>(n - lag)];
      const double e_tail = prefix[static_cast<std::size_t>(n)] - prefix[static_cast<std::size_t>(lag)];
      const double denom = std::sqrt(e_head * e_tail);
      r[static_cast<std::size_t>(lag)] = denom > 1e-12 ? num / denom : 0.0;
    }

    int best = lag_min;
    for (int lag = lag_min; lag <= lag_max; ++lag) {
      if (r[static_cast<std::size_t>(lag)] > r[static_cast<std::size_t>(best)]) best = lag;
    }
    // Periodic signals correlate equally well at multiples of the period;
    // prefer the shortest lag whose peak is within 10% of the global one.
    const double peak = r[static_cast<std::size_t>(best)];
    for (int lag = lag_min; lag < best; ++lag) {
      const double v = r[static_cast<std::size_t>(lag)];
      if (v >= 0.9 * peak && v >= r[static_cast<std::size_t>(lag - 1)] &&
          v >= r[static_cast<std::size_t>(lag + 1)]) {
        best = lag;
        break;
      }
    }

    double refined = best;
    if (best - 1 >= r_lo && best + 1 <= r_hi) {
      const double a = r[static_cast<std::size_t>(best - 1)];
      const double b = r[static_cast<std::size_t>(best)];
      const double c = r[static_cast<std::size_t>(best + 1)];
      const double curvature = a - 2.0 * b + c;
      if (curvature < 0.0) refined += std::clamp(0.5 * (a - c) / curvature, -0.5, 0.5);
    }
    const double conf = std::clamp(r[static_cast<std::size_t>(best)], 0.0, 1.0);
    track.confidence[static_cast<std::size_t>(f)] = conf;
    if (conf >= cfg_.voicing_threshold) {
      track.f0_hz[static_cast<std::size_t>(f)] =
          std::clamp(sr / refined, cfg_.f0_min_hz, cfg_.f0_max_hz);
    }
  }
  return track;
}

PitchTrack estimate_pitch(const AudioClip& clip, const PitchConfig& cfg) {
  return AutocorrelationPitch(cfg).estimate(clip);
}

std::filesystem::path pitch_sidecar_path(const std::filesystem::path& audio_path) {
  return std::filesystem::path(audio_path.string() + ".f0.csv");
}

PitchTrack load_pitch_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pitch sidecar " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty pitch sidecar");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "time_s,f0_hz,confidence") {
    throw ParseError(path.string() + ": expected header 'time_s,f0_hz,confidence'");
  }
  PitchTrack track;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string t, f0, conf;
    if (!std::getline(row, t, ',') || !std::getline(row, f0, ',') || !std::getline(row, conf)) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected three columns");
    }
    try {
      const double f = std::stod(f0);
      const double c = std::stod(conf);
      if (!std::isfinite(f) || !std::isfinite(c)) throw std::invalid_argument("non-finite");
      track.f0_hz.push_back(std::max(0.0, f));
      track.confidence.push_back(std::clamp(c, 0.0, 1.0));
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  if (track.f0_hz.empty()) throw ParseError(path.string() + ": pitch sidecar has no rows");
  return track;
}

FeatureMatrix waveform_channel(const AudioClip& clip, int n_frames) {
  validate(clip);
  if (n_frames < 1) throw ConfigError("timeline length must be >= 1");
  FeatureMatrix out{Modality::Wave, Eigen::MatrixXd(1, n_frames)};
  const auto len = clip.samples.size();
  for (int t = 0; t < n_frames; ++t) {
    if (len == 1 || n_frames == 1) {
      out.data(0, t) = clip.samples[0];
      continue;
    }
    const double pos = static_cast<double>(t) * static_cast<double>(len - 1) / (n_frames - 1);
    const auto i = std::min(static_cast<std::size_t>(pos), len - 2);
    const double frac = pos - static_cast<double>(i);
    out.data(0, t) = clip.samples[i] + frac * (clip.samples[i + 1] - clip.samples[i]);
  }
  return out;
}

FeatureMatrix align_time(const FeatureMatrix& fm, int n_frames) {
  if (n_frames < 1) throw ConfigError("timeline length must be >= 1");
  const Eigen::Index src_frames = fm.frames();
  if (src_frames < 1) throw ShapeError("feature matrix has no frames");
  FeatureMatrix out{fm.modality, Eigen::MatrixXd(fm.data.rows(), n_frames)};
  for (int t = 1; t <= n_frames; ++t) {
    // floor(alpha * t) with alpha = T_m / T, in exact integer arithmetic.
    const Eigen::Index idx = std::clamp<Eigen::Index>(src_frames * t / n_frames, 1, src_frames);
    out.data.col(t - 1) = fm.data.col(idx - 1);
  }
  return out;
}

AlignedFeatureTensor fuse_features(const AudioClip& clip, const FeatureConfig& cfg,
                                   const PitchEstimator* pitch) {
  cfg.validate();
  validate(clip);
  if (clip.sample_rate != kTargetSampleRate) {
    throw ConfigError("fuse_features expects 16 kHz audio; resample first");
  }
  require_length(clip, std::max(cfg.stft.window_len, cfg.mfcc.window_len));

  using L = ChannelLayout;
  const int frames = cfg.n_frames;
  AlignedFeatureTensor out{Eigen::MatrixXd::Zero(L::kChannels, frames)};

  if (cfg.subset.contains(Modality::Mfcc)) {
    const auto fb = build_mel_filterbank(cfg.mfcc, cfg.mfcc.fft_size, clip.sample_rate);
    out.data.middleRows(L::kMfccBegin, L::kMfccRows) = align_time(mfcc(clip, cfg.mfcc, fb), frames).data;
  }
  if (cfg.subset.contains(Modality::Stft)) {
    out.data.middleRows(L::kStftBegin, L::kStftRows) = align_time(stft_logpower(clip, cfg.stft), frames).data;
  }
  if (cfg.subset.contains(Modality::F0)) {
    const AutocorrelationPitch builtin(cfg.pitch);
    const PitchTrack track = (pitch != nullptr ? *pitch : static_cast<const PitchEstimator&>(builtin)).estimate(clip);
    if (track.f0_hz.empty() || track.f0_hz.size() != track.confidence.size()) {
      throw ShapeError("pitch track must have equal, non-zero f0 and confidence lengths");
    }
    FeatureMatrix f0{Modality::F0, Eigen::MatrixXd(1, static_cast<Eigen::Index>(track.f0_hz.size()))};
    FeatureMatrix conf{Modality::F0Conf, Eigen::MatrixXd(1, static_cast<Eigen::Index>(track.confidence.size()))};
    for (std::size_t i = 0; i < track.f0_hz.size(); ++i) {
      f0.data(0, static_cast<Eigen::Index>(i)) = track.f0_hz[i];
      conf.data(0, static_cast<Eigen::Index>(i)) = track.confidence[i];
    }
    out.data.row(L::kF0Row) = align_time(f0, frames).data.row(0);
    out.data.row(L::kF0ConfRow) = align_time(conf, frames).data.row(0);
  }
  if (cfg.subset.contains(Modality::Wave)) {
    out.data.row(L::kWaveRow) = waveform_channel(clip, frames).data.row(0);
  }
  check_finite(out.data, "fused features");
  return out;
}

int median_frame_count(const std::vector<double>& durations_s, const StftConfig& cfg, int sample_rate) {
  if (durations_s.empty()) throw DataError("cannot take the median of an empty corpus");
  std::vector<int> counts;
  counts.reserve(durations_s.size());
  for (double d : durations_s) {
    const auto n = static_cast<std::size_t>(std::llround(d * sample_rate));
    counts.push_back(frame_count(n, cfg.window_len, cfg.hop));
  }
  std::sort(counts.begin(), counts.end());
  const std::size_t mid = counts.size() / 2;
  if (counts.size() % 2 == 1) return counts[mid];
  return (counts[mid - 1] + counts[mid] + 1) / 2;
}

}  // namespace crynet
