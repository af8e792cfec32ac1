#include "crynet/audio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>

#include "crynet/errors.hpp"

namespace crynet {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

static_assert(std::endian::native == std::endian::little,
              "wav codec assumes a little-endian host");

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

struct FmtChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

struct ParsedWav {
  FmtChunk fmt;
  std::vector<std::uint8_t> data;
  std::uint64_t data_bytes = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Walks the chunk list. When `keep_data` is false only the data size is kept.
ParsedWav parse(const std::vector<std::uint8_t>& bytes, const std::string& name,
                bool keep_data) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw ParseError(name + ": not a RIFF/WAVE file");
  }
  ParsedWav out;
  bool have_fmt = false;
  bool have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* hdr = bytes.data() + pos;
    const std::uint32_t size = read_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) throw ParseError(name + ": truncated fmt chunk");
      const std::uint8_t* f = bytes.data() + body;
      out.fmt.format = read_u16(f);
      out.fmt.channels = read_u16(f + 2);
      out.fmt.sample_rate = read_u32(f + 4);
      out.fmt.bits = read_u16(f + 14);
      if (out.fmt.format == kFormatExtensible) {
        if (size < 40) throw ParseError(name + ": truncated extensible fmt chunk");
        out.fmt.format = read_u16(f + 24);  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      // Some writers leave the size at 0 or 0xFFFFFFFF when streaming; clamp to the file.
      std::size_t avail = bytes.size() - body;
      std::size_t n = std::min<std::size_t>(size, avail);
      if (size == 0 || size == 0xFFFFFFFFu) n = avail;
      out.data_bytes = n;
      if (keep_data) out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(body),
                                     bytes.begin() + static_cast<std::ptrdiff_t>(body + n));
      have_data = true;
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw ParseError(name + ": missing fmt chunk");
  if (!have_data) throw ParseError(name + ": missing data chunk");
  if (out.fmt.channels == 0) throw ParseError(name + ": zero channels");
  if (out.fmt.sample_rate == 0) throw ParseError(name + ": zero sample rate");

  const auto& f = out.fmt;
  const bool pcm_ok = f.format == kFormatPcm && (f.bits == 16 || f.bits == 24 || f.bits == 32);
  const bool float_ok = f.format == kFormatFloat && (f.bits == 32 || f.bits == 64);
  if (!pcm_ok && !float_ok) {
    throw UnsupportedFormat(name + ": unsupported codec (format " + std::to_string(f.format) +
                            ", " + std::to_string(f.bits) + " bits)");
  }
  return out;
}

double decode_sample(const std::uint8_t* p, const FmtChunk& fmt) {
  if (fmt.format == kFormatFloat) {
    if (fmt.bits == 32) {
      float v;
      std::memcpy(&v, p, 4);
      return v;
    }
    double v;
    std::memcpy(&v, p, 8);
    return v;
  }
  switch (fmt.bits) {
    case 16:
      return static_cast<std::int16_t>(read_u16(p)) / 32768.0;
    case 24: {
      std::int32_t v = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
      if (v & 0x800000) v -= 0x1000000;
      return v / 8388608.0;
    }
    default:
      return static_cast<std::int32_t>(read_u32(p)) / 2147483648.0;
  }
}

void write_header(std::ofstream& out, std::uint16_t format, std::uint16_t bits, int rate,
                  std::uint32_t data_bytes) {
  auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
  out.write("RIFF", 4);
  u32(36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  u32(16);
  u16(format);
  u16(1);
  u32(static_cast<std::uint32_t>(rate));
  u32(static_cast<std::uint32_t>(rate) * (bits / 8));
  u16(bits / 8);
  u16(bits);
  out.write("data", 4);
  u32(data_bytes);
}

double bessel_i0(double x) { return std::cyl_bessel_i(0.0, x); }

}  // namespace

void validate(const AudioClip& clip) {
  if (clip.samples.empty()) throw EmptyAudio("audio clip has no samples");
  if (clip.sample_rate <= 0) throw ConfigError("sample rate must be positive");
  for (double s : clip.samples) {
    if (!std::isfinite(s)) throw NumericalError("audio clip contains non-finite samples");
  }
}

AudioClip load_wav(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const ParsedWav wav = parse(bytes, path.string(), /*keep_data=*/true);
  const std::size_t width = wav.fmt.bits / 8;
  const std::size_t frame_bytes = width * wav.fmt.channels;
  const std::size_t frames = wav.data.size() / frame_bytes;
  if (frames == 0) throw EmptyAudio(path.string() + ": zero samples");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(wav.fmt.sample_rate);
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < wav.fmt.channels; ++c) {
      acc += decode_sample(wav.data.data() + i * frame_bytes + c * width, wav.fmt);
    }
    clip.samples[i] = acc / wav.fmt.channels;
  }
  return clip;
}

WavInfo probe_wav(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const ParsedWav wav = parse(bytes, path.string(), /*keep_data=*/false);
  WavInfo info;
  info.sample_rate = static_cast<int>(wav.fmt.sample_rate);
  info.channels = wav.fmt.channels;
  info.frames = wav.data_bytes / ((wav.fmt.bits / 8) * wav.fmt.channels);
  return info;
}

void write_wav_pcm16(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  write_header(out, kFormatPcm, 16, clip.sample_rate, n * 2);
  std::vector<std::int16_t> pcm(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const double v = std::clamp(clip.samples[i], -1.0, 1.0) * 32767.0;
    pcm[i] = static_cast<std::int16_t>(std::lround(v));
  }
  out.write(reinterpret_cast<const char*>(pcm.data()), static_cast<std::streamsize>(n * 2));
  if (!out) throw IoError("short write to " + path.string());
}

void write_wav_float32(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  write_header(out, kFormatFloat, 32, clip.sample_rate, n * 4);
  std::vector<float> buf(clip.samples.begin(), clip.samples.end());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * 4));
  if (!out) throw IoError("short write to " + path.string());
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  validate(clip);
  if (clip.sample_rate < 4000) {
    throw UnsupportedRate("sample rate " + std::to_string(clip.sample_rate) +
                          " Hz is below the 4 kHz minimum");
  }
  if (clip.sample_rate == target_rate) return clip;

  const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
  // Cutoff in cycles per input sample, just under the narrower Nyquist.
  const double cutoff = 0.5 * std::min(1.0, ratio) * 0.95;
  constexpr double kZeroCrossings = 24.0;
  constexpr double kKaiserBeta = 8.6;
  constexpr int kTableDensity = 512;  // kernel samples per input sample
  const double half_width = kZeroCrossings / (2.0 * cutoff);

  // Tabulated Kaiser-windowed sinc over tau in [0, half_width].
  const auto table_len = static_cast<std::size_t>(std::ceil(half_width * kTableDensity)) + 2;
  std::vector<double> kernel(table_len, 0.0);
  const double i0_beta = bessel_i0(kKaiserBeta);
  for (std::size_t i = 0; i < table_len; ++i) {
    const double tau = static_cast<double>(i) / kTableDensity;
    if (tau > half_width) break;
    const double x = 2.0 * cutoff * tau;
    const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
    const double r = tau / half_width;
    kernel[i] = 2.0 * cutoff * sinc * bessel_i0(kKaiserBeta * std::sqrt(1.0 - r * r)) / i0_beta;
  }
  auto kernel_at = [&](double tau) {
    const double pos = std::abs(tau) * kTableDensity;
    const auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= table_len) return 0.0;
    const double frac = pos - static_cast<double>(i);
    return kernel[i] + frac * (kernel[i + 1] - kernel[i]);
  };

  const auto n_in = static_cast<std::ptrdiff_t>(clip.samples.size());
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * ratio));
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(std::max<std::size_t>(n_out, 1));

  for (std::size_t n = 0; n < out.samples.size(); ++n) {
    const double t = static_cast<double>(n) / ratio;
    const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(t - half_width)));
    const auto hi = std::min<std::ptrdiff_t>(n_in - 1, static_cast<std::ptrdiff_t>(std::floor(t + half_width)));
    double acc = 0.0;
    for (std::ptrdiff_t k = lo; k <= hi; ++k) {
      acc += clip.samples[static_cast<std::size_t>(k)] * kernel_at(t - static_cast<double>(k));
    }
    out.samples[n] = acc;
  }
  return out;
}

AudioClip resample_to_16k(const AudioClip& clip) { return resample(clip, kTargetSampleRate); }

}  // namespace crynet
