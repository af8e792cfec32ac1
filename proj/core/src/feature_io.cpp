#include "crynet/feature_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <vector>

#include "crynet/errors.hpp"

namespace crynet {
namespace {

constexpr char kMagic[4] = {'C', 'R', 'Y', 'F'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "CRYF codec assumes a little-endian host");

}  // namespace

void write_cryf(const std::filesystem::path& path, const AlignedFeatureTensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto rows = static_cast<std::uint32_t>(tensor.channels());
  const auto cols = static_cast<std::uint32_t>(tensor.frames());
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), 4);
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      buf[static_cast<std::size_t>(r) * cols + c] = static_cast<float>(tensor.data(r, c));
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (!out) throw IoError("short write to " + path.string());
}

AlignedFeatureTensor read_cryf(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  std::uint32_t version = 0, rows = 0, cols = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&cols), 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ParseError(path.string() + ": not a CRYF file");
  if (version != kVersion) throw UnsupportedFormat(path.string() + ": unsupported CRYF version " + std::to_string(version));
  if (rows == 0 || cols == 0) throw ParseError(path.string() + ": empty CRYF tensor");
  std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (!in) throw ParseError(path.string() + ": truncated CRYF payload");
  AlignedFeatureTensor t{Eigen::MatrixXd(rows, cols)};
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) t.data(r, c) = buf[static_cast<std::size_t>(r) * cols + c];
  }
  return t;
}

std::filesystem::path sidecar_path(const std::filesystem::path& cryf_path) {
  return std::filesystem::path(cryf_path.string() + ".json");
}

void write_feature_sidecar(const std::filesystem::path& path, const FeatureSidecar& meta) {
  using L = ChannelLayout;
  nlohmann::json j;
  j["source"] = meta.source;
  j["source_sample_rate"] = meta.source_sample_rate;
  j["sample_rate"] = meta.sample_rate;
  j["duration_s"] = meta.duration_s;
  j["config_hash"] = meta.config_hash;
  j["subset"] = meta.subset;
  j["tool_version"] = meta.tool_version;
  j["channel_layout"] = nlohmann::json::array({
      {{"name", "mfcc"}, {"first_row", L::kMfccBegin}, {"rows", L::kMfccRows}},
      {{"name", "stft_logpower"}, {"first_row", L::kStftBegin}, {"rows", L::kStftRows}},
      {{"name", "f0_hz"}, {"first_row", L::kF0Row}, {"rows", 1}},
      {{"name", "f0_confidence"}, {"first_row", L::kF0ConfRow}, {"rows", 1}},
      {{"name", "waveform"}, {"first_row", L::kWaveRow}, {"rows", 1}},
  });
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

FeatureSidecar read_feature_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    FeatureSidecar m;
    m.source = j.at("source").get<std::string>();
    m.source_sample_rate = j.value("source_sample_rate", 0);
    m.sample_rate = j.at("sample_rate").get<int>();
    m.duration_s = j.at("duration_s").get<double>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.subset = j.value("subset", std::string("mfcc,stft,f0,wave"));
    m.tool_version = j.value("tool_version", std::string());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace crynet
