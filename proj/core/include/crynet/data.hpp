#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crynet/errors.hpp"

namespace crynet {

enum class Split { Train, Val, Test, Unassigned };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct SampleRecord {
  std::string path;
  std::string label;
  std::string group;  // baby or session identity; never empty
  Split split = Split::Unassigned;
  double duration_s = 0.0;
  std::string features;  // CRYF path once extracted, empty before
};

/// Sorted unique labels over the records.
std::vector<std::string> label_list(const std::vector<SampleRecord>& records);

std::vector<SampleRecord> select_split(const std::vector<SampleRecord>& records, Split split);

struct Baby2020Name {
  std::string label;
  std::string group;
};

/// "Hungry04MB00011_2_002.wav" -> {Hungry, 04MB00011}. The segment indices are
/// dropped so every segment of a recording lands in one group, and the label
/// prefix is dropped so cries of one baby with different causes share a group.
/// Throws NamingError for anything else.
Baby2020Name parse_baby2020_name(std::string_view filename);

struct SplitSpec {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  std::uint64_t seed = 0;
  bool stratify = true;

  void validate() const;
};

struct SplitOutcome {
  std::vector<SampleRecord> records;
  std::vector<std::string> warnings;  // stratification gaps, non-fatal
};

/// Assigns whole groups to splits. Groups are shuffled with the seed, ordered
/// largest first, and each goes to the split furthest below its sample
/// target (averaged with the per-class targets when stratifying). Every
/// split receives at least one group.
/// Throws SplitError for fewer than three groups.
SplitOutcome group_split(std::vector<SampleRecord> records, const SplitSpec& spec);

/// Group keys found in more than one split. Unassigned records are ignored.
std::vector<std::string> verify_no_leakage(const std::vector<SampleRecord>& records);

struct SynthClass {
  std::string name;
  double f0_hz = 300.0;
  double slope_hz_per_s = 0.0;
  double vibrato_hz = 5.0;     // depth
  double vibrato_rate = 5.0;   // Hz
  double am_rate_hz = 4.0;
};

struct SynthSpec {
  std::vector<SynthClass> classes = default_classes();
  int clips_per_class = 40;
  int n_babies = 20;
  double baby_f0_spread = 0.04;  // each baby shifts every F0 by up to this fraction
  int harmonics = 6;
  double snr_db = 20.0;
  double clip_seconds = 3.0;
  double clip_jitter_s = 0.5;
  std::uint64_t seed = 7;
  std::string group_prefix = "baby";

  static std::vector<SynthClass> default_classes();
  void validate() const;
};

/// Renders one clip. Exposed so tests can inspect the waveform without disk I/O.
std::vector<double> synth_clip(const SynthClass& cls, double f0_scale, double seconds, int harmonics,
                               double snr_db, std::uint64_t seed, int sample_rate = 16000);

/// Writes PCM16 WAVs plus labels.csv and manifest.jsonl into `out_dir`.
std::vector<SampleRecord> synth_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir);

enum class DatasetKind { Baby2020, Generic };

DatasetKind parse_dataset_kind(std::string_view s);

struct QuarantinedFile {
  std::string path;
  std::string reason;
};

struct ManifestBuild {
  std::vector<SampleRecord> records;
  std::vector<QuarantinedFile> quarantine;
};

/// Baby2020 mode parses file names under `root`; generic mode reads
/// `root/labels.csv` (filename,label,group). Throws IoError when the CSV is
/// missing and DataError on duplicate file names.
ManifestBuild build_manifest(const std::filesystem::path& root, DatasetKind kind);

/// JSON lines {path, label, group, split, duration_s[, features]}.
void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records);
std::vector<SampleRecord> read_manifest(const std::filesystem::path& path);

}  // namespace crynet
