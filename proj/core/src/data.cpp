#include "crynet/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "crynet/audio.hpp"

namespace crynet {

namespace fs = std::filesystem;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: break;
  }
  return "unassigned";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "unassigned" || s.empty()) return Split::Unassigned;
  throw ParseError("unknown split '" + std::string(s) + "'");
}

std::vector<std::string> label_list(const std::vector<SampleRecord>& records) {
  std::set<std::string> labels;
  for (const auto& r : records) labels.insert(r.label);
  return {labels.begin(), labels.end()};
}

std::vector<SampleRecord> select_split(const std::vector<SampleRecord>& records, Split split) {
  std::vector<SampleRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [split](const SampleRecord& r) { return r.split == split; });
  return out;
}

Baby2020Name parse_baby2020_name(std::string_view filename) {
  static const std::regex grammar(R"(^[A-Za-z]+[A-Za-z0-9]*_[0-9]+_[0-9]+\.wav$)");
  const std::string name(filename);
  if (!std::regex_match(name, grammar)) throw NamingError("'" + name + "' does not follow the Baby2020 naming scheme");
  const std::string token = name.substr(0, name.find('_'));
  std::size_t k = 0;
  while (k < token.size() && std::isalpha(static_cast<unsigned char>(token[k]))) ++k;
  Baby2020Name out{token.substr(0, k), token.substr(k)};
  if (out.group.empty()) throw NamingError("'" + name + "' carries no baby identifier after the label");
  return out;
}

void SplitSpec::validate() const {
  for (double f : {train, val, test}) {
    if (!(f > 0.0) || !std::isfinite(f)) throw ConfigError("split fractions must be positive");
  }
  if (std::abs(train + val + test - 1.0) > 1e-6) throw ConfigError("split fractions must sum to 1");
}

SplitOutcome group_split(std::vector<SampleRecord> records, const SplitSpec& spec) {
  spec.validate();
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].group.empty()) throw SplitError(records[i].path + ": empty group key");
    members[records[i].group].push_back(i);
  }
  if (members.size() < 3) {
    throw SplitError("need at least 3 distinct groups to split, found " + std::to_string(members.size()));
  }

  const auto labels = label_list(records);
  std::map<std::string, std::size_t> label_index;
  for (std::size_t c = 0; c < labels.size(); ++c) label_index[labels[c]] = c;

  std::vector<std::string> order;
  for (const auto& [g, _] : members) order.push_back(g);
  std::mt19937_64 rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);
  // Largest groups first keeps the final overshoot below one group; the
  // shuffle still decides among groups of equal size.
  std::stable_sort(order.begin(), order.end(),
                   [&](const std::string& a, const std::string& b) { return members[a].size() > members[b].size(); });

  const std::array<double, 3> frac{spec.train, spec.val, spec.test};
  const double n_total = static_cast<double>(records.size());
  std::vector<double> class_total(labels.size(), 0.0);
  for (const auto& r : records) class_total[label_index[r.label]] += 1.0;

  std::array<double, 3> filled{};
  std::array<int, 3> n_groups{};
  std::array<std::vector<double>, 3> class_filled;
  for (auto& v : class_filled) v.assign(labels.size(), 0.0);

  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& g = order[k];
    std::vector<double> counts(labels.size(), 0.0);
    for (auto i : members[g]) counts[label_index[records[i].label]] += 1.0;
    const double size = static_cast<double>(members[g].size());
    const std::size_t remaining = order.size() - k;
    const auto empty = static_cast<std::size_t>(std::count(n_groups.begin(), n_groups.end(), 0));

    int best = 0;
    double best_score = -1e300;
    for (int s = 0; s < 3; ++s) {
      const auto si = static_cast<std::size_t>(s);
      // Once groups run short, only empty splits may take the rest.
      if (remaining <= empty && n_groups[si] > 0) continue;
      double score = frac[si] * n_total - filled[si];
      if (spec.stratify) {
        double cls = 0.0;
        for (std::size_t c = 0; c < labels.size(); ++c) {
          if (counts[c] > 0.0) cls += counts[c] / size * (frac[si] * class_total[c] - class_filled[si][c]);
        }
        score = 0.5 * score + 0.5 * cls;
      }
      if (score > best_score) {
        best_score = score;
        best = s;
      }
    }
    const auto bi = static_cast<std::size_t>(best);
    filled[bi] += size;
    ++n_groups[bi];
    for (std::size_t c = 0; c < labels.size(); ++c) class_filled[bi][c] += counts[c];
    for (auto i : members[g]) records[i].split = static_cast<Split>(best);
  }

  SplitOutcome out;
  for (int s = 0; s < 3; ++s) {
    for (std::size_t c = 0; c < labels.size(); ++c) {
      if (class_filled[static_cast<std::size_t>(s)][c] == 0.0) {
        out.warnings.push_back("class '" + labels[c] + "' has no samples in the " +
                               std::string(to_string(static_cast<Split>(s))) + " split");
      }
    }
  }
  out.records = std::move(records);
  return out;
}

std::vector<std::string> verify_no_leakage(const std::vector<SampleRecord>& records) {
  std::map<std::string, std::set<Split>> seen;
  for (const auto& r : records) {
    if (r.split != Split::Unassigned) seen[r.group].insert(r.split);
  }
  std::vector<std::string> violations;
  for (const auto& [g, splits] : seen) {
    if (splits.size() > 1) violations.push_back(g);
  }
  return violations;
}

std::vector<SynthClass> SynthSpec::default_classes() {
  return {
      {"hungry", 250.0, 20.0, 6.0, 5.0, 3.0},
      {"sleepy", 350.0, -15.0, 8.0, 4.0, 5.0},
      {"awake", 450.0, 10.0, 10.0, 6.0, 8.0},
  };
}

void SynthSpec::validate() const {
  if (classes.empty()) throw ConfigError("synth spec has no classes");
  std::set<std::string> names;
  for (const auto& c : classes) {
    if (c.name.empty() || !names.insert(c.name).second) throw ConfigError("synth class names must be unique and non-empty");
    if (!(c.f0_hz > 0.0)) throw ConfigError("synth class '" + c.name + "' needs a positive F0");
  }
  if (clips_per_class < 1 || n_babies < 1) throw ConfigError("synth spec needs at least one clip and one baby");
  if (harmonics < 1) throw ConfigError("synth spec needs at least one harmonic");
  if (!std::isfinite(snr_db)) throw ConfigError("snr_db must be finite");
  if (clip_seconds - clip_jitter_s < 1.0 || clip_seconds + clip_jitter_s > 30.0 || clip_jitter_s < 0.0) {
    throw ConfigError("clip lengths must stay within [1, 30] s");
  }
  if (baby_f0_spread < 0.0 || baby_f0_spread >= 0.5) throw ConfigError("baby_f0_spread must lie in [0, 0.5)");
}

std::vector<double> synth_clip(const SynthClass& cls, double f0_scale, double seconds, int harmonics,
                               double snr_db, std::uint64_t seed, int sample_rate) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto n = static_cast<std::size_t>(std::llround(seconds * sample_rate));
  const double dt = 1.0 / sample_rate;
  const double vib_phase = phase(rng);
  const double am_phase = phase(rng);
  const double fade = 0.05;

  std::vector<double> x(n);
  double theta = phase(rng);
  double power = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const double f = cls.f0_hz * f0_scale + cls.slope_hz_per_s * (t - 0.5 * seconds) +
                     cls.vibrato_hz * std::sin(2.0 * std::numbers::pi * cls.vibrato_rate * t + vib_phase);
    theta += 2.0 * std::numbers::pi * f * dt;
    double v = 0.0;
    for (int k = 1; k <= harmonics; ++k) {
      if (k * f >= 0.45 * sample_rate) break;
      v += std::sin(k * theta) / k;
    }
    double env = 0.65 + 0.35 * std::sin(2.0 * std::numbers::pi * cls.am_rate_hz * t + am_phase);
    env *= std::min({1.0, t / fade, (seconds - t) / fade});
    x[i] = v * env;
    power += x[i] * x[i];
  }
  power /= static_cast<double>(std::max<std::size_t>(n, 1));
  const double noise_std = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  double peak = 0.0;
  for (auto& v : x) {
    v += noise_std * gauss(rng);
    peak = std::max(peak, std::abs(v));
  }
  if (peak > 0.0) {
    for (auto& v : x) v *= 0.8 / peak;
  }
  return x;
}

std::vector<SampleRecord> synth_corpus(const SynthSpec& spec, const fs::path& out_dir) {
  spec.validate();
  fs::create_directories(out_dir);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<double> baby_scale(static_cast<std::size_t>(spec.n_babies));
  for (auto& s : baby_scale) s = 1.0 + spec.baby_f0_spread * unit(rng);

  std::vector<SampleRecord> records;
  std::ofstream csv(out_dir / "labels.csv");
  if (!csv) throw IoError("cannot write " + (out_dir / "labels.csv").string());
  csv << "filename,label,group\n";
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    const auto& cls = spec.classes[c];
    for (int k = 0; k < spec.clips_per_class; ++k) {
      const int baby = k % spec.n_babies;
      char group[64];
      std::snprintf(group, sizeof group, "%s%03d", spec.group_prefix.c_str(), baby);
      char name[160];
      std::snprintf(name, sizeof name, "%s_%s_%03d.wav", group, cls.name.c_str(), k);
      const double seconds = spec.clip_seconds + spec.clip_jitter_s * unit(rng);
      const std::uint64_t clip_seed = rng();
      AudioClip clip;
      clip.samples = synth_clip(cls, baby_scale[static_cast<std::size_t>(baby)], seconds, spec.harmonics, spec.snr_db,
                                clip_seed);
      const fs::path path = out_dir / name;
      write_wav_pcm16(path, clip);
      csv << name << ',' << cls.name << ',' << group << '\n';
      records.push_back({path.string(), cls.name, group, Split::Unassigned, clip.duration_s(), {}});
    }
  }
  write_manifest(out_dir / "manifest.jsonl", records);
  return records;
}

DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "baby2020") return DatasetKind::Baby2020;
  if (s == "generic") return DatasetKind::Generic;
  throw ConfigError("unknown dataset kind '" + std::string(s) + "' (expected baby2020 or generic)");
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  return out;
}

bool is_wav(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".wav";
}

}  // namespace

ManifestBuild build_manifest(const fs::path& root, DatasetKind kind) {
  if (!fs::is_directory(root)) throw IoError(root.string() + " is not a directory");
  ManifestBuild out;
  std::set<std::string> seen;

  auto add = [&](const fs::path& path, std::string label, std::string group) {
    const std::string base = path.filename().string();
    if (!seen.insert(base).second) throw DataError("duplicate file name '" + base + "'");
    try {
      const auto info = probe_wav(path);
      out.records.push_back({path.string(), std::move(label), std::move(group), Split::Unassigned, info.duration_s(), {}});
    } catch (const Error& e) {
      out.quarantine.push_back({path.string(), e.what()});
    }
  };

  if (kind == DatasetKind::Baby2020) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (e.is_regular_file() && is_wav(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        auto name = parse_baby2020_name(f.filename().string());
        add(f, std::move(name.label), std::move(name.group));
      } catch (const NamingError& e) {
        out.quarantine.push_back({f.string(), e.what()});
      }
    }
    return out;
  }

  const fs::path csv_path = root / "labels.csv";
  std::ifstream csv(csv_path);
  if (!csv) throw IoError("generic datasets need " + csv_path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(csv, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (line_no == 1 && !cells.empty() && cells[0] == "filename") continue;
    if (cells.size() != 3 || cells[0].empty() || cells[1].empty() || cells[2].empty()) {
      out.quarantine.push_back({csv_path.string() + ":" + std::to_string(line_no), "expected filename,label,group"});
      continue;
    }
    const fs::path path = root / cells[0];
    if (!fs::exists(path)) {
      if (!seen.insert(path.filename().string()).second) throw DataError("duplicate file name '" + cells[0] + "'");
      out.quarantine.push_back({path.string(), "listed in labels.csv but missing"});
      continue;
    }
    add(path, cells[1], cells[2]);
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<SampleRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j{{"path", r.path},
                             {"label", r.label},
                             {"group", r.group},
                             {"split", to_string(r.split)},
                             {"duration_s", r.duration_s}};
    if (!r.features.empty()) j["features"] = r.features;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<SampleRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::vector<SampleRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SampleRecord r;
      r.path = j.at("path").get<std::string>();
      r.label = j.at("label").get<std::string>();
      r.group = j.at("group").get<std::string>();
      r.split = parse_split(j.value("split", std::string("unassigned")));
      r.duration_s = j.value("duration_s", 0.0);
      r.features = j.value("features", std::string());
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace crynet
