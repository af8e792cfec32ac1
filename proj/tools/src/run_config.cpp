#include "crynet/cli/run_config.hpp"

#include <fstream>

#include "crynet/hash.hpp"
#include "crynet/json_keys.hpp"

namespace crynet::cli {

namespace {

FeatureConfig features_from_json(const nlohmann::json& j) {
  check_keys(j, {"subset", "n_frames", "n_mels", "f0_min_hz", "f0_max_hz", "voicing_threshold"}, "features");
  FeatureConfig f;
  if (j.contains("subset")) f.subset = FeatureSet::parse(j["subset"].get<std::string>());
  f.n_frames = j.value("n_frames", f.n_frames);
  f.mfcc.n_mels = j.value("n_mels", f.mfcc.n_mels);
  f.pitch.f0_min_hz = j.value("f0_min_hz", f.pitch.f0_min_hz);
  f.pitch.f0_max_hz = j.value("f0_max_hz", f.pitch.f0_max_hz);
  f.pitch.voicing_threshold = j.value("voicing_threshold", f.pitch.voicing_threshold);
  f.validate();
  return f;
}

nlohmann::ordered_json features_to_json(const FeatureConfig& f) {
  return {{"subset", f.subset.to_string()},     {"n_frames", f.n_frames},
          {"n_mels", f.mfcc.n_mels},            {"f0_min_hz", f.pitch.f0_min_hz},
          {"f0_max_hz", f.pitch.f0_max_hz},     {"voicing_threshold", f.pitch.voicing_threshold}};
}

SplitSpec split_from_json(const nlohmann::json& j) {
  check_keys(j, {"train", "val", "test", "seed", "stratify"}, "split");
  SplitSpec s;
  s.train = j.value("train", s.train);
  s.val = j.value("val", s.val);
  s.test = j.value("test", s.test);
  s.seed = j.value("seed", s.seed);
  s.stratify = j.value("stratify", s.stratify);
  s.validate();
  return s;
}

FusionConfig fusion_from_json(const nlohmann::json& j) {
  check_keys(j, {"tau", "mode"}, "fusion");
  FusionConfig f;
  f.tau = j.value("tau", f.tau);
  if (j.contains("mode")) f.mode = parse_fusion_mode(j["mode"].get<std::string>());
  f.validate();
  return f;
}

SynthSpec synth_from_json(const nlohmann::json& j) {
  check_keys(j, {"classes", "clips_per_class", "n_babies", "baby_f0_spread", "harmonics", "snr_db", "clip_seconds",
                 "clip_jitter_s", "seed", "group_prefix"},
             "synth");
  SynthSpec s;
  if (j.contains("classes")) {
    s.classes.clear();
    for (const auto& c : j["classes"]) {
      check_keys(c, {"name", "f0_hz", "slope_hz_per_s", "vibrato_hz", "vibrato_rate", "am_rate_hz"}, "synth class");
      SynthClass sc;
      sc.name = c.at("name").get<std::string>();
      sc.f0_hz = c.value("f0_hz", sc.f0_hz);
      sc.slope_hz_per_s = c.value("slope_hz_per_s", sc.slope_hz_per_s);
      sc.vibrato_hz = c.value("vibrato_hz", sc.vibrato_hz);
      sc.vibrato_rate = c.value("vibrato_rate", sc.vibrato_rate);
      sc.am_rate_hz = c.value("am_rate_hz", sc.am_rate_hz);
      s.classes.push_back(sc);
    }
  }
  s.clips_per_class = j.value("clips_per_class", s.clips_per_class);
  s.n_babies = j.value("n_babies", s.n_babies);
  s.baby_f0_spread = j.value("baby_f0_spread", s.baby_f0_spread);
  s.harmonics = j.value("harmonics", s.harmonics);
  s.snr_db = j.value("snr_db", s.snr_db);
  s.clip_seconds = j.value("clip_seconds", s.clip_seconds);
  s.clip_jitter_s = j.value("clip_jitter_s", s.clip_jitter_s);
  s.seed = j.value("seed", s.seed);
  s.group_prefix = j.value("group_prefix", s.group_prefix);
  s.validate();
  return s;
}

nlohmann::ordered_json synth_to_json(const SynthSpec& s) {
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (const auto& c : s.classes) {
    classes.push_back({{"name", c.name},
                       {"f0_hz", c.f0_hz},
                       {"slope_hz_per_s", c.slope_hz_per_s},
                       {"vibrato_hz", c.vibrato_hz},
                       {"vibrato_rate", c.vibrato_rate},
                       {"am_rate_hz", c.am_rate_hz}});
  }
  return {{"classes", classes},
          {"clips_per_class", s.clips_per_class},
          {"n_babies", s.n_babies},
          {"baby_f0_spread", s.baby_f0_spread},
          {"harmonics", s.harmonics},
          {"snr_db", s.snr_db},
          {"clip_seconds", s.clip_seconds},
          {"clip_jitter_s", s.clip_jitter_s},
          {"seed", s.seed},
          {"group_prefix", s.group_prefix}};
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"features", "model", "train", "split", "fusion", "synth"}, "config");
  RunConfig c;
  try {
    if (j.contains("features")) c.features = features_from_json(j["features"]);
    if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
    if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
    if (j.contains("split")) c.split = split_from_json(j["split"]);
    if (j.contains("fusion")) c.fusion = fusion_from_json(j["fusion"]);
    if (j.contains("synth")) c.synth = synth_from_json(j["synth"]);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::ordered_json RunConfig::to_json() const {
  return {{"features", features_to_json(features)},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"split",
           {{"train", split.train}, {"val", split.val}, {"test", split.test}, {"seed", split.seed},
            {"stratify", split.stratify}}},
          {"fusion", {{"tau", fusion.tau}, {"mode", to_string(fusion.mode)}}},
          {"synth", synth_to_json(synth)}};
}

std::string RunConfig::hash() const { return digest(to_json().dump()); }

void write_meta(const std::filesystem::path& artifact, const std::string& config_hash, const std::string& command) {
  const auto path = artifact.string() + ".meta.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  nlohmann::ordered_json j{{"artifact", artifact.filename().string()},
                           {"command", command},
                           {"config_hash", config_hash},
                           {"tool_version", library_version()}};
  out << j.dump(2) << '\n';
}

}  // namespace crynet::cli
