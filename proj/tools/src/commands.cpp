#include "crynet/cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "crynet/audio.hpp"
#include "crynet/cli/run_config.hpp"
#include "crynet/feature_io.hpp"
#include "crynet/hash.hpp"
#include "crynet/metrics.hpp"
#include "crynet/parse.hpp"

namespace crynet::cli {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e, std::string_view command) {
  if (dynamic_cast<const SplitError*>(&e) || dynamic_cast<const LeakageError*>(&e)) return kSplitLeakage;
  if (dynamic_cast<const CalibrationError*>(&e)) return kCalibration;
  if (dynamic_cast<const CaseStudyFailure*>(&e)) return kCaseStudy;
  if (command == "calibrate" || command == "fuse" || command == "case-studies") {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const LabelError*>(&e)) return kCalibration;
  }
  if (command == "eval" && dynamic_cast<const Error*>(&e)) return kEvalInput;
  return kFailure;
}

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string sample_id(const SampleRecord& r) { return fs::path(r.path).filename().string(); }

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

fs::path resolve_audio(const SampleRecord& r, const fs::path& in_dir) {
  const fs::path p(r.path);
  if (fs::exists(p) || in_dir.empty()) return p;
  if (p.is_relative() && fs::exists(in_dir / p)) return in_dir / p;
  return in_dir / p.filename();
}

/// Records of one split, or every record when none carries that split.
std::vector<SampleRecord> split_or_all(const std::vector<SampleRecord>& recs, Split split) {
  auto sel = select_split(recs, split);
  return sel.empty() ? recs : sel;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

int cmd_synth(const SynthOptions& o, Streams io) {
  RunConfig cfg = RunConfig::load(o.config);
  if (o.snr_db) cfg.synth.snr_db = *o.snr_db;
  if (o.clips_per_class) cfg.synth.clips_per_class = *o.clips_per_class;
  if (o.seed) cfg.synth.seed = *o.seed;
  const auto recs = synth_corpus(cfg.synth, o.out);
  write_meta(o.out / "manifest.jsonl", cfg.hash(), "synth");
  io.out << "wrote " << recs.size() << " clips to " << o.out.string() << '\n';
  return kOk;
}

int cmd_extract(const ExtractOptions& o, Streams io) {
  RunConfig cfg = RunConfig::load(o.config);
  if (!o.features.empty()) cfg.features.subset = FeatureSet::parse(o.features);
  cfg.features.validate();
  const std::string feat_hash = cfg.features.hash();
  auto records = read_manifest(o.manifest);
  fs::create_directories(o.out);

  std::vector<std::string> errors(records.size());
  std::vector<bool> skipped(records.size(), false);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++) {
      auto& r = records[i];
      const fs::path audio = resolve_audio(r, o.in);
      const fs::path cryf = o.out / (fs::path(r.path).stem().string() + ".cryf");
      try {
        if (fs::exists(cryf) && fs::exists(sidecar_path(cryf))) {
          const auto meta = read_feature_sidecar(sidecar_path(cryf));
          if (meta.config_hash == feat_hash && meta.source == audio.string()) {
            r.features = cryf.string();
            skipped[i] = true;
            continue;
          }
        }
        const AudioClip raw = load_wav(audio);
        const AudioClip clip = resample_to_16k(raw);
        std::unique_ptr<PitchEstimator> pitch;
        if (fs::exists(pitch_sidecar_path(audio))) {
          pitch = std::make_unique<SidecarPitch>(load_pitch_sidecar(pitch_sidecar_path(audio)));
        }
        const auto tensor = fuse_features(clip, cfg.features, pitch.get());
        write_cryf(cryf, tensor);
        FeatureSidecar meta;
        meta.source = audio.string();
        meta.source_sample_rate = raw.sample_rate;
        meta.duration_s = clip.duration_s();
        meta.config_hash = feat_hash;
        meta.subset = cfg.features.subset.to_string();
        meta.tool_version = std::string(library_version());
        write_feature_sidecar(sidecar_path(cryf), meta);
        r.features = cryf.string();
        if (r.duration_s == 0.0) r.duration_s = clip.duration_s();
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int jobs = o.jobs > 0 ? o.jobs : std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (int t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  const fs::path out_manifest = o.out / "manifest.jsonl";
  write_manifest(out_manifest, records);
  write_meta(out_manifest, cfg.hash(), "extract");
  nlohmann::ordered_json failed = nlohmann::ordered_json::array();
  std::size_t ok = 0, reused = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!errors[i].empty()) {
      failed.push_back({{"path", records[i].path}, {"error", errors[i]}});
    } else {
      ++ok;
      reused += skipped[i] ? 1 : 0;
    }
  }
  io.out << "extracted " << ok << "/" << records.size() << " (" << reused << " unchanged) into " << o.out.string()
         << '\n';
  if (!failed.empty()) {
    write_json(o.out / "errors.json", {{"failed", failed}});
    for (const auto& f : failed) io.err << "failed: " << f["path"].get<std::string>() << ": " << f["error"].get<std::string>() << '\n';
    return kPartial;
  }
  return kOk;
}

int cmd_split(const SplitOptions& o, Streams io) {
  RunConfig cfg = RunConfig::load(o.config);
  if (!o.fractions.empty()) {
    const auto parts = split_list(o.fractions);
    if (parts.size() != 3) throw ConfigError("--fractions needs three comma-separated values");
    cfg.split.train = std::stod(parts[0]);
    cfg.split.val = std::stod(parts[1]);
    cfg.split.test = std::stod(parts[2]);
  }
  if (o.seed) cfg.split.seed = *o.seed;
  if (o.no_stratify) cfg.split.stratify = false;

  std::vector<SampleRecord> records;
  if (!o.in.empty()) {
    auto built = build_manifest(o.in, parse_dataset_kind(o.dataset));
    for (const auto& q : built.quarantine) io.err << "quarantined: " << q.path << ": " << q.reason << '\n';
    if (!built.quarantine.empty()) io.err << built.quarantine.size() << " file(s) quarantined\n";
    records = std::move(built.records);
  } else {
    records = read_manifest(o.manifest);
  }
  auto res = group_split(std::move(records), cfg.split);
  for (const auto& w : res.warnings) io.err << "warning: " << w << '\n';
  if (const auto leaks = verify_no_leakage(res.records); !leaks.empty()) {
    throw LeakageError("split produced leakage for " + std::to_string(leaks.size()) + " group(s); nothing written");
  }
  write_manifest(o.manifest, res.records);
  write_meta(o.manifest, cfg.hash(), "split");
  std::map<Split, int> counts;
  for (const auto& r : res.records) ++counts[r.split];
  io.out << "train " << counts[Split::Train] << ", val " << counts[Split::Val] << ", test " << counts[Split::Test]
         << '\n';
  return kOk;
}

int cmd_train(const TrainOptions& o, Streams io) {
  RunConfig cfg = RunConfig::load(o.config);
  if (!o.cell.empty()) cfg.model.cell = parse_cell_kind(o.cell);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.epochs) cfg.train.max_epochs = *o.epochs;
  if (o.patience) cfg.train.patience = *o.patience;
  if (o.lr) cfg.train.lr = *o.lr;
  if (!o.filters.empty()) {
    cfg.model.filters.clear();
    for (const auto& f : split_list(o.filters)) cfg.model.filters.push_back(std::stoul(f));
    cfg.model.kernels.assign(cfg.model.filters.size(), 3);
  }
  cfg.model.validate();
  cfg.train.validate();
  const auto records = read_manifest(o.manifest);
  const auto outcome = train_model(records, cfg.model, cfg.train, [&](const EpochRecord& e) {
    io.out << "epoch " << e.epoch << " loss " << fmt(e.train_loss) << " val_macro_f1 " << fmt(e.val_macro_f1) << " ("
           << fmt(e.seconds, 1) << " s)\n";
  });
  outcome.checkpoint.save(o.out);
  outcome.report.write_jsonl(o.out / "train_report.jsonl");
  write_meta(o.out / "train_report.jsonl", cfg.hash(), "train");
  io.out << "best val macro-F1 " << fmt(outcome.report.best_val_macro_f1) << " at epoch " << outcome.report.best_epoch
         << '\n';
  return kOk;
}

int cmd_predict(const PredictOptions& o, Streams io) {
  const auto ckpt = Checkpoint::load(o.ckpt);
  auto records = read_manifest(o.manifest);
  if (o.split != "all") records = select_split(records, parse_split(o.split));
  const auto table = predict_logits(records, ckpt);
  write_logit_table(o.out, table);
  write_meta(o.out, ckpt.config_hash, "predict");
  io.out << "wrote " << table.rows.size() << " rows to " << o.out.string() << '\n';
  return kOk;
}

int cmd_calibrate(const CalibrateOptions& o, Streams io) {
  RunConfig cfg = RunConfig::load(o.config);
  const std::size_t n = o.ckpts.size() + o.logits.size();
  if (n == 0) throw ConfigError("calibrate needs --ckpt or --logits");
  if (!o.ckpts.empty() && !o.logits.empty()) throw ConfigError("mix of --ckpt and --logits is not supported");
  if (!o.ckpts.empty() && o.manifests.size() != o.ckpts.size()) {
    throw ConfigError("give one --manifest per --ckpt");
  }
  if (!o.domains.empty() && o.domains.size() != n) throw ConfigError("give one --domain per model");

  EnsembleDescriptor e;
  if (o.append && fs::exists(o.out)) e = ensemble_from_json(read_json(o.out));
  e.fusion = cfg.fusion;
  e.config_hash = cfg.hash();
  e.tool_version = std::string(library_version());

  for (std::size_t m = 0; m < n; ++m) {
    EnsembleMember member;
    LogitTable table;
    if (!o.ckpts.empty()) {
      const auto ckpt = Checkpoint::load(o.ckpts[m]);
      const auto val = split_or_all(read_manifest(o.manifests[m]), Split::Val);
      table = predict_logits(val, ckpt);
      member.checkpoint = fs::absolute(o.ckpts[m]).string();
    } else {
      table = read_logit_table(o.logits[m]);
      member.logits = fs::absolute(o.logits[m]).string();
    }
    std::vector<int> labels;
    try {
      labels = table.label_indices();
    } catch (const LabelError& err) {
      throw CalibrationError(std::string("validation labels do not match the model: ") + err.what());
    }
    const auto fit = fit_temperature(table.rows, labels);
    for (const auto& w : fit.warnings) io.err << "warning: " << w << '\n';
    member.domain = o.domains.empty() ? "model" + std::to_string(e.members.size()) : o.domains[m];
    member.labels = table.classes;
    member.temperature = fit.temperature;
    member.nll_before = fit.nll_before;
    member.nll_after = fit.nll_after;
    io.out << member.domain << ": T = " << fmt(fit.temperature) << ", NLL " << fmt(fit.nll_before) << " -> "
           << fmt(fit.nll_after) << '\n';
    e.members.push_back(std::move(member));
  }
  (void)e.label_space();  // validates the label maps before anything is written
  write_json(o.out, to_json(e));
  return kOk;
}

int cmd_fuse(const FuseOptions& o, Streams io) {
  RunConfig cfg = RunConfig::load(o.config);
  EnsembleDescriptor e = ensemble_from_json(read_json(o.ensemble));
  if (o.tau) e.fusion.tau = *o.tau;
  if (!o.mode.empty()) e.fusion.mode = parse_fusion_mode(o.mode);
  e.fusion.validate();
  const LabelSpace space = e.label_space();

  std::vector<std::string> ids, truth;
  std::vector<SampleRecord> test;
  if (!o.manifest.empty()) {
    test = split_or_all(read_manifest(o.manifest), Split::Test);
    for (const auto& r : test) {
      ids.push_back(sample_id(r));
      truth.push_back(r.label);
    }
  }

  std::vector<std::vector<std::vector<double>>> member_logits;  // member -> sample -> logits
  for (const auto& m : e.members) {
    LogitTable table;
    if (!m.checkpoint.empty()) {
      if (test.empty()) throw ConfigError("checkpoint members need a --manifest of test samples");
      const auto ckpt = Checkpoint::load(m.checkpoint);
      if (ckpt.labels != m.labels) throw ConfigError("checkpoint labels differ from the ensemble's for " + m.domain);
      table = predict_logits(test, ckpt);
    } else {
      table = read_logit_table(m.logits);
      if (table.classes != m.labels) throw ConfigError("logit table columns differ from the ensemble's for " + m.domain);
    }
    if (ids.empty()) {
      ids = table.sample_ids;
      truth = table.labels;
    }
    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < table.sample_ids.size(); ++i) row_of[table.sample_ids[i]] = i;
    std::vector<std::vector<double>> rows;
    for (const auto& id : ids) {
      const auto it = row_of.find(id);
      if (it == row_of.end()) throw ConfigError("sample '" + id + "' has no logits for " + m.domain);
      rows.push_back(table.rows[it->second]);
    }
    member_logits.push_back(std::move(rows));
  }

  std::vector<double> temps;
  for (const auto& m : e.members) temps.push_back(m.temperature);
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  std::ofstream out(o.out);
  if (!out) throw IoError("cannot write " + o.out.string());
  out << "sample_id,label,predicted";
  for (const auto& l : space.union_labels()) out << ',' << l;
  for (const auto& m : e.members) {
    for (const auto& l : m.labels) out << ',' << m.domain << ':' << l;
  }
  out << '\n';
  out.precision(10);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::vector<std::vector<double>> z;
    for (const auto& ml : member_logits) z.push_back(ml[i]);
    const auto r = fuse_union(z, temps, space, e.fusion);
    out << ids[i] << ',' << truth[i] << ',' << space.union_labels()[static_cast<std::size_t>(r.argmax)];
    for (double p : r.posterior) out << ',' << p;
    for (const auto& pm : r.per_model) {
      for (double p : pm) out << ',' << p;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + o.out.string());
  write_meta(o.out, e.config_hash.empty() ? cfg.hash() : e.config_hash, "fuse");
  io.out << "fused " << ids.size() << " samples over {";
  for (std::size_t k = 0; k < space.size(); ++k) io.out << (k ? ", " : "") << space.union_labels()[k];
  io.out << "} (tau " << e.fusion.tau << ", " << to_string(e.fusion.mode) << ")\n";
  return kOk;
}

namespace {

struct Predictions {
  std::vector<std::string> classes;
  std::vector<std::string> ids, truth, predicted;
  std::vector<std::vector<double>> probs;
};

/// Reads fused predictions (sample_id,label,predicted,<posteriors>[,domain:label...])
/// or a logit table (sample_id,label,<logits>), which is softmaxed.
Predictions read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + " is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) header.push_back(c);
  }
  if (header.size() < 3 || header[0] != "sample_id" || header[1] != "label") {
    throw ParseError(path.string() + ": header must start with sample_id,label");
  }
  const bool fused = header[2] == "predicted";
  const std::size_t first = fused ? 3 : 2;
  std::size_t last = first;
  while (last < header.size() && header[last].find(':') == std::string::npos) ++last;
  Predictions p;
  p.classes.assign(header.begin() + static_cast<std::ptrdiff_t>(first), header.begin() + static_cast<std::ptrdiff_t>(last));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (cells.size() != header.size()) throw ParseError(path.string() + ": wrong column count");
    std::vector<double> row;
    for (std::size_t k = first; k < last; ++k) row.push_back(parse_double(cells[k]));
    if (!fused) row = calibrate_posterior(row, 1.0);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    p.ids.push_back(cells[0]);
    p.truth.push_back(cells[1]);
    p.predicted.push_back(fused ? cells[2] : p.classes[best]);
    p.probs.push_back(std::move(row));
  }
  return p;
}

EvaluationReport evaluate_predictions(const Predictions& p, const std::map<std::string, std::string>& truth_override) {
  if (p.ids.empty()) throw DataError("no predictions to evaluate");
  std::map<std::string, int> index;
  for (std::size_t c = 0; c < p.classes.size(); ++c) index[p.classes[c]] = static_cast<int>(c);
  ConfusionMatrix cm(p.classes);
  std::vector<int> labels;
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    std::string t = p.truth[i];
    if (const auto it = truth_override.find(p.ids[i]); it != truth_override.end()) t = it->second;
    const auto ti = index.find(t);
    if (ti == index.end()) throw LabelError("true label '" + t + "' of " + p.ids[i] + " is not a predicted class");
    const auto pi = index.find(p.predicted[i]);
    if (pi == index.end()) throw LabelError("predicted label '" + p.predicted[i] + "' is not a class");
    cm.add(ti->second, pi->second);
    labels.push_back(ti->second);
  }
  auto report = evaluate(cm);
  report.nll = nll(p.probs, labels);
  report.has_nll = true;
  return report;
}

}  // namespace

int cmd_eval(const EvalOptions& o, Streams io) {
  if (o.preds.empty()) throw ConfigError("eval needs --preds");
  if (!o.seeds.empty() && o.seeds.size() != o.preds.size()) throw ConfigError("give one --preds file per --seeds value");
  std::map<std::string, std::string> truth;
  if (!o.manifest.empty()) {
    for (const auto& r : read_manifest(o.manifest)) truth[sample_id(r)] = r.label;
  }
  std::vector<EvaluationReport> reports;
  for (const auto& p : o.preds) reports.push_back(evaluate_predictions(read_predictions(p), truth));

  nlohmann::ordered_json j = to_json(reports.front());
  if (reports.size() > 1) {
    std::vector<unsigned long long> seeds;
    for (std::size_t i = 0; i < reports.size(); ++i) seeds.push_back(o.seeds.empty() ? i : o.seeds[i]);
    std::map<unsigned long long, std::size_t> at;
    for (std::size_t i = 0; i < seeds.size(); ++i) at[seeds[i]] = i;
    const auto sweep = seed_sweep(
        [&](unsigned long long s) {
          const auto& r = reports[at.at(s)];
          return std::map<std::string, double>{{"macro_f1", r.macro_f1}, {"accuracy", r.accuracy}, {"nll", r.nll}};
        },
        seeds);
    j["seed_sweep"] = to_json(sweep);
    io.out << "macro-F1 " << fmt(sweep.summary.at("macro_f1").mean) << " +- " << fmt(sweep.summary.at("macro_f1").std)
           << " over " << seeds.size() << " seeds\n";
  } else {
    io.out << "macro-F1 " << fmt(reports.front().macro_f1) << ", accuracy " << fmt(reports.front().accuracy) << ", NLL "
           << fmt(reports.front().nll) << '\n';
  }
  j["tool_version"] = library_version();
  write_json(o.out, j);
  return kOk;
}

int cmd_casestudies(const CaseStudyOptions& o, Streams io) {
  RunConfig cfg = RunConfig::load(o.config);
  if (o.tau) cfg.fusion.tau = *o.tau;
  if (!o.mode.empty()) cfg.fusion.mode = parse_fusion_mode(o.mode);
  cfg.fusion.validate();
  const auto cases = o.fixture.empty() ? builtin_case_studies() : parse_case_studies(read_json(o.fixture));
  const auto space = LabelSpace::cry_default();
  const auto report = run_case_studies(cases, space, cfg.fusion);
  for (const auto& c : report.outcomes) {
    io.out << std::left << std::setw(24) << c.name << " fused " << std::setw(14) << c.predicted << " expected "
           << std::setw(8) << c.expected << (c.matched ? " ok" : " MISMATCH");
    if (!c.correct) io.out << "  (wrong label, as documented)";
    io.out << "\n    without calibration: " << c.uncalibrated << (c.overconfident ? " (overconfident)" : "") << '\n';
  }
  if (!o.out.empty()) {
    auto j = to_json(report, space);
    j["tau"] = cfg.fusion.tau;
    j["mode"] = to_string(cfg.fusion.mode);
    j["config_hash"] = cfg.hash();
    j["tool_version"] = library_version();
    write_json(o.out, j);
  }
  require_all_matched(report);
  return kOk;
}

int cmd_report(const ReportOptions& o, Streams io) {
  if (o.inputs.empty()) throw ConfigError("report needs at least one --in");
  std::ostringstream md;
  md << "| report | macro-F1 | accuracy | NLL |\n|---|---|---|---|\n";
  for (const auto& p : o.inputs) {
    const auto j = read_json(p);
    auto cell = [&](const char* key) -> std::string {
      if (j.contains("seed_sweep") && j["seed_sweep"]["summary"].contains(key)) {
        const auto& s = j["seed_sweep"]["summary"][key];
        return fmt(s["mean"].get<double>()) + " +- " + fmt(s["std"].get<double>());
      }
      return j.contains(key) ? fmt(j[key].get<double>()) : "-";
    };
    md << "| " << p.stem().string() << " | " << cell("macro_f1") << " | " << cell("accuracy") << " | " << cell("nll")
       << " |\n";
  }
  if (o.out.empty()) {
    io.out << md.str();
  } else {
    std::ofstream out(o.out);
    if (!out) throw IoError("cannot write " + o.out.string());
    out << md.str();
  }
  return kOk;
}

}  // namespace crynet::cli
