#include "crynet/fusion.hpp"
#include "crynet/parse.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace crynet {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

LabelSpace::LabelSpace(std::vector<Domain> domains) : domains_(std::move(domains)) {
  if (domains_.empty()) throw ConfigError("label space needs at least one domain");
  std::map<std::string, int> owners;
  std::set<std::string> names;
  for (const auto& d : domains_) {
    if (!names.insert(d.name).second) throw ConfigError("duplicate domain '" + d.name + "'");
    std::set<std::string> own(d.labels.begin(), d.labels.end());
    if (own.size() != d.labels.size()) throw ConfigError("domain '" + d.name + "' repeats a label");
    if (d.labels.empty()) throw ConfigError("domain '" + d.name + "' has no labels");
    for (const auto& l : d.labels) ++owners[l];
  }
  for (const auto& d : domains_) {
    for (const auto& l : d.labels) {
      if (owners[l] == 1) union_.push_back(l);
    }
  }
  for (const auto& d : domains_) {
    for (const auto& l : d.labels) {
      if (owners[l] > 1 && std::find(union_.begin(), union_.end(), l) == union_.end()) union_.push_back(l);
    }
  }
  shared_.resize(union_.size());
  for (std::size_t i = 0; i < union_.size(); ++i) shared_[i] = owners[union_[i]] > 1;
  for (const auto& d : domains_) {
    std::vector<int> m;
    for (const auto& l : d.labels) m.push_back(union_index(l));
    maps_.push_back(std::move(m));
  }
}

LabelSpace LabelSpace::cry_default() {
  return LabelSpace({{"Baby_Crying", {"hungry", "awake", "sleepy"}}, {"Baby2020", {"hug", "uncomfortable", "sleepy"}}});
}

std::size_t LabelSpace::domain_index(std::string_view name) const {
  for (std::size_t m = 0; m < domains_.size(); ++m) {
    if (domains_[m].name == name) return m;
  }
  throw ConfigError("unknown domain '" + std::string(name) + "'");
}

std::vector<std::string> LabelSpace::shared_labels() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < union_.size(); ++i) {
    if (shared_[i]) out.push_back(union_[i]);
  }
  return out;
}

int LabelSpace::union_index(std::string_view label) const {
  for (std::size_t i = 0; i < union_.size(); ++i) {
    if (union_[i] == label) return static_cast<int>(i);
  }
  return -1;
}

double temperature_nll(const std::vector<std::vector<double>>& logits, const std::vector<int>& labels, double T) {
  if (logits.size() != labels.size()) throw LabelError("logit rows and labels differ in count");
  if (logits.empty()) return 0.0;
  double total = 0.0;
  std::vector<double> scaled;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    const auto& z = logits[n];
    const int y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= z.size()) throw LabelError("label out of range in row " + std::to_string(n));
    scaled.resize(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) scaled[j] = z[j] / T;
    total += log_sum_exp(scaled) - scaled[static_cast<std::size_t>(y)];
  }
  return total / static_cast<double>(logits.size());
}

namespace {

double golden_section(const std::vector<std::vector<double>>& logits, const std::vector<int>& labels, double lo,
                      double hi, double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto f = [&](double u) { return temperature_nll(logits, labels, std::exp(u)); };
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

TemperatureFit fit_temperature(const std::vector<std::vector<double>>& logits, const std::vector<int>& labels) {
  if (logits.size() != labels.size()) throw LabelError("logit rows and labels differ in count");
  if (logits.size() < 10) throw CalibrationError("temperature fitting needs at least 10 samples");
  const std::size_t C = logits.front().size();
  if (C < 2) throw CalibrationError("temperature fitting needs at least 2 classes");
  std::vector<bool> present(C, false);
  bool all_constant = true;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    if (logits[n].size() != C) throw ShapeError("ragged logit table");
    for (double v : logits[n]) {
      if (!std::isfinite(v)) throw CalibrationError("non-finite logit in row " + std::to_string(n));
    }
    const auto [mn, mx] = std::minmax_element(logits[n].begin(), logits[n].end());
    if (*mx - *mn > 1e-12) all_constant = false;
    const int y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= C) throw LabelError("label out of range in row " + std::to_string(n));
    present[static_cast<std::size_t>(y)] = true;
  }
  if (all_constant) throw CalibrationError("every logit row is constant; temperature is unidentifiable");
  for (std::size_t c = 0; c < C; ++c) {
    if (!present[c]) throw CalibrationError("class " + std::to_string(c) + " never appears in the validation labels");
  }

  const double tol = 1e-4;
  double lo = std::log(kMinTemperature), hi = std::log(kMaxTemperature);
  TemperatureFit fit;
  double u = golden_section(logits, labels, lo, hi, tol);
  if (u - lo < 2 * tol || hi - u < 2 * tol) {
    fit.widened = true;
    lo = std::log(kMinTemperature / 10.0);
    hi = std::log(kMaxTemperature * 10.0);
    u = golden_section(logits, labels, lo, hi, tol);
    fit.warnings.push_back("temperature minimum on the search bracket edge; widened to [" +
                           std::to_string(kMinTemperature / 10.0) + ", " + std::to_string(kMaxTemperature * 10.0) + "]");
    if (u - lo < 2 * tol || hi - u < 2 * tol) fit.warnings.push_back("temperature still at the widened bracket edge");
  }
  fit.nll_before = temperature_nll(logits, labels, 1.0);
  fit.temperature = std::exp(u);
  fit.nll_after = temperature_nll(logits, labels, fit.temperature);
  if (fit.nll_after > fit.nll_before) {
    fit.temperature = 1.0;
    fit.nll_after = fit.nll_before;
  }
  return fit;
}

std::vector<double> calibrate_posterior(const std::vector<double>& logits, double T) {
  if (!(T > 0.0)) throw ConfigError("temperature must be positive");
  if (logits.empty()) return {};
  const double m = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(m)) throw NumericalError("logit vector has no finite maximum");
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((logits[i] - m) / T);
    s += p[i];
  }
  for (auto& v : p) v /= s;
  return p;
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

std::vector<double> entropy_weights(const std::vector<std::vector<double>>& posteriors, double tau) {
  if (posteriors.empty()) return {};
  std::vector<double> logw;
  for (const auto& p : posteriors) logw.push_back(-tau * entropy(p));
  const double norm = log_sum_exp(logw);
  std::vector<double> w;
  for (double v : logw) w.push_back(std::exp(v - norm));
  return w;
}

std::pair<double, double> entropy_weights(const std::vector<double>& p_b, const std::vector<double>& p_c, double tau) {
  const auto w = entropy_weights(std::vector<std::vector<double>>{p_b, p_c}, tau);
  return {w[0], w[1]};
}

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "lse") return FusionMode::EntropyLse;
  if (s == "poe") return FusionMode::ProductOfExperts;
  throw ConfigError("unknown fusion mode '" + std::string(s) + "' (expected lse or poe)");
}

std::string_view to_string(FusionMode m) { return m == FusionMode::EntropyLse ? "lse" : "poe"; }

void FusionConfig::validate() const {
  if (!std::isfinite(tau) || tau < 0.0) throw ConfigError("tau must be finite and non-negative");
}

FusionResult fuse_union(const std::vector<std::vector<double>>& logits, const std::vector<double>& temperatures,
                        const LabelSpace& space, const FusionConfig& cfg) {
  cfg.validate();
  if (logits.empty()) throw ConfigError("fusion needs at least one expert");
  if (logits.size() > space.domain_count()) throw ConfigError("more experts than domains in the label space");
  if (temperatures.size() != logits.size()) throw ConfigError("one temperature per expert is required");

  FusionResult r;
  std::vector<std::vector<double>> log_post;
  for (std::size_t m = 0; m < logits.size(); ++m) {
    if (logits[m].size() != space.domain(m).labels.size()) {
      throw ConfigError("expert " + space.domain(m).name + " has " + std::to_string(logits[m].size()) +
                        " logits but its domain has " + std::to_string(space.domain(m).labels.size()) + " labels");
    }
    r.per_model.push_back(calibrate_posterior(logits[m], temperatures[m]));
    std::vector<double> lp;
    for (double p : r.per_model.back()) lp.push_back(p > 0.0 ? std::log(p) : kNegInf);
    log_post.push_back(std::move(lp));
  }
  r.weights = entropy_weights(r.per_model, cfg.tau);

  const std::size_t L = space.size();
  r.union_logits.assign(L, kNegInf);
  std::vector<std::vector<std::pair<std::size_t, double>>> contributions(L);  // (expert, log-posterior)
  for (std::size_t m = 0; m < logits.size(); ++m) {
    const auto& map = space.map(m);
    for (std::size_t j = 0; j < map.size(); ++j) {
      contributions[static_cast<std::size_t>(map[j])].emplace_back(m, log_post[m][j]);
    }
  }
  for (std::size_t i = 0; i < L; ++i) {
    const auto& c = contributions[i];
    if (c.empty()) throw ConfigError("union label '" + space.union_labels()[i] + "' is not covered by any expert");
    if (c.size() == 1) {
      r.union_logits[i] = c.front().second;
      continue;
    }
    if (cfg.mode == FusionMode::ProductOfExperts) {
      double s = 0.0;
      for (const auto& [m, z] : c) s += z;
      r.union_logits[i] = s;
    } else {
      // Renormalise over the experts that carry this label.
      double wsum = 0.0;
      for (const auto& [m, z] : c) wsum += r.weights[m];
      std::vector<double> terms;
      for (const auto& [m, z] : c) terms.push_back(std::log(r.weights[m] / wsum) + z);
      r.union_logits[i] = log_sum_exp(terms);
    }
  }
  r.posterior = calibrate_posterior(r.union_logits, 1.0);
  r.argmax = argmax(r.posterior);
  return r;
}

std::vector<int> LogitTable::label_indices() const {
  std::vector<int> out;
  for (const auto& l : labels) {
    const auto it = std::find(classes.begin(), classes.end(), l);
    if (it == classes.end()) throw LabelError("label '" + l + "' is not a column of the logit table");
    out.push_back(static_cast<int>(it - classes.begin()));
  }
  return out;
}

void write_logit_table(const std::filesystem::path& path, const LogitTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "sample_id,label";
  for (const auto& c : table.classes) out << ',' << c;
  out << '\n';
  out.precision(17);
  for (std::size_t n = 0; n < table.rows.size(); ++n) {
    out << table.sample_ids[n] << ',' << table.labels[n];
    for (double v : table.rows[n]) out << ',' << v;
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

LogitTable read_logit_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  auto cells = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) out.push_back(c);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
  };
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty logit table");
  auto header = cells(line);
  if (header.size() < 3 || header[0] != "sample_id" || header[1] != "label") {
    throw ParseError(path.string() + ": header must start with sample_id,label");
  }
  LogitTable t;
  t.classes.assign(header.begin() + 2, header.end());
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto c = cells(line);
    if (c.size() != header.size()) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": wrong column count");
    t.sample_ids.push_back(c[0]);
    t.labels.push_back(c[1]);
    std::vector<double> row;
    for (std::size_t k = 2; k < c.size(); ++k) {
      try {
        row.push_back(parse_double(c[k]));
      } catch (const std::exception&) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + c[k] + "'");
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

LabelSpace EnsembleDescriptor::label_space() const {
  std::vector<Domain> d;
  for (const auto& m : members) d.push_back({m.domain, m.labels});
  return LabelSpace(std::move(d));
}

nlohmann::ordered_json to_json(const EnsembleDescriptor& e) {
  nlohmann::ordered_json members = nlohmann::ordered_json::array();
  for (const auto& m : e.members) {
    nlohmann::ordered_json j{{"domain", m.domain}, {"labels", m.labels}};
    if (!m.checkpoint.empty()) j["checkpoint"] = m.checkpoint;
    if (!m.logits.empty()) j["logits"] = m.logits;
    j["temperature"] = m.temperature;
    j["nll_before"] = m.nll_before;
    j["nll_after"] = m.nll_after;
    members.push_back(j);
  }
  return {{"format", "crynet-ensemble"},
          {"members", members},
          {"tau", e.fusion.tau},
          {"mode", to_string(e.fusion.mode)},
          {"config_hash", e.config_hash},
          {"tool_version", e.tool_version}};
}

EnsembleDescriptor ensemble_from_json(const nlohmann::json& j) {
  try {
    EnsembleDescriptor e;
    for (const auto& m : j.at("members")) {
      EnsembleMember em;
      em.domain = m.at("domain").get<std::string>();
      em.labels = m.at("labels").get<std::vector<std::string>>();
      em.checkpoint = m.value("checkpoint", std::string());
      em.logits = m.value("logits", std::string());
      em.temperature = m.value("temperature", 1.0);
      em.nll_before = m.value("nll_before", 0.0);
      em.nll_after = m.value("nll_after", 0.0);
      if (!(em.temperature > 0.0)) throw ConfigError("member '" + em.domain + "' has a non-positive temperature");
      e.members.push_back(std::move(em));
    }
    e.fusion.tau = j.value("tau", 1.0);
    e.fusion.mode = parse_fusion_mode(j.value("mode", std::string("lse")));
    e.config_hash = j.value("config_hash", std::string());
    e.tool_version = j.value("tool_version", std::string());
    e.fusion.validate();
    if (e.members.empty()) throw ConfigError("ensemble has no members");
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("malformed ensemble descriptor: ") + ex.what());
  }
}

bool CaseReport::all_matched() const {
  return std::all_of(outcomes.begin(), outcomes.end(), [](const CaseOutcome& o) { return o.matched; });
}

std::vector<CaseStudy> parse_case_studies(const nlohmann::json& j) {
  std::vector<CaseStudy> out;
  try {
    for (const auto& c : j.at("cases")) {
      CaseStudy cs;
      cs.name = c.at("name").get<std::string>();
      cs.true_label = c.at("true_label").get<std::string>();
      cs.expected = c.at("expected").get<std::string>();
      cs.posteriors = c.at("posteriors").get<std::map<std::string, std::map<std::string, double>>>();
      cs.temperatures = c.value("temperatures", std::map<std::string, double>{});
      out.push_back(std::move(cs));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed case-study fixture: ") + e.what());
  }
  return out;
}

std::vector<CaseStudy> builtin_case_studies() {
  return parse_case_studies(nlohmann::json::parse(builtin_case_studies_json()));
}

CaseReport run_case_studies(const std::vector<CaseStudy>& cases, const LabelSpace& space, const FusionConfig& cfg) {
  CaseReport report;
  for (const auto& cs : cases) {
    std::vector<std::vector<double>> logits;
    std::vector<double> temps, ones;
    for (std::size_t m = 0; m < space.domain_count(); ++m) {
      const auto& d = space.domain(m);
      const auto it = cs.posteriors.find(d.name);
      if (it == cs.posteriors.end()) throw ConfigError("case '" + cs.name + "' has no posterior for " + d.name);
      std::vector<double> z;
      for (const auto& l : d.labels) {
        const auto p = it->second.find(l);
        const double v = p == it->second.end() ? 0.0 : p->second;
        if (v < 0.0) throw ConfigError("case '" + cs.name + "' has a negative probability");
        z.push_back(v > 0.0 ? std::log(v) : kNegInf);
      }
      for (const auto& [l, _] : it->second) {
        if (std::find(d.labels.begin(), d.labels.end(), l) == d.labels.end()) {
          throw ConfigError("case '" + cs.name + "' uses label '" + l + "' outside domain " + d.name);
        }
      }
      logits.push_back(std::move(z));
      const auto t = cs.temperatures.find(d.name);
      temps.push_back(t == cs.temperatures.end() ? 1.0 : t->second);
      ones.push_back(1.0);
    }
    CaseOutcome o;
    o.name = cs.name;
    o.expected = cs.expected;
    o.fused = fuse_union(logits, temps, space, cfg);
    o.predicted = space.union_labels()[static_cast<std::size_t>(o.fused.argmax)];
    const auto raw = fuse_union(logits, ones, space, cfg);
    o.uncalibrated = space.union_labels()[static_cast<std::size_t>(raw.argmax)];
    o.matched = o.predicted == cs.expected;
    o.correct = o.predicted == cs.true_label;
    for (std::size_t m = 0; m < raw.per_model.size(); ++m) {
      const double before = *std::max_element(raw.per_model[m].begin(), raw.per_model[m].end());
      const double after = *std::max_element(o.fused.per_model[m].begin(), o.fused.per_model[m].end());
      if (before > after + 1e-12 && raw.argmax == o.fused.argmax) o.overconfident = true;
    }
    report.outcomes.push_back(std::move(o));
  }
  return report;
}

void require_all_matched(const CaseReport& report) {
  std::string failed;
  for (const auto& o : report.outcomes) {
    if (!o.matched) failed += (failed.empty() ? "" : "; ") + o.name + " expected " + o.expected + " got " + o.predicted;
  }
  if (!failed.empty()) throw CaseStudyFailure("case-study mismatch: " + failed);
}

nlohmann::ordered_json to_json(const CaseReport& report, const LabelSpace& space) {
  nlohmann::ordered_json cases = nlohmann::ordered_json::array();
  for (const auto& o : report.outcomes) {
    nlohmann::ordered_json post = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < space.size(); ++i) post[space.union_labels()[i]] = o.fused.posterior[i];
    cases.push_back({{"name", o.name},
                     {"expected", o.expected},
                     {"predicted", o.predicted},
                     {"matched", o.matched},
                     {"correct", o.correct},
                     {"uncalibrated", o.uncalibrated},
                     {"overconfident", o.overconfident},
                     {"weights", o.fused.weights},
                     {"posterior", post}});
  }
  return {{"all_matched", report.all_matched()}, {"cases", cases}};
}

}  // namespace crynet
