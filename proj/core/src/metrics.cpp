#include "crynet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace crynet {

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> classes)
    : classes_(std::move(classes)), counts_(classes_.size() * classes_.size(), 0) {}

ConfusionMatrix ConfusionMatrix::from_indices(std::vector<std::string> classes, const std::vector<int>& truth,
                                              const std::vector<int>& pred) {
  if (truth.size() != pred.size()) throw LabelError("truth and prediction counts differ");
  ConfusionMatrix cm(std::move(classes));
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], pred[i]);
  return cm;
}

std::size_t ConfusionMatrix::index(int truth, int pred) const {
  const int n = size();
  if (truth < 0 || truth >= n || pred < 0 || pred >= n) {
    throw LabelError("class index out of range (" + std::to_string(truth) + ", " + std::to_string(pred) + ")");
  }
  return static_cast<std::size_t>(truth) * classes_.size() + static_cast<std::size_t>(pred);
}

void ConfusionMatrix::add(int truth, int pred, long count) { counts_[index(truth, pred)] += count; }

long ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), 0L); }

long ConfusionMatrix::row_sum(int c) const {
  long s = 0;
  for (int j = 0; j < size(); ++j) s += at(c, j);
  return s;
}

long ConfusionMatrix::col_sum(int c) const {
  long s = 0;
  for (int i = 0; i < size(); ++i) s += at(i, c);
  return s;
}

std::vector<ClassScores> per_class_scores(const ConfusionMatrix& cm) {
  std::vector<ClassScores> out(static_cast<std::size_t>(cm.size()));
  for (int c = 0; c < cm.size(); ++c) {
    auto& s = out[static_cast<std::size_t>(c)];
    const long tp = cm.at(c, c);
    const long truth = cm.row_sum(c);
    const long predicted = cm.col_sum(c);
    s.support = truth;
    s.present = truth > 0 || predicted > 0;
    s.precision = predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
    s.recall = truth > 0 ? static_cast<double>(tp) / truth : 0.0;
    const double denom = s.precision + s.recall;
    s.f1 = denom > 0 ? 2.0 * s.precision * s.recall / denom : 0.0;
  }
  return out;
}

double macro_f1(const ConfusionMatrix& cm) {
  double sum = 0.0;
  int n = 0;
  for (const auto& s : per_class_scores(cm)) {
    if (!s.present) continue;
    sum += s.f1;
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

double accuracy(const ConfusionMatrix& cm) {
  const long total = cm.total();
  if (total == 0) return 0.0;
  long diag = 0;
  for (int c = 0; c < cm.size(); ++c) diag += cm.at(c, c);
  return static_cast<double>(diag) / total;
}

double nll(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size()) throw LabelError("probability rows and labels differ in count");
  if (probs.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= probs[i].size()) {
      throw LabelError("label " + std::to_string(y) + " out of range in row " + std::to_string(i));
    }
    total -= std::log(std::max(probs[i][static_cast<std::size_t>(y)], 1e-12));
  }
  return total / static_cast<double>(probs.size());
}

SweepStat mean_std(const std::vector<double>& values) {
  SweepStat s;
  if (values.empty()) return s;
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); })) {
    s.mean = values.front();
    return s;
  }
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

SeedSweep seed_sweep(const std::function<std::map<std::string, double>(unsigned long long)>& eval,
                     const std::vector<unsigned long long>& seeds) {
  if (seeds.size() < 2) throw ConfigError("a seed sweep needs at least two seeds");
  SeedSweep sweep;
  sweep.seeds = seeds;
  for (auto seed : seeds) sweep.rows.push_back(eval(seed));
  std::map<std::string, std::vector<double>> columns;
  for (const auto& row : sweep.rows) {
    for (const auto& [k, v] : row) columns[k].push_back(v);
  }
  for (const auto& [k, v] : columns) sweep.summary[k] = mean_std(v);
  return sweep;
}

EvaluationReport evaluate(const ConfusionMatrix& cm) {
  EvaluationReport r;
  r.cm = cm;
  r.macro_f1 = macro_f1(cm);
  r.accuracy = accuracy(cm);
  return r;
}

nlohmann::ordered_json to_json(const ConfusionMatrix& cm) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (int i = 0; i < cm.size(); ++i) {
    std::vector<long> row;
    for (int j = 0; j < cm.size(); ++j) row.push_back(cm.at(i, j));
    rows.push_back(row);
  }
  return {{"classes", cm.classes()}, {"counts", rows}};
}

nlohmann::ordered_json to_json(const EvaluationReport& report) {
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  const auto scores = per_class_scores(report.cm);
  for (int c = 0; c < report.cm.size(); ++c) {
    const auto& s = scores[static_cast<std::size_t>(c)];
    per_class[report.cm.classes()[static_cast<std::size_t>(c)]] = {
        {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
  }
  nlohmann::ordered_json j;
  j["per_class"] = per_class;
  j["macro_f1"] = report.macro_f1;
  j["accuracy"] = report.accuracy;
  if (report.has_nll) j["nll"] = report.nll;
  j["confusion_matrix"] = to_json(report.cm);
  return j;
}

nlohmann::ordered_json to_json(const SeedSweep& sweep) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
    nlohmann::ordered_json r;
    r["seed"] = sweep.seeds[i];
    for (const auto& [k, v] : sweep.rows[i]) r[k] = v;
    rows.push_back(r);
  }
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();
  for (const auto& [k, s] : sweep.summary) summary[k] = {{"mean", s.mean}, {"std", s.std}};
  return {{"rows", rows}, {"summary", summary}};
}

}  // namespace crynet
