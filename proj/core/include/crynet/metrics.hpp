#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crynet/errors.hpp"

namespace crynet {

/// Rows are true classes, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::vector<std::string> classes);

  /// Builds from parallel index vectors. Throws LabelError on out-of-range indices.
  static ConfusionMatrix from_indices(std::vector<std::string> classes, const std::vector<int>& truth,
                                      const std::vector<int>& pred);

  void add(int truth, int pred, long count = 1);

  [[nodiscard]] long at(int truth, int pred) const { return counts_[index(truth, pred)]; }
  [[nodiscard]] int size() const { return static_cast<int>(classes_.size()); }
  [[nodiscard]] const std::vector<std::string>& classes() const { return classes_; }
  [[nodiscard]] long total() const;
  [[nodiscard]] long row_sum(int c) const;
  [[nodiscard]] long col_sum(int c) const;

 private:
  [[nodiscard]] std::size_t index(int truth, int pred) const;

  std::vector<std::string> classes_;
  std::vector<long> counts_;
};

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
  bool present = false;  // appears on at least one axis
};

std::vector<ClassScores> per_class_scores(const ConfusionMatrix& cm);

/// Mean F1 over classes that occur as truth or prediction. Zero denominators
/// make that precision/recall 0.
double macro_f1(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);

/// Mean of -ln p[label] with p floored at 1e-12.
double nll(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels);

struct SweepStat {
  double mean = 0.0;
  double std = 0.0;  // n - 1 denominator
};

struct SeedSweep {
  std::vector<unsigned long long> seeds;
  std::vector<std::map<std::string, double>> rows;  // one per seed
  std::map<std::string, SweepStat> summary;
};

/// Runs `eval` once per seed and aggregates every metric it returns.
/// Needs at least two seeds.
SeedSweep seed_sweep(const std::function<std::map<std::string, double>(unsigned long long)>& eval,
                     const std::vector<unsigned long long>& seeds);

SweepStat mean_std(const std::vector<double>& values);

struct EvaluationReport {
  ConfusionMatrix cm{{}};
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  double nll = 0.0;
  bool has_nll = false;
};

EvaluationReport evaluate(const ConfusionMatrix& cm);

nlohmann::ordered_json to_json(const ConfusionMatrix& cm);
nlohmann::ordered_json to_json(const EvaluationReport& report);
nlohmann::ordered_json to_json(const SeedSweep& sweep);

}  // namespace crynet
