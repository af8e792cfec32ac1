#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "crynet/errors.hpp"

namespace crynet {

struct Domain {
  std::string name;
  std::vector<std::string> labels;
};

/// Union of several domains' label sets. Labels owned by one domain come
/// first (in domain order), then labels shared by two or more domains.
class LabelSpace {
 public:
  explicit LabelSpace(std::vector<Domain> domains);

  /// Baby_Crying {hungry, awake, sleepy} and Baby2020 {hug, uncomfortable, sleepy}.
  static LabelSpace cry_default();

  [[nodiscard]] const std::vector<std::string>& union_labels() const { return union_; }
  [[nodiscard]] std::size_t size() const { return union_.size(); }
  [[nodiscard]] std::size_t domain_count() const { return domains_.size(); }
  [[nodiscard]] const Domain& domain(std::size_t m) const { return domains_.at(m); }
  [[nodiscard]] std::size_t domain_index(std::string_view name) const;
  /// Domain label position -> union position.
  [[nodiscard]] const std::vector<int>& map(std::size_t m) const { return maps_.at(m); }
  [[nodiscard]] bool is_shared(int union_index) const { return shared_.at(static_cast<std::size_t>(union_index)); }
  [[nodiscard]] std::vector<std::string> shared_labels() const;
  [[nodiscard]] int union_index(std::string_view label) const;  // -1 if absent

 private:
  std::vector<Domain> domains_;
  std::vector<std::string> union_;
  std::vector<std::vector<int>> maps_;
  std::vector<bool> shared_;
};

inline constexpr double kMinTemperature = 0.05;
inline constexpr double kMaxTemperature = 20.0;

struct TemperatureFit {
  double temperature = 1.0;
  double nll_before = 0.0;  // at T = 1
  double nll_after = 0.0;
  bool widened = false;     // the first bracket put the minimum on an edge
  std::vector<std::string> warnings;
};

/// Mean NLL of softmax(z / T) against integer labels.
double temperature_nll(const std::vector<std::vector<double>>& logits, const std::vector<int>& labels, double T);

/// Golden-section search on log T. Needs at least 10 rows and every class
/// present; throws CalibrationError otherwise or when every row is constant.
TemperatureFit fit_temperature(const std::vector<std::vector<double>>& logits, const std::vector<int>& labels);

/// softmax(z / T), max-shifted. Entries of -inf map to probability 0.
std::vector<double> calibrate_posterior(const std::vector<double>& logits, double T);

/// Shannon entropy in nats, with 0 ln 0 = 0.
double entropy(const std::vector<double>& p);

/// w_m proportional to exp(-tau H(p_m)), normalised to sum to 1.
std::vector<double> entropy_weights(const std::vector<std::vector<double>>& posteriors, double tau);
std::pair<double, double> entropy_weights(const std::vector<double>& p_b, const std::vector<double>& p_c, double tau);

enum class FusionMode { EntropyLse, ProductOfExperts };

FusionMode parse_fusion_mode(std::string_view s);
std::string_view to_string(FusionMode m);

struct FusionConfig {
  double tau = 1.0;
  FusionMode mode = FusionMode::EntropyLse;

  void validate() const;
};

struct FusionResult {
  std::vector<double> posterior;                // over the union labels
  std::vector<double> union_logits;             // pre-softmax, log-posterior gauge
  std::vector<double> weights;                  // one per expert
  std::vector<std::vector<double>> per_model;   // calibrated posteriors, domain order
  int argmax = 0;
};

/// Projects each expert's calibrated log-posterior into the union space.
/// Disjoint labels are copied; shared labels are combined with the entropy
/// weighted log-sum-exp (or summed, for product of experts). Experts are
/// matched to domains by position; `logits` may be shorter than the domain
/// list only when every union label is still covered.
FusionResult fuse_union(const std::vector<std::vector<double>>& logits, const std::vector<double>& temperatures,
                        const LabelSpace& space, const FusionConfig& cfg);

/// Rows of per-sample logits, written as `sample_id,label,<class...>`.
struct LogitTable {
  std::vector<std::string> classes;
  std::vector<std::string> sample_ids;
  std::vector<std::string> labels;  // true label per row, may be empty strings
  std::vector<std::vector<double>> rows;

  /// Label indices into `classes`; throws LabelError on unknown labels.
  [[nodiscard]] std::vector<int> label_indices() const;
};

void write_logit_table(const std::filesystem::path& path, const LogitTable& table);
LogitTable read_logit_table(const std::filesystem::path& path);

struct EnsembleMember {
  std::string domain;
  std::vector<std::string> labels;
  std::string checkpoint;  // either a checkpoint directory
  std::string logits;      // or a stored logit table
  double temperature = 1.0;
  double nll_before = 0.0;
  double nll_after = 0.0;
};

struct EnsembleDescriptor {
  std::vector<EnsembleMember> members;
  FusionConfig fusion;
  std::string config_hash;
  std::string tool_version;

  [[nodiscard]] LabelSpace label_space() const;
};

nlohmann::ordered_json to_json(const EnsembleDescriptor& e);
EnsembleDescriptor ensemble_from_json(const nlohmann::json& j);

struct CaseStudy {
  std::string name;
  std::string true_label;
  std::string expected;  // fused argmax the case should produce
  std::map<std::string, std::map<std::string, double>> posteriors;  // domain -> label -> probability
  std::map<std::string, double> temperatures;                       // missing domains use T = 1
};

struct CaseOutcome {
  std::string name;
  std::string expected;
  std::string predicted;
  std::string uncalibrated;  // argmax with every T = 1
  bool matched = false;
  bool correct = false;       // predicted equals the true label
  bool overconfident = false; // calibration lowered the winning expert's peak probability
  FusionResult fused;
};

struct CaseReport {
  std::vector<CaseOutcome> outcomes;
  [[nodiscard]] bool all_matched() const;
};

std::vector<CaseStudy> parse_case_studies(const nlohmann::json& j);
/// The fixture compiled into the library.
std::vector<CaseStudy> builtin_case_studies();
std::string_view builtin_case_studies_json();

/// Fuses every case. With `calibrated` false every temperature is 1.
/// Never throws on mismatches; see require_all_matched.
CaseReport run_case_studies(const std::vector<CaseStudy>& cases, const LabelSpace& space, const FusionConfig& cfg);

/// Throws CaseStudyFailure naming every mismatching case.
void require_all_matched(const CaseReport& report);

nlohmann::ordered_json to_json(const CaseReport& report, const LabelSpace& space);

}  // namespace crynet
