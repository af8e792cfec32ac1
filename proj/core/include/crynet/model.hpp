#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "crynet/cells/lmu.hpp"
#include "crynet/cells/lstm.hpp"
#include "crynet/data.hpp"
#include "crynet/features.hpp"
#include "crynet/fusion.hpp"

namespace crynet {

enum class CellKind { Lmu, Lstm, None };

CellKind parse_cell_kind(std::string_view s);
std::string_view to_string(CellKind c);

struct ModelConfig {
  FeatureSet feature_subset = FeatureSet::all();
  std::vector<std::size_t> filters{128, 64, 32};
  std::vector<std::size_t> kernels{3, 3, 3};  // square, one per block
  std::size_t pool = 2;                      // feature-axis pooling per block
  CellKind cell = CellKind::Lmu;
  std::size_t input_dim = 32;  // per-frame projection fed to the cell
  std::size_t hidden = 64;
  std::size_t memory = 64;     // LMU order
  double theta = 1.0;
  double dt = 0.015;
  bool lmu_tanh = true;  // tanh on the LMU drive u; false = identity
  double dropout = 0.3;
  std::size_t channels = ChannelLayout::kChannels;
  std::size_t frames = kDefaultFrames;

  void validate() const;
  /// Height left after the pooled blocks, times the last filter count.
  [[nodiscard]] std::size_t feature_dim() const;
  [[nodiscard]] cells::LmuConfig lmu() const;
  [[nodiscard]] cells::LstmConfig lstm() const;
  [[nodiscard]] nlohmann::ordered_json to_json() const;
  /// Unknown keys raise ConfigError; absent keys keep their defaults.
  static ModelConfig from_json(const nlohmann::json& j);
};

struct TrainConfig {
  double lr = 1e-3;  // 0 freezes every weight and normalisation buffer
  std::size_t batch_size = 8;
  int max_epochs = 50;
  int patience = 8;
  std::uint64_t seed = 0;
  double l2 = 1e-4;
  bool class_weights = true;

  void validate() const;
  [[nodiscard]] nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// CNN encoder, per-frame projection, recurrent cell and dense head.
/// Input x[B, 1, channels, frames]; output logits[B, n_classes].
template <typename T>
class CryModel {
 public:
  CryModel(ModelConfig cfg, std::size_t n_classes);

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  [[nodiscard]] std::size_t n_classes() const { return n_classes_; }
  /// Learned parameters inside the recurrent cell only.
  [[nodiscard]] std::size_t recurrent_params() const;

  void init_params(nn::ParamStore<T>& store, std::mt19937_64& rng) const;

  /// [B, 1, H, W] -> [B, W, feature_dim]. With `update_stats` false,
  /// train-mode batch norm leaves the running statistics untouched.
  nn::Var<T> encode(nn::Graph<T>& g, nn::ParamStore<T>& store, nn::Var<T> x, nn::Mode mode,
                    bool update_stats = true) const;

  nn::Var<T> forward(nn::Graph<T>& g, nn::ParamStore<T>& store, nn::Var<T> x, nn::Mode mode, std::mt19937_64& rng,
                     bool update_stats = true) const;

 private:
  ModelConfig cfg_;
  std::size_t n_classes_;
  std::optional<cells::LmuCell<T>> lmu_;
  std::optional<cells::LstmCell<T>> lstm_;
};

extern template class CryModel<float>;
extern template class CryModel<double>;

/// Trained model plus everything needed to reproduce its inputs.
struct Checkpoint {
  ModelConfig model;
  std::vector<std::string> labels;  // sorted, unique
  std::vector<double> z_mean, z_std;
  nn::ParamStore<float> params;
  double best_val_macro_f1 = 0.0;
  int best_epoch = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string tool_version;

  /// Masks excluded modalities, then z-scores each channel.
  /// Throws ConfigError when the channel count differs from the model's.
  [[nodiscard]] Eigen::MatrixXf normalize(const AlignedFeatureTensor& t) const;

  /// `dir/manifest.json`, `dir/weights.json` and `dir/weights.bin`.
  void save(const std::filesystem::path& dir) const;
  static Checkpoint load(const std::filesystem::path& dir);
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_macro_f1 = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_macro_f1 = 0.0;
  bool stopped_early = false;

  void write_jsonl(const std::filesystem::path& path) const;
};

struct TrainOutcome {
  Checkpoint checkpoint;
  TrainReport report;
};

/// Features of one record. Throws IoError when they were never extracted.
AlignedFeatureTensor load_record_features(const SampleRecord& record);

/// Stable hex digest of the model and training configuration.
std::string training_hash(const ModelConfig& model, const TrainConfig& train);

/// Trains on the train split, early-stopping on validation macro-F1.
/// Throws LeakageError when a group spans splits and DataError when a class
/// has no training samples or the validation split is empty.
TrainOutcome train_model(const std::vector<SampleRecord>& records, const ModelConfig& model, const TrainConfig& train,
                         const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Eval-mode logits for each record, in input order.
LogitTable predict_logits(const std::vector<SampleRecord>& records, const Checkpoint& ckpt,
                          std::size_t batch_size = 8);

/// Eval-mode logits for tensors that are already normalised.
std::vector<std::vector<double>> predict_normalized(const std::vector<Eigen::MatrixXf>& inputs, const Checkpoint& ckpt,
                                                    std::size_t batch_size = 8);

}  // namespace crynet
