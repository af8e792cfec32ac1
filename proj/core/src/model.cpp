#include "crynet/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "crynet/feature_io.hpp"
#include "crynet/hash.hpp"
#include "crynet/json_keys.hpp"
#include "crynet/metrics.hpp"

namespace crynet {

using nn::Array;
using nn::Graph;
using nn::Mode;
using nn::ParamStore;
using nn::Shape;
using nn::Var;

CellKind parse_cell_kind(std::string_view s) {
  if (s == "lmu") return CellKind::Lmu;
  if (s == "lstm") return CellKind::Lstm;
  if (s == "none") return CellKind::None;
  throw ConfigError("unknown cell '" + std::string(s) + "' (expected lmu, lstm or none)");
}

std::string_view to_string(CellKind c) {
  switch (c) {
    case CellKind::Lmu: return "lmu";
    case CellKind::Lstm: return "lstm";
    case CellKind::None: break;
  }
  return "none";
}

void ModelConfig::validate() const {
  if (filters.empty()) throw ConfigError("encoder needs at least one block");
  if (kernels.size() != filters.size()) throw ConfigError("one kernel size per encoder block is required");
  for (auto f : filters) {
    if (f == 0) throw ConfigError("filter counts must be positive");
  }
  for (auto k : kernels) {
    if (k == 0) throw ConfigError("kernel sizes must be positive");
  }
  if (pool == 0) throw ConfigError("pool must be positive");
  if (input_dim == 0 || hidden == 0 || memory == 0) throw ConfigError("cell dimensions must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (channels == 0 || frames == 0) throw ConfigError("input shape must be non-empty");
  if (cell == CellKind::Lmu) lmu().validate();
}

std::size_t ModelConfig::feature_dim() const {
  std::size_t h = channels;
  for (std::size_t i = 0; i < filters.size(); ++i) h = (h + pool - 1) / pool;
  return h * filters.back();
}

cells::LmuConfig ModelConfig::lmu() const {
  cells::LmuConfig c;
  c.p = input_dim;
  c.d = memory;
  c.r = hidden;
  c.q = 1;
  c.theta = theta;
  c.dt = dt;
  c.tanh_on_u = lmu_tanh;
  return c;
}

cells::LstmConfig ModelConfig::lstm() const {
  cells::LstmConfig c;
  c.p = input_dim;
  c.r = hidden;
  return c;
}

nlohmann::ordered_json ModelConfig::to_json() const {
  return {{"features", feature_subset.to_string()},
          {"filters", filters},
          {"kernels", kernels},
          {"pool", pool},
          {"cell", to_string(cell)},
          {"input_dim", input_dim},
          {"hidden", hidden},
          {"memory", memory},
          {"theta", theta},
          {"dt", dt},
          {"lmu_tanh", lmu_tanh},
          {"dropout", dropout},
          {"channels", channels},
          {"frames", frames}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"features", "filters", "kernels", "pool", "cell", "input_dim", "hidden", "memory", "theta", "dt",
                 "lmu_tanh", "dropout", "channels", "frames"},
             "model config");
  ModelConfig c;
  try {
    if (j.contains("features")) c.feature_subset = FeatureSet::parse(j["features"].get<std::string>());
    c.filters = j.value("filters", c.filters);
    c.kernels = j.value("kernels", std::vector<std::size_t>(c.filters.size(), 3));
    c.pool = j.value("pool", c.pool);
    if (j.contains("cell")) c.cell = parse_cell_kind(j["cell"].get<std::string>());
    c.input_dim = j.value("input_dim", c.input_dim);
    c.hidden = j.value("hidden", c.hidden);
    c.memory = j.value("memory", c.memory);
    c.theta = j.value("theta", c.theta);
    c.dt = j.value("dt", c.dt);
    c.lmu_tanh = j.value("lmu_tanh", c.lmu_tanh);
    c.dropout = j.value("dropout", c.dropout);
    c.channels = j.value("channels", c.channels);
    c.frames = j.value("frames", c.frames);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
  if (batch_size < 2) throw ConfigError("batch size must be at least 2 (batch norm needs batch statistics)");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (!(l2 >= 0.0)) throw ConfigError("l2 must be non-negative");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  return {{"lr", lr},           {"batch_size", batch_size}, {"max_epochs", max_epochs},      {"patience", patience},
          {"seed", seed},       {"l2", l2},                 {"class_weights", class_weights}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"lr", "batch_size", "max_epochs", "patience", "seed", "l2", "class_weights"}, "train config");
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    c.l2 = j.value("l2", c.l2);
    c.class_weights = j.value("class_weights", c.class_weights);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
CryModel<T>::CryModel(ModelConfig cfg, std::size_t n_classes) : cfg_(std::move(cfg)), n_classes_(n_classes) {
  cfg_.validate();
  if (n_classes_ < 2) throw ConfigError("a classifier needs at least 2 classes");
  if (cfg_.cell == CellKind::Lmu) lmu_.emplace(cfg_.lmu(), "lmu");
  if (cfg_.cell == CellKind::Lstm) lstm_.emplace(cfg_.lstm(), "lstm");
}

template <typename T>
std::size_t CryModel<T>::recurrent_params() const {
  if (lmu_) return lmu_->count_params();
  if (lstm_) return lstm_->count_params();
  return 0;
}

namespace {

std::string block(std::size_t i) { return "enc" + std::to_string(i); }

}  // namespace

template <typename T>
void CryModel<T>::init_params(ParamStore<T>& store, std::mt19937_64& rng) const {
  std::size_t in_ch = 1;
  for (std::size_t i = 0; i < cfg_.filters.size(); ++i) {
    const std::size_t out = cfg_.filters[i], k = cfg_.kernels[i];
    const auto b = block(i);
    store.add(b + ".kernel", cells::uniform_init<T>({out, in_ch, k, k}, in_ch * k * k, rng));
    store.add(b + ".gamma", Array<T>({out}, T(1)));
    store.add(b + ".beta", Array<T>::zeros({out}));
    store.add(b + ".running_mean", Array<T>::zeros({out}), false);
    store.add(b + ".running_var", Array<T>({out}, T(1)), false);
    in_ch = out;
  }
  const std::size_t f = cfg_.feature_dim();
  store.add("proj.W", cells::uniform_init<T>({f, cfg_.input_dim}, f, rng));
  store.add("proj.b", Array<T>::zeros({cfg_.input_dim}));
  if (lmu_) lmu_->init_params(store, rng);
  if (lstm_) lstm_->init_params(store, rng);
  const std::size_t head_in = cfg_.cell == CellKind::None ? cfg_.input_dim : cfg_.hidden;
  store.add("head.W", cells::uniform_init<T>({head_in, n_classes_}, head_in, rng));
  store.add("head.b", Array<T>::zeros({n_classes_}));
}

template <typename T>
Var<T> CryModel<T>::encode(Graph<T>& g, ParamStore<T>& store, Var<T> x, Mode mode, bool update_stats) const {
  if (x.shape().size() != 4 || x.dim(1) != 1 || x.dim(2) != cfg_.channels || x.dim(3) != cfg_.frames) {
    throw ShapeError("encoder expects [B, 1, " + std::to_string(cfg_.channels) + ", " + std::to_string(cfg_.frames) +
                     "], got " + nn::shape_string(x.shape()));
  }
  Var<T> h = x;
  for (std::size_t i = 0; i < cfg_.filters.size(); ++i) {
    const auto b = block(i);
    h = nn::conv2d(h, g.parameter(store, b + ".kernel"));
    auto& rm = store.at(b + ".running_mean").value;
    auto& rv = store.at(b + ".running_var").value;
    if (update_stats) {
      h = nn::batchnorm(h, g.parameter(store, b + ".gamma"), g.parameter(store, b + ".beta"), rm, rv, mode);
    } else {
      Array<T> m = rm, v = rv;
      h = nn::batchnorm(h, g.parameter(store, b + ".gamma"), g.parameter(store, b + ".beta"), m, v, mode);
    }
    h = nn::relu(h);
    h = nn::maxpool2d(h, cfg_.pool, std::size_t{1});
  }
  return nn::to_sequence(h);
}

template <typename T>
Var<T> CryModel<T>::forward(Graph<T>& g, ParamStore<T>& store, Var<T> x, Mode mode, std::mt19937_64& rng,
                            bool update_stats) const {
  const Var<T> seq = encode(g, store, x, mode, update_stats);
  const std::size_t B = seq.dim(0), W = seq.dim(1), F = seq.dim(2);
  Var<T> u = nn::matmul(nn::reshape(seq, {B * W, F}), g.parameter(store, "proj.W"));
  u = nn::reshape(nn::add_bias(u, g.parameter(store, "proj.b")), {B, W, cfg_.input_dim});
  Var<T> h;
  if (lmu_) {
    h = lmu_->forward(g, store, u).h_last;
  } else if (lstm_) {
    h = lstm_->forward(g, store, u).h_last;
  } else {
    h = nn::mean_over_time(u);
  }
  h = nn::dropout(h, cfg_.dropout, rng, mode);
  return nn::add_bias(nn::matmul(h, g.parameter(store, "head.W")), g.parameter(store, "head.b"));
}

template class CryModel<float>;
template class CryModel<double>;

Eigen::MatrixXf Checkpoint::normalize(const AlignedFeatureTensor& t) const {
  const auto C = static_cast<Eigen::Index>(model.channels);
  if (t.channels() != C) {
    throw ConfigError("feature tensor has " + std::to_string(t.channels()) + " channels, checkpoint expects " +
                      std::to_string(C));
  }
  if (t.frames() != static_cast<Eigen::Index>(model.frames)) {
    throw ConfigError("feature tensor has " + std::to_string(t.frames()) + " frames, checkpoint expects " +
                      std::to_string(model.frames));
  }
  Eigen::MatrixXf out(t.data.rows(), t.data.cols());
  for (Eigen::Index c = 0; c < C; ++c) {
    const auto i = static_cast<std::size_t>(c);
    for (Eigen::Index k = 0; k < t.data.cols(); ++k) {
      out(c, k) = static_cast<float>((t.data(c, k) - z_mean[i]) / z_std[i]);
    }
  }
  return out;
}

namespace {

bool row_enabled(const FeatureSet& fs, Eigen::Index row) {
  using L = ChannelLayout;
  if (row < L::kStftBegin) return fs.contains(Modality::Mfcc);
  if (row < L::kF0Row) return fs.contains(Modality::Stft);
  if (row < L::kWaveRow) return fs.contains(Modality::F0);
  return fs.contains(Modality::Wave);
}

void mask_rows(AlignedFeatureTensor& t, const FeatureSet& fs) {
  if (fs.is_all() || t.channels() != ChannelLayout::kChannels) return;
  for (Eigen::Index r = 0; r < t.channels(); ++r) {
    if (!row_enabled(fs, r)) t.data.row(r).setZero();
  }
}

void to_json_vector(nlohmann::ordered_json& j, const char* key, const std::vector<double>& v) { j[key] = v; }

}  // namespace

void Checkpoint::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["format"] = "crynet-checkpoint";
  j["config_hash"] = config_hash;
  j["tool_version"] = tool_version;
  j["model"] = model.to_json();
  j["labels"] = labels;
  to_json_vector(j, "z_mean", z_mean);
  to_json_vector(j, "z_std", z_std);
  j["best_val_macro_f1"] = best_val_macro_f1;
  j["best_epoch"] = best_epoch;
  j["seed"] = seed;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << '\n';
  params.save(dir / "weights.json", dir / "weights.bin");
}

Checkpoint Checkpoint::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no checkpoint manifest in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (j.value("format", "") != "crynet-checkpoint") throw ParseError(dir.string() + " is not a checkpoint");
  Checkpoint c;
  try {
    c.model = ModelConfig::from_json(j.at("model"));
    c.labels = j.at("labels").get<std::vector<std::string>>();
    c.z_mean = j.at("z_mean").get<std::vector<double>>();
    c.z_std = j.at("z_std").get<std::vector<double>>();
    c.best_val_macro_f1 = j.value("best_val_macro_f1", 0.0);
    c.best_epoch = j.value("best_epoch", 0);
    c.seed = j.value("seed", std::uint64_t{0});
    c.config_hash = j.value("config_hash", std::string());
    c.tool_version = j.value("tool_version", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (c.z_mean.size() != c.model.channels || c.z_std.size() != c.model.channels) {
    throw ParseError(dir.string() + ": z-score statistics do not match the channel count");
  }
  c.params = ParamStore<float>::load(dir / "weights.json", dir / "weights.bin");
  return c;
}

void TrainReport::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& e : epochs) {
    nlohmann::ordered_json j{{"epoch", e.epoch},
                             {"train_loss", e.train_loss},
                             {"val_macro_f1", e.val_macro_f1},
                             {"seconds", e.seconds}};
    out << j.dump() << '\n';
  }
}

AlignedFeatureTensor load_record_features(const SampleRecord& record) {
  if (record.features.empty()) throw IoError(record.path + ": features not extracted");
  if (!std::filesystem::exists(record.features)) throw IoError("missing feature file " + record.features);
  return read_cryf(record.features);
}

std::string training_hash(const ModelConfig& model, const TrainConfig& train) {
  nlohmann::ordered_json j{{"model", model.to_json()}, {"train", train.to_json()}};
  return digest(j.dump());
}

namespace {

Array<float> make_batch(const std::vector<Eigen::MatrixXf>& inputs, const std::vector<std::size_t>& idx) {
  const auto H = static_cast<std::size_t>(inputs.front().rows());
  const auto W = static_cast<std::size_t>(inputs.front().cols());
  Array<float> x({idx.size(), 1, H, W});
  auto dst = x.values();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& m = inputs[idx[b]];
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        dst[(b * H + h) * W + w] = m(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
      }
    }
  }
  return x;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch)));
  }
  // Batch norm needs two samples; fold a trailing singleton into its neighbour.
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

int argmax_row(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

double macro_f1_of(const std::vector<std::vector<double>>& logits, const std::vector<int>& labels,
                   const std::vector<std::string>& classes) {
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < logits.size(); ++i) cm.add(labels[i], argmax_row(logits[i]));
  return macro_f1(cm);
}

}  // namespace

std::vector<std::vector<double>> predict_normalized(const std::vector<Eigen::MatrixXf>& inputs, const Checkpoint& ckpt,
                                                    std::size_t batch_size) {
  std::vector<std::vector<double>> out;
  if (inputs.empty()) return out;
  const CryModel<float> model(ckpt.model, ckpt.labels.size());
  ParamStore<float> store = ckpt.params;
  std::mt19937_64 rng(0);
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(i),
                                       order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    Graph<float> g;
    g.set_retain_values(false);
    const auto logits = model.forward(g, store, g.constant(make_batch(inputs, idx)), Mode::Eval, rng);
    const auto& v = logits.value();
    const std::size_t C = v.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::vector<double> row(C);
      for (std::size_t c = 0; c < C; ++c) row[c] = v.values()[b * C + c];
      out.push_back(std::move(row));
    }
  }
  return out;
}

LogitTable predict_logits(const std::vector<SampleRecord>& records, const Checkpoint& ckpt, std::size_t batch_size) {
  LogitTable t;
  t.classes = ckpt.labels;
  std::vector<Eigen::MatrixXf> inputs;
  for (const auto& r : records) {
    inputs.push_back(ckpt.normalize(load_record_features(r)));
    t.sample_ids.push_back(std::filesystem::path(r.path).filename().string());
    t.labels.push_back(r.label);
  }
  t.rows = predict_normalized(inputs, ckpt, batch_size);
  return t;
}

TrainOutcome train_model(const std::vector<SampleRecord>& records, const ModelConfig& model_cfg,
                         const TrainConfig& train, const std::function<void(const EpochRecord&)>& on_epoch) {
  model_cfg.validate();
  train.validate();
  if (const auto leaks = verify_no_leakage(records); !leaks.empty()) {
    std::string names;
    for (const auto& g : leaks) names += (names.empty() ? "" : ", ") + g;
    throw LeakageError("groups shared across splits: " + names);
  }
  std::vector<SampleRecord> assigned;
  for (const auto& r : records) {
    if (r.split != Split::Unassigned) assigned.push_back(r);
  }
  const auto labels = label_list(assigned);
  const auto train_recs = select_split(assigned, Split::Train);
  const auto val_recs = select_split(assigned, Split::Val);
  if (train_recs.empty()) throw DataError("the train split is empty");
  if (val_recs.empty()) throw DataError("the validation split is empty");
  if (labels.size() < 2) throw DataError("training needs at least two classes");

  std::map<std::string, int> label_index;
  for (std::size_t c = 0; c < labels.size(); ++c) label_index[labels[c]] = static_cast<int>(c);
  std::vector<double> class_count(labels.size(), 0.0);
  for (const auto& r : train_recs) class_count[static_cast<std::size_t>(label_index[r.label])] += 1.0;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (class_count[c] == 0.0) throw DataError("class '" + labels[c] + "' has no training samples");
  }

  Checkpoint ckpt;
  ckpt.model = model_cfg;
  ckpt.labels = labels;
  ckpt.seed = train.seed;
  ckpt.config_hash = training_hash(model_cfg, train);
  ckpt.tool_version = std::string(library_version());

  auto load_all = [&](const std::vector<SampleRecord>& recs) {
    std::vector<AlignedFeatureTensor> out;
    for (const auto& r : recs) {
      auto t = load_record_features(r);
      if (t.channels() != static_cast<Eigen::Index>(model_cfg.channels) ||
          t.frames() != static_cast<Eigen::Index>(model_cfg.frames)) {
        throw ConfigError(r.features + ": tensor shape does not match the model input");
      }
      mask_rows(t, model_cfg.feature_subset);
      out.push_back(std::move(t));
    }
    return out;
  };
  const auto train_raw = load_all(train_recs);
  const auto val_raw = load_all(val_recs);

  // Channel statistics come from the training split alone.
  const auto C = static_cast<Eigen::Index>(model_cfg.channels);
  ckpt.z_mean.assign(model_cfg.channels, 0.0);
  ckpt.z_std.assign(model_cfg.channels, 0.0);
  const double n = static_cast<double>(train_raw.size() * model_cfg.frames);
  for (Eigen::Index c = 0; c < C; ++c) {
    double s = 0.0, ss = 0.0;
    for (const auto& t : train_raw) {
      s += t.data.row(c).sum();
      ss += t.data.row(c).squaredNorm();
    }
    const double mu = s / n;
    ckpt.z_mean[static_cast<std::size_t>(c)] = mu;
    ckpt.z_std[static_cast<std::size_t>(c)] = std::max(std::sqrt(std::max(ss / n - mu * mu, 0.0)), 1e-6);
  }

  std::vector<Eigen::MatrixXf> train_x, val_x;
  std::vector<int> train_y, val_y;
  for (std::size_t i = 0; i < train_raw.size(); ++i) {
    train_x.push_back(ckpt.normalize(train_raw[i]));
    train_y.push_back(label_index[train_recs[i].label]);
  }
  for (std::size_t i = 0; i < val_raw.size(); ++i) {
    val_x.push_back(ckpt.normalize(val_raw[i]));
    val_y.push_back(label_index[val_recs[i].label]);
  }

  std::vector<float> class_weights(labels.size(), 1.0f);
  if (train.class_weights) {
    const double total = static_cast<double>(train_recs.size());
    for (std::size_t c = 0; c < labels.size(); ++c) {
      class_weights[c] = static_cast<float>(total / (static_cast<double>(labels.size()) * class_count[c]));
    }
  }

  const CryModel<float> model(model_cfg, labels.size());
  std::mt19937_64 rng(train.seed);
  ParamStore<float> store(train.seed);
  model.init_params(store, rng);
  nn::AdamConfig adam;
  adam.lr = train.lr;
  adam.weight_decay = train.l2;
  const bool frozen = train.lr == 0.0;

  TrainReport report;
  report.best_val_macro_f1 = -1.0;
  ParamStore<float> best = store;
  int stale = 0;
  std::vector<std::size_t> order(train_x.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= train.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (const auto& idx : make_batches(order, train.batch_size)) {
      std::vector<int> y;
      for (auto i : idx) y.push_back(train_y[i]);
      Graph<float> g;
      g.set_retain_values(false);
      const auto logits = model.forward(g, store, g.constant(make_batch(train_x, idx)), Mode::Train, rng, !frozen);
      const auto loss = nn::softmax_cross_entropy(logits, std::span<const int>(y),
                                                  std::span<const float>(class_weights));
      loss_sum += static_cast<double>(loss.value().values()[0]) * static_cast<double>(idx.size());
      if (!frozen) {
        store.zero_grad();
        g.backward(loss);
        nn::adam_step(store, adam);
      }
    }

    ckpt.params = store;
    const double f1 = macro_f1_of(predict_normalized(val_x, ckpt, train.batch_size), val_y, labels);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_x.size());
    rec.val_macro_f1 = f1;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (f1 > report.best_val_macro_f1) {
      report.best_val_macro_f1 = f1;
      report.best_epoch = epoch;
      best = store;
      stale = 0;
    } else if (++stale >= train.patience) {
      report.stopped_early = epoch < train.max_epochs;
      break;
    }
  }

  ckpt.params = std::move(best);
  ckpt.best_val_macro_f1 = report.best_val_macro_f1;
  ckpt.best_epoch = report.best_epoch;
  return {std::move(ckpt), std::move(report)};
}

}  // namespace crynet
