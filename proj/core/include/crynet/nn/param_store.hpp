#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "crynet/nn/array.hpp"

namespace crynet::nn {

template <typename T>
struct Parameter {
  std::string name;
  Array<T> value;
  Array<T> grad;
  Array<T> m;  // Adam first moment
  Array<T> v;  // Adam second moment
  bool trainable = true;
};

/// Named parameters in insertion order plus optimizer state. Non-trainable
/// entries hold buffers such as batch-norm running statistics; they are
/// serialized but never touched by the optimizer.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  Parameter<T>& add(const std::string& name, Array<T> init, bool trainable = true);

  [[nodiscard]] bool contains(const std::string& name) const { return index_.contains(name); }
  Parameter<T>& at(const std::string& name);
  const Parameter<T>& at(const std::string& name) const;

  [[nodiscard]] std::vector<std::string> names() const;
  [[nodiscard]] std::size_t size() const { return params_.size(); }
  [[nodiscard]] std::size_t trainable_count() const;  // total learned scalars

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();

  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }
  [[nodiscard]] std::uint64_t step_count() const { return steps_; }
  void increment_step() { ++steps_; }

  /// Writes `manifest` ({name -> shape, dtype, byte offset, trainable}) and a
  /// raw little-endian float32 blob. Optimizer moments are not persisted.
  void save(const std::filesystem::path& manifest, const std::filesystem::path& blob) const;
  static ParamStore load(const std::filesystem::path& manifest, const std::filesystem::path& blob);

  /// Copies values into another precision; grads and moments start at zero.
  template <typename U>
  [[nodiscard]] ParamStore<U> convert() const {
    ParamStore<U> out(seed_);
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>(), p.trainable);
    return out;
  }

 private:
  std::deque<Parameter<T>> params_;  // stable addresses for graph bindings
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t seed_ = 0;
  std::uint64_t steps_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 coefficient, added to the gradient before the moments
};

/// One bias-corrected Adam update over every trainable parameter using the
/// gradients currently stored in `params`.
template <typename T>
void adam_step(ParamStore<T>& params, const AdamConfig& cfg);

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template void adam_step<float>(ParamStore<float>&, const AdamConfig&);
extern template void adam_step<double>(ParamStore<double>&, const AdamConfig&);

}  // namespace crynet::nn
