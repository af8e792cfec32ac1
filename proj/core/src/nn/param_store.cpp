#include "crynet/nn/param_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace crynet::nn {

template <typename T>
Parameter<T>& ParamStore<T>::add(const std::string& name, Array<T> init, bool trainable) {
  if (name.empty()) throw ConfigError("parameter name must not be empty");
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Parameter<T> p;
  p.name = name;
  p.value = std::move(init);
  p.trainable = trainable;
  params_.push_back(std::move(p));
  index_.emplace(name, params_.size() - 1);
  return params_.back();
}

template <typename T>
Parameter<T>& ParamStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second];
}

template <typename T>
const Parameter<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second];
}

template <typename T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

template <typename T>
std::size_t ParamStore<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.value.size();
  }
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) {
    if (!p.grad.empty()) p.grad.fill(T(0));
  }
}

template <typename T>
void ParamStore<T>::save(const std::filesystem::path& manifest, const std::filesystem::path& blob) const {
  nlohmann::ordered_json j;
  j["format"] = "crynet-params";
  j["version"] = 1;
  j["seed"] = seed_;
  j["steps"] = steps_;
  nlohmann::ordered_json entries = nlohmann::ordered_json::object();
  std::ofstream bin(blob, std::ios::binary);
  if (!bin) throw IoError("cannot write " + blob.string());
  std::uint64_t offset = 0;
  for (const auto& p : params_) {
    entries[p.name] = {{"shape", p.value.shape()}, {"dtype", "float32"}, {"offset", offset}, {"trainable", p.trainable}};
    for (T v : p.value.values()) {
      const auto f = static_cast<float>(v);
      bin.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
    offset += p.value.size() * sizeof(float);
  }
  if (!bin) throw IoError("failed writing " + blob.string());
  j["params"] = std::move(entries);
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write " + manifest.string());
  out << j.dump(2) << '\n';
}

template <typename T>
ParamStore<T> ParamStore<T>::load(const std::filesystem::path& manifest, const std::filesystem::path& blob) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot read " + manifest.string());
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
  if (j.value("format", "") != "crynet-params") throw ParseError(manifest.string() + ": not a parameter manifest");

  std::ifstream bin(blob, std::ios::binary);
  if (!bin) throw IoError("cannot read " + blob.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  ParamStore<T> store(j.value("seed", std::uint64_t{0}));
  store.steps_ = j.value("steps", std::uint64_t{0});
  for (const auto& [name, e] : j.at("params").items()) {
    if (e.value("dtype", "") != "float32") throw ParseError("parameter '" + name + "' has unsupported dtype");
    Shape shape = e.at("shape").template get<Shape>();
    const auto offset = e.at("offset").template get<std::uint64_t>();
    const std::size_t n = element_count(shape);
    if (offset + n * sizeof(float) > bytes.size()) throw ParseError("parameter '" + name + "' exceeds the weight blob");
    std::vector<T> data(n);
    for (std::size_t k = 0; k < n; ++k) {
      float f;
      std::memcpy(&f, bytes.data() + offset + k * sizeof f, sizeof f);
      data[k] = static_cast<T>(f);
    }
    store.add(name, Array<T>(std::move(shape), std::move(data)), e.value("trainable", true));
  }
  return store;
}

template <typename T>
void adam_step(ParamStore<T>& params, const AdamConfig& cfg) {
  params.increment_step();
  const double t = static_cast<double>(params.step_count());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : params) {
    if (!p.trainable || p.grad.empty()) continue;
    if (p.m.empty()) p.m = Array<T>::zeros_like(p.value);
    if (p.v.empty()) p.v = Array<T>::zeros_like(p.value);
    auto w = p.value.values();
    auto g = p.grad.values();
    auto m = p.m.values();
    auto v = p.v.values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = static_cast<double>(g[k]) + cfg.weight_decay * static_cast<double>(w[k]);
      const double mk = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      w[k] = static_cast<T>(w[k] - cfg.lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.eps));
    }
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template void adam_step<float>(ParamStore<float>&, const AdamConfig&);
template void adam_step<double>(ParamStore<double>&, const AdamConfig&);

}  // namespace crynet::nn
