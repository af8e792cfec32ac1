#include "crynet/cells/lstm.hpp"

namespace crynet::cells {

using nn::Array;
using nn::Graph;
using nn::ParamStore;
using nn::Var;

void LstmConfig::validate() const {
  if (p == 0 || r == 0) throw ConfigError("LSTM dimensions p and r must be at least 1");
}

std::size_t count_lstm_params(const LstmConfig& cfg) { return 4 * (cfg.r * cfg.p + cfg.r * cfg.r + cfg.r); }

template <typename T>
LstmCell<T>::LstmCell(LstmConfig cfg, std::string prefix) : cfg_(cfg), prefix_(std::move(prefix)) {
  cfg_.validate();
}

template <typename T>
void LstmCell<T>::init_params(ParamStore<T>& store, std::mt19937_64& rng) const {
  for (const char* gate : {"i", "f", "o", "c"}) {
    store.add(prefix_ + ".W_" + gate, uniform_init<T>({cfg_.r, cfg_.p}, cfg_.p, rng));
  }
  for (const char* gate : {"i", "f", "o", "c"}) {
    store.add(prefix_ + ".U_" + gate, uniform_init<T>({cfg_.r, cfg_.r}, cfg_.r, rng));
  }
  for (const char* gate : {"i", "f", "o", "c"}) {
    const T fill = std::string(gate) == "f" ? static_cast<T>(cfg_.forget_bias) : T(0);
    store.add(prefix_ + ".b_" + gate, Array<T>({cfg_.r}, fill));
  }
}

template <typename T>
typename LstmCell<T>::Bound LstmCell<T>::bind(Graph<T>& g, ParamStore<T>& store) const {
  auto stacked = [&](const std::string& kind) {
    std::vector<Var<T>> parts;
    for (const char* gate : {"i", "f", "o", "c"}) parts.push_back(g.parameter(store, prefix_ + "." + kind + gate));
    return nn::concat(parts, 0);
  };
  return {stacked("W_"), stacked("U_"), stacked("b_")};
}

template <typename T>
LstmState<T> LstmCell<T>::advance(const Bound& b, Var<T> pre_x, const LstmState<T>& prev) const {
  const std::size_t r = cfg_.r;
  Var<T> pre = prev.h.valid() ? nn::add(pre_x, nn::matmul(prev.h, b.u, false, true)) : pre_x;
  auto gates = nn::sigmoid(nn::slice(pre, 1, 0, 3 * r));
  auto i = nn::slice(gates, 1, 0, r);
  auto f = nn::slice(gates, 1, r, 2 * r);
  auto o = nn::slice(gates, 1, 2 * r, 3 * r);
  auto cand = nn::tanh(nn::slice(pre, 1, 3 * r, 4 * r));
  Var<T> c = nn::mul(i, cand);
  if (prev.c.valid()) c = nn::add(nn::mul(f, prev.c), c);
  return {c, nn::mul(o, nn::tanh(c))};
}

template <typename T>
LstmState<T> LstmCell<T>::step(Graph<T>& g, ParamStore<T>& store, Var<T> x_t, const LstmState<T>& prev) const {
  if (x_t.shape().size() != 2 || x_t.dim(1) != cfg_.p) {
    throw ShapeError("LSTM step expects [B, " + std::to_string(cfg_.p) + "], got " + nn::shape_string(x_t.shape()));
  }
  const Bound b = bind(g, store);
  return advance(b, nn::add_bias(nn::matmul(x_t, b.w, false, true), b.b), prev);
}

template <typename T>
SeqOutput<T> LstmCell<T>::forward(Graph<T>& g, ParamStore<T>& store, Var<T> x, bool keep_trajectory) const {
  if (x.shape().size() != 3 || x.dim(2) != cfg_.p) {
    throw ShapeError("LSTM forward expects [B, T, " + std::to_string(cfg_.p) + "], got " +
                     nn::shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t steps = x.dim(1);
  const Bound b = bind(g, store);
  auto pre_x = nn::reshape(
      nn::add_bias(nn::matmul(nn::reshape(x, {batch * steps, cfg_.p}), b.w, false, true), b.b),
      {batch, steps, 4 * cfg_.r});
  LstmState<T> state;
  std::vector<Var<T>> hs;
  for (std::size_t t = 0; t < steps; ++t) {
    state = advance(b, nn::time_step(pre_x, t), state);
    if (keep_trajectory) hs.push_back(state.h);
  }
  SeqOutput<T> out{state.h, state.c, {}};
  if (keep_trajectory) out.trajectory = nn::stack_time(hs);
  return out;
}

template class LstmCell<float>;
template class LstmCell<double>;

}  // namespace crynet::cells
