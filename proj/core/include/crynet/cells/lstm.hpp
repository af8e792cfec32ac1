#pragma once

#include <string>

#include "crynet/cells/common.hpp"

namespace crynet::cells {

struct LstmConfig {
  std::size_t p = 32;
  std::size_t r = 64;
  double forget_bias = 1.0;

  void validate() const;
};

/// 4 * (r*p + r*r + r).
std::size_t count_lstm_params(const LstmConfig& cfg);

template <typename T>
struct LstmState {
  nn::Var<T> c;  // [B, r]; invalid handle means zero
  nn::Var<T> h;  // [B, r]
};

/// Standard input/forget/output-gated cell with separate W_*, U_*, b_* for
/// the gates i, f, o and the candidate c.
template <typename T>
class LstmCell {
 public:
  explicit LstmCell(LstmConfig cfg, std::string prefix = "lstm");

  [[nodiscard]] const LstmConfig& config() const { return cfg_; }
  [[nodiscard]] const std::string& prefix() const { return prefix_; }
  [[nodiscard]] std::size_t count_params() const { return count_lstm_params(cfg_); }

  void init_params(nn::ParamStore<T>& store, std::mt19937_64& rng) const;

  LstmState<T> step(nn::Graph<T>& g, nn::ParamStore<T>& store, nn::Var<T> x_t, const LstmState<T>& prev) const;
  SeqOutput<T> forward(nn::Graph<T>& g, nn::ParamStore<T>& store, nn::Var<T> x, bool keep_trajectory = false) const;

 private:
  struct Bound {
    nn::Var<T> w, u, b;  // gate blocks stacked as i, f, o, c
  };
  Bound bind(nn::Graph<T>& g, nn::ParamStore<T>& store) const;
  LstmState<T> advance(const Bound& b, nn::Var<T> pre_x, const LstmState<T>& prev) const;

  LstmConfig cfg_;
  std::string prefix_;
};

extern template class LstmCell<float>;
extern template class LstmCell<double>;

}  // namespace crynet::cells
