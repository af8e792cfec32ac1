#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "crynet/cells/common.hpp"

namespace crynet::cells {

enum class Discretization { Zoh, Euler };

struct LmuConfig {
  std::size_t p = 32;  // input dim
  std::size_t d = 64;  // memory order
  std::size_t r = 64;  // hidden dim
  std::size_t q = 1;   // projection dim
  double theta = 1.0;  // memory window, seconds
  double dt = 0.015;   // frame period, seconds
  Discretization discretization = Discretization::Zoh;
  bool tanh_on_u = true;
  bool learned_readout = false;  // C and D become trainable

  void validate() const;
};

/// Discretised state space. C is r x d, D is r x q.
struct LmuMatrices {
  Eigen::MatrixXd a_bar, b_bar, c, d;
};

/// Continuous Legendre delay system (before the 1/theta scaling).
Eigen::MatrixXd lmu_continuous_a(std::size_t d);
Eigen::VectorXd lmu_continuous_b(std::size_t d);

/// Builds the fixed matrices. Throws NumericalError / StabilityError when the
/// discretisation is non-finite or not contractive.
LmuMatrices lmu_build_matrices(const LmuConfig& cfg);

/// Learned entries only: q * (p + r + d), plus C and D in learned-readout mode.
std::size_t count_lmu_params(const LmuConfig& cfg);

template <typename T>
struct LmuState {
  nn::Var<T> m;  // [B, d]; invalid handle means zero
  nn::Var<T> h;  // [B, r]
};

/// u_t = phi(W_x x_t + W_h h_{t-1} + W_m m_{t-1}), m_t = A_bar m_{t-1} + B_bar u_t,
/// h_t = C m_t + D u_t. Parameters live in a ParamStore under `prefix.*`.
template <typename T>
class LmuCell {
 public:
  explicit LmuCell(LmuConfig cfg, std::string prefix = "lmu");

  [[nodiscard]] const LmuConfig& config() const { return cfg_; }
  [[nodiscard]] const LmuMatrices& matrices() const { return mats_; }
  [[nodiscard]] const std::string& prefix() const { return prefix_; }
  [[nodiscard]] std::size_t count_params() const { return count_lmu_params(cfg_); }

  void init_params(nn::ParamStore<T>& store, std::mt19937_64& rng) const;

  /// One step on x_t[B, p].
  LmuState<T> step(nn::Graph<T>& g, nn::ParamStore<T>& store, nn::Var<T> x_t, const LmuState<T>& prev) const;

  /// Scan over x[B, T, p] from the zero state.
  SeqOutput<T> forward(nn::Graph<T>& g, nn::ParamStore<T>& store, nn::Var<T> x, bool keep_trajectory = false) const;

 private:
  struct Bound {
    nn::Var<T> w_h, w_m, a_t, b_t, c_t, d_t;
  };
  Bound bind(nn::Graph<T>& g, nn::ParamStore<T>& store) const;
  LmuState<T> advance(const Bound& b, nn::Var<T> drive, const LmuState<T>& prev) const;

  LmuConfig cfg_;
  std::string prefix_;
  LmuMatrices mats_;
};

extern template class LmuCell<float>;
extern template class LmuCell<double>;

}  // namespace crynet::cells
