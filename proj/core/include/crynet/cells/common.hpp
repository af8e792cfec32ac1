#pragma once

#include <random>
#include <string>

#include "crynet/nn/ops.hpp"

namespace crynet::cells {

/// Result of scanning a cell over x[B, T, p] from the zero state.
template <typename T>
struct SeqOutput {
  nn::Var<T> h_last;      // [B, r]
  nn::Var<T> state_last;  // [B, d] memory (LMU) or [B, r] cell state (LSTM)
  nn::Var<T> trajectory;  // [B, T, r], only when requested
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
template <typename T>
nn::Array<T> uniform_init(nn::Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  nn::Array<T> a(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : a.storage()) v = static_cast<T>(u(rng));
  return a;
}

}  // namespace crynet::cells
