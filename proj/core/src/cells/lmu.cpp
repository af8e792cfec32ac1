#include "crynet/cells/lmu.hpp"

#include <cmath>

#include "crynet/cells/linalg.hpp"

namespace crynet::cells {

using nn::Array;
using nn::Graph;
using nn::ParamStore;
using nn::Shape;
using nn::Var;

void LmuConfig::validate() const {
  if (p == 0 || d == 0 || r == 0 || q == 0) throw ConfigError("LMU dimensions p, d, r, q must be at least 1");
  if (!(dt > 0.0) || !(theta > dt)) throw ConfigError("LMU requires 0 < dt < theta");
}

Eigen::MatrixXd lmu_continuous_a(std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double sign = i < j ? -1.0 : (((i - j + 1) % 2 == 0) ? 1.0 : -1.0);
      a(i, j) = static_cast<double>(2 * i + 1) * sign;
    }
  }
  return a;
}

Eigen::VectorXd lmu_continuous_b(std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) b(i) = static_cast<double>(2 * i + 1) * (i % 2 == 0 ? 1.0 : -1.0);
  return b;
}

LmuMatrices lmu_build_matrices(const LmuConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(cfg.d);
  const auto q = static_cast<Eigen::Index>(cfg.q);
  const auto r = static_cast<Eigen::Index>(cfg.r);
  const double step = cfg.dt / cfg.theta;
  const Eigen::MatrixXd a = lmu_continuous_a(cfg.d);
  // Every component of u drives the same delay line; with q > 1 the line encodes their mean.
  const Eigen::MatrixXd b = lmu_continuous_b(cfg.d) * Eigen::RowVectorXd::Constant(q, 1.0 / static_cast<double>(q));

  LmuMatrices out;
  if (cfg.discretization == Discretization::Zoh) {
    Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(d + q, d + q);
    aug.topLeftCorner(d, d) = a * step;
    aug.topRightCorner(d, q) = b * step;
    const Eigen::MatrixXd e = expm_pade6(aug);
    out.a_bar = e.topLeftCorner(d, d);
    out.b_bar = e.topRightCorner(d, q);
  } else {
    out.a_bar = Eigen::MatrixXd::Identity(d, d) + step * a;
    out.b_bar = step * b;
  }

  out.c.resize(r, d);
  for (Eigen::Index j = 0; j < r; ++j) {
    const double tap = r == 1 ? 1.0 : static_cast<double>(j) / static_cast<double>(r - 1);
    for (Eigen::Index i = 0; i < d; ++i) out.c(j, i) = shifted_legendre(static_cast<int>(i), tap);
  }
  out.d = Eigen::MatrixXd::Zero(r, q);

  if (!out.a_bar.allFinite() || !out.b_bar.allFinite() || !out.c.allFinite()) {
    throw NumericalError("LMU matrices contain non-finite entries");
  }
  const double rho = spectral_radius(out.a_bar);
  if (rho >= 1.0 + 1e-9) {
    throw StabilityError("LMU discretisation is unstable: spectral radius " + std::to_string(rho));
  }
  return out;
}

std::size_t count_lmu_params(const LmuConfig& cfg) {
  std::size_t n = cfg.q * (cfg.p + cfg.r + cfg.d);
  if (cfg.learned_readout) n += cfg.r * cfg.d + cfg.r * cfg.q;
  return n;
}

namespace {

template <typename T>
Array<T> to_array(const Eigen::MatrixXd& m) {
  Array<T> a(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<T>(m(i, j));
  return a;
}

}  // namespace

template <typename T>
LmuCell<T>::LmuCell(LmuConfig cfg, std::string prefix)
    : cfg_(cfg), prefix_(std::move(prefix)), mats_(lmu_build_matrices(cfg)) {}

template <typename T>
void LmuCell<T>::init_params(ParamStore<T>& store, std::mt19937_64& rng) const {
  store.add(prefix_ + ".W_x", uniform_init<T>({cfg_.q, cfg_.p}, cfg_.p, rng));
  store.add(prefix_ + ".W_h", uniform_init<T>({cfg_.q, cfg_.r}, cfg_.r, rng));
  store.add(prefix_ + ".W_m", uniform_init<T>({cfg_.q, cfg_.d}, cfg_.d, rng));
  if (cfg_.learned_readout) {
    store.add(prefix_ + ".C", to_array<T>(mats_.c));
    store.add(prefix_ + ".D", to_array<T>(mats_.d));
  }
}

template <typename T>
typename LmuCell<T>::Bound LmuCell<T>::bind(Graph<T>& g, ParamStore<T>& store) const {
  Bound b;
  b.w_h = g.parameter(store, prefix_ + ".W_h");
  b.w_m = g.parameter(store, prefix_ + ".W_m");
  b.a_t = g.constant(to_array<T>(mats_.a_bar));
  b.b_t = g.constant(to_array<T>(mats_.b_bar));
  if (cfg_.learned_readout) {
    b.c_t = g.parameter(store, prefix_ + ".C");
    b.d_t = g.parameter(store, prefix_ + ".D");
  } else {
    b.c_t = g.constant(to_array<T>(mats_.c));
  }
  return b;
}

template <typename T>
LmuState<T> LmuCell<T>::advance(const Bound& b, Var<T> drive, const LmuState<T>& prev) const {
  Var<T> u = drive;
  if (prev.h.valid()) u = nn::add(u, nn::matmul(prev.h, b.w_h, false, true));
  if (prev.m.valid()) u = nn::add(u, nn::matmul(prev.m, b.w_m, false, true));
  if (cfg_.tanh_on_u) u = nn::tanh(u);
  Var<T> m = nn::matmul(u, b.b_t, false, true);
  if (prev.m.valid()) m = nn::add(nn::matmul(prev.m, b.a_t, false, true), m);
  Var<T> h = nn::matmul(m, b.c_t, false, true);
  if (b.d_t.valid()) h = nn::add(h, nn::matmul(u, b.d_t, false, true));
  return {m, h};
}

template <typename T>
LmuState<T> LmuCell<T>::step(Graph<T>& g, ParamStore<T>& store, Var<T> x_t, const LmuState<T>& prev) const {
  if (x_t.shape().size() != 2 || x_t.dim(1) != cfg_.p) {
    throw ShapeError("LMU step expects [B, " + std::to_string(cfg_.p) + "], got " + nn::shape_string(x_t.shape()));
  }
  const Bound b = bind(g, store);
  auto w_x = g.parameter(store, prefix_ + ".W_x");
  return advance(b, nn::matmul(x_t, w_x, false, true), prev);
}

template <typename T>
SeqOutput<T> LmuCell<T>::forward(Graph<T>& g, ParamStore<T>& store, Var<T> x, bool keep_trajectory) const {
  if (x.shape().size() != 3 || x.dim(2) != cfg_.p) {
    throw ShapeError("LMU forward expects [B, T, " + std::to_string(cfg_.p) + "], got " + nn::shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t steps = x.dim(1);
  const Bound b = bind(g, store);
  auto w_x = g.parameter(store, prefix_ + ".W_x");
  // Input drive for every frame in one product.
  auto drive = nn::reshape(nn::matmul(nn::reshape(x, {batch * steps, cfg_.p}), w_x, false, true),
                           {batch, steps, cfg_.q});
  LmuState<T> state;
  std::vector<Var<T>> hs;
  for (std::size_t t = 0; t < steps; ++t) {
    state = advance(b, nn::time_step(drive, t), state);
    if (keep_trajectory) hs.push_back(state.h);
  }
  SeqOutput<T> out{state.h, state.m, {}};
  if (keep_trajectory) out.trajectory = nn::stack_time(hs);
  return out;
}

template class LmuCell<float>;
template class LmuCell<double>;

}  // namespace crynet::cells
