#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "crynet/nn/graph.hpp"
#include "crynet/nn/ops.hpp"

namespace crynet::test_support {

using nn::Array;
using nn::Graph;
using nn::Var;

inline Array<double> random_array(nn::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Array<double> a(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : a.storage()) v = u(rng);
  return a;
}

using GraphFn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

/// Projects a (possibly non-scalar) output onto fixed random weights so any op
/// can be checked through a scalar loss.
inline Var<double> project(Var<double> out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  auto w = out.graph().constant(random_array(out.shape(), rng));
  return nn::sum(nn::mul(out, w));
}

/// Largest relative error ||analytic - numeric|| / (||analytic|| + ||numeric||)
/// over all inputs, using central differences with step h.
inline double gradcheck(const GraphFn& fn, const std::vector<Array<double>>& inputs, double h = 1e-5) {
  std::vector<Array<double>> analytic;
  {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (const auto& a : inputs) vars.push_back(g.variable(a));
    auto loss = project(fn(g, vars));
    g.backward(loss);
    for (auto& v : vars) analytic.push_back(v.grad().empty() ? Array<double>::zeros_like(v.value()) : v.grad());
  }
  auto eval = [&](const std::vector<Array<double>>& xs) {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (const auto& a : xs) vars.push_back(g.constant(a));
    return project(fn(g, vars)).value()[0];
  };
  double worst = 0.0;
  auto xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    double diff2 = 0.0, an2 = 0.0, nu2 = 0.0;
    for (std::size_t i = 0; i < xs[k].size(); ++i) {
      const double orig = xs[k][i];
      xs[k][i] = orig + h;
      const double fp = eval(xs);
      xs[k][i] = orig - h;
      const double fm = eval(xs);
      xs[k][i] = orig;
      const double num = (fp - fm) / (2 * h);
      diff2 += (num - analytic[k][i]) * (num - analytic[k][i]);
      an2 += analytic[k][i] * analytic[k][i];
      nu2 += num * num;
    }
    const double denom = std::sqrt(an2) + std::sqrt(nu2);
    if (denom > 1e-12) worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

}  // namespace crynet::test_support

namespace crynet::test_support {

using StoreLossFn = std::function<nn::Var<double>(nn::Graph<double>&, nn::ParamStore<double>&)>;

/// Worst relative error between backprop gradients of every trainable
/// parameter and central differences of the scalar loss.
inline double param_gradcheck(nn::ParamStore<double>& store, const StoreLossFn& loss_fn, double h = 1e-5) {
  store.zero_grad();
  {
    nn::Graph<double> g;
    g.backward(loss_fn(g, store));
  }
  double worst = 0.0;
  for (auto& p : store) {
    if (!p.trainable) continue;
    double diff2 = 0.0, an2 = 0.0, nu2 = 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      double fp, fm;
      {
        nn::Graph<double> g;
        fp = loss_fn(g, store).value()[0];
      }
      p.value[i] = orig - h;
      {
        nn::Graph<double> g;
        fm = loss_fn(g, store).value()[0];
      }
      p.value[i] = orig;
      const double num = (fp - fm) / (2 * h);
      const double an = p.grad.empty() ? 0.0 : p.grad[i];
      diff2 += (num - an) * (num - an);
      an2 += an * an;
      nu2 += num * num;
    }
    const double denom = std::sqrt(an2) + std::sqrt(nu2);
    if (denom > 1e-12) worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

}  // namespace crynet::test_support
