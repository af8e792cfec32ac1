#include "crynet/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace crynet::nn {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using CVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
VecMap<T> flat(Array<T>& a) {
  return VecMap<T>(a.data(), static_cast<Eigen::Index>(a.size()));
}
template <typename T>
CVecMap<T> flat(const Array<T>& a) {
  return CVecMap<T>(a.data(), static_cast<Eigen::Index>(a.size()));
}

template <typename T>
void require_same_graph(Var<T> a, Var<T> b, const char* op) {
  if (&a.graph() != &b.graph()) throw ConfigError(std::string(op) + ": operands belong to different graphs");
}

template <typename T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
  require_same_graph(a, b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

// True when gradient should flow into parent slot k of node n.
template <typename T>
bool wants(Graph<T>& g, const Node<T>& n, std::size_t k) {
  return g.requires_grad(n.parents[k]);
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

template <typename T>
T stable_sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

// ---- elementwise ----------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "add");
  Array<T> out(a.shape());
  flat(out) = flat(a.value()) + flat(b.value());
  return a.graph().record("add", std::move(out), {a.id(), b.id()}, [](Graph<T>& g, Node<T>& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (wants(g, n, k)) flat(g.grad_buffer(n.parents[k])) += flat(n.grad);
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "sub");
  Array<T> out(a.shape());
  flat(out) = flat(a.value()) - flat(b.value());
  return a.graph().record("sub", std::move(out), {a.id(), b.id()}, [](Graph<T>& g, Node<T>& n) {
    if (wants(g, n, 0)) flat(g.grad_buffer(n.parents[0])) += flat(n.grad);
    if (wants(g, n, 1)) flat(g.grad_buffer(n.parents[1])) -= flat(n.grad);
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "mul");
  Array<T> out(a.shape());
  flat(out) = flat(a.value()).cwiseProduct(flat(b.value()));
  return a.graph().record("mul", std::move(out), {a.id(), b.id()}, [](Graph<T>& g, Node<T>& n) {
    const int ia = n.parents[0];
    const int ib = n.parents[1];
    if (wants(g, n, 0)) flat(g.grad_buffer(ia)) += flat(n.grad).cwiseProduct(flat(g.node(ib).value));
    if (wants(g, n, 1)) flat(g.grad_buffer(ib)) += flat(n.grad).cwiseProduct(flat(g.node(ia).value));
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Array<T> out(a.shape());
  flat(out) = flat(a.value()) * factor;
  return a.graph().record("scale", std::move(out), {a.id()}, [factor](Graph<T>& g, Node<T>& n) {
    flat(g.grad_buffer(n.parents[0])) += flat(n.grad) * factor;
  });
}

template <typename T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
  require_same_graph(a, bias, "add_bias");
  require_rank(bias.shape(), 1, "add_bias");
  const std::size_t width = bias.dim(0);
  if (a.shape().back() != width) {
    throw ShapeError("add_bias: last axis of " + shape_string(a.shape()) + " does not match bias " +
                     shape_string(bias.shape()));
  }
  const auto rows = static_cast<Eigen::Index>(a.value().size() / width);
  const auto cols = static_cast<Eigen::Index>(width);
  Array<T> out(a.shape());
  MapR<T>(out.data(), rows, cols) =
      CMapR<T>(a.value().data(), rows, cols).rowwise() + CVecMap<T>(bias.value().data(), cols).transpose();
  return a.graph().record("add_bias", std::move(out), {a.id(), bias.id()}, [rows, cols](Graph<T>& g, Node<T>& n) {
    CMapR<T> gm(n.grad.data(), rows, cols);
    if (wants(g, n, 0)) flat(g.grad_buffer(n.parents[0])) += flat(n.grad);
    if (wants(g, n, 1)) flat(g.grad_buffer(n.parents[1])) += gm.colwise().sum().transpose();
  });
}

// ---- matmul ---------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool ta, bool tb) {
  require_same_graph(a, b, "matmul");
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const auto ar = static_cast<Eigen::Index>(a.dim(0));
  const auto ac = static_cast<Eigen::Index>(a.dim(1));
  const auto br = static_cast<Eigen::Index>(b.dim(0));
  const auto bc = static_cast<Eigen::Index>(b.dim(1));
  const Eigen::Index m = ta ? ac : ar;
  const Eigen::Index ka = ta ? ar : ac;
  const Eigen::Index kb = tb ? bc : br;
  const Eigen::Index nn = tb ? br : bc;
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  CMapR<T> A(a.value().data(), ar, ac);
  CMapR<T> B(b.value().data(), br, bc);
  Array<T> out(Shape{static_cast<std::size_t>(m), static_cast<std::size_t>(nn)});
  MapR<T> C(out.data(), m, nn);
  if (!ta && !tb) C.noalias() = A * B;
  else if (ta && !tb) C.noalias() = A.transpose() * B;
  else if (!ta && tb) C.noalias() = A * B.transpose();
  else C.noalias() = A.transpose() * B.transpose();

  return a.graph().record(
      "matmul", std::move(out), {a.id(), b.id()}, [ta, tb, ar, ac, br, bc, m, nn](Graph<T>& g, Node<T>& n) {
        CMapR<T> G(n.grad.data(), m, nn);
        CMapR<T> A(g.node(n.parents[0]).value.data(), ar, ac);
        CMapR<T> B(g.node(n.parents[1]).value.data(), br, bc);
        if (wants(g, n, 0)) {
          MapR<T> dA(g.grad_buffer(n.parents[0]).data(), ar, ac);
          if (!ta && !tb) dA.noalias() += G * B.transpose();
          else if (!ta && tb) dA.noalias() += G * B;
          else if (ta && !tb) dA.noalias() += B * G.transpose();
          else dA.noalias() += B.transpose() * G.transpose();
        }
        if (wants(g, n, 1)) {
          MapR<T> dB(g.grad_buffer(n.parents[1]).data(), br, bc);
          if (!ta && !tb) dB.noalias() += A.transpose() * G;
          else if (ta && !tb) dB.noalias() += A * G;
          else if (!ta && tb) dB.noalias() += G.transpose() * A;
          else dB.noalias() += G.transpose() * A.transpose();
        }
      });
}

// ---- shape ops ------------------------------------------------------------

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_same_graph(parts.front(), p, "concat");
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError("concat: incompatible shapes " + shape_string(first) + " and " + shape_string(s));
    out_shape[axis] += s[axis];
    ids.push_back(p.id());
    widths.push_back(s[axis]);
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  Array<T> out(out_shape);
  const std::size_t row = out_shape[axis] * inner;
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].value().data();
    const std::size_t chunk = widths[k] * inner;
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(src + o * chunk, chunk, out.data() + o * row + col);
    col += chunk;
  }
  return parts.front().graph().record(
      "concat", std::move(out), std::move(ids), [widths, outer, inner, row](Graph<T>& g, Node<T>& n) {
        std::size_t col = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          const std::size_t chunk = widths[k] * inner;
          if (wants(g, n, k)) {
            T* dst = g.grad_buffer(n.parents[k]).data();
            for (std::size_t o = 0; o < outer; ++o) {
              const T* src = n.grad.data() + o * row + col;
              for (std::size_t i = 0; i < chunk; ++i) dst[o * chunk + i] += src[i];
            }
          }
          col += chunk;
        }
      });
}

template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for " + shape_string(s));
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t row = s[axis] * inner;
  const std::size_t chunk = (end - begin) * inner;
  const std::size_t col = begin * inner;
  Array<T> out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(a.value().data() + o * row + col, chunk, out.data() + o * chunk);
  return a.graph().record("slice", std::move(out), {a.id()}, [outer, row, chunk, col](Graph<T>& g, Node<T>& n) {
    T* dst = g.grad_buffer(n.parents[0]).data();
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = n.grad.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[o * row + col + i] += src[i];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Array<T> out = a.value();
  out.reshape(std::move(shape));
  return a.graph().record("reshape", std::move(out), {a.id()}, [](Graph<T>& g, Node<T>& n) {
    flat(g.grad_buffer(n.parents[0])) += flat(n.grad);
  });
}

// ---- activations ----------------------------------------------------------

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Array<T> out(a.shape());
  std::transform(a.value().storage().begin(), a.value().storage().end(), out.storage().begin(),
                 [](T z) { return stable_sigmoid(z); });
  return a.graph().record("sigmoid", std::move(out), {a.id()}, [](Graph<T>& g, Node<T>& n) {
    auto y = flat(n.value);
    flat(g.grad_buffer(n.parents[0])).array() += flat(n.grad).array() * y.array() * (T(1) - y.array());
  });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  Array<T> out(a.shape());
  flat(out) = flat(a.value()).array().tanh().matrix();
  return a.graph().record("tanh", std::move(out), {a.id()}, [](Graph<T>& g, Node<T>& n) {
    auto y = flat(n.value);
    flat(g.grad_buffer(n.parents[0])).array() += flat(n.grad).array() * (T(1) - y.array().square());
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Array<T> out(a.shape());
  flat(out) = flat(a.value()).cwiseMax(T(0));
  return a.graph().record("relu", std::move(out), {a.id()}, [](Graph<T>& g, Node<T>& n) {
    auto y = flat(n.value);
    flat(g.grad_buffer(n.parents[0])).array() += (y.array() > T(0)).select(flat(n.grad).array(), T(0));
  });
}

// ---- reductions -----------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> a) {
  Array<T> out = Array<T>::scalar(flat(a.value()).sum());
  return a.graph().record("sum", std::move(out), {a.id()}, [](Graph<T>& g, Node<T>& n) {
    flat(g.grad_buffer(n.parents[0])).array() += n.grad[0];
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const auto count = static_cast<T>(a.value().size());
  Array<T> out = Array<T>::scalar(flat(a.value()).sum() / count);
  return a.graph().record("mean", std::move(out), {a.id()}, [count](Graph<T>& g, Node<T>& n) {
    flat(g.grad_buffer(n.parents[0])).array() += n.grad[0] / count;
  });
}

// ---- convolution ----------------------------------------------------------

namespace {

struct ConvGeom {
  std::size_t cin, h, w, cout, kh, kw, sh, sw, ho, wo, pad_top, pad_left;
  [[nodiscard]] std::size_t patch() const { return cin * kh * kw; }
  [[nodiscard]] std::size_t positions() const { return ho * wo; }
};

// Output positions are processed in tiles of this many columns so the im2col
// buffer stays cache-sized; one full-size buffer ran ~3x slower at 128 channels.
constexpr std::size_t kConvTile = 2048;

// Calls fn(row_offset_in_tile, oy, ox_begin, ox_end) for each output-row segment
// covered by positions [p0, p0 + n).
template <typename F>
void for_segments(const ConvGeom& q, std::size_t p0, std::size_t n, F&& fn) {
  std::size_t pos = p0;
  const std::size_t stop = p0 + n;
  while (pos < stop) {
    const std::size_t oy = pos / q.wo;
    const std::size_t ox0 = pos % q.wo;
    const std::size_t ox1 = std::min(q.wo, ox0 + (stop - pos));
    fn(pos - p0, oy, ox0, ox1);
    pos += ox1 - ox0;
  }
}

// cols[(c*kh + i)*kw + j, p - p0] = x[c, oy*sh + i - pad_top, ox*sw + j - pad_left] (0 outside),
// for positions p = oy*wo + ox in [p0, p0 + n).
template <typename T>
void im2col(const T* x, const ConvGeom& q, std::size_t p0, std::size_t n, T* cols) {
  for (std::size_t c = 0; c < q.cin; ++c) {
    for (std::size_t i = 0; i < q.kh; ++i) {
      for (std::size_t j = 0; j < q.kw; ++j) {
        T* row = cols + ((c * q.kh + i) * q.kw + j) * n;
        for_segments(q, p0, n, [&](std::size_t off, std::size_t oy, std::size_t ox0, std::size_t ox1) {
          T* out = row + off;
          const auto y = static_cast<std::ptrdiff_t>(oy * q.sh + i) - static_cast<std::ptrdiff_t>(q.pad_top);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(q.h)) {
            std::fill_n(out, ox1 - ox0, T(0));
            return;
          }
          const T* src = x + (c * q.h + static_cast<std::size_t>(y)) * q.w;
          for (std::size_t ox = ox0; ox < ox1; ++ox) {
            const auto xx = static_cast<std::ptrdiff_t>(ox * q.sw + j) - static_cast<std::ptrdiff_t>(q.pad_left);
            out[ox - ox0] = (xx < 0 || xx >= static_cast<std::ptrdiff_t>(q.w)) ? T(0) : src[xx];
          }
        });
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeom& q, std::size_t p0, std::size_t n, T* dx) {
  for (std::size_t c = 0; c < q.cin; ++c) {
    for (std::size_t i = 0; i < q.kh; ++i) {
      for (std::size_t j = 0; j < q.kw; ++j) {
        const T* row = cols + ((c * q.kh + i) * q.kw + j) * n;
        for_segments(q, p0, n, [&](std::size_t off, std::size_t oy, std::size_t ox0, std::size_t ox1) {
          const auto y = static_cast<std::ptrdiff_t>(oy * q.sh + i) - static_cast<std::ptrdiff_t>(q.pad_top);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(q.h)) return;
          T* dst = dx + (c * q.h + static_cast<std::size_t>(y)) * q.w;
          const T* src = row + off;
          for (std::size_t ox = ox0; ox < ox1; ++ox) {
            const auto xx = static_cast<std::ptrdiff_t>(ox * q.sw + j) - static_cast<std::ptrdiff_t>(q.pad_left);
            if (xx >= 0 && xx < static_cast<std::ptrdiff_t>(q.w)) dst[xx] += src[ox - ox0];
          }
        });
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernels, Conv2dSpec spec) {
  require_same_graph(x, kernels, "conv2d");
  require_rank(x.shape(), 4, "conv2d");
  require_rank(kernels.shape(), 4, "conv2d");
  if (spec.stride_h == 0 || spec.stride_w == 0) throw ConfigError("conv2d: stride must be positive");
  if (kernels.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: kernel " + shape_string(kernels.shape()) + " does not match input channels of " +
                     shape_string(x.shape()));
  }
  ConvGeom q{};
  const std::size_t batch = x.dim(0);
  q.cin = x.dim(1);
  q.h = x.dim(2);
  q.w = x.dim(3);
  q.cout = kernels.dim(0);
  q.kh = kernels.dim(2);
  q.kw = kernels.dim(3);
  q.sh = spec.stride_h;
  q.sw = spec.stride_w;
  q.ho = ceil_div(q.h, q.sh);
  q.wo = ceil_div(q.w, q.sw);
  const std::size_t pad_h = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((q.ho - 1) * q.sh + q.kh) -
                                                            static_cast<std::ptrdiff_t>(q.h));
  const std::size_t pad_w = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((q.wo - 1) * q.sw + q.kw) -
                                                            static_cast<std::ptrdiff_t>(q.w));
  q.pad_top = pad_h / 2;
  q.pad_left = pad_w / 2;

  const auto K = static_cast<Eigen::Index>(q.patch());
  const auto P = static_cast<Eigen::Index>(q.positions());
  const auto Co = static_cast<Eigen::Index>(q.cout);
  const std::size_t tile = std::min(kConvTile, q.positions());
  std::vector<T> cols(q.patch() * tile);
  Array<T> out(Shape{batch, q.cout, q.ho, q.wo});
  CMapR<T> W(kernels.value().data(), Co, K);
  for (std::size_t b = 0; b < batch; ++b) {
    MapR<T> O(out.data() + b * q.cout * q.positions(), Co, P);
    for (std::size_t p0 = 0; p0 < q.positions(); p0 += tile) {
      const std::size_t n = std::min(tile, q.positions() - p0);
      const auto N = static_cast<Eigen::Index>(n);
      im2col(x.value().data() + b * q.cin * q.h * q.w, q, p0, n, cols.data());
      O.middleCols(static_cast<Eigen::Index>(p0), N).noalias() = W * CMapR<T>(cols.data(), K, N);
    }
  }

  return x.graph().record("conv2d", std::move(out), {x.id(), kernels.id()}, [q, batch](Graph<T>& g, Node<T>& n) {
    const auto K = static_cast<Eigen::Index>(q.patch());
    const auto P = static_cast<Eigen::Index>(q.positions());
    const auto Co = static_cast<Eigen::Index>(q.cout);
    const bool want_x = wants(g, n, 0);
    const bool want_w = wants(g, n, 1);
    const T* xv = g.node(n.parents[0]).value.data();
    CMapR<T> W(g.node(n.parents[1]).value.data(), Co, K);
    const std::size_t tile = std::min(kConvTile, q.positions());
    std::vector<T> cols(q.patch() * tile);
    for (std::size_t b = 0; b < batch; ++b) {
      CMapR<T> G(n.grad.data() + b * q.cout * q.positions(), Co, P);
      for (std::size_t p0 = 0; p0 < q.positions(); p0 += tile) {
        const std::size_t cnt = std::min(tile, q.positions() - p0);
        const auto N = static_cast<Eigen::Index>(cnt);
        const auto Gt = G.middleCols(static_cast<Eigen::Index>(p0), N);
        if (want_w) {
          im2col(xv + b * q.cin * q.h * q.w, q, p0, cnt, cols.data());
          MapR<T>(g.grad_buffer(n.parents[1]).data(), Co, K).noalias() += Gt * CMapR<T>(cols.data(), K, N).transpose();
        }
        if (want_x) {
          MapR<T>(cols.data(), K, N).noalias() = W.transpose() * Gt;
          col2im_add(cols.data(), q, p0, cnt, g.grad_buffer(n.parents[0]).data() + b * q.cin * q.h * q.w);
        }
      }
    }
  });
}

// ---- batch norm -----------------------------------------------------------

template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, Array<T>& running_mean, Array<T>& running_var, Mode mode,
                 BatchNormSpec spec) {
  require_same_graph(x, gamma, "batchnorm");
  require_same_graph(x, beta, "batchnorm");
  if (x.shape().size() < 2) throw ShapeError("batchnorm: input needs a channel axis, got " + shape_string(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const Shape cshape{channels};
  if (gamma.shape() != cshape || beta.shape() != cshape || running_mean.shape() != cshape ||
      running_var.shape() != cshape) {
    throw ShapeError("batchnorm: per-channel tensors must have shape " + shape_string(cshape));
  }
  const std::size_t spatial = x.value().size() / (batch * channels);
  const bool train = mode == Mode::Train;
  if (train && batch < 2) throw ConfigError("batchnorm: training needs a batch of at least 2");

  std::vector<T> mu(channels);
  std::vector<T> inv_std(channels);
  const T* xv = x.value().data();
  if (train) {
    const double count = static_cast<double>(batch * spatial);
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = xv + (b * channels + c) * spatial;
        for (std::size_t k = 0; k < spatial; ++k) s += p[k];
      }
      const double m = s / count;
      double ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = xv + (b * channels + c) * spatial;
        for (std::size_t k = 0; k < spatial; ++k) ss += (p[k] - m) * (p[k] - m);
      }
      const double var = ss / count;
      mu[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + spec.eps));
      running_mean[c] = static_cast<T>(spec.momentum * running_mean[c] + (1.0 - spec.momentum) * m);
      running_var[c] = static_cast<T>(spec.momentum * running_var[c] + (1.0 - spec.momentum) * var);
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + spec.eps));
    }
  }

  Array<T> out(x.shape());
  const T* gv = gamma.value().data();
  const T* bv = beta.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = (b * channels + c) * spatial;
      const T a = gv[c] * inv_std[c];
      const T s = bv[c] - a * mu[c];
      for (std::size_t k = 0; k < spatial; ++k) out[off + k] = a * xv[off + k] + s;
    }
  }

  return x.graph().record(
      train ? "batchnorm_train" : "batchnorm_eval", std::move(out), {x.id(), gamma.id(), beta.id()},
      [mu = std::move(mu), inv_std = std::move(inv_std), batch, channels, spatial, train](Graph<T>& g, Node<T>& n) {
        const T* xv = g.node(n.parents[0]).value.data();
        const T* gam = g.node(n.parents[1]).value.data();
        const T* go = n.grad.data();
        const double count = static_cast<double>(batch * spatial);
        T* dx = wants(g, n, 0) ? g.grad_buffer(n.parents[0]).data() : nullptr;
        T* dgamma = wants(g, n, 1) ? g.grad_buffer(n.parents[1]).data() : nullptr;
        T* dbeta = wants(g, n, 2) ? g.grad_buffer(n.parents[2]).data() : nullptr;
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * spatial;
            for (std::size_t k = 0; k < spatial; ++k) {
              const double xh = (xv[off + k] - mu[c]) * inv_std[c];
              sum_g += go[off + k];
              sum_gx += go[off + k] * xh;
            }
          }
          if (dgamma) dgamma[c] += static_cast<T>(sum_gx);
          if (dbeta) dbeta[c] += static_cast<T>(sum_g);
          if (!dx) continue;
          const double a = static_cast<double>(gam[c]) * inv_std[c];
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * spatial;
            for (std::size_t k = 0; k < spatial; ++k) {
              if (train) {
                const double xh = (xv[off + k] - mu[c]) * inv_std[c];
                dx[off + k] += static_cast<T>(a * (go[off + k] - sum_g / count - xh * sum_gx / count));
              } else {
                dx[off + k] += static_cast<T>(a * go[off + k]);
              }
            }
          }
        }
      });
}

// ---- pooling --------------------------------------------------------------

template <typename T>
Var<T> maxpool2d(Var<T> x, std::size_t pool_h, std::size_t pool_w) {
  require_rank(x.shape(), 4, "maxpool2d");
  if (pool_h == 0 || pool_w == 0) throw ConfigError("maxpool2d: pool size must be positive");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  const std::size_t ho = ceil_div(h, pool_h);
  const std::size_t wo = ceil_div(w, pool_w);
  Array<T> out(Shape{x.dim(0), x.dim(1), ho, wo});
  std::vector<std::uint32_t> argmax(out.size());
  const T* xv = x.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (p * h + oy * pool_h) * w + ox * pool_w;
        for (std::size_t i = oy * pool_h; i < std::min(h, (oy + 1) * pool_h); ++i) {
          for (std::size_t j = ox * pool_w; j < std::min(w, (ox + 1) * pool_w); ++j) {
            const std::size_t idx = (p * h + i) * w + j;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = xv[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return x.graph().record("maxpool2d", std::move(out), {x.id()},
                          [argmax = std::move(argmax)](Graph<T>& g, Node<T>& n) {
                            T* dx = g.grad_buffer(n.parents[0]).data();
                            for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += n.grad[o];
                          });
}

// ---- loss and regularisation ----------------------------------------------

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels, std::span<const T> class_weights) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy");
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for a batch of " +
                     std::to_string(batch));
  }
  if (!class_weights.empty() && class_weights.size() != classes) {
    throw ShapeError("softmax_cross_entropy: class weight count does not match the number of classes");
  }
  std::vector<T> probs(batch * classes);
  std::vector<double> w(batch, 1.0);
  double total_w = 0.0;
  double loss = 0.0;
  const T* z = logits.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
    if (!class_weights.empty()) w[b] = class_weights[static_cast<std::size_t>(y)];
    const T* row = z + b * classes;
    const T zmax = *std::max_element(row, row + classes);
    double se = 0.0;
    for (std::size_t c = 0; c < classes; ++c) se += std::exp(static_cast<double>(row[c] - zmax));
    const double lse = static_cast<double>(zmax) + std::log(se);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = static_cast<T>(std::exp(row[c] - lse));
    loss += w[b] * (lse - row[static_cast<std::size_t>(y)]);
    total_w += w[b];
  }
  if (!(total_w > 0.0)) throw ConfigError("softmax_cross_entropy: total class weight of the batch is zero");
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.graph().record(
      "softmax_cross_entropy", Array<T>::scalar(static_cast<T>(loss / total_w)), {logits.id()},
      [probs = std::move(probs), w = std::move(w), ys = std::move(ys), total_w, classes](Graph<T>& g, Node<T>& n) {
        T* dz = g.grad_buffer(n.parents[0]).data();
        const double seed = n.grad[0];
        for (std::size_t b = 0; b < ys.size(); ++b) {
          const double f = seed * w[b] / total_w;
          for (std::size_t c = 0; c < classes; ++c) {
            const double target = static_cast<int>(c) == ys[b] ? 1.0 : 0.0;
            dz[b * classes + c] += static_cast<T>(f * (probs[b * classes + c] - target));
          }
        }
      });
}

template <typename T>
Var<T> dropout(Var<T> x, double p, std::mt19937_64& rng, Mode mode) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.value().size());
  for (auto& m : mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u >= p ? keep_scale : T(0);
  }
  Array<T> out(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = x.value()[i] * mask[i];
  return x.graph().record("dropout", std::move(out), {x.id()}, [mask = std::move(mask)](Graph<T>& g, Node<T>& n) {
    T* dx = g.grad_buffer(n.parents[0]).data();
    for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += n.grad[i] * mask[i];
  });
}

// ---- sequence helpers -----------------------------------------------------

template <typename T>
Var<T> to_sequence(Var<T> x) {
  require_rank(x.shape(), 4, "to_sequence");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Array<T> out(Shape{B, W, C * H});
  const T* xv = x.value().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) out[(b * W + w) * C * H + c * H + h] = xv[((b * C + c) * H + h) * W + w];
  return x.graph().record("to_sequence", std::move(out), {x.id()}, [B, C, H, W](Graph<T>& g, Node<T>& n) {
    T* dx = g.grad_buffer(n.parents[0]).data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w) dx[((b * C + c) * H + h) * W + w] += n.grad[(b * W + w) * C * H + c * H + h];
  });
}

template <typename T>
Var<T> mean_over_time(Var<T> x) {
  require_rank(x.shape(), 3, "mean_over_time");
  const std::size_t B = x.dim(0), Tn = x.dim(1), F = x.dim(2);
  Array<T> out(Shape{B, F});
  const T* xv = x.value().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < Tn; ++t)
      for (std::size_t f = 0; f < F; ++f) out[b * F + f] += xv[(b * Tn + t) * F + f];
    for (std::size_t f = 0; f < F; ++f) out[b * F + f] /= static_cast<T>(Tn);
  }
  return x.graph().record("mean_over_time", std::move(out), {x.id()}, [B, Tn, F](Graph<T>& g, Node<T>& n) {
    T* dx = g.grad_buffer(n.parents[0]).data();
    const T inv = T(1) / static_cast<T>(Tn);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < Tn; ++t)
        for (std::size_t f = 0; f < F; ++f) dx[(b * Tn + t) * F + f] += n.grad[b * F + f] * inv;
  });
}

template <typename T>
Var<T> time_step(Var<T> x, std::size_t t) {
  require_rank(x.shape(), 3, "time_step");
  const std::size_t B = x.dim(0), Tn = x.dim(1), F = x.dim(2);
  if (t >= Tn) throw ShapeError("time_step: index " + std::to_string(t) + " outside sequence of length " + std::to_string(Tn));
  Array<T> out(Shape{B, F});
  for (std::size_t b = 0; b < B; ++b) std::copy_n(x.value().data() + (b * Tn + t) * F, F, out.data() + b * F);
  return x.graph().record("time_step", std::move(out), {x.id()}, [B, Tn, F, t](Graph<T>& g, Node<T>& n) {
    T* dx = g.grad_buffer(n.parents[0]).data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < F; ++f) dx[(b * Tn + t) * F + f] += n.grad[b * F + f];
  });
}

template <typename T>
Var<T> stack_time(const std::vector<Var<T>>& steps) {
  if (steps.empty()) throw ShapeError("stack_time: no steps");
  const Shape& s = steps.front().shape();
  require_rank(s, 2, "stack_time");
  const std::size_t B = s[0], F = s[1], Tn = steps.size();
  Array<T> out(Shape{B, Tn, F});
  std::vector<int> ids;
  for (std::size_t t = 0; t < Tn; ++t) {
    require_same_shape(steps.front(), steps[t], "stack_time");
    ids.push_back(steps[t].id());
    for (std::size_t b = 0; b < B; ++b) std::copy_n(steps[t].value().data() + b * F, F, out.data() + (b * Tn + t) * F);
  }
  return steps.front().graph().record("stack_time", std::move(out), std::move(ids), [B, Tn, F](Graph<T>& g, Node<T>& n) {
    for (std::size_t t = 0; t < Tn; ++t) {
      if (!wants(g, n, t)) continue;
      T* dx = g.grad_buffer(n.parents[t]).data();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t f = 0; f < F; ++f) dx[b * F + f] += n.grad[(b * Tn + t) * F + f];
    }
  });
}

#define CRYNET_INSTANTIATE_OPS(T)                                                                          \
  template T stable_sigmoid<T>(T);                                                                         \
  template Var<T> add<T>(Var<T>, Var<T>);                                                                  \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                                  \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                                  \
  template Var<T> scale<T>(Var<T>, T);                                                                     \
  template Var<T> add_bias<T>(Var<T>, Var<T>);                                                             \
  template Var<T> matmul<T>(Var<T>, Var<T>, bool, bool);                                                   \
  template Var<T> concat<T>(const std::vector<Var<T>>&, std::size_t);                                      \
  template Var<T> slice<T>(Var<T>, std::size_t, std::size_t, std::size_t);                                 \
  template Var<T> reshape<T>(Var<T>, Shape);                                                               \
  template Var<T> sigmoid<T>(Var<T>);                                                                      \
  template Var<T> tanh<T>(Var<T>);                                                                         \
  template Var<T> relu<T>(Var<T>);                                                                         \
  template Var<T> sum<T>(Var<T>);                                                                          \
  template Var<T> mean<T>(Var<T>);                                                                         \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Conv2dSpec);                                                   \
  template Var<T> batchnorm<T>(Var<T>, Var<T>, Var<T>, Array<T>&, Array<T>&, Mode, BatchNormSpec);         \
  template Var<T> maxpool2d<T>(Var<T>, std::size_t, std::size_t);                                          \
  template Var<T> softmax_cross_entropy<T>(Var<T>, std::span<const int>, std::span<const T>);              \
  template Var<T> dropout<T>(Var<T>, double, std::mt19937_64&, Mode);                                      \
  template Var<T> to_sequence<T>(Var<T>);                                                                  \
  template Var<T> mean_over_time<T>(Var<T>);                                                               \
  template Var<T> time_step<T>(Var<T>, std::size_t);                                                       \
  template Var<T> stack_time<T>(const std::vector<Var<T>>&);

CRYNET_INSTANTIATE_OPS(float)
CRYNET_INSTANTIATE_OPS(double)

}  // namespace crynet::nn
