#include "phcp/ndgrad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "phcp/common/error.hpp"

namespace phcp::nd {

namespace {

bool any_tracked(std::initializer_list<const Tensor*> ts) {
  for (const auto* t : ts)
    if (t->tracked()) return true;
  return false;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_str(t.shape()));
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Strides that map a C x H x W index onto an operand that may be broadcast
// along some axes.
struct Broadcast {
  std::size_t sc, sh, sw;
};

Broadcast broadcast_strides(const Shape& operand) {
  return {operand[0] == 1 ? 0 : operand[1] * operand[2], operand[1] == 1 ? 0 : operand[2],
          operand[2] == 1 ? std::size_t{0} : std::size_t{1}};
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t padding) {
  require_rank(input, 3, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin)
    throw ShapeError("conv2d: kernel input-channel dimension " + std::to_string(kernel.dim(1)) +
                     " != input channels " + std::to_string(cin));
  if (bias.numel() != cout)
    throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) +
                     " != output channels " + std::to_string(cout));
  if (h + 2 * padding < kh || w + 2 * padding < kw)
    throw ShapeError("conv2d: kernel larger than padded input");
  const std::size_t ho = h + 2 * padding - kh + 1, wo = w + 2 * padding - kw + 1;
  const auto p = static_cast<std::ptrdiff_t>(padding);

  const auto x = input.data();
  const auto k = kernel.data();
  const auto b = bias.data();
  std::vector<double> out(cout * ho * wo);

  // Valid output range for a kernel offset along one axis.
  auto range = [p](std::size_t koff, std::size_t in_len, std::size_t out_len) {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(koff) - p;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t hi =
        std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out_len),
                                 static_cast<std::ptrdiff_t>(in_len) - shift);
    return std::pair{lo, std::max(lo, hi)};
  };

  for (std::size_t co = 0; co < cout; ++co) {
    double* op = out.data() + co * ho * wo;
    std::fill(op, op + ho * wo, b[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* xp = x.data() + ci * h * w;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const auto [y0, y1] = range(ky, h, ho);
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const auto [x0, x1] = range(kx, w, wo);
          const double wt = k[((co * cin + ci) * kh + ky) * kw + kx];
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - p;
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - p;
          for (std::ptrdiff_t oy = y0; oy < y1; ++oy) {
            double* orow = op + oy * static_cast<std::ptrdiff_t>(wo);
            const double* xrow = xp + (oy + dy) * static_cast<std::ptrdiff_t>(w) + dx;
            for (std::ptrdiff_t ox = x0; ox < x1; ++ox) orow[ox] += wt * xrow[ox];
          }
        }
      }
    }
  }

  const bool tracked = any_tracked({&input, &kernel, &bias});
  Tensor result = tape.make_result({cout, ho, wo}, std::move(out), tracked);
  if (!tracked) return result;

  tape.record([=, result = result]() {
    const auto& gout = storage(result).grad;
    if (gout.empty()) return;
    const auto xs = input.data();
    const auto ks = kernel.data();
    if (bias.tracked()) {
      auto& gb = grad_buffer(bias);
      for (std::size_t co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (std::size_t i = 0; i < ho * wo; ++i) acc += gout[co * ho * wo + i];
        gb[co] += acc;
      }
    }
    double* gk = kernel.tracked() ? grad_buffer(kernel).data() : nullptr;
    double* gx = input.tracked() ? grad_buffer(input).data() : nullptr;
    for (std::size_t co = 0; co < cout; ++co) {
      const double* gp = gout.data() + co * ho * wo;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* xp = xs.data() + ci * h * w;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto [y0, y1] = range(ky, h, ho);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const auto [x0, x1] = range(kx, w, wo);
            const std::size_t kidx = ((co * cin + ci) * kh + ky) * kw + kx;
            const double wt = ks[kidx];
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - p;
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - p;
            double acc = 0.0;
            for (std::ptrdiff_t oy = y0; oy < y1; ++oy) {
              const double* grow = gp + oy * static_cast<std::ptrdiff_t>(wo);
              const std::ptrdiff_t xoff = (oy + dy) * static_cast<std::ptrdiff_t>(w) + dx;
              if (gk) {
                const double* xrow = xp + xoff;
                for (std::ptrdiff_t ox = x0; ox < x1; ++ox) acc += grow[ox] * xrow[ox];
              }
              if (gx) {
                double* gxrow = gx + ci * h * w + xoff;
                for (std::ptrdiff_t ox = x0; ox < x1; ++ox) gxrow[ox] += wt * grow[ox];
              }
            }
            if (gk) gk[kidx] += acc;
          }
        }
      }
    }
  });
  return result;
}

Tensor reduce(Tape& tape, const Tensor& input, ReduceAxis axis, ReduceMode mode) {
  require_rank(input, 3, "reduce", "input");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t hw = h * w;
  if (c == 0 || hw == 0) throw ShapeError("reduce: empty axis in " + shape_str(input.shape()));
  const auto x = input.data();
  const bool spatial = axis == ReduceAxis::Spatial;
  const std::size_t n_out = spatial ? c : hw;
  std::vector<double> out(n_out);
  std::vector<std::size_t> argmax;
  if (mode == ReduceMode::Max) argmax.resize(n_out);

  for (std::size_t o = 0; o < n_out; ++o) {
    // Element j of the reduced group for output o.
    auto idx = [&](std::size_t j) { return spatial ? o * hw + j : j * hw + o; };
    const std::size_t n = spatial ? hw : c;
    if (mode == ReduceMode::Mean) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += x[idx(j)];
      out[o] = acc / static_cast<double>(n);
    } else {
      std::size_t best = idx(0);
      for (std::size_t j = 1; j < n; ++j)
        if (x[idx(j)] > x[best]) best = idx(j);
      out[o] = x[best];
      argmax[o] = best;
    }
  }

  Shape shape = spatial ? Shape{c, 1, 1} : Shape{1, h, w};
  const bool tracked = input.tracked();
  Tensor result = tape.make_result(std::move(shape), std::move(out), tracked);
  if (!tracked) return result;
  tape.record([=, argmax = std::move(argmax), result = result]() {
    const auto& g = storage(result).grad;
    if (g.empty()) return;
    auto& gx = grad_buffer(input);
    if (mode == ReduceMode::Max) {
      for (std::size_t o = 0; o < n_out; ++o) gx[argmax[o]] += g[o];
      return;
    }
    const std::size_t n = spatial ? hw : c;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t o = 0; o < n_out; ++o)
      for (std::size_t j = 0; j < n; ++j) gx[spatial ? o * hw + j : j * hw + o] += g[o] * inv;
  });
  return result;
}

Tensor unary(Tape& tape, const Tensor& input, Unary fn) {
  const auto x = input.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    switch (fn) {
      case Unary::Sigmoid: out[i] = stable_sigmoid(v); break;
      case Unary::Relu: out[i] = v > 0.0 ? v : 0.0; break;
      case Unary::ExpLin: out[i] = v > 0.0 ? v : std::expm1(v); break;
      case Unary::Tanh: out[i] = std::tanh(v); break;
    }
  }
  const bool tracked = input.tracked();
  Tensor result = tape.make_result(input.shape(), std::move(out), tracked);
  if (!tracked) return result;
  tape.record([=, result = result]() {
    const auto& g = storage(result).grad;
    if (g.empty()) return;
    auto& gx = grad_buffer(input);
    const auto xv = input.data();
    const auto yv = result.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double d = 0.0;
      switch (fn) {
        case Unary::Sigmoid: d = yv[i] * (1.0 - yv[i]); break;
        case Unary::Relu: d = xv[i] > 0.0 ? 1.0 : 0.0; break;
        case Unary::ExpLin: d = xv[i] > 0.0 ? 1.0 : yv[i] + 1.0; break;
        case Unary::Tanh: d = 1.0 - yv[i] * yv[i]; break;
      }
      gx[i] += g[i] * d;
    }
  });
  return result;
}

Tensor sigmoid(Tape& tape, const Tensor& input) { return unary(tape, input, Unary::Sigmoid); }
Tensor relu(Tape& tape, const Tensor& input) { return unary(tape, input, Unary::Relu); }

Tensor binary(Tape& tape, const Tensor& a, const Tensor& b, Binary fn) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Shape out_shape;
  Broadcast ba{}, bb{};
  bool elementwise = sa == sb;
  if (elementwise) {
    out_shape = sa;
  } else {
    // Attention gating broadcasts only.
    auto gate_of = [](const Shape& full, const Shape& g) {
      return full.size() == 3 && g.size() == 3 &&
             ((g[0] == full[0] && g[1] == 1 && g[2] == 1) ||
              (g[0] == 1 && g[1] == full[1] && g[2] == full[2]));
    };
    if (gate_of(sa, sb)) {
      out_shape = sa;
    } else if (gate_of(sb, sa)) {
      out_shape = sb;
    } else {
      throw ShapeError("illegal broadcast between " + shape_str(sa) + " and " + shape_str(sb));
    }
    ba = broadcast_strides(sa);
    bb = broadcast_strides(sb);
  }

  const std::size_t n = shape_numel(out_shape);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(n);
  std::vector<std::size_t> ia, ib;
  if (elementwise) {
    for (std::size_t i = 0; i < n; ++i) {
      switch (fn) {
        case Binary::Add: out[i] = x[i] + y[i]; break;
        case Binary::Sub: out[i] = x[i] - y[i]; break;
        case Binary::Mul: out[i] = x[i] * y[i]; break;
      }
    }
  } else {
    ia.resize(n);
    ib.resize(n);
    const std::size_t c = out_shape[0], h = out_shape[1], w = out_shape[2];
    std::size_t i = 0;
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t hi = 0; hi < h; ++hi)
        for (std::size_t wi = 0; wi < w; ++wi, ++i) {
          ia[i] = ci * ba.sc + hi * ba.sh + wi * ba.sw;
          ib[i] = ci * bb.sc + hi * bb.sh + wi * bb.sw;
          const double u = x[ia[i]], v = y[ib[i]];
          switch (fn) {
            case Binary::Add: out[i] = u + v; break;
            case Binary::Sub: out[i] = u - v; break;
            case Binary::Mul: out[i] = u * v; break;
          }
        }
  }

  const bool tracked = any_tracked({&a, &b});
  Tensor result = tape.make_result(std::move(out_shape), std::move(out), tracked);
  if (!tracked) return result;
  tape.record([=, ia = std::move(ia), ib = std::move(ib), result = result]() {
    const auto& g = storage(result).grad;
    if (g.empty()) return;
    const auto xv = a.data();
    const auto yv = b.data();
    double* ga = a.tracked() ? grad_buffer(a).data() : nullptr;
    double* gb = b.tracked() ? grad_buffer(b).data() : nullptr;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t ja = elementwise ? i : ia[i];
      const std::size_t jb = elementwise ? i : ib[i];
      switch (fn) {
        case Binary::Add:
          if (ga) ga[ja] += g[i];
          if (gb) gb[jb] += g[i];
          break;
        case Binary::Sub:
          if (ga) ga[ja] += g[i];
          if (gb) gb[jb] -= g[i];
          break;
        case Binary::Mul:
          if (ga) ga[ja] += g[i] * yv[jb];
          if (gb) gb[jb] += g[i] * xv[ja];
          break;
      }
    }
  });
  return result;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) { return binary(tape, a, b, Binary::Add); }
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) { return binary(tape, a, b, Binary::Sub); }
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) { return binary(tape, a, b, Binary::Mul); }

Tensor scale(Tape& tape, const Tensor& a, double alpha) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= alpha;
  const bool tracked = a.tracked();
  Tensor result = tape.make_result(a.shape(), std::move(out), tracked);
  if (!tracked) return result;
  tape.record([=, result = result]() {
    const auto& g = storage(result).grad;
    if (g.empty()) return;
    auto& ga = grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += alpha * g[i];
  });
  return result;
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "lhs");
  require_rank(b, 2, "matmul", "rhs");
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  if (b.dim(0) != n)
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double u = x[i * n + k];
      for (std::size_t j = 0; j < p; ++j) out[i * p + j] += u * y[k * p + j];
    }
  const bool tracked = any_tracked({&a, &b});
  Tensor result = tape.make_result({m, p}, std::move(out), tracked);
  if (!tracked) return result;
  tape.record([=, result = result]() {
    const auto& g = storage(result).grad;
    if (g.empty()) return;
    const auto xv = a.data();
    const auto yv = b.data();
    if (a.tracked()) {
      auto& ga = grad_buffer(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < n; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < p; ++j) acc += g[i * p + j] * yv[k * p + j];
          ga[i * n + k] += acc;
        }
    }
    if (b.tracked()) {
      auto& gb = grad_buffer(b);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < p; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i) acc += xv[i * n + k] * g[i * p + j];
          gb[k * p + j] += acc;
        }
    }
  });
  return result;
}

Tensor reshape(Tape& tape, const Tensor& input, Shape shape) {
  if (shape_numel(shape) != input.numel())
    throw ShapeError("reshape: " + shape_str(input.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  std::vector<double> out(input.data().begin(), input.data().end());
  const bool tracked = input.tracked();
  Tensor result = tape.make_result(std::move(shape), std::move(out), tracked);
  if (!tracked) return result;
  tape.record([=, result = result]() {
    const auto& g = storage(result).grad;
    if (g.empty()) return;
    auto& gx = grad_buffer(input);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return result;
}

Tensor softmax(Tape& tape, const Tensor& scores) {
  require_rank(scores, 3, "softmax", "scores");
  const std::size_t n = scores.dim(0), hw = scores.dim(1) * scores.dim(2);
  if (n == 0) throw ShapeError("softmax: no candidates");
  const auto s = scores.data();
  std::vector<double> out(n * hw);
  for (std::size_t cell = 0; cell < hw; ++cell) {
    double mx = s[cell];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, s[j * hw + cell]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(s[j * hw + cell] - mx);
      out[j * hw + cell] = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[j * hw + cell] /= z;
  }
  const bool tracked = scores.tracked();
  Tensor result = tape.make_result(scores.shape(), std::move(out), tracked);
  if (!tracked) return result;
  tape.record([=, result = result]() {
    const auto& g = storage(result).grad;
    if (g.empty()) return;
    const auto y = result.data();
    auto& gx = grad_buffer(scores);
    for (std::size_t cell = 0; cell < hw; ++cell) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j * hw + cell] * y[j * hw + cell];
      for (std::size_t j = 0; j < n; ++j)
        gx[j * hw + cell] += y[j * hw + cell] * (g[j * hw + cell] - dot);
    }
  });
  return result;
}

Tensor concat(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const auto& t : parts) require_rank(t, 3, "concat", "part");
  const std::size_t h = parts[0].dim(1), w = parts[0].dim(2);
  std::size_t c = 0;
  bool tracked = false;
  for (const auto& t : parts) {
    if (t.dim(1) != h || t.dim(2) != w)
      throw ShapeError("concat: spatial dims differ (" + shape_str(parts[0].shape()) + " vs " +
                       shape_str(t.shape()) + ")");
    c += t.dim(0);
    tracked = tracked || t.tracked();
  }
  std::vector<double> out;
  out.reserve(c * h * w);
  for (const auto& t : parts) out.insert(out.end(), t.data().begin(), t.data().end());
  Tensor result = tape.make_result({c, h, w}, std::move(out), tracked);
  if (!tracked) return result;
  tape.record([parts, result = result]() {
    const auto& g = storage(result).grad;
    if (g.empty()) return;
    std::size_t off = 0;
    for (const auto& t : parts) {
      if (t.tracked()) {
        auto& gt = grad_buffer(t);
        for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[off + i];
      }
      off += t.numel();
    }
  });
  return result;
}

Tensor slice_channels(Tape& tape, const Tensor& input, std::size_t begin, std::size_t count) {
  require_rank(input, 3, "slice_channels", "input");
  if (begin + count > input.dim(0) || count == 0)
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") out of range for " + shape_str(input.shape()));
  const std::size_t hw = input.dim(1) * input.dim(2);
  const auto x = input.data();
  std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(begin * hw),
                          x.begin() + static_cast<std::ptrdiff_t>((begin + count) * hw));
  const bool tracked = input.tracked();
  Tensor result = tape.make_result({count, input.dim(1), input.dim(2)}, std::move(out), tracked);
  if (!tracked) return result;
  tape.record([=, result = result]() {
    const auto& g = storage(result).grad;
    if (g.empty()) return;
    auto& gx = grad_buffer(input);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * hw + i] += g[i];
  });
  return result;
}

Tensor resize_channels(Tape& tape, const Tensor& input, std::size_t channels) {
  require_rank(input, 3, "resize_channels", "input");
  if (channels == 0) throw ShapeError("resize_channels: zero channels requested");
  const std::size_t c = input.dim(0), hw = input.dim(1) * input.dim(2);
  const std::size_t kept = std::min(c, channels);
  std::vector<double> out(channels * hw, 0.0);
  std::copy_n(input.data().begin(), kept * hw, out.begin());
  const bool tracked = input.tracked();
  Tensor result = tape.make_result({channels, input.dim(1), input.dim(2)}, std::move(out), tracked);
  if (!tracked) return result;
  tape.record([=, result = result]() {
    const auto& g = storage(result).grad;
    if (g.empty()) return;
    auto& gx = grad_buffer(input);
    for (std::size_t i = 0; i < kept * hw; ++i) gx[i] += g[i];
  });
  return result;
}

Tensor channel_affine(Tape& tape, const Tensor& input, std::span<const std::size_t> perm,
                      std::span<const double> scale_c, std::span<const double> shift_c) {
  require_rank(input, 3, "channel_affine", "input");
  const std::size_t c = input.dim(0), hw = input.dim(1) * input.dim(2);
  if (perm.size() != c || scale_c.size() != c || shift_c.size() != c)
    throw ShapeError("channel_affine: constants sized for " + std::to_string(perm.size()) +
                     " channels, input has " + std::to_string(c));
  const auto x = input.data();
  std::vector<double> out(c * hw);
  for (std::size_t o = 0; o < c; ++o) {
    if (perm[o] >= c) throw ShapeError("channel_affine: permutation index out of range");
    for (std::size_t i = 0; i < hw; ++i) out[o * hw + i] = scale_c[o] * x[perm[o] * hw + i] + shift_c[o];
  }
  const bool tracked = input.tracked();
  Tensor result = tape.make_result(input.shape(), std::move(out), tracked);
  if (!tracked) return result;
  std::vector<std::size_t> p(perm.begin(), perm.end());
  std::vector<double> s(scale_c.begin(), scale_c.end());
  tape.record([=, result = result]() {
    const auto& g = storage(result).grad;
    if (g.empty()) return;
    auto& gx = grad_buffer(input);
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t i = 0; i < hw; ++i) gx[p[o] * hw + i] += s[o] * g[o * hw + i];
  });
  return result;
}

Tensor sum(Tape& tape, const Tensor& input) {
  double acc = 0.0;
  for (double v : input.data()) acc += v;
  const bool tracked = input.tracked();
  Tensor result = tape.make_result({1}, {acc}, tracked);
  if (!tracked) return result;
  tape.record([=, result = result]() {
    const auto& g = storage(result).grad;
    if (g.empty()) return;
    auto& gx = grad_buffer(input);
    for (auto& v : gx) v += g[0];
  });
  return result;
}

Tensor mean(Tape& tape, const Tensor& input) {
  return scale(tape, sum(tape, input), 1.0 / static_cast<double>(input.numel()));
}

Tensor focal_bce_with_logits(Tape& tape, const Tensor& logits, std::span<const double> targets,
                             double gamma) {
  if (targets.size() != logits.numel())
    throw ShapeError("focal_bce_with_logits: " + std::to_string(targets.size()) +
                     " targets for logits " + shape_str(logits.shape()));
  const auto z = logits.data();
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double t = targets[i];
    const double p = stable_sigmoid(z[i]);
    const double bce = t * softplus(-z[i]) + (1.0 - t) * softplus(z[i]);
    out[i] = std::pow(std::abs(t - p), gamma) * bce;
  }
  const bool tracked = logits.tracked();
  Tensor result = tape.make_result(logits.shape(), std::move(out), tracked);
  if (!tracked) return result;
  std::vector<double> tv(targets.begin(), targets.end());
  tape.record([=, tv = std::move(tv), result = result]() {
    const auto& g = storage(result).grad;
    if (g.empty()) return;
    const auto zv = logits.data();
    auto& gz = grad_buffer(logits);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double t = tv[i];
      const double p = stable_sigmoid(zv[i]);
      const double d = p - t;
      const double ad = std::abs(d);
      const double bce = t * softplus(-zv[i]) + (1.0 - t) * softplus(zv[i]);
      const double mod = std::pow(ad, gamma);
      double dmod = 0.0;
      if (ad > 0.0) dmod = gamma * std::pow(ad, gamma - 1.0) * (d > 0 ? 1.0 : -1.0) * p * (1.0 - p);
      gz[i] += g[i] * (mod * d + bce * dmod);
    }
  });
  return result;
}

Tensor smooth_l1(Tape& tape, const Tensor& pred, std::span<const double> target,
                 std::span<const unsigned char> mask, double beta) {
  if (target.size() != pred.numel() || mask.size() != pred.numel())
    throw ShapeError("smooth_l1: target/mask size mismatch for " + shape_str(pred.shape()));
  const auto x = pred.data();
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!mask[i]) continue;
    const double d = std::abs(x[i] - target[i]);
    out[i] = d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
  }
  const bool tracked = pred.tracked();
  Tensor result = tape.make_result(pred.shape(), std::move(out), tracked);
  if (!tracked) return result;
  std::vector<double> tv(target.begin(), target.end());
  std::vector<unsigned char> mv(mask.begin(), mask.end());
  tape.record([=, tv = std::move(tv), mv = std::move(mv), result = result]() {
    const auto& g = storage(result).grad;
    if (g.empty()) return;
    const auto xv = pred.data();
    auto& gx = grad_buffer(pred);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!mv[i]) continue;
      const double d = xv[i] - tv[i];
      const double dd = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
      gx[i] += g[i] * dd;
    }
  });
  return result;
}

}  // namespace phcp::nd
