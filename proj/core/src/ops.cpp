#include "pssc/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pssc/gating.hpp"

namespace pssc::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

template <typename T>
void require_rank(Var<T> a, int rank, const char* op) {
  if (a.value().rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_string(a.shape()));
  }
}

template <typename T>
bool any_grad(std::initializer_list<Var<T>> vars) {
  for (const auto& v : vars) {
    if (v.tape->requires_grad(v)) return true;
  }
  return false;
}

// im2col for stride-1 same padding on one sample. cols is [C*k*k, H*W].
template <typename T>
void im2col(const Tensor<T>& x, int sample, int k, RowMat<T>& cols) {
  const int c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  cols.resize(static_cast<Eigen::Index>(c) * k * k, static_cast<Eigen::Index>(hw));
  for (int ci = 0; ci < c; ++ci) {
    const T* src = x.data() + (static_cast<std::size_t>(sample) * c + ci) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols.row((ci * k + ky) * k + kx).data();
        for (int yy = 0; yy < h; ++yy) {
          const int sy = yy + ky - pad;
          T* drow = dst + static_cast<std::size_t>(yy) * w;
          if (sy < 0 || sy >= h) {
            std::fill(drow, drow + w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sy) * w;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - pad;
            drow[xx] = (sx < 0 || sx >= w) ? T(0) : srow[sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const RowMat<T>& cols, int sample, int k, Tensor<T>& gx) {
  const int c = gx.dim(1), h = gx.dim(2), w = gx.dim(3);
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < c; ++ci) {
    T* dst = gx.data() + (static_cast<std::size_t>(sample) * c + ci) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols.row((ci * k + ky) * k + kx).data();
        for (int yy = 0; yy < h; ++yy) {
          const int sy = yy + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const T* srow = src + static_cast<std::size_t>(yy) * w;
          T* drow = dst + static_cast<std::size_t>(sy) * w;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - pad;
            if (sx >= 0 && sx < w) drow[sx] += srow[xx];
          }
        }
      }
    }
  }
}


}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "add");
  Tensor<T> y = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return a.tape->record(std::move(y), any_grad<T>({a, b}), [a, b](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "sub");
  Tensor<T> y = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return a.tape->record(std::move(y), any_grad<T>({a, b}), [a, b](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "mul");
  Tensor<T> y = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return a.tape->record(std::move(y), any_grad<T>({a, b}), [a, b](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buffer(a);
      const Tensor<T>& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buffer(b);
      const Tensor<T>& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> y = a.value();
  for (auto& v : y.storage()) v *= s;
  return a.tape->record(std::move(y), any_grad<T>({a}), [a, s](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  Tensor<T> y = a.value();
  for (auto& v : y.storage()) v += s;
  return a.tape->record(std::move(y), any_grad<T>({a}),
                        [a](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) { t.accumulate(a, g); });
}

template <typename T>
Var<T> one_minus(Var<T> a) {
  Tensor<T> y = a.value();
  for (auto& v : y.storage()) v = T(1) - v;
  return a.tape->record(std::move(y), any_grad<T>({a}), [a](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T total = 0;
  for (T v : a.value().values()) total += v;
  return a.tape->record(Tensor<T>({1}, total), any_grad<T>({a}), [a](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& ga = t.grad_buffer(a);
    for (auto& v : ga.storage()) v += g[0];
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> dot_const(Var<T> a, const Tensor<T>& weights) {
  if (weights.size() != a.value().size()) throw std::invalid_argument("dot_const: size mismatch");
  T total = 0;
  const Tensor<T>& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i] * weights[i];
  return a.tape->record(Tensor<T>({1}, total), any_grad<T>({a}), [a, weights](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * weights[i];
  });
}

template <typename T>
Var<T> leaky_relu(Var<T> a, T slope) {
  Tensor<T> y = a.value();
  for (auto& v : y.storage()) v = v > T(0) ? v : v * slope;
  return a.tape->record(std::move(y), any_grad<T>({a}), [a, slope](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& ga = t.grad_buffer(a);
    const Tensor<T>& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > T(0) ? g[i] : g[i] * slope;
  });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  Tensor<T> y = a.value();
  for (auto& v : y.storage()) v = std::tanh(v);
  return a.tape->record(std::move(y), any_grad<T>({a}), [a](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& yy) {
    Tensor<T>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - yy[i] * yy[i]);
  });
}

template <typename T>
Var<T> softplus(Var<T> a) {
  Tensor<T> y = a.value();
  for (auto& v : y.storage()) v = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
  return a.tape->record(std::move(y), any_grad<T>({a}), [a](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& ga = t.grad_buffer(a);
    const Tensor<T>& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (T(1) + std::exp(-x[i]));
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b, T gain) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const int n = x.dim(0), k = x.dim(1), m = w.dim(0);
  if (w.dim(1) != k || b.value().size() != static_cast<std::size_t>(m)) {
    throw std::invalid_argument("linear: weight " + shape_string(w.shape()) + " / bias " + shape_string(b.shape()) +
                                " incompatible with input " + shape_string(x.shape()));
  }
  Tensor<T> y({n, m});
  ConstMapMat<T> X(x.value().data(), n, k);
  ConstMapMat<T> W(w.value().data(), m, k);
  MapMat<T> Y(y.data(), n, m);
  Y.noalias() = gain * (X * W.transpose());
  const Tensor<T>& bv = b.value();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) Y(i, j) += bv[j];
  }
  return x.tape->record(std::move(y), any_grad<T>({x, w, b}), [x, w, b, n, k, m, gain](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    ConstMapMat<T> G(g.data(), n, m);
    if (t.requires_grad(x)) {
      MapMat<T> GX(t.grad_buffer(x).data(), n, k);
      ConstMapMat<T> W(w.value().data(), m, k);
      GX.noalias() += gain * (G * W);
    }
    if (t.requires_grad(w)) {
      MapMat<T> GW(t.grad_buffer(w).data(), m, k);
      ConstMapMat<T> X(x.value().data(), n, k);
      GW.noalias() += gain * (G.transpose() * X);
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buffer(b);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) gb[j] += G(i, j);
      }
    }
  });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, T gain) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c || w.dim(3) != k || k % 2 != 1 || b.value().size() != static_cast<std::size_t>(o)) {
    throw std::invalid_argument("conv2d: weight " + shape_string(w.shape()) + " incompatible with input " +
                                shape_string(x.shape()));
  }
  const int hw = h * wd;
  const int ckk = c * k * k;
  Tensor<T> y({n, o, h, wd});
  {
    const Tensor<T>& bv = b.value();
    ConstMapMat<T> W(w.value().data(), o, ckk);
    RowMat<T> cols;
    for (int ni = 0; ni < n; ++ni) {
      im2col(x.value(), ni, k, cols);
      MapMat<T> out(y.data() + static_cast<std::size_t>(ni) * o * hw, o, hw);
      out.noalias() = gain * (W * cols);
      for (int oi = 0; oi < o; ++oi) out.row(oi).array() += bv[oi];
    }
  }
  return x.tape->record(std::move(y), any_grad<T>({x, w, b}),
                        [x, w, b, n, o, k, hw, ckk, gain](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                          if (t.requires_grad(b)) {
                            Tensor<T>& gb = t.grad_buffer(b);
                            for (int ni = 0; ni < n; ++ni) {
                              ConstMapMat<T> gm(g.data() + static_cast<std::size_t>(ni) * o * hw, o, hw);
                              for (int oi = 0; oi < o; ++oi) gb[oi] += gm.row(oi).sum();
                            }
                          }
                          const bool need_w = t.requires_grad(w);
                          const bool need_x = t.requires_grad(x);
                          if (!need_w && !need_x) return;
                          ConstMapMat<T> W(w.value().data(), o, ckk);
                          RowMat<T> cols, gcols;
                          for (int ni = 0; ni < n; ++ni) {
                            ConstMapMat<T> gm(g.data() + static_cast<std::size_t>(ni) * o * hw, o, hw);
                            if (need_w) {
                              im2col(x.value(), ni, k, cols);
                              MapMat<T> GW(t.grad_buffer(w).data(), o, ckk);
                              GW.noalias() += gain * (gm * cols.transpose());
                            }
                            if (need_x) {
                              gcols.noalias() = gain * (W.transpose() * gm);
                              col2im_add(gcols, ni, k, t.grad_buffer(x));
                            }
                          }
                        });
}

template <typename T>
Var<T> upsample2x(Var<T> x) {
  require_rank(x, 4, "upsample2x");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({n, c, 2 * h, 2 * w});
  const Tensor<T>& xv = x.value();
  for (int p = 0; p < n * c; ++p) {
    const T* src = xv.data() + static_cast<std::size_t>(p) * h * w;
    T* dst = y.data() + static_cast<std::size_t>(p) * 4 * h * w;
    for (int yy = 0; yy < 2 * h; ++yy) {
      for (int xx = 0; xx < 2 * w; ++xx) dst[yy * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
    }
  }
  return x.tape->record(std::move(y), any_grad<T>({x}), [x, n, c, h, w](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& gx = t.grad_buffer(x);
    for (int p = 0; p < n * c; ++p) {
      const T* src = g.data() + static_cast<std::size_t>(p) * 4 * h * w;
      T* dst = gx.data() + static_cast<std::size_t>(p) * h * w;
      for (int yy = 0; yy < 2 * h; ++yy) {
        for (int xx = 0; xx < 2 * w; ++xx) dst[(yy / 2) * w + xx / 2] += src[yy * 2 * w + xx];
      }
    }
  });
}

template <typename T>
Var<T> avgpool2x(Var<T> x) {
  require_rank(x, 4, "avgpool2x");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw std::invalid_argument("avgpool2x: odd spatial size " + shape_string(x.shape()));
  const int oh = h / 2, ow = w / 2;
  Tensor<T> y({n, c, oh, ow});
  const Tensor<T>& xv = x.value();
  for (int p = 0; p < n * c; ++p) {
    const T* src = xv.data() + static_cast<std::size_t>(p) * h * w;
    T* dst = y.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int yy = 0; yy < oh; ++yy) {
      for (int xx = 0; xx < ow; ++xx) {
        const T* s = src + 2 * yy * w + 2 * xx;
        dst[yy * ow + xx] = T(0.25) * (s[0] + s[1] + s[w] + s[w + 1]);
      }
    }
  }
  return x.tape->record(std::move(y), any_grad<T>({x}), [x, n, c, h, w](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& gx = t.grad_buffer(x);
    const int oh = h / 2, ow = w / 2;
    for (int p = 0; p < n * c; ++p) {
      const T* src = g.data() + static_cast<std::size_t>(p) * oh * ow;
      T* dst = gx.data() + static_cast<std::size_t>(p) * h * w;
      for (int yy = 0; yy < oh; ++yy) {
        for (int xx = 0; xx < ow; ++xx) {
          const T v = T(0.25) * src[yy * ow + xx];
          T* d = dst + 2 * yy * w + 2 * xx;
          d[0] += v;
          d[1] += v;
          d[w] += v;
          d[w + 1] += v;
        }
      }
    }
  });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  require_rank(x, 4, "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> y({n, c});
  const Tensor<T>& xv = x.value();
  for (int p = 0; p < n * c; ++p) {
    const T* src = xv.data() + static_cast<std::size_t>(p) * hw;
    T total = 0;
    for (int i = 0; i < hw; ++i) total += src[i];
    y[p] = total / static_cast<T>(hw);
  }
  return x.tape->record(std::move(y), any_grad<T>({x}), [x, n, c, hw](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& gx = t.grad_buffer(x);
    for (int p = 0; p < n * c; ++p) {
      const T v = g[p] / static_cast<T>(hw);
      T* dst = gx.data() + static_cast<std::size_t>(p) * hw;
      for (int i = 0; i < hw; ++i) dst[i] += v;
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(y), any_grad<T>({x}), [x](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> broadcast_batch(Var<T> x, int n) {
  if (x.value().rank() < 1 || x.dim(0) != 1) throw std::invalid_argument("broadcast_batch: expects leading dim 1");
  Shape shape = x.shape();
  shape[0] = n;
  const std::size_t stride = x.value().size();
  Tensor<T> y(shape);
  for (int i = 0; i < n; ++i) std::copy(x.value().data(), x.value().data() + stride, y.data() + stride * i);
  return x.tape->record(std::move(y), any_grad<T>({x}), [x, n, stride](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& gx = t.grad_buffer(x);
    for (int i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < stride; ++j) gx[j] += g[stride * i + j];
    }
  });
}

template <typename T>
Var<T> select_column(Var<T> x, int column) {
  require_rank(x, 2, "select_column");
  const int n = x.dim(0), k = x.dim(1);
  if (column < 0 || column >= k) throw std::invalid_argument("select_column: column out of range");
  Tensor<T> y({n, 1});
  for (int i = 0; i < n; ++i) y[i] = x.value()[static_cast<std::size_t>(i) * k + column];
  return x.tape->record(std::move(y), any_grad<T>({x}), [x, n, k, column](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& gx = t.grad_buffer(x);
    for (int i = 0; i < n; ++i) gx[static_cast<std::size_t>(i) * k + column] += g[i];
  });
}

template <typename T>
Var<T> softmax_last(Var<T> x) {
  const Tensor<T>& xv = x.value();
  const int len = xv.shape().back();
  const std::size_t rows = xv.size() / len;
  Tensor<T> y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    gating::softmax_forward<T>(std::span<const T>(xv.data() + r * len, len), std::span<T>(y.data() + r * len, len));
  }
  return x.tape->record(std::move(y), any_grad<T>({x}), [x, len, rows](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& p) {
    Tensor<T>& gx = t.grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r) {
      gating::softmax_backward<T>(std::span<const T>(p.data() + r * len, len), std::span<const T>(g.data() + r * len, len),
                                  std::span<T>(gx.data() + r * len, len));
    }
  });
}

template <typename T>
Var<T> cumax_last(Var<T> x) {
  const Tensor<T>& xv = x.value();
  const int len = xv.shape().back();
  const std::size_t rows = xv.size() / len;
  Tensor<T> probs(xv.shape());
  Tensor<T> y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    gating::cumax_forward<T>(std::span<const T>(xv.data() + r * len, len), std::span<T>(probs.data() + r * len, len),
                             std::span<T>(y.data() + r * len, len));
  }
  return x.tape->record(std::move(y), any_grad<T>({x}),
                        [x, probs = std::move(probs), len, rows](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                          Tensor<T>& gx = t.grad_buffer(x);
                          for (std::size_t r = 0; r < rows; ++r) {
                            gating::cumax_backward<T>(std::span<const T>(probs.data() + r * len, len),
                                                      std::span<const T>(g.data() + r * len, len),
                                                      std::span<T>(gx.data() + r * len, len));
                          }
                        });
}

template <typename T>
Var<T> normalize_max_last(Var<T> x) {
  const Tensor<T>& xv = x.value();
  const int len = xv.shape().back();
  const std::size_t rows = xv.size() / len;
  Tensor<T> y(xv.shape());
  std::vector<int> argmax(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = xv.data() + r * len;
    const int a = static_cast<int>(std::max_element(src, src + len) - src);
    argmax[r] = a;
    if (!(src[a] > T(0))) throw std::invalid_argument("normalize_max_last: row maximum must be positive");
    for (int i = 0; i < len; ++i) y[r * len + i] = src[i] / src[a];
  }
  return x.tape->record(std::move(y), any_grad<T>({x}),
                        [x, argmax = std::move(argmax), len, rows](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                          Tensor<T>& gx = t.grad_buffer(x);
                          const Tensor<T>& xv = x.value();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* src = xv.data() + r * len;
                            const T peak = src[argmax[r]];
                            T dot = 0;
                            for (int i = 0; i < len; ++i) {
                              gx[r * len + i] += g[r * len + i] / peak;
                              dot += g[r * len + i] * src[i];
                            }
                            gx[r * len + argmax[r]] -= dot / (peak * peak);
                          }
                        });
}

template <typename T>
Var<T> outer_rects(Var<T> gh, Var<T> gw) {
  require_rank(gh, 3, "outer_rects");
  require_rank(gw, 3, "outer_rects");
  const int n = gh.dim(0), j = gh.dim(1), h = gh.dim(2), w = gw.dim(2);
  if (gw.dim(0) != n || gw.dim(1) != j) throw std::invalid_argument("outer_rects: gate batch/rect counts differ");
  Tensor<T> y({n, j, h, w});
  const Tensor<T>& hv = gh.value();
  const Tensor<T>& wv = gw.value();
  for (int p = 0; p < n * j; ++p) {
    for (int yy = 0; yy < h; ++yy) {
      const T a = hv[static_cast<std::size_t>(p) * h + yy];
      for (int xx = 0; xx < w; ++xx) {
        y[(static_cast<std::size_t>(p) * h + yy) * w + xx] = a * wv[static_cast<std::size_t>(p) * w + xx];
      }
    }
  }
  return gh.tape->record(std::move(y), any_grad<T>({gh, gw}), [gh, gw, n, j, h, w](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    const Tensor<T>& hv = gh.value();
    const Tensor<T>& wv = gw.value();
    const bool need_h = t.requires_grad(gh), need_w = t.requires_grad(gw);
    Tensor<T>* ghh = need_h ? &t.grad_buffer(gh) : nullptr;
    Tensor<T>* gww = need_w ? &t.grad_buffer(gw) : nullptr;
    for (int p = 0; p < n * j; ++p) {
      for (int yy = 0; yy < h; ++yy) {
        for (int xx = 0; xx < w; ++xx) {
          const T gv = g[(static_cast<std::size_t>(p) * h + yy) * w + xx];
          if (ghh) (*ghh)[static_cast<std::size_t>(p) * h + yy] += gv * wv[static_cast<std::size_t>(p) * w + xx];
          if (gww) (*gww)[static_cast<std::size_t>(p) * w + xx] += gv * hv[static_cast<std::size_t>(p) * h + yy];
        }
      }
    }
  });
}

template <typename T>
Var<T> mean_rects(Var<T> rects) {
  require_rank(rects, 4, "mean_rects");
  const int n = rects.dim(0), j = rects.dim(1), hw = rects.dim(2) * rects.dim(3);
  Tensor<T> y({n, rects.dim(2), rects.dim(3)});
  const Tensor<T>& rv = rects.value();
  const T inv = T(1) / static_cast<T>(j);
  for (int ni = 0; ni < n; ++ni) {
    for (int ji = 0; ji < j; ++ji) {
      const T* src = rv.data() + (static_cast<std::size_t>(ni) * j + ji) * hw;
      T* dst = y.data() + static_cast<std::size_t>(ni) * hw;
      for (int p = 0; p < hw; ++p) dst[p] += src[p];
    }
  }
  for (auto& v : y.storage()) v *= inv;
  return rects.tape->record(std::move(y), any_grad<T>({rects}), [rects, n, j, hw, inv](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& gr = t.grad_buffer(rects);
    for (int ni = 0; ni < n; ++ni) {
      for (int ji = 0; ji < j; ++ji) {
        T* dst = gr.data() + (static_cast<std::size_t>(ni) * j + ji) * hw;
        const T* src = g.data() + static_cast<std::size_t>(ni) * hw;
        for (int p = 0; p < hw; ++p) dst[p] += inv * src[p];
      }
    }
  });
}

template <typename T>
Var<T> adain(Var<T> x, Var<T> style_mean, Var<T> style_std, T eps) {
  require_rank(x, 4, "adain");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw < 1) throw std::invalid_argument("adain: empty spatial extent");
  const Shape stats{n, c};
  if (style_mean.shape() != stats || style_std.shape() != stats) {
    throw std::invalid_argument("adain: style statistics must be " + shape_string(stats));
  }
  const Tensor<T>& xv = x.value();
  Tensor<T> xhat(xv.shape());
  Tensor<T> mu({n, c}), sigma({n, c});
  Tensor<T> y(xv.shape());
  for (int p = 0; p < n * c; ++p) {
    const T* src = xv.data() + static_cast<std::size_t>(p) * hw;
    T m = 0;
    for (int i = 0; i < hw; ++i) m += src[i];
    m /= static_cast<T>(hw);
    T var = 0;
    for (int i = 0; i < hw; ++i) var += (src[i] - m) * (src[i] - m);
    var /= static_cast<T>(hw);
    const T s = std::sqrt(var);
    mu[p] = m;
    sigma[p] = s;
    const T denom = s + eps;
    const T sm = style_mean.value()[p], ss = style_std.value()[p];
    T* xh = xhat.data() + static_cast<std::size_t>(p) * hw;
    T* dst = y.data() + static_cast<std::size_t>(p) * hw;
    for (int i = 0; i < hw; ++i) {
      xh[i] = (src[i] - m) / denom;
      dst[i] = ss * xh[i] + sm;
    }
  }
  return x.tape->record(
      std::move(y), any_grad<T>({x, style_mean, style_std}),
      [x, style_mean, style_std, eps, n, c, hw, xhat = std::move(xhat), mu = std::move(mu),
       sigma = std::move(sigma)](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const bool need_x = t.requires_grad(x);
        Tensor<T>* gm = t.requires_grad(style_mean) ? &t.grad_buffer(style_mean) : nullptr;
        Tensor<T>* gs = t.requires_grad(style_std) ? &t.grad_buffer(style_std) : nullptr;
        Tensor<T>* gx = need_x ? &t.grad_buffer(x) : nullptr;
        for (int p = 0; p < n * c; ++p) {
          const T* gy = g.data() + static_cast<std::size_t>(p) * hw;
          const T* xh = xhat.data() + static_cast<std::size_t>(p) * hw;
          T sum_g = 0, sum_gxh = 0;
          for (int i = 0; i < hw; ++i) {
            sum_g += gy[i];
            sum_gxh += gy[i] * xh[i];
          }
          if (gm) (*gm)[p] += sum_g;
          if (gs) (*gs)[p] += sum_gxh;
          if (!gx) continue;
          const T ss = style_std.value()[p];
          const T s = sigma[p];
          const T denom = s + eps;
          // grad wrt xhat is ss * gy; xhat = (x - mu) / (sigma + eps).
          const T mean_gxh = ss * sum_g / static_cast<T>(hw);
          const T* src = x.value().data() + static_cast<std::size_t>(p) * hw;
          T* dst = gx->data() + static_cast<std::size_t>(p) * hw;
          // sum_i gxhat_i (x_i - mu) = ss * denom * sum_gxh
          const T corr = s > T(0) ? ss * sum_gxh / (denom * static_cast<T>(hw) * s) : T(0);
          for (int i = 0; i < hw; ++i) {
            dst[i] += (ss * gy[i] - mean_gxh) / denom - corr * (src[i] - mu[p]);
          }
        }
      });
}

template <typename T>
Var<T> grad_scale(Var<T> a, T s) {
  return a.tape->record(a.value(), any_grad<T>({a}), [a, s](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

template <typename T>
Var<T> mask_blend(Var<T> gamma, Var<T> styled, Var<T> mask) {
  require_same_shape(gamma, styled, "mask_blend");
  require_rank(gamma, 4, "mask_blend");
  const int n = gamma.dim(0), c = gamma.dim(1), h = gamma.dim(2), w = gamma.dim(3);
  if (mask.shape() != Shape{n, h, w}) {
    throw std::invalid_argument("mask_blend: mask " + shape_string(mask.shape()) + " does not match feature map " +
                                shape_string(gamma.shape()));
  }
  const int hw = h * w;
  Tensor<T> y(gamma.shape());
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& sv = styled.value();
  const Tensor<T>& mv = mask.value();
  for (int ni = 0; ni < n; ++ni) {
    const T* m = mv.data() + static_cast<std::size_t>(ni) * hw;
    for (int ci = 0; ci < c; ++ci) {
      const std::size_t off = (static_cast<std::size_t>(ni) * c + ci) * hw;
      for (int p = 0; p < hw; ++p) y[off + p] = gv[off + p] * (T(1) - m[p]) + sv[off + p] * m[p];
    }
  }
  return gamma.tape->record(std::move(y), any_grad<T>({gamma, styled, mask}),
                            [gamma, styled, mask, n, c, hw](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                              const Tensor<T>& gv = gamma.value();
                              const Tensor<T>& sv = styled.value();
                              const Tensor<T>& mv = mask.value();
                              Tensor<T>* gg = t.requires_grad(gamma) ? &t.grad_buffer(gamma) : nullptr;
                              Tensor<T>* gs = t.requires_grad(styled) ? &t.grad_buffer(styled) : nullptr;
                              Tensor<T>* gmk = t.requires_grad(mask) ? &t.grad_buffer(mask) : nullptr;
                              for (int ni = 0; ni < n; ++ni) {
                                const T* m = mv.data() + static_cast<std::size_t>(ni) * hw;
                                for (int ci = 0; ci < c; ++ci) {
                                  const std::size_t off = (static_cast<std::size_t>(ni) * c + ci) * hw;
                                  for (int p = 0; p < hw; ++p) {
                                    const T gy = g[off + p];
                                    if (gg) (*gg)[off + p] += gy * (T(1) - m[p]);
                                    if (gs) (*gs)[off + p] += gy * m[p];
                                    if (gmk) (*gmk)[static_cast<std::size_t>(ni) * hw + p] += gy * (sv[off + p] - gv[off + p]);
                                  }
                                }
                              }
                            });
}

#define PSSC_INSTANTIATE_OPS(T)                                   \
  template Var<T> add(Var<T>, Var<T>);                            \
  template Var<T> sub(Var<T>, Var<T>);                            \
  template Var<T> mul(Var<T>, Var<T>);                            \
  template Var<T> scale(Var<T>, T);                               \
  template Var<T> add_scalar(Var<T>, T);                          \
  template Var<T> one_minus(Var<T>);                              \
  template Var<T> sum(Var<T>);                                    \
  template Var<T> mean(Var<T>);                                   \
  template Var<T> dot_const(Var<T>, const Tensor<T>&);            \
  template Var<T> leaky_relu(Var<T>, T);                          \
  template Var<T> tanh(Var<T>);                                   \
  template Var<T> softplus(Var<T>);                               \
  template Var<T> linear(Var<T>, Var<T>, Var<T>, T);              \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, T);              \
  template Var<T> upsample2x(Var<T>);                             \
  template Var<T> avgpool2x(Var<T>);                              \
  template Var<T> global_avg_pool(Var<T>);                        \
  template Var<T> reshape(Var<T>, Shape);                         \
  template Var<T> broadcast_batch(Var<T>, int);                   \
  template Var<T> select_column(Var<T>, int);                     \
  template Var<T> softmax_last(Var<T>);                           \
  template Var<T> cumax_last(Var<T>);                             \
  template Var<T> normalize_max_last(Var<T>);                     \
  template Var<T> outer_rects(Var<T>, Var<T>);                    \
  template Var<T> mean_rects(Var<T>);                             \
  template Var<T> adain(Var<T>, Var<T>, Var<T>, T);               \
  template Var<T> mask_blend(Var<T>, Var<T>, Var<T>);             \
  template Var<T> grad_scale(Var<T>, T);

PSSC_INSTANTIATE_OPS(float)
PSSC_INSTANTIATE_OPS(double)

}  // namespace pssc::ops
