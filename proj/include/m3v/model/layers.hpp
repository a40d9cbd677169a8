#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "m3v/error.hpp"

namespace m3v::model {

// Row-major rows x cols matrix.
template <typename T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> d;

  Mat() = default;
  Mat(int r, int c, T fill = T(0))
      : rows(r), cols(c), d(static_cast<std::size_t>(r) * c, fill) {}

  T& operator()(int r, int c) { return d[static_cast<std::size_t>(r) * cols + c]; }
  T operator()(int r, int c) const { return d[static_cast<std::size_t>(r) * cols + c]; }
  T* row(int r) { return d.data() + static_cast<std::size_t>(r) * cols; }
  const T* row(int r) const { return d.data() + static_cast<std::size_t>(r) * cols; }
};

template <typename T>
Mat<T> operator+(Mat<T> a, const Mat<T>& b) {
  for (std::size_t i = 0; i < a.d.size(); ++i) a.d[i] += b.d[i];
  return a;
}

template <typename T>
void add_into(Mat<T>& a, const Mat<T>& b) {
  for (std::size_t i = 0; i < a.d.size(); ++i) a.d[i] += b.d[i];
}

template <typename T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(std::string n, std::vector<int> s, T fill = T(0)) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (int x : shape) count *= static_cast<std::size_t>(x);
    value.assign(count, fill);
    grad.assign(count, T(0));
  }
  std::size_t size() const noexcept { return value.size(); }
  // Matrices get weight decay; biases, norms and tokens do not.
  bool decays() const noexcept { return shape.size() >= 2; }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

// Normal(0, std) truncated to +-2 std, drawn in double so that models of
// different scalar types built from one seed hold the same values.
template <typename T>
void init_trunc_normal(Param<T>& p, std::mt19937_64& rng, double std = 0.02) {
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& v : p.value) {
    double z = nd(rng);
    while (std::abs(z) > 2.0) z = nd(rng);
    v = static_cast<T>(z * std);
  }
}

// y = x W + b with W stored in x out.
template <typename T>
struct Linear {
  Param<T> w, b;
  Mat<T> x;

  Linear() = default;
  Linear(const std::string& name, int in, int out)
      : w(name + ".weight", {in, out}), b(name + ".bias", {out}) {}

  int in() const { return w.shape[0]; }
  int out() const { return w.shape[1]; }

  template <typename F>
  void visit(F&& f) {
    f(w);
    f(b);
  }
  void init(std::mt19937_64& rng) { init_trunc_normal(w, rng); }

  Mat<T> forward(const Mat<T>& input) {
    x = input;
    return apply(input);
  }
  Mat<T> apply(const Mat<T>& input) const {
    if (input.cols != in()) throw InvalidArgument("linear layer " + w.name + ": width mismatch");
    const int o = out();
    Mat<T> y(input.rows, o);
    std::vector<double> acc(o);
    for (int n = 0; n < input.rows; ++n) {
      std::copy(b.value.begin(), b.value.end(), acc.begin());
      const T* xr = input.row(n);
      for (int i = 0; i < in(); ++i) {
        const double xi = xr[i];
        const T* wr = w.value.data() + static_cast<std::size_t>(i) * o;
        for (int j = 0; j < o; ++j) acc[j] += xi * wr[j];
      }
      std::copy(acc.begin(), acc.end(), y.row(n));
    }
    return y;
  }
  Mat<T> backward(const Mat<T>& dy) {
    const int o = out();
    Mat<T> dx(dy.rows, in());
    // Reductions over rows run in double even for float models.
    std::vector<double> gw(w.size(), 0.0), gb(o, 0.0);
    for (int n = 0; n < dy.rows; ++n) {
      const T* g = dy.row(n);
      const T* xr = x.row(n);
      T* dxr = dx.row(n);
      for (int j = 0; j < o; ++j) gb[j] += g[j];
      for (int i = 0; i < in(); ++i) {
        const T* wr = w.value.data() + static_cast<std::size_t>(i) * o;
        double* gwr = gw.data() + static_cast<std::size_t>(i) * o;
        const double xi = xr[i];
        double acc = 0;
        for (int j = 0; j < o; ++j) {
          gwr[j] += xi * g[j];
          acc += static_cast<double>(g[j]) * wr[j];
        }
        dxr[i] = static_cast<T>(acc);
      }
    }
    for (std::size_t i = 0; i < gw.size(); ++i) w.grad[i] += static_cast<T>(gw[i]);
    for (int j = 0; j < o; ++j) b.grad[j] += static_cast<T>(gb[j]);
    return dx;
  }
};

template <typename T>
struct LayerNorm {
  static constexpr double kEps = 1e-5;
  Param<T> gamma, beta;
  Mat<T> xhat;
  std::vector<T> inv_std;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim)
      : gamma(name + ".weight", {dim}, T(1)), beta(name + ".bias", {dim}) {}

  template <typename F>
  void visit(F&& f) {
    f(gamma);
    f(beta);
  }

  Mat<T> forward(const Mat<T>& x) {
    const int d = x.cols;
    xhat = Mat<T>(x.rows, d);
    inv_std.assign(x.rows, T(0));
    Mat<T> y(x.rows, d);
    for (int n = 0; n < x.rows; ++n) {
      const T* xr = x.row(n);
      double mean = 0;
      for (int i = 0; i < d; ++i) mean += xr[i];
      mean /= d;
      double var = 0;
      for (int i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
      var /= d;
      const double is = 1.0 / std::sqrt(var + kEps);
      inv_std[n] = static_cast<T>(is);
      for (int i = 0; i < d; ++i) {
        const T h = static_cast<T>((xr[i] - mean) * is);
        xhat(n, i) = h;
        y(n, i) = h * gamma.value[i] + beta.value[i];
      }
    }
    return y;
  }
  Mat<T> backward(const Mat<T>& dy) {
    const int d = dy.cols;
    Mat<T> dx(dy.rows, d);
    std::vector<double> dh(d), gg(d, 0.0), gb(d, 0.0);
    for (int n = 0; n < dy.rows; ++n) {
      double mean_dh = 0, mean_dh_h = 0;
      for (int i = 0; i < d; ++i) {
        gg[i] += static_cast<double>(dy(n, i)) * xhat(n, i);
        gb[i] += dy(n, i);
        dh[i] = static_cast<double>(dy(n, i)) * gamma.value[i];
        mean_dh += dh[i];
        mean_dh_h += dh[i] * xhat(n, i);
      }
      mean_dh /= d;
      mean_dh_h /= d;
      for (int i = 0; i < d; ++i)
        dx(n, i) = static_cast<T>(inv_std[n] * (dh[i] - mean_dh - xhat(n, i) * mean_dh_h));
    }
    for (int i = 0; i < d; ++i) {
      gamma.grad[i] += static_cast<T>(gg[i]);
      beta.grad[i] += static_cast<T>(gb[i]);
    }
    return dx;
  }
};

// GELU, tanh approximation.
template <typename T>
struct Gelu {
  Mat<T> x;

  static T value(T v) {
    const T c = static_cast<T>(0.7978845608028654);
    return T(0.5) * v * (T(1) + std::tanh(c * (v + T(0.044715) * v * v * v)));
  }
  static T derivative(T v) {
    const T c = static_cast<T>(0.7978845608028654);
    const T t = std::tanh(c * (v + T(0.044715) * v * v * v));
    return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3 * 0.044715) * v * v);
  }
  Mat<T> forward(const Mat<T>& in) {
    x = in;
    Mat<T> y = in;
    for (auto& v : y.d) v = value(v);
    return y;
  }
  Mat<T> backward(Mat<T> dy) const {
    for (std::size_t i = 0; i < dy.d.size(); ++i) dy.d[i] *= derivative(x.d[i]);
    return dy;
  }
};

template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;
  Gelu<T> act;

  Mlp() = default;
  Mlp(const std::string& name, int dim, int hidden)
      : fc1(name + ".fc1", dim, hidden), fc2(name + ".fc2", hidden, dim) {}

  template <typename F>
  void visit(F&& f) {
    fc1.visit(f);
    fc2.visit(f);
  }
  void init(std::mt19937_64& rng) {
    fc1.init(rng);
    fc2.init(rng);
  }
  Mat<T> forward(const Mat<T>& x) { return fc2.forward(act.forward(fc1.forward(x))); }
  Mat<T> backward(const Mat<T>& dy) { return fc1.backward(act.backward(fc2.backward(dy))); }
};

// Multi-head self-attention over all rows of the input.
template <typename T>
struct Attention {
  int heads = 1;
  Linear<T> qkv, proj;
  Mat<T> q, k, v;                  // n x dim, head h owns columns [h*dh, (h+1)*dh)
  std::vector<Mat<T>> probs;       // per head, n x n
  std::uint64_t tokens_seen = 0;   // rows attended over, summed across calls
  std::uint64_t pairs_scored = 0;  // query-key products, summed across calls

  Attention() = default;
  Attention(const std::string& name, int dim, int h)
      : heads(h), qkv(name + ".qkv", dim, 3 * dim), proj(name + ".proj", dim, dim) {
    if (h < 1 || dim % h) throw InvalidArgument("attention width must be divisible by heads");
  }

  template <typename F>
  void visit(F&& f) {
    qkv.visit(f);
    proj.visit(f);
  }
  void init(std::mt19937_64& rng) {
    qkv.init(rng);
    proj.init(rng);
  }

  Mat<T> forward(const Mat<T>& x) {
    const int n = x.rows;
    const int dim = proj.in();
    const int dh = dim / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    tokens_seen += n;
    pairs_scored += static_cast<std::uint64_t>(n) * n * heads;
    const Mat<T> all = qkv.forward(x);
    q = Mat<T>(n, dim);
    k = Mat<T>(n, dim);
    v = Mat<T>(n, dim);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < dim; ++c) {
        q(r, c) = all(r, c);
        k(r, c) = all(r, dim + c);
        v(r, c) = all(r, 2 * dim + c);
      }
    probs.assign(heads, Mat<T>(n, n));
    Mat<T> o(n, dim);
    std::vector<double> sc(n), acc(dh);
    for (int h = 0; h < heads; ++h) {
      const int off = h * dh;
      Mat<T>& a = probs[h];
      for (int i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) {
          double s = 0;
          for (int c = 0; c < dh; ++c) s += static_cast<double>(q(i, off + c)) * k(j, off + c);
          sc[j] = s * scale;
          mx = std::max(mx, sc[j]);
        }
        double z = 0;
        for (int j = 0; j < n; ++j) z += (sc[j] = std::exp(sc[j] - mx));
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int j = 0; j < n; ++j) {
          const double p = sc[j] / z;
          a(i, j) = static_cast<T>(p);
          for (int c = 0; c < dh; ++c) acc[c] += p * v(j, off + c);
        }
        for (int c = 0; c < dh; ++c) o(i, off + c) = static_cast<T>(acc[c]);
      }
    }
    return proj.forward(o);
  }

  Mat<T> backward(const Mat<T>& dy) {
    const Mat<T> dout = proj.backward(dy);
    const int n = dout.rows;
    const int dim = dout.cols;
    const int dh = dim / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Mat<double> dall(n, 3 * dim);
    std::vector<double> da(n);
    for (int h = 0; h < heads; ++h) {
      const int off = h * dh;
      const Mat<T>& a = probs[h];
      for (int i = 0; i < n; ++i) {
        double dot = 0;
        for (int j = 0; j < n; ++j) {
          double s = 0;
          for (int c = 0; c < dh; ++c) s += static_cast<double>(dout(i, off + c)) * v(j, off + c);
          da[j] = s;
          dot += s * a(i, j);
          for (int c = 0; c < dh; ++c) dall(j, 2 * dim + off + c) += static_cast<double>(a(i, j)) * dout(i, off + c);
        }
        for (int j = 0; j < n; ++j) {
          const double ds = a(i, j) * (da[j] - dot) * scale;
          for (int c = 0; c < dh; ++c) {
            dall(i, off + c) += ds * k(j, off + c);
            dall(j, dim + off + c) += ds * q(i, off + c);
          }
        }
      }
    }
    Mat<T> dqkv(n, 3 * dim);
    for (std::size_t i = 0; i < dall.d.size(); ++i) dqkv.d[i] = static_cast<T>(dall.d[i]);
    return qkv.backward(dqkv);
  }
};

// Pre-norm transformer block.
template <typename T>
struct Block {
  LayerNorm<T> norm1, norm2;
  Attention<T> attn;
  Mlp<T> mlp;

  Block() = default;
  Block(const std::string& name, int dim, int heads, int mlp_ratio)
      : norm1(name + ".norm1", dim),
        norm2(name + ".norm2", dim),
        attn(name + ".attn", dim, heads),
        mlp(name + ".mlp", dim, dim * mlp_ratio) {}

  template <typename F>
  void visit(F&& f) {
    norm1.visit(f);
    attn.visit(f);
    norm2.visit(f);
    mlp.visit(f);
  }
  void init(std::mt19937_64& rng) {
    attn.init(rng);
    mlp.init(rng);
  }
  Mat<T> forward(const Mat<T>& x) {
    Mat<T> h = x + attn.forward(norm1.forward(x));
    return h + mlp.forward(norm2.forward(h));
  }
  Mat<T> backward(const Mat<T>& dy) {
    Mat<T> dh = dy + norm2.backward(mlp.backward(dy));
    return dh + norm1.backward(attn.backward(dh));
  }
};

}  // namespace m3v::model
