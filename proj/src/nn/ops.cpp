#include "spmeid/nn/ops.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace spmeid::nn {

namespace {

template <class T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(fmt::format("{}: shapes differ, expected {} got {}", op, a.shape_str(), b.shape_str()));
  }
}

template <class T>
Node<T>& parent(Node<T>& n, std::size_t i) {
  return *n.parents[i];
}

template <class T>
bool wants(Node<T>& n, std::size_t i) {
  return n.parents[i]->requires_grad;
}

}  // namespace

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError(fmt::format("matmul: inner dimensions differ, {} x {}", a.shape_str(), b.shape_str()));
  }
  Matrix<T> out = a.value() * b.value();
  return BasicTensor<T>::make_result(std::move(out), {a, b}, [](Node<T>& n) {
    auto& pa = parent(n, 0);
    auto& pb = parent(n, 1);
    if (pa.requires_grad) pa.accumulate(n.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * n.grad);
  });
}

template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  if (x.cols() != w.rows()) {
    throw ShapeError(fmt::format("linear: input has {} columns, weight expects {} (weight {})", x.cols(), w.rows(),
                                 w.shape_str()));
  }
  Matrix<T> out = x.value() * w.value();
  if (!b.defined()) {
    return BasicTensor<T>::make_result(std::move(out), {x, w}, [](Node<T>& n) {
      auto& px = parent(n, 0);
      auto& pw = parent(n, 1);
      if (px.requires_grad) px.accumulate(n.grad * pw.value.transpose());
      if (pw.requires_grad) pw.accumulate(px.value.transpose() * n.grad);
    });
  }
  if (b.rows() != 1 || b.cols() != w.cols()) {
    throw ShapeError(fmt::format("linear: bias expected [1, {}], got {}", w.cols(), b.shape_str()));
  }
  out.rowwise() += b.value().row(0);
  return BasicTensor<T>::make_result(std::move(out), {x, w, b}, [](Node<T>& n) {
    auto& px = parent(n, 0);
    auto& pw = parent(n, 1);
    auto& pb = parent(n, 2);
    if (px.requires_grad) px.accumulate(n.grad * pw.value.transpose());
    if (pw.requires_grad) pw.accumulate(px.value.transpose() * n.grad);
    if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
  });
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("add", a, b);
  return BasicTensor<T>::make_result(a.value() + b.value(), {a, b}, [](Node<T>& n) {
    if (wants(n, 0)) parent(n, 0).accumulate(n.grad);
    if (wants(n, 1)) parent(n, 1).accumulate(n.grad);
  });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("sub", a, b);
  return BasicTensor<T>::make_result(a.value() - b.value(), {a, b}, [](Node<T>& n) {
    if (wants(n, 0)) parent(n, 0).accumulate(n.grad);
    if (wants(n, 1)) parent(n, 1).accumulate(-n.grad);
  });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mul", a, b);
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return BasicTensor<T>::make_result(std::move(out), {a, b}, [](Node<T>& n) {
    auto& pa = parent(n, 0);
    auto& pb = parent(n, 1);
    if (pa.requires_grad) pa.accumulate(n.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(n.grad.cwiseProduct(pa.value));
  });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  return BasicTensor<T>::make_result(a.value() * s, {a}, [s](Node<T>& n) { parent(n, 0).accumulate(n.grad * s); });
}

template <class T>
BasicTensor<T> add_rowvec(const BasicTensor<T>& a, const BasicTensor<T>& v) {
  if (v.rows() != 1 || v.cols() != a.cols()) {
    throw ShapeError(fmt::format("add_rowvec: expected [1, {}], got {}", a.cols(), v.shape_str()));
  }
  Matrix<T> out = a.value();
  out.rowwise() += v.value().row(0);
  return BasicTensor<T>::make_result(std::move(out), {a, v}, [](Node<T>& n) {
    if (wants(n, 0)) parent(n, 0).accumulate(n.grad);
    if (wants(n, 1)) parent(n, 1).accumulate(n.grad.colwise().sum());
  });
}

template <class T>
BasicTensor<T> broadcast_rows(const BasicTensor<T>& v, Eigen::Index rows) {
  if (v.rows() != 1) throw ShapeError(fmt::format("broadcast_rows: expected a row vector, got {}", v.shape_str()));
  Matrix<T> out = v.value().replicate(rows, 1);
  return BasicTensor<T>::make_result(std::move(out), {v}, [](Node<T>& n) {
    parent(n, 0).accumulate(n.grad.colwise().sum());
  });
}

template <class T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError(fmt::format("concat_cols: row counts differ, expected {} got {}", rows, p.rows()));
    }
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    offsets.push_back(c);
    c += p.cols();
  }
  return BasicTensor<T>::make_result(std::move(out), parts, [offsets](Node<T>& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      auto& p = parent(n, i);
      if (p.requires_grad) p.accumulate(n.grad.middleCols(offsets[i], p.value.cols()));
    }
  });
}

template <class T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError(fmt::format("slice_cols: range [{}, {}) outside {}", start, start + count, a.shape_str()));
  }
  Matrix<T> out = a.value().middleCols(start, count);
  return BasicTensor<T>::make_result(std::move(out), {a}, [start, count](Node<T>& n) {
    auto& p = parent(n, 0);
    Matrix<T> g = Matrix<T>::Zero(p.value.rows(), p.value.cols());
    g.middleCols(start, count) = n.grad;
    p.accumulate(g);
  });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.rows() * a.cols()) {
    throw ShapeError(fmt::format("reshape: cannot view {} as [{}, {}]", a.shape_str(), rows, cols));
  }
  Matrix<T> out = Eigen::Map<const Matrix<T>>(a.value().data(), rows, cols);
  return BasicTensor<T>::make_result(std::move(out), {a}, [](Node<T>& n) {
    auto& p = parent(n, 0);
    p.accumulate(Eigen::Map<const Matrix<T>>(n.grad.data(), p.value.rows(), p.value.cols()));
  });
}

template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
  const T c = static_cast<T>(std::sqrt(2.0 / 3.14159265358979323846));
  const T k = static_cast<T>(0.044715);
  const auto& x = a.value();
  Matrix<T> th = (c * (x.array() + k * x.array().cube())).tanh().matrix();
  Matrix<T> out = (T(0.5) * x.array() * (T(1) + th.array())).matrix();
  return BasicTensor<T>::make_result(std::move(out), {a}, [th = std::move(th), c, k](Node<T>& n) {
    const auto& x = parent(n, 0).value.array();
    const auto dt = (T(1) - th.array().square()) * c * (T(1) + T(3) * k * x.square());
    parent(n, 0).accumulate((n.grad.array() * (T(0.5) * (T(1) + th.array()) + T(0.5) * x * dt)).matrix());
  });
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
  Matrix<T> out = (T(1) / (T(1) + (-a.value().array()).exp())).matrix();
  return BasicTensor<T>::make_result(out, {a}, [out](Node<T>& n) {
    parent(n, 0).accumulate((n.grad.array() * out.array() * (T(1) - out.array())).matrix());
  });
}

template <class T>
BasicTensor<T> tanh(const BasicTensor<T>& a) {
  Matrix<T> out = a.value().array().tanh().matrix();
  return BasicTensor<T>::make_result(out, {a}, [out](Node<T>& n) {
    parent(n, 0).accumulate((n.grad.array() * (T(1) - out.array().square())).matrix());
  });
}

template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta, T eps) {
  const Eigen::Index d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw ShapeError(fmt::format("layer_norm: affine parameters must be [1, {}], got {} and {}", d,
                                 gamma.shape_str(), beta.shape_str()));
  }
  const Eigen::Index n = x.rows();
  Matrix<T> xhat(n, d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = x.value().row(i);
    const T mu = row.mean();
    const T var = (row.array() - mu).square().mean();
    inv_std[i] = T(1) / std::sqrt(var + eps);
    xhat.row(i) = (row.array() - mu) * inv_std[i];
  }
  Matrix<T> out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return BasicTensor<T>::make_result(
      std::move(out), {x, gamma, beta}, [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& n) {
        auto& px = parent(n, 0);
        auto& pg = parent(n, 1);
        auto& pb = parent(n, 2);
        if (px.requires_grad) {
          Matrix<T> dxhat = n.grad.array().rowwise() * pg.value.row(0).array();
          const auto m1 = dxhat.rowwise().mean();
          const auto m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
          Matrix<T> dx = dxhat;
          dx.colwise() -= m1;
          dx -= (xhat.array().colwise() * m2.array()).matrix();
          dx = (dx.array().colwise() * inv_std.array()).matrix();
          px.accumulate(dx);
        }
        if (pg.requires_grad) pg.accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
        if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
      });
}

template <class T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v, int n_heads,
                         bool causal) {
  require_same_shape("attention(q, k)", q, k);
  require_same_shape("attention(q, v)", q, v);
  const Eigen::Index n = q.rows();
  const Eigen::Index d = q.cols();
  if (n_heads < 1 || d % n_heads != 0) {
    throw ShapeError(fmt::format("attention: width {} not divisible by {} heads", d, n_heads));
  }
  const Eigen::Index dh = d / n_heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));

  Matrix<T> out(n, d);
  std::vector<Matrix<T>> probs(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    const Matrix<T> qh = q.value().middleCols(h * dh, dh);
    const Matrix<T> kh = k.value().middleCols(h * dh, dh);
    const Matrix<T> vh = v.value().middleCols(h * dh, dh);
    Matrix<T> p = (qh * kh.transpose()) * sc;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index lim = causal ? i + 1 : n;
      auto row = p.row(i).head(lim);
      const T m = row.maxCoeff();
      row = (row.array() - m).exp().matrix();
      row /= row.sum();
      if (lim < n) p.row(i).tail(n - lim).setZero();
    }
    out.middleCols(h * dh, dh) = p * vh;
    probs[h] = std::move(p);
  }
  return BasicTensor<T>::make_result(
      std::move(out), {q, k, v}, [probs = std::move(probs), n_heads, dh, sc](Node<T>& nd) {
        auto& pq = parent(nd, 0);
        auto& pk = parent(nd, 1);
        auto& pv = parent(nd, 2);
        const Eigen::Index rows = pq.value.rows();
        const Eigen::Index d = pq.value.cols();
        Matrix<T> dq = Matrix<T>::Zero(rows, d), dk = Matrix<T>::Zero(rows, d), dv = Matrix<T>::Zero(rows, d);
        for (int h = 0; h < n_heads; ++h) {
          const Matrix<T>& p = probs[h];
          const Matrix<T> go = nd.grad.middleCols(h * dh, dh);
          const Matrix<T> qh = pq.value.middleCols(h * dh, dh);
          const Matrix<T> kh = pk.value.middleCols(h * dh, dh);
          const Matrix<T> vh = pv.value.middleCols(h * dh, dh);
          if (pv.requires_grad) dv.middleCols(h * dh, dh) = p.transpose() * go;
          Matrix<T> ds = go * vh.transpose();
          const Eigen::Matrix<T, Eigen::Dynamic, 1> r = ds.cwiseProduct(p).rowwise().sum();
          ds.colwise() -= r;
          ds = ds.cwiseProduct(p);
          if (pq.requires_grad) dq.middleCols(h * dh, dh) = (ds * kh) * sc;
          if (pk.requires_grad) dk.middleCols(h * dh, dh) = (ds.transpose() * qh) * sc;
        }
        if (pq.requires_grad) pq.accumulate(dq);
        if (pk.requires_grad) pk.accumulate(dk);
        if (pv.requires_grad) pv.accumulate(dv);
      });
}

template <class T>
BasicTensor<T> mean_rows(const BasicTensor<T>& a) {
  Matrix<T> out = a.value().colwise().mean();
  return BasicTensor<T>::make_result(std::move(out), {a}, [](Node<T>& n) {
    auto& p = parent(n, 0);
    const T inv = T(1) / static_cast<T>(p.value.rows());
    p.accumulate((n.grad * inv).replicate(p.value.rows(), 1));
  });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return BasicTensor<T>::make_result(std::move(out), {a}, [](Node<T>& n) {
    auto& p = parent(n, 0);
    p.accumulate(Matrix<T>::Constant(p.value.rows(), p.value.cols(), n.grad(0, 0)));
  });
}

template <class T>
BasicTensor<T> sum_squares(const BasicTensor<T>& a) {
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return BasicTensor<T>::make_result(std::move(out), {a}, [](Node<T>& n) {
    auto& p = parent(n, 0);
    p.accumulate(p.value * (T(2) * n.grad(0, 0)));
  });
}

template <class T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mse", a, b);
  const T inv = T(1) / static_cast<T>(a.rows() * a.cols());
  Matrix<T> diff = a.value() - b.value();
  Matrix<T> out(1, 1);
  out(0, 0) = diff.squaredNorm() * inv;
  return BasicTensor<T>::make_result(std::move(out), {a, b}, [diff = std::move(diff), inv](Node<T>& n) {
    const T g = T(2) * inv * n.grad(0, 0);
    if (wants(n, 0)) parent(n, 0).accumulate(diff * g);
    if (wants(n, 1)) parent(n, 1).accumulate(diff * (-g));
  });
}

#define SPMEID_NN_INSTANTIATE(T)                                                                              \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                               \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                    \
  template BasicTensor<T> add_rowvec(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> broadcast_rows(const BasicTensor<T>&, Eigen::Index);                                \
  template BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>&);                                    \
  template BasicTensor<T> slice_cols(const BasicTensor<T>&, Eigen::Index, Eigen::Index);                      \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Eigen::Index, Eigen::Index);                         \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                                        \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                     \
  template BasicTensor<T> tanh(const BasicTensor<T>&);                                                        \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, T); \
  template BasicTensor<T> attention(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, int, \
                                    bool);                                                                    \
  template BasicTensor<T> mean_rows(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> sum_squares(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> mse(const BasicTensor<T>&, const BasicTensor<T>&);

SPMEID_NN_INSTANTIATE(float)
SPMEID_NN_INSTANTIATE(double)

#undef SPMEID_NN_INSTANTIATE

}  // namespace spmeid::nn
