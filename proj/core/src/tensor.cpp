#include "dslab/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

namespace dslab {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension error";
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::Contract: return "contract error";
    case ErrorKind::Index: return "index error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Generation: return "generation error";
    case ErrorKind::Resource: return "resource error";
    case ErrorKind::Training: return "training error";
    case ErrorKind::Io: return "io error";
  }
  return "error";
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> data,
                                      bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  require(shape_numel(node->shape) == node->value.size(), ErrorKind::Contract,
          "tensor data length does not match shape " + shape_str(node->shape));
  return node;
}

struct TensorAccess {
  static Tensor wrap(std::shared_ptr<TensorNode> node);
};

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), 0.0);
  return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), v);
  return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

double Tensor::item() const {
  require(size() == 1, ErrorKind::Contract,
          "item(): tensor has shape " + shape_str(shape()) + ", want scalar");
  return node_->value[0];
}

Tensor Tensor::clone() const {
  return Tensor::from(node_->shape, node_->value, node_->requires_grad);
}

Tape& Tape::instance() {
  thread_local Tape tape;
  return tape;
}

namespace {

// every op funnels through here: outputs require grad iff any input does and
// the tape is recording; the caller then records its backward closure
Tensor make_output(Shape shape, std::vector<double> data, bool any_input_grad) {
  Tensor out = Tensor::from(std::move(shape), std::move(data), false);
  if (any_input_grad && Tape::instance().enabled()) out.set_requires_grad(true);
  return out;
}

void check_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    fail(ErrorKind::Dimension, std::string(op) + ": expected rank " +
                                   std::to_string(rank) + " tensor, got " +
                                   shape_str(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const std::size_t m = a.extent(0), k = a.extent(1);
  const std::size_t k2 = b.extent(0), n = b.extent(1);
  if (k != k2) {
    fail(ErrorKind::Dimension, "matmul: inner dimensions disagree, " +
                                   shape_str(a.shape()) + " x " +
                                   shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* Ci = out.data() + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = A[i * k + kk];
      const double* Bk = B + kk * n;
      for (std::size_t j = 0; j < n; ++j) Ci[j] += aik * Bk[j];
    }
  }
  auto an = a.node(), bn = b.node();
  Tensor result = make_output({m, n}, std::move(out),
                              a.requires_grad() || b.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([an, bn, on, m, k, n] {
      if (on->grad.empty()) return;
      const double* G = on->grad.data();
      if (an->requires_grad) {
        double* GA = an->grad_buffer().data();
        const double* B = bn->value.data();
        // dA = G * B^T
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            double s = 0.0;
            const double* Gi = G + i * n;
            const double* Bk = B + kk * n;
            for (std::size_t j = 0; j < n; ++j) s += Gi[j] * Bk[j];
            GA[i * k + kk] += s;
          }
        }
      }
      if (bn->requires_grad) {
        double* GB = bn->grad_buffer().data();
        const double* A = an->value.data();
        // dB = A^T * G
        for (std::size_t i = 0; i < m; ++i) {
          const double* Gi = G + i * n;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = A[i * k + kk];
            double* GBk = GB + kk * n;
            for (std::size_t j = 0; j < n; ++j) GBk[j] += aik * Gi[j];
          }
        }
      }
    });
  }
  return result;
}

Tensor transpose(const Tensor& x) {
  check_rank(x, 2, "transpose");
  const std::size_t m = x.extent(0), n = x.extent(1);
  std::vector<double> out(m * n);
  const double* X = x.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = X[i * n + j];
  auto xn = x.node();
  Tensor result = make_output({n, m}, std::move(out), x.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([xn, on, m, n] {
      if (on->grad.empty()) return;
      double* GX = xn->grad_buffer().data();
      const double* G = on->grad.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) GX[i * n + j] += G[j * m + i];
    });
  }
  return result;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::Dimension, std::string(op) + ": shapes disagree, " +
                                   shape_str(a.shape()) + " vs " +
                                   shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] + b.data()[i];
  auto an = a.node(), bn = b.node();
  Tensor result = make_output(a.shape(), std::move(out),
                              a.requires_grad() || b.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([an, bn, on] {
      if (on->grad.empty()) return;
      const std::vector<double>& g = on->grad;
      if (an->requires_grad) {
        double* ga = an->grad_buffer().data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        double* gb = bn->grad_buffer().data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] - b.data()[i];
  auto an = a.node(), bn = b.node();
  Tensor result = make_output(a.shape(), std::move(out),
                              a.requires_grad() || b.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([an, bn, on] {
      if (on->grad.empty()) return;
      const std::vector<double>& g = on->grad;
      if (an->requires_grad) {
        double* ga = an->grad_buffer().data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        double* gb = bn->grad_buffer().data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] * b.data()[i];
  auto an = a.node(), bn = b.node();
  Tensor result = make_output(a.shape(), std::move(out),
                              a.requires_grad() || b.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([an, bn, on] {
      if (on->grad.empty()) return;
      const std::vector<double>& g = on->grad;
      if (an->requires_grad) {
        double* ga = an->grad_buffer().data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        double* gb = bn->grad_buffer().data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
      }
    });
  }
  return result;
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
  auto xn = x.node();
  Tensor result = make_output(x.shape(), std::move(out), x.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([xn, on, c] {
      if (on->grad.empty()) return;
      double* gx = xn->grad_buffer().data();
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        gx[i] += on->grad[i] * c;
    });
  }
  return result;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  check_rank(x, 2, "add_rowvec");
  check_rank(v, 1, "add_rowvec");
  const std::size_t n = x.extent(0), d = x.extent(1);
  if (v.extent(0) != d) {
    fail(ErrorKind::Dimension, "add_rowvec: " + shape_str(x.shape()) + " vs " +
                                   shape_str(v.shape()));
  }
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out[i * d + j] = x.data()[i * d + j] + v.data()[j];
  auto xn = x.node(), vn = v.node();
  Tensor result = make_output({n, d}, std::move(out),
                              x.requires_grad() || v.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([xn, vn, on, n, d] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      if (xn->requires_grad) {
        double* gx = xn->grad_buffer().data();
        for (std::size_t i = 0; i < n * d; ++i) gx[i] += g[i];
      }
      if (vn->requires_grad) {
        double* gv = vn->grad_buffer().data();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gv[j] += g[i * d + j];
      }
    });
  }
  return result;
}

Tensor mul_exp_scalar(const Tensor& x, const Tensor& s) {
  require(s.size() == 1, ErrorKind::Contract,
          "mul_exp_scalar: scale must be a [1] tensor");
  const double e = std::exp(s.data()[0]);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * e;
  auto xn = x.node(), sn = s.node();
  Tensor result = make_output(x.shape(), std::move(out),
                              x.requires_grad() || s.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([xn, sn, on, e] {
      if (on->grad.empty()) return;
      const std::vector<double>& g = on->grad;
      if (xn->requires_grad) {
        double* gx = xn->grad_buffer().data();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * e;
      }
      if (sn->requires_grad) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i)
          acc += g[i] * xn->value[i] * e;
        sn->grad_buffer()[0] += acc;
      }
    });
  }
  return result;
}

Tensor slice_rows(const Tensor& x, std::size_t row0, std::size_t rows) {
  check_rank(x, 2, "slice_rows");
  const std::size_t n = x.extent(0), d = x.extent(1);
  if (row0 + rows > n) {
    fail(ErrorKind::Index, "slice_rows: [" + std::to_string(row0) + "," +
                               std::to_string(row0 + rows) + ") out of " +
                               std::to_string(n) + " rows");
  }
  std::vector<double> out(x.data().begin() + row0 * d,
                          x.data().begin() + (row0 + rows) * d);
  auto xn = x.node();
  Tensor result = make_output({rows, d}, std::move(out), x.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([xn, on, row0, rows, d] {
      if (on->grad.empty()) return;
      double* gx = xn->grad_buffer().data();
      for (std::size_t i = 0; i < rows * d; ++i) gx[row0 * d + i] += on->grad[i];
    });
  }
  return result;
}

Tensor slice_cols(const Tensor& x, std::size_t col0, std::size_t cols) {
  check_rank(x, 2, "slice_cols");
  const std::size_t n = x.extent(0), d = x.extent(1);
  if (col0 + cols > d) {
    fail(ErrorKind::Index, "slice_cols: [" + std::to_string(col0) + "," +
                               std::to_string(col0 + cols) + ") out of " +
                               std::to_string(d) + " cols");
  }
  std::vector<double> out(n * cols);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out[i * cols + j] = x.data()[i * d + col0 + j];
  auto xn = x.node();
  Tensor result = make_output({n, cols}, std::move(out), x.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([xn, on, col0, cols, n, d] {
      if (on->grad.empty()) return;
      double* gx = xn->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cols; ++j)
          gx[i * d + col0 + j] += on->grad[i * cols + j];
    });
  }
  return result;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), ErrorKind::Contract, "concat_rows: no parts");
  const std::size_t d = parts[0].extent(1);
  std::size_t total = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    check_rank(p, 2, "concat_rows");
    if (p.extent(1) != d) {
      fail(ErrorKind::Dimension,
           "concat_rows: column counts disagree, " + shape_str(p.shape()));
    }
    total += p.extent(0);
    any_grad = any_grad || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(total * d);
  for (const Tensor& p : parts)
    out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node());
  Tensor result = make_output({total, d}, std::move(out), any_grad);
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([nodes, on, d] {
      if (on->grad.empty()) return;
      std::size_t off = 0;
      for (const auto& p : nodes) {
        const std::size_t n = p->value.size();
        if (p->requires_grad) {
          double* gp = p->grad_buffer().data();
          for (std::size_t i = 0; i < n; ++i) gp[i] += on->grad[off + i];
        }
        off += n;
      }
    });
  }
  return result;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), ErrorKind::Contract, "concat_cols: no parts");
  const std::size_t n = parts[0].extent(0);
  std::size_t total = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    check_rank(p, 2, "concat_cols");
    if (p.extent(0) != n) {
      fail(ErrorKind::Dimension, "concat_cols: row counts disagree, " +
                                     shape_str(p.shape()));
    }
    total += p.extent(1);
    any_grad = any_grad || p.requires_grad();
  }
  std::vector<double> out(n * total);
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    const std::size_t d = p.extent(1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        out[i * total + col + j] = p.data()[i * d + j];
    col += d;
  }
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node());
  Tensor result = make_output({n, total}, std::move(out), any_grad);
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([nodes, on, n, total] {
      if (on->grad.empty()) return;
      std::size_t col = 0;
      for (const auto& p : nodes) {
        const std::size_t d = p->shape[1];
        if (p->requires_grad) {
          double* gp = p->grad_buffer().data();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
              gp[i * d + j] += on->grad[i * total + col + j];
        }
        col += d;
      }
    });
  }
  return result;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  check_rank(x, 2, "gather_rows");
  const std::size_t n = x.extent(0), d = x.extent(1);
  for (std::size_t r : rows) {
    if (r >= n) {
      fail(ErrorKind::Index, "gather_rows: row " + std::to_string(r) +
                                 " out of " + std::to_string(n));
    }
  }
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::memcpy(out.data() + i * d, x.data().data() + rows[i] * d,
                d * sizeof(double));
  auto xn = x.node();
  Tensor result = make_output({rows.size(), d}, std::move(out),
                              x.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([xn, on, rows, d] {
      if (on->grad.empty()) return;
      double* gx = xn->grad_buffer().data();
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          gx[rows[i] * d + j] += on->grad[i * d + j];
    });
  }
  return result;
}

Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids) {
  check_rank(table, 2, "embedding");
  const std::size_t v = table.extent(0), e = table.extent(1);
  for (std::size_t id : ids) {
    if (id >= v) {
      fail(ErrorKind::Index, "embedding: id " + std::to_string(id) +
                                 " out of vocabulary " + std::to_string(v));
    }
  }
  std::vector<double> out(ids.size() * e);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::memcpy(out.data() + i * e, table.data().data() + ids[i] * e,
                e * sizeof(double));
  auto tn = table.node();
  Tensor result = make_output({ids.size(), e}, std::move(out),
                              table.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([tn, on, ids, e] {
      if (on->grad.empty()) return;
      double* gt = tn->grad_buffer().data();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < e; ++j)
          gt[ids[i] * e + j] += on->grad[i * e + j];
    });
  }
  return result;
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  auto xn = x.node();
  Tensor result = make_output(x.shape(), std::move(out), x.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([xn, on] {
      if (on->grad.empty()) return;
      double* gx = xn->grad_buffer().data();
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        const double v = xn->value[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx[i] += on->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  check_rank(x, 2, "layer_norm");
  check_rank(gain, 1, "layer_norm");
  check_rank(bias, 1, "layer_norm");
  const std::size_t n = x.extent(0), d = x.extent(1);
  if (gain.extent(0) != d || bias.extent(0) != d) {
    fail(ErrorKind::Dimension, "layer_norm: feature dims disagree, x " +
                                   shape_str(x.shape()) + " gain " +
                                   shape_str(gain.shape()));
  }
  constexpr double kEps = 1e-5;
  std::vector<double> out(n * d);
  std::vector<double> xhat(n * d);
  std::vector<double> inv_sigma(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data().data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xi[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + kEps);
    inv_sigma[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xi[j] - mean) * is;
      xhat[i * d + j] = h;
      out[i * d + j] = h * gain.data()[j] + bias.data()[j];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  const bool any =
      x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  Tensor result = make_output({n, d}, std::move(out), any);
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record(
        [xn, gn, bn, on, n, d, xhat = std::move(xhat),
         inv_sigma = std::move(inv_sigma)] {
          if (on->grad.empty()) return;
          const double* g = on->grad.data();
          if (gn->requires_grad) {
            double* gg = gn->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < d; ++j)
                gg[j] += g[i * d + j] * xhat[i * d + j];
          }
          if (bn->requires_grad) {
            double* gb = bn->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
          }
          if (xn->requires_grad) {
            double* gx = xn->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) {
              // dy/dxhat = gain; pull the two row means out first
              double mean_t = 0.0, mean_th = 0.0;
              for (std::size_t j = 0; j < d; ++j) {
                const double t = g[i * d + j] * gn->value[j];
                mean_t += t;
                mean_th += t * xhat[i * d + j];
              }
              mean_t /= static_cast<double>(d);
              mean_th /= static_cast<double>(d);
              for (std::size_t j = 0; j < d; ++j) {
                const double t = g[i * d + j] * gn->value[j];
                gx[i * d + j] += (t - mean_t - xhat[i * d + j] * mean_th) *
                                 inv_sigma[i];
              }
            }
          }
        });
  }
  return result;
}

Tensor softmax_rows(const Tensor& x) {
  check_rank(x, 2, "softmax_rows");
  const std::size_t n = x.extent(0), k = x.extent(1);
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data().data() + i * k;
    double mx = xi[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = std::exp(xi[j] - mx);
      out[i * k + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= z;
  }
  auto xn = x.node();
  Tensor result = make_output({n, k}, std::move(out), x.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([xn, on, n, k] {
      if (on->grad.empty()) return;
      double* gx = xn->grad_buffer().data();
      const double* g = on->grad.data();
      const double* p = on->value.data();
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += g[i * k + j] * p[i * k + j];
        for (std::size_t j = 0; j < k; ++j)
          gx[i * k + j] += p[i * k + j] * (g[i * k + j] - dot);
      }
    });
  }
  return result;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto xn = x.node();
  Tensor result = make_output({1}, {s}, x.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([xn, on] {
      if (on->grad.empty()) return;
      const double g = on->grad[0];
      double* gx = xn->grad_buffer().data();
      for (std::size_t i = 0; i < xn->value.size(); ++i) gx[i] += g;
    });
  }
  return result;
}

Tensor l2_normalize(const Tensor& x) {
  double sq = 0.0;
  for (double v : x.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  require(norm > 0.0, ErrorKind::Contract,
          "l2_normalize: zero vector cannot be normalized");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] / norm;
  auto xn = x.node();
  Tensor result = make_output(x.shape(), std::move(out), x.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([xn, on, norm] {
      if (on->grad.empty()) return;
      const std::vector<double>& g = on->grad;
      const std::vector<double>& y = on->value;
      double dot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
      double* gx = xn->grad_buffer().data();
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += (g[i] - y[i] * dot) / norm;
    });
  }
  return result;
}

Tensor patch_project(const Tensor& img, const Tensor& weight,
                     const Tensor& bias) {
  check_rank(img, 3, "patch_project");
  check_rank(weight, 4, "patch_project");
  check_rank(bias, 1, "patch_project");
  const std::size_t c = img.extent(0), h = img.extent(1), w = img.extent(2);
  const std::size_t d = weight.extent(0), wc = weight.extent(1);
  const std::size_t p = weight.extent(2);
  if (wc != c || weight.extent(3) != p) {
    fail(ErrorKind::Dimension, "patch_project: weight " +
                                   shape_str(weight.shape()) +
                                   " incompatible with image " +
                                   shape_str(img.shape()));
  }
  if (bias.extent(0) != d) {
    fail(ErrorKind::Dimension,
         "patch_project: bias " + shape_str(bias.shape()) + " vs D=" +
             std::to_string(d));
  }
  if (p == 0 || h % p != 0 || w % p != 0) {
    fail(ErrorKind::Config, "patch_project: image " + std::to_string(h) + "x" +
                                std::to_string(w) +
                                " not divisible by patch size " +
                                std::to_string(p));
  }
  const std::size_t ph = h / p, pw = w / p;
  const std::size_t tokens = ph * pw;
  std::vector<double> out(tokens * d);
  const double* I = img.data().data();
  const double* W = weight.data().data();
  for (std::size_t py = 0; py < ph; ++py) {
    for (std::size_t px = 0; px < pw; ++px) {
      const std::size_t row = py * pw + px;
      for (std::size_t dd = 0; dd < d; ++dd) {
        double acc = bias.data()[dd];
        for (std::size_t cc = 0; cc < c; ++cc) {
          for (std::size_t i = 0; i < p; ++i) {
            const double* irow = I + cc * h * w + (py * p + i) * w + px * p;
            const double* wrow = W + ((dd * c + cc) * p + i) * p;
            for (std::size_t j = 0; j < p; ++j) acc += irow[j] * wrow[j];
          }
        }
        out[row * d + dd] = acc;
      }
    }
  }
  auto in = img.node(), wn = weight.node(), bn = bias.node();
  const bool any =
      img.requires_grad() || weight.requires_grad() || bias.requires_grad();
  Tensor result = make_output({tokens, d}, std::move(out), any);
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([in, wn, bn, on, c, h, w, d, p, ph, pw] {
      if (on->grad.empty()) return;
      const double* G = on->grad.data();
      for (std::size_t py = 0; py < ph; ++py) {
        for (std::size_t px = 0; px < pw; ++px) {
          const std::size_t row = py * pw + px;
          for (std::size_t dd = 0; dd < d; ++dd) {
            const double g = G[row * d + dd];
            if (g == 0.0) continue;
            if (bn->requires_grad) bn->grad_buffer()[dd] += g;
            for (std::size_t cc = 0; cc < c; ++cc) {
              for (std::size_t i = 0; i < p; ++i) {
                const std::size_t ioff =
                    cc * h * w + (py * p + i) * w + px * p;
                const std::size_t woff = ((dd * c + cc) * p + i) * p;
                if (wn->requires_grad) {
                  double* gw = wn->grad_buffer().data();
                  for (std::size_t j = 0; j < p; ++j)
                    gw[woff + j] += g * in->value[ioff + j];
                }
                if (in->requires_grad) {
                  double* gi = in->grad_buffer().data();
                  for (std::size_t j = 0; j < p; ++j)
                    gi[ioff + j] += g * wn->value[woff + j];
                }
              }
            }
          }
        }
      }
    });
  }
  return result;
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<std::size_t>& targets) {
  check_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  if (targets.size() != n) {
    fail(ErrorKind::Dimension,
         "softmax_cross_entropy: " + std::to_string(targets.size()) +
             " targets for " + std::to_string(n) + " rows");
  }
  for (std::size_t t : targets) {
    if (t >= k) {
      fail(ErrorKind::Index, "softmax_cross_entropy: target " +
                                 std::to_string(t) + " out of [0," +
                                 std::to_string(k) + ")");
    }
  }
  std::vector<double> probs(n * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = logits.data().data() + i * k;
    double mx = xi[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = std::exp(xi[j] - mx);
      probs[i * k + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= z;
    loss -= std::log(probs[i * k + targets[i]]);
  }
  loss /= static_cast<double>(n);
  auto ln = logits.node();
  Tensor result = make_output({1}, {loss}, logits.requires_grad());
  if (result.requires_grad()) {
    auto on = result.node();
    Tape::instance().record([ln, on, n, k, targets, probs = std::move(probs)] {
      if (on->grad.empty()) return;
      const double g = on->grad[0] / static_cast<double>(n);
      double* gx = ln->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double ind = (j == targets[i]) ? 1.0 : 0.0;
          gx[i * k + j] += g * (probs[i * k + j] - ind);
        }
      }
    });
  }
  return result;
}

void backward(const Tensor& loss) {
  require(loss.defined() && loss.size() == 1, ErrorKind::Contract,
          "backward: loss must be a scalar tensor");
  loss.node()->grad_buffer()[0] = 1.0;
  // tape order is execution order, so reverse iteration is a valid
  // topological order of the recorded graph
  Tape::instance().replay_reverse_and_clear();
}

void sgd_step(std::vector<ParamGroup>& groups, double lr) {
  for (ParamGroup& group : groups) {
    if (!group.frozen) {
      for (Tensor& t : group.tensors) {
        if (t.grad().empty()) continue;
        double* v = t.data().data();
        const double* g = t.grad().data();
        for (std::size_t i = 0; i < t.size(); ++i) v[i] -= lr * g[i];
      }
    }
    for (Tensor& t : group.tensors) t.clear_grad();
  }
}

// --- checkpoint io -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ofstream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::uint64_t bits;
  if constexpr (sizeof(T) == 8 && std::is_floating_point_v<T>) {
    std::memcpy(&bits, &v, 8);
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
bool read_le(std::ifstream& in, T& v) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  if constexpr (sizeof(T) == 8 && std::is_floating_point_v<T>) {
    std::memcpy(&v, &bits, 8);
  } else {
    v = static_cast<T>(bits);
  }
  return true;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<ParamGroup>& groups) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Io,
          "cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kVersion);
  for (const ParamGroup& group : groups) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(group.name.size()));
    out.write(group.name.data(),
              static_cast<std::streamsize>(group.name.size()));
    out.put(group.frozen ? 1 : 0);
    write_le<std::uint32_t>(out,
                            static_cast<std::uint32_t>(group.tensors.size()));
    for (const Tensor& t : group.tensors) {
      write_le<std::uint64_t>(out, t.rank());
      for (std::size_t a = 0; a < t.rank(); ++a)
        write_le<std::uint64_t>(out, t.extent(a));
      for (double v : t.data()) write_le<double>(out, v);
    }
  }
  require(out.good(), ErrorKind::Io,
          "short write to checkpoint: " + path.string());
}

std::vector<ParamGroup> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io,
          "cannot open checkpoint: " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    fail(ErrorKind::Format,
         "not a checkpoint file (bad magic): " + path.string());
  }
  std::uint32_t version = 0;
  if (!read_le(in, version) || version != kVersion) {
    fail(ErrorKind::Format, "unsupported checkpoint version in " +
                                path.string());
  }
  std::vector<ParamGroup> groups;
  for (;;) {
    std::uint32_t name_len = 0;
    if (!read_le(in, name_len)) break;  // clean EOF between groups
    ParamGroup group;
    group.name.resize(name_len);
    if (!in.read(group.name.data(), name_len)) {
      fail(ErrorKind::Format, "truncated group name in " + path.string());
    }
    const int frozen = in.get();
    if (frozen == EOF) {
      fail(ErrorKind::Format, "truncated group header in " + path.string());
    }
    group.frozen = frozen != 0;
    std::uint32_t count = 0;
    if (!read_le(in, count)) {
      fail(ErrorKind::Format, "truncated tensor count in " + path.string());
    }
    for (std::uint32_t t = 0; t < count; ++t) {
      std::uint64_t rank = 0;
      if (!read_le(in, rank) || rank > 8) {
        fail(ErrorKind::Format, "bad tensor rank in " + path.string());
      }
      Shape shape(rank);
      std::size_t numel = 1;
      for (std::uint64_t a = 0; a < rank; ++a) {
        std::uint64_t e = 0;
        if (!read_le(in, e)) {
          fail(ErrorKind::Format, "truncated shape in " + path.string());
        }
        shape[a] = static_cast<std::size_t>(e);
        numel *= shape[a];
      }
      std::vector<double> data(numel);
      for (std::size_t i = 0; i < numel; ++i) {
        if (!read_le(in, data[i])) {
          fail(ErrorKind::Format, "truncated tensor data in " + path.string());
        }
      }
      group.tensors.push_back(Tensor::from(std::move(shape), std::move(data)));
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

}  // namespace dslab
