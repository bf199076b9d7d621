#include "bustr/nn/tape.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

namespace bustr::nn {

Parameter::Parameter(std::string name_in, Matrix value_in)
    : name(std::move(name_in)), value(std::move(value_in)), grad(Matrix::Zero(value.rows(), value.cols())) {}

void Parameter::zero_grad() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Matrix::Zero(value.rows(), value.cols());
  } else {
    grad.setZero();
  }
}

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var Tape::leaf(Parameter& param) {
  Node node;
  node.ref = &param.value;
  node.param = &param;
  node.needs_grad = grad_enabled_ && !param.frozen;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.value;
}

Var Tape::push(Matrix value, bool needs_grad, std::function<void(Tape&, int)> backward) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = grad_enabled_ && needs_grad;
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Matrix& v = value(id);
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

bool Tape::any_needs_grad(std::initializer_list<Var> vars) const {
  if (!grad_enabled_) return false;
  for (const Var& v : vars) {
    if (nodes_[v.id()].needs_grad) return true;
  }
  return false;
}

void Tape::backward(const Var& loss, double seed) {
  if (!grad_enabled_) throw std::logic_error("backward() on a tape recorded without gradients");
  if (loss.rows() != 1 || loss.cols() != 1) throw std::logic_error("backward() needs a 1x1 loss");
  if (!nodes_[loss.id()].needs_grad) return;
  grad(loss.id())(0, 0) += seed;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr && !n.param->frozen) {
      if (n.param->grad.size() == 0) n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  assert(&a.tape() == &b.tape());
  (void)b;
  return a.tape();
}

void check_shape(bool ok, const char* op) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch in ") + op);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  check_shape(a.cols() == b.rows(), "matmul");
  Matrix out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), t.any_needs_grad({a, b}), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(ia)) tp.grad(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.needs_grad(ib)) tp.grad(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var matmul_bt(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  check_shape(a.cols() == b.cols(), "matmul_bt");
  Matrix out = a.value() * b.value().transpose();
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), t.any_needs_grad({a, b}), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(ia)) tp.grad(ia).noalias() += g * tp.value(ib);
    if (tp.needs_grad(ib)) tp.grad(ib).noalias() += g.transpose() * tp.value(ia);
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Matrix out = a.value() + b.value();
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), t.any_needs_grad({a, b}), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(ia)) tp.grad(ia) += g;
    if (tp.needs_grad(ib)) tp.grad(ib) += g;
  });
}

Var add_row(const Var& a, const Var& row) {
  Tape& t = same_tape(a, row);
  check_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  Matrix out = a.value().rowwise() + row.value().row(0);
  const int ia = a.id(), ir = row.id();
  return t.push(std::move(out), t.any_needs_grad({a, row}), [ia, ir](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(ia)) tp.grad(ia) += g;
    if (tp.needs_grad(ir)) tp.grad(ir) += g.colwise().sum();
  });
}

Var add_const(const Var& a, const Matrix& c) {
  Tape& t = a.tape();
  check_shape(a.rows() == c.rows() && a.cols() == c.cols(), "add_const");
  Matrix out = a.value() + c;
  const int ia = a.id();
  return t.push(std::move(out), t.any_needs_grad({a}), [ia](Tape& tp, int self) {
    tp.grad(ia) += tp.grad(self);
  });
}

Var scale(const Var& a, double s) {
  Tape& t = a.tape();
  Matrix out = a.value() * s;
  const int ia = a.id();
  return t.push(std::move(out), t.any_needs_grad({a}), [ia, s](Tape& tp, int self) {
    tp.grad(ia) += tp.grad(self) * s;
  });
}

Var cmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "cmul");
  Matrix out = a.value().cwiseProduct(b.value());
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), t.any_needs_grad({a, b}), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(ia)) tp.grad(ia) += g.cwiseProduct(tp.value(ib));
    if (tp.needs_grad(ib)) tp.grad(ib) += g.cwiseProduct(tp.value(ia));
  });
}

namespace {
constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / M_PI);
}  // namespace

Var gelu(const Var& a) {
  Tape& t = a.tape();
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(kSqrt2OverPi * (v + kGeluC * v * v * v)));
  });
  const int ia = a.id();
  return t.push(std::move(out), t.any_needs_grad({a}), [ia](Tape& tp, int self) {
    const Matrix& xv = tp.value(ia);
    const Matrix& g = tp.grad(self);
    Matrix& gi = tp.grad(ia);
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const double v = xv.data()[i];
      const double th = std::tanh(kSqrt2OverPi * (v + kGeluC * v * v * v));
      const double d = 0.5 * (1.0 + th) +
                       0.5 * v * (1.0 - th * th) * kSqrt2OverPi * (1.0 + 3.0 * kGeluC * v * v);
      gi.data()[i] += g.data()[i] * d;
    }
  });
}

Var sigmoid(const Var& a) {
  Tape& t = a.tape();
  Matrix out = a.value().unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  const int ia = a.id();
  return t.push(std::move(out), t.any_needs_grad({a}), [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.grad(ia) += tp.grad(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  Tape& t = x.tape();
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows(), c = xv.cols();
  check_shape(gamma.cols() == c && beta.cols() == c && gamma.rows() == 1 && beta.rows() == 1, "layer_norm");
  Matrix xhat(n, c);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return t.push(std::move(out), t.any_needs_grad({x, gamma, beta}),
                [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, int self) {
                  const Matrix& g = tp.grad(self);
                  if (tp.needs_grad(ig)) tp.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
                  if (tp.needs_grad(ib)) tp.grad(ib) += g.colwise().sum();
                  if (tp.needs_grad(ix)) {
                    const auto gam = tp.value(ig).row(0).array();
                    Matrix& gx = tp.grad(ix);
                    for (Eigen::Index r = 0; r < g.rows(); ++r) {
                      Eigen::ArrayXd dxhat = (g.row(r).array() * gam).transpose();
                      const double m1 = dxhat.mean();
                      const double m2 = (dxhat * xhat.row(r).array().transpose()).mean();
                      gx.row(r).array() +=
                          (inv_std(r) * (dxhat - m1 - xhat.row(r).array().transpose() * m2)).transpose();
                    }
                  }
                });
}

Var softmax_rows(const Var& a, bool causal) {
  Tape& t = a.tape();
  const Matrix& x = a.value();
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::Index width = causal ? std::min<Eigen::Index>(r + 1, x.cols()) : x.cols();
    const double mx = x.row(r).head(width).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < width; ++c) {
      const double e = std::exp(x(r, c) - mx);
      out(r, c) = e;
      z += e;
    }
    out.row(r).head(width) /= z;
  }
  const int ia = a.id();
  return t.push(std::move(out), t.any_needs_grad({a}), [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    Matrix& gi = tp.grad(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = y.row(r).dot(g.row(r));
      gi.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  Tape& t = a.tape();
  check_shape(start >= 0 && start + count <= a.rows(), "slice_rows");
  Matrix out = a.value().middleRows(start, count);
  const int ia = a.id();
  return t.push(std::move(out), t.any_needs_grad({a}), [ia, start, count](Tape& tp, int self) {
    tp.grad(ia).middleRows(start, count) += tp.grad(self);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  Tape& t = a.tape();
  check_shape(start >= 0 && start + count <= a.cols(), "slice_cols");
  Matrix out = a.value().middleCols(start, count);
  const int ia = a.id();
  return t.push(std::move(out), t.any_needs_grad({a}), [ia, start, count](Tape& tp, int self) {
    tp.grad(ia).middleCols(start, count) += tp.grad(self);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  Tape& t = parts.front().tape();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool needs = false;
  std::vector<int> ids;
  for (const Var& p : parts) {
    check_shape(p.cols() == cols, "concat_rows");
    rows += p.rows();
    needs = needs || t.any_needs_grad({p});
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return t.push(std::move(out), needs, [ids = std::move(ids)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Eigen::Index offset = 0;
    for (int id : ids) {
      const Eigen::Index r = tp.value(id).rows();
      if (tp.needs_grad(id)) tp.grad(id) += g.middleRows(offset, r);
      offset += r;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  Tape& t = parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool needs = false;
  std::vector<int> ids;
  for (const Var& p : parts) {
    check_shape(p.rows() == rows, "concat_cols");
    cols += p.cols();
    needs = needs || t.any_needs_grad({p});
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return t.push(std::move(out), needs, [ids = std::move(ids)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Eigen::Index offset = 0;
    for (int id : ids) {
      const Eigen::Index c = tp.value(id).cols();
      if (tp.needs_grad(id)) tp.grad(id) += g.middleCols(offset, c);
      offset += c;
    }
  });
}

Var gather_rows(const Var& a, std::span<const int> index) {
  Tape& t = a.tape();
  const Matrix& x = a.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    check_shape(index[i] >= 0 && index[i] < x.rows(), "gather_rows");
    out.row(static_cast<Eigen::Index>(i)) = x.row(index[i]);
  }
  const int ia = a.id();
  return t.push(std::move(out), t.any_needs_grad({a}),
                [ia, idx = std::vector<int>(index.begin(), index.end())](Tape& tp, int self) {
                  const Matrix& g = tp.grad(self);
                  Matrix& gi = tp.grad(ia);
                  for (std::size_t i = 0; i < idx.size(); ++i) gi.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                });
}

Var gather_elements(const Var& a, const Eigen::MatrixXi& flat) {
  Tape& t = a.tape();
  const Matrix& x = a.value();
  Matrix out(flat.rows(), flat.cols());
  for (Eigen::Index r = 0; r < flat.rows(); ++r) {
    for (Eigen::Index c = 0; c < flat.cols(); ++c) {
      check_shape(flat(r, c) >= 0 && flat(r, c) < x.size(), "gather_elements");
      out(r, c) = x.data()[flat(r, c)];
    }
  }
  const int ia = a.id();
  return t.push(std::move(out), t.any_needs_grad({a}), [ia, flat](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& gi = tp.grad(ia);
    for (Eigen::Index r = 0; r < flat.rows(); ++r) {
      for (Eigen::Index c = 0; c < flat.cols(); ++c) gi.data()[flat(r, c)] += g(r, c);
    }
  });
}

Var mean_rows(const Var& a) {
  Tape& t = a.tape();
  const Eigen::Index n = a.rows();
  Matrix out = a.value().colwise().mean();
  const int ia = a.id();
  return t.push(std::move(out), t.any_needs_grad({a}), [ia, n](Tape& tp, int self) {
    tp.grad(ia).rowwise() += tp.grad(self).row(0) / static_cast<double>(n);
  });
}

Var sum(std::span<const Var> scalars) {
  if (scalars.empty()) throw std::invalid_argument("sum of nothing");
  Tape& t = scalars.front().tape();
  double total = 0.0;
  bool needs = false;
  std::vector<int> ids;
  for (const Var& s : scalars) {
    check_shape(s.rows() == 1 && s.cols() == 1, "sum");
    total += s.scalar();
    needs = needs || t.any_needs_grad({s});
    ids.push_back(s.id());
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return t.push(std::move(out), needs, [ids = std::move(ids)](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    for (int id : ids) {
      if (tp.needs_grad(id)) tp.grad(id)(0, 0) += g;
    }
  });
}

Var max(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  check_shape(a.rows() == 1 && a.cols() == 1 && b.rows() == 1 && b.cols() == 1, "max");
  const bool first = a.scalar() >= b.scalar();
  Matrix out(1, 1);
  out(0, 0) = first ? a.scalar() : b.scalar();
  const int chosen = first ? a.id() : b.id();
  return t.push(std::move(out), t.any_needs_grad({a, b}), [chosen](Tape& tp, int self) {
    if (tp.needs_grad(chosen)) tp.grad(chosen)(0, 0) += tp.grad(self)(0, 0);
  });
}

Var cross_entropy(const Var& logits, std::span<const int> targets, Reduction reduction) {
  Tape& t = logits.tape();
  const Matrix& x = logits.value();
  check_shape(static_cast<Eigen::Index>(targets.size()) == x.rows(), "cross_entropy");
  Matrix probs(x.rows(), x.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    check_shape(y >= 0 && y < x.cols(), "cross_entropy target");
    const double mx = x.row(r).maxCoeff();
    const double lse = mx + std::log((x.row(r).array() - mx).exp().sum());
    total += lse - x(r, y);
    probs.row(r) = (x.row(r).array() - lse).exp();
  }
  const double factor = (reduction == Reduction::mean && x.rows() > 0) ? 1.0 / static_cast<double>(x.rows()) : 1.0;
  Matrix out(1, 1);
  out(0, 0) = total * factor;
  const int il = logits.id();
  return t.push(std::move(out), t.any_needs_grad({logits}),
                [il, factor, probs = std::move(probs),
                 tg = std::vector<int>(targets.begin(), targets.end())](Tape& tp, int self) {
                  const double g = tp.grad(self)(0, 0) * factor;
                  Matrix& gi = tp.grad(il);
                  gi += probs * g;
                  for (std::size_t r = 0; r < tg.size(); ++r) gi(static_cast<Eigen::Index>(r), tg[r]) -= g;
                });
}

Var l1(const Var& a, double target) {
  Tape& t = a.tape();
  check_shape(a.rows() == 1 && a.cols() == 1, "l1");
  const double diff = a.scalar() - target;
  Matrix out(1, 1);
  out(0, 0) = std::abs(diff);
  const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
  const int ia = a.id();
  return t.push(std::move(out), t.any_needs_grad({a}), [ia, sign](Tape& tp, int self) {
    tp.grad(ia)(0, 0) += sign * tp.grad(self)(0, 0);
  });
}

Var cosine_alignment(const Var& h, const Var& z, double eps) {
  Tape& t = same_tape(h, z);
  check_shape(h.rows() == z.rows() && h.cols() == z.cols() && h.rows() > 0, "cosine_alignment");
  const Matrix& hv = h.value();
  const Matrix& zv = z.value();
  const Eigen::Index n = hv.rows();
  Eigen::VectorXd hn(n), zn(n), dots(n);
  double mean_cos = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    hn(r) = hv.row(r).norm();
    zn(r) = zv.row(r).norm();
    dots(r) = hv.row(r).dot(zv.row(r));
    mean_cos += dots(r) / (std::max(hn(r), eps) * std::max(zn(r), eps));
  }
  mean_cos /= static_cast<double>(n);
  Matrix out(1, 1);
  out(0, 0) = 1.0 - mean_cos;
  const int ih = h.id(), iz = z.id();
  return t.push(std::move(out), t.any_needs_grad({h, z}),
                [ih, iz, eps, hn = std::move(hn), zn = std::move(zn), dots = std::move(dots)](Tape& tp, int self) {
                  const double g = -tp.grad(self)(0, 0) / static_cast<double>(hn.size());
                  const Matrix& hv2 = tp.value(ih);
                  const Matrix& zv2 = tp.value(iz);
                  const bool gh = tp.needs_grad(ih), gz = tp.needs_grad(iz);
                  for (Eigen::Index r = 0; r < hn.size(); ++r) {
                    const double a = std::max(hn(r), eps), b = std::max(zn(r), eps);
                    if (gh) {
                      auto row = tp.grad(ih).row(r);
                      row += g * zv2.row(r) / (a * b);
                      if (hn(r) > eps) row -= g * dots(r) / (a * a * b) * hv2.row(r) / hn(r);
                    }
                    if (gz) {
                      auto row = tp.grad(iz).row(r);
                      row += g * hv2.row(r) / (a * b);
                      if (zn(r) > eps) row -= g * dots(r) / (a * b * b) * zv2.row(r) / zn(r);
                    }
                  }
                });
}

}  // namespace bustr::nn
