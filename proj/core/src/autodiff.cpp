#include "dpc/autodiff.hpp"

#include <cmath>
#include <vector>

#include <fmt/format.h>

#include "dpc/errors.hpp"
#include "dpc/numerics.hpp"

namespace dpc::ad {

const Matrix& Var::value() const { return tape_->value(index_); }
const Matrix& Var::grad() const { return tape_->grad(index_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.dual.grad = Matrix(value.rows(), value.cols());
  n.dual.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Matrix value) {
  Node n;
  n.dual.grad = Matrix(value.rows(), value.cols());
  n.dual.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward) {
  Node n;
  n.dual.grad = Matrix(value.rows(), value.cols());
  n.dual.value = std::move(value);
  n.is_leaf = false;
  for (const Var& p : parents) {
    if (&p.tape() != this) throw Error("autodiff: operands recorded on different tapes");
    n.requires_grad = n.requires_grad || nodes_[p.index()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  ++op_count_;
  return push(std::move(n));
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.dual.grad.fill(0.0);
}

void Tape::backward(Var loss) {
  if (op_count_ == 0) throw TapeEmpty("backward called on a tape with no recorded ops");
  if (&loss.tape() != this) throw Error("autodiff: loss belongs to another tape");
  const Matrix& lv = value(loss.index());
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw DimensionMismatch(
        fmt::format("backward: loss must be 1x1, got {}x{}", lv.rows(), lv.cols()));
  }
  for (Node& n : nodes_)
    if (!n.is_leaf) n.dual.grad.fill(0.0);
  nodes_[loss.index()].dual.grad(0, 0) += 1.0;
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.is_leaf && n.requires_grad && n.backward) n.backward(*this, i);
  }
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw Error("autodiff: operands recorded on different tapes");
  return a.tape();
}

void accumulate(Tape& t, std::size_t target, const Matrix& delta) {
  if (t.requires_grad(target)) t.grad(target) += delta;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(dpc::matmul(a.value(), b.value()), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia) += dpc::matmul_nt(g, tp.value(ib));
    if (tp.requires_grad(ib)) tp.grad(ib) += dpc::matmul_tn(tp.value(ia), g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(dpc::matmul_nt(a.value(), b.value()), {a, b},
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.requires_grad(ia)) tp.grad(ia) += dpc::matmul(g, tp.value(ib));
                    if (tp.requires_grad(ib)) tp.grad(ib) += dpc::matmul_tn(g, tp.value(ia));
                  });
}

Var transpose(Var a) {
  const std::size_t ia = a.index();
  return a.tape().record(dpc::transpose(a.value()), {a}, [ia](Tape& tp, std::size_t self) {
    tp.grad(ia) += dpc::transpose(tp.grad(self));
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    accumulate(tp, ia, tp.grad(self));
    accumulate(tp, ib, tp.grad(self));
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    accumulate(tp, ia, tp.grad(self));
    if (tp.requires_grad(ib)) tp.grad(ib) -= tp.grad(self);
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(hadamard(a.value(), b.value()), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia) += hadamard(g, tp.value(ib));
    if (tp.requires_grad(ib)) tp.grad(ib) += hadamard(g, tp.value(ia));
  });
}

Var scale(Var a, double s) {
  const std::size_t ia = a.index();
  return a.tape().record(a.value() * s, {a}, [ia, s](Tape& tp, std::size_t self) {
    tp.grad(ia) += tp.grad(self) * s;
  });
}

Var add_row(Var m, Var row) {
  Tape& t = same_tape(m, row);
  const std::size_t im = m.index(), ir = row.index();
  return t.record(dpc::add_row(m.value(), row.value()), {m, row},
                  [im, ir](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    accumulate(tp, im, g);
                    if (tp.requires_grad(ir)) tp.grad(ir) += dpc::sum_rows(g);
                  });
}

Var tanh(Var a) {
  const std::size_t ia = a.index();
  return a.tape().record(dpc::tanh(a.value()), {a}, [ia](Tape& tp, std::size_t self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    Matrix& ga = tp.grad(ia);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double yi = y.values()[i];
      ga.values()[i] += g.values()[i] * (1.0 - yi * yi);
    }
  });
}

Var sum_rows(Var a) {
  const std::size_t ia = a.index();
  return a.tape().record(dpc::sum_rows(a.value()), {a}, [ia](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    Matrix& ga = tp.grad(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(0, c);
  });
}

Var mean_rows(Var a) {
  if (a.rows() == 0) throw DimensionMismatch("mean_rows: empty input");
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows()));
}

Var concat_rows(Var top, Var bottom) {
  Tape& t = same_tape(top, bottom);
  const std::size_t it = top.index(), ib = bottom.index();
  const std::size_t split = top.rows();
  return t.record(dpc::concat_rows(top.value(), bottom.value()), {top, bottom},
                  [it, ib, split](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    const std::size_t cols = g.cols();
                    if (tp.requires_grad(it)) {
                      Matrix& gt = tp.grad(it);
                      for (std::size_t i = 0; i < split * cols; ++i)
                        gt.values()[i] += g.values()[i];
                    }
                    if (tp.requires_grad(ib)) {
                      Matrix& gb = tp.grad(ib);
                      for (std::size_t i = 0; i < gb.size(); ++i)
                        gb.values()[i] += g.values()[split * cols + i];
                    }
                  });
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  const std::size_t ia = a.index();
  return a.tape().record(Matrix(1, 1, acc), {a}, [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)(0, 0);
    for (double& v : tp.grad(ia).values()) v += g;
  });
}

Var l2_normalize_rows(Var a) {
  const std::size_t ia = a.index();
  return a.tape().record(dpc::l2_normalize_rows(a.value()), {a}, [ia](Tape& tp, std::size_t self) {
    // d(x/|x|) = (g - y (y.g)) / |x|
    const Matrix& x = tp.value(ia);
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    Matrix& gx = tp.grad(ia);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double norm = l2_norm(x.row(r));
      const double yg = dot(y.row(r), g.row(r));
      for (std::size_t c = 0; c < x.cols(); ++c) gx(r, c) += (g(r, c) - y(r, c) * yg) / norm;
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  const std::size_t ia = a.index();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Matrix value = dpc::gather_rows(a.value(), idx);
  return a.tape().record(std::move(value), {a},
                         [ia, idx = std::move(idx)](Tape& tp, std::size_t self) {
                           const Matrix& g = tp.grad(self);
                           Matrix& ga = tp.grad(ia);
                           for (std::size_t r = 0; r < idx.size(); ++r)
                             for (std::size_t c = 0; c < g.cols(); ++c) ga(idx[r], c) += g(r, c);
                         });
}

Var log_softmax_rows(Var a) {
  const std::size_t ia = a.index();
  return a.tape().record(dpc::log_softmax_rows(a.value(), 1.0), {a},
                         [ia](Tape& tp, std::size_t self) {
                           // dx = g - softmax * rowsum(g)
                           const Matrix& y = tp.value(self);
                           const Matrix& g = tp.grad(self);
                           Matrix& ga = tp.grad(ia);
                           for (std::size_t r = 0; r < y.rows(); ++r) {
                             double gsum = 0.0;
                             for (double v : g.row(r)) gsum += v;
                             for (std::size_t c = 0; c < y.cols(); ++c)
                               ga(r, c) += g(r, c) - std::exp(y(r, c)) * gsum;
                           }
                         });
}

Var nll_mean(Var log_probs, std::span<const std::size_t> labels) {
  const Matrix& lp = log_probs.value();
  if (labels.size() != lp.rows() || labels.empty()) {
    throw DimensionMismatch(
        fmt::format("nll_mean: {} labels for {} rows", labels.size(), lp.rows()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= lp.cols()) {
      throw LabelOutOfRange(
          fmt::format("nll_mean: label {} out of {} classes", labels[i], lp.cols()));
    }
    acc -= lp(i, labels[i]);
  }
  const double n = static_cast<double>(labels.size());
  const std::size_t il = log_probs.index();
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return log_probs.tape().record(Matrix(1, 1, acc / n), {log_probs},
                                 [il, n, lab = std::move(lab)](Tape& tp, std::size_t self) {
                                   const double g = tp.grad(self)(0, 0);
                                   Matrix& gl = tp.grad(il);
                                   for (std::size_t i = 0; i < lab.size(); ++i)
                                     gl(i, lab[i]) -= g / n;
                                 });
}

}  // namespace dpc::ad
