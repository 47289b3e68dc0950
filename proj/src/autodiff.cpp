#include "tegke/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "tegke/errors.hpp"

namespace tegke {

const char* to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::main: return "main";
    case ParamGroup::student: return "student";
    case ParamGroup::critic: return "critic";
  }
  return "?";
}

namespace ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(std::string("autodiff: ") + what);
}

Tape& tape_of(Var a) {
  require(a.valid(), "use of an empty Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  require(a.valid() && b.valid(), "use of an empty Var");
  require(a.tape() == b.tape(), "operands live on different tapes");
  return *a.tape();
}

}  // namespace

const Matrix& Var::value() const { return tape_->node(id_).value; }

double Var::scalar() const {
  const Matrix& v = value();
  require(v.rows() == 1 && v.cols() == 1, "scalar() on a non 1x1 value");
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::scalar_constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::leaf(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = !no_grad_;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.requires_grad = !no_grad_ && !frozen_[static_cast<int>(p.group)];
  if (n.requires_grad) n.param = &p;
  nodes_.push_back(std::move(n));
  param_ids_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

void Tape::freeze(ParamGroup group) { frozen_[static_cast<int>(group)] = true; }

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (!no_grad_) {
    for (const Var& in : inputs) {
      if (in.requires_grad()) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  require(root.rows() == 1 && root.cols() == 1, "backward() needs a scalar root");
  backward(root, Matrix::Ones(1, 1));
}

void Tape::backward(Var root, const Matrix& seed) {
  require(root.tape() == this, "root belongs to another tape");
  require(seed.rows() == root.rows() && seed.cols() == root.cols(), "seed shape");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!root.requires_grad()) return;
  grad_ref(root.id()) = seed;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, i);
  }
  for (auto& [p, id] : param_ids_) {
    Node& n = nodes_[id];
    if (n.param == nullptr || n.grad.size() == 0) continue;
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) p->zero_grad();
    p->grad += n.grad;
  }
}

const Matrix& Tape::grad(Var v) const {
  static const Matrix empty;
  const Node& n = nodes_[v.id()];
  return n.grad.size() == 0 ? empty : n.grad;
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.cols() == b.rows(), "matmul inner dimensions");
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.node(self).grad;
    if (t.node(ia).requires_grad) t.grad_ref(ia).noalias() += g * t.node(ib).value.transpose();
    if (t.node(ib).requires_grad) t.grad_ref(ib).noalias() += t.node(ia).value.transpose() * g;
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add shapes");
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.node(self).grad;
    if (t.node(ia).requires_grad) t.grad_ref(ia) += g;
    if (t.node(ib).requires_grad) t.grad_ref(ib) += g;
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub shapes");
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.node(self).grad;
    if (t.node(ia).requires_grad) t.grad_ref(ia) += g;
    if (t.node(ib).requires_grad) t.grad_ref(ib) -= g;
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul shapes");
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.node(self).grad;
    if (t.node(ia).requires_grad) t.grad_ref(ia) += g.cwiseProduct(t.node(ib).value);
    if (t.node(ib).requires_grad) t.grad_ref(ib) += g.cwiseProduct(t.node(ia).value);
  });
}

Var add_bias(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(b.rows() == 1 && b.cols() == a.cols(), "add_bias shapes");
  const std::size_t ia = a.id(), ib = b.id();
  Matrix out = a.value();
  out.rowwise() += b.value().row(0);
  return t.push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.node(self).grad;
    if (t.node(ia).requires_grad) t.grad_ref(ia) += g;
    if (t.node(ib).requires_grad) t.grad_ref(ib) += g.colwise().sum();
  });
}

Var mul_rows(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(b.rows() == 1 && b.cols() == a.cols(), "mul_rows shapes");
  const std::size_t ia = a.id(), ib = b.id();
  Matrix out = a.value().array().rowwise() * b.value().row(0).array();
  return t.push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.node(self).grad;
    if (t.node(ia).requires_grad)
      t.grad_ref(ia).array() += g.array().rowwise() * t.node(ib).value.row(0).array();
    if (t.node(ib).requires_grad)
      t.grad_ref(ib) += g.cwiseProduct(t.node(ia).value).colwise().sum();
  });
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.push(a.value() * c, {a}, [ia, c](Tape& t, std::size_t self) {
    t.grad_ref(ia) += t.node(self).grad * c;
  });
}

Var add_scalar(Var a, double c) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.push((a.value().array() + c).matrix(), {a}, [ia](Tape& t, std::size_t self) {
    t.grad_ref(ia) += t.node(self).grad;
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.push(a.value().transpose(), {a}, [ia](Tape& t, std::size_t self) {
    t.grad_ref(ia) += t.node(self).grad.transpose();
  });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.push(a.value().array().tanh().matrix(), {a}, [ia](Tape& t, std::size_t self) {
    const Matrix& y = t.node(self).value;
    t.grad_ref(ia).array() += t.node(self).grad.array() * (1.0 - y.array().square());
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  Matrix out = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return t.push(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Matrix& y = t.node(self).value;
    t.grad_ref(ia).array() += t.node(self).grad.array() * y.array() * (1.0 - y.array());
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.push(a.value().cwiseMax(0.0), {a}, [ia](Tape& t, std::size_t self) {
    const Matrix& x = t.node(ia).value;
    t.grad_ref(ia).array() += (x.array() > 0.0).select(t.node(self).grad.array(), 0.0);
  });
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.push(a.value().array().exp().matrix(), {a}, [ia](Tape& t, std::size_t self) {
    t.grad_ref(ia).array() += t.node(self).grad.array() * t.node(self).value.array();
  });
}

Var log(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.push(a.value().array().log().matrix(), {a}, [ia](Tape& t, std::size_t self) {
    t.grad_ref(ia).array() += t.node(self).grad.array() / t.node(ia).value.array();
  });
}

Var square(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.push(a.value().array().square().matrix(), {a}, [ia](Tape& t, std::size_t self) {
    t.grad_ref(ia).array() += 2.0 * t.node(self).grad.array() * t.node(ia).value.array();
  });
}

Var sqrt(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.push(a.value().array().sqrt().matrix(), {a}, [ia](Tape& t, std::size_t self) {
    // Zero is treated as having zero slope so an all-zero input stays finite.
    const Matrix& y = t.node(self).value;
    t.grad_ref(ia).array() += (y.array() > 0.0).select(0.5 * t.node(self).grad.array() / y.array(), 0.0);
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols of nothing");
  Tape& t = tape_of(parts[0]);
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require(p.tape() == &t, "concat across tapes");
    require(p.rows() == rows, "concat_cols row counts");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  Var rep = parts[0];
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(at);
    at += p.cols();
    if (p.requires_grad()) rep = p;
  }
  auto backward = [ids, offsets](Tape& t, std::size_t self) {
    const Matrix& g = t.node(self).grad;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.node(ids[k]).requires_grad) continue;
      Matrix& gk = t.grad_ref(ids[k]);
      gk += g.middleCols(offsets[k], gk.cols());
    }
  };
  // push() only inspects the listed inputs, so hand it one that needs grad.
  return t.push(std::move(out), {rep}, std::move(backward));
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows of nothing");
  Tape& t = tape_of(parts[0]);
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    require(p.tape() == &t, "concat across tapes");
    require(p.cols() == cols, "concat_rows column counts");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  Var rep = parts[0];
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(at);
    at += p.rows();
    if (p.requires_grad()) rep = p;
  }
  return t.push(std::move(out), {rep}, [ids, offsets](Tape& t, std::size_t self) {
    const Matrix& g = t.node(self).grad;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.node(ids[k]).requires_grad) continue;
      Matrix& gk = t.grad_ref(ids[k]);
      gk += g.middleRows(offsets[k], gk.rows());
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index len) {
  Tape& t = tape_of(a);
  require(start >= 0 && len >= 0 && start + len <= a.cols(), "slice_cols range");
  const std::size_t ia = a.id();
  return t.push(a.value().middleCols(start, len), {a}, [ia, start, len](Tape& t, std::size_t self) {
    t.grad_ref(ia).middleCols(start, len) += t.node(self).grad;
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index len) {
  Tape& t = tape_of(a);
  require(start >= 0 && len >= 0 && start + len <= a.rows(), "slice_rows range");
  const std::size_t ia = a.id();
  return t.push(a.value().middleRows(start, len), {a}, [ia, start, len](Tape& t, std::size_t self) {
    t.grad_ref(ia).middleRows(start, len) += t.node(self).grad;
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const Matrix& v = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), v.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < v.rows(), "gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = v.row(ids[i]);
  }
  const std::size_t it = table.id();
  std::vector<int> idx(ids.begin(), ids.end());
  return t.push(std::move(out), {table}, [it, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Matrix& g = t.node(self).grad;
    Matrix& gt = t.grad_ref(it);
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var scatter_mean_rows(Var src, std::span<const int> target, Eigen::Index n_out) {
  Tape& t = tape_of(src);
  require(static_cast<Eigen::Index>(target.size()) == src.rows(), "scatter_mean_rows target count");
  std::vector<double> count(static_cast<std::size_t>(n_out), 0.0);
  for (int k : target) {
    require(k >= 0 && k < n_out, "scatter_mean_rows target out of range");
    count[static_cast<std::size_t>(k)] += 1.0;
  }
  Matrix out = Matrix::Zero(n_out, src.cols());
  const Matrix& v = src.value();
  for (std::size_t i = 0; i < target.size(); ++i)
    out.row(target[i]) += v.row(static_cast<Eigen::Index>(i)) / count[static_cast<std::size_t>(target[i])];
  const std::size_t is = src.id();
  std::vector<int> tgt(target.begin(), target.end());
  return t.push(std::move(out), {src},
                [is, tgt = std::move(tgt), count = std::move(count)](Tape& t, std::size_t self) {
                  const Matrix& g = t.node(self).grad;
                  Matrix& gs = t.grad_ref(is);
                  for (std::size_t i = 0; i < tgt.size(); ++i)
                    gs.row(static_cast<Eigen::Index>(i)) +=
                        g.row(tgt[i]) / count[static_cast<std::size_t>(tgt[i])];
                });
}

Var unfold_rows(Var a, Eigen::Index width) {
  Tape& t = tape_of(a);
  const Matrix& v = a.value();
  require(width >= 1 && v.rows() >= width, "unfold_rows needs at least `width` rows");
  const Eigen::Index n = v.rows() - width + 1, d = v.cols();
  Matrix out(n, width * d);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index k = 0; k < width; ++k) out.block(r, k * d, 1, d) = v.row(r + k);
  const std::size_t ia = a.id();
  return t.push(std::move(out), {a}, [ia, width, n, d](Tape& t, std::size_t self) {
    const Matrix& g = t.node(self).grad;
    Matrix& ga = t.grad_ref(ia);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index k = 0; k < width; ++k) ga.row(r + k) += g.block(r, k * d, 1, d);
  });
}

Var fold_rows(Var a, Eigen::Index width, Eigen::Index n_rows) {
  Tape& t = tape_of(a);
  const Matrix& v = a.value();
  require(width >= 1 && v.cols() % width == 0, "fold_rows column count");
  const Eigen::Index n = v.rows(), d = v.cols() / width;
  require(n == n_rows - width + 1, "fold_rows row count");
  Matrix out = Matrix::Zero(n_rows, d);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index k = 0; k < width; ++k) out.row(r + k) += v.block(r, k * d, 1, d);
  const std::size_t ia = a.id();
  return t.push(std::move(out), {a}, [ia, width, n, d](Tape& t, std::size_t self) {
    const Matrix& g = t.node(self).grad;
    Matrix& ga = t.grad_ref(ia);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index k = 0; k < width; ++k) ga.block(r, k * d, 1, d) += g.row(r + k);
  });
}

Var pad_rows(Var a, Eigen::Index n_rows) {
  if (a.rows() >= n_rows) return a;
  Tape& t = tape_of(a);
  Matrix out = Matrix::Zero(n_rows, a.cols());
  out.topRows(a.rows()) = a.value();
  const std::size_t ia = a.id();
  const Eigen::Index keep = a.rows();
  return t.push(std::move(out), {a}, [ia, keep](Tape& t, std::size_t self) {
    t.grad_ref(ia) += t.node(self).grad.topRows(keep);
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.push(Matrix::Constant(1, 1, a.value().sum()), {a}, [ia](Tape& t, std::size_t self) {
    t.grad_ref(ia).array() += t.node(self).grad(0, 0);
  });
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  require(a.rows() > 0, "mean_rows of an empty matrix");
  const std::size_t ia = a.id();
  const double n = static_cast<double>(a.rows());
  return t.push(a.value().colwise().mean(), {a}, [ia, n](Tape& t, std::size_t self) {
    t.grad_ref(ia).rowwise() += t.node(self).grad.row(0) / n;
  });
}

Var max_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& v = a.value();
  require(v.rows() > 0, "max_rows of an empty matrix");
  Matrix out(1, v.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(v.cols()));
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < v.rows(); ++r)
      if (v(r, c) > v(best, c)) best = r;
    arg[static_cast<std::size_t>(c)] = best;
    out(0, c) = v(best, c);
  }
  const std::size_t ia = a.id();
  return t.push(std::move(out), {a}, [ia, arg = std::move(arg)](Tape& t, std::size_t self) {
    const Matrix& g = t.node(self).grad;
    Matrix& ga = t.grad_ref(ia);
    for (std::size_t c = 0; c < arg.size(); ++c)
      ga(arg[c], static_cast<Eigen::Index>(c)) += g(0, static_cast<Eigen::Index>(c));
  });
}

Var pick(Var a, Eigen::Index r, Eigen::Index c) {
  Tape& t = tape_of(a);
  require(r >= 0 && r < a.rows() && c >= 0 && c < a.cols(), "pick index");
  const std::size_t ia = a.id();
  return t.push(Matrix::Constant(1, 1, a.value()(r, c)), {a}, [ia, r, c](Tape& t, std::size_t self) {
    t.grad_ref(ia)(r, c) += t.node(self).grad(0, 0);
  });
}

Var pick_per_row(Var a, std::span<const int> cols) {
  Tape& t = tape_of(a);
  require(static_cast<Eigen::Index>(cols.size()) == a.rows(), "pick_per_row count");
  Matrix out(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const int c = cols[static_cast<std::size_t>(r)];
    require(c >= 0 && c < a.cols(), "pick_per_row column");
    out(r, 0) = a.value()(r, c);
  }
  const std::size_t ia = a.id();
  std::vector<int> cs(cols.begin(), cols.end());
  return t.push(std::move(out), {a}, [ia, cs = std::move(cs)](Tape& t, std::size_t self) {
    const Matrix& g = t.node(self).grad;
    Matrix& ga = t.grad_ref(ia);
    for (std::size_t r = 0; r < cs.size(); ++r)
      ga(static_cast<Eigen::Index>(r), cs[r]) += g(static_cast<Eigen::Index>(r), 0);
  });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r).array() -= out.row(r).maxCoeff();
    out.row(r) = out.row(r).array().exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  const std::size_t ia = a.id();
  return t.push(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Matrix& y = t.node(self).value;
    const Matrix& g = t.node(self).grad;
    Matrix& ga = t.grad_ref(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      ga.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    const double lse = m + std::log((out.row(r).array() - m).exp().sum());
    out.row(r).array() -= lse;
  }
  const std::size_t ia = a.id();
  return t.push(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Matrix& y = t.node(self).value;
    const Matrix& g = t.node(self).grad;
    Matrix& ga = t.grad_ref(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double gsum = g.row(r).sum();
      ga.row(r).array() += g.row(r).array() - y.row(r).array().exp() * gsum;
    }
  });
}

}  // namespace ad
}  // namespace tegke
