#include "niva/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "niva/rng.hpp"

namespace niva {

namespace {

std::int64_t shape_numel(const std::vector<int>& shp) {
  std::int64_t n = 1;
  for (int e : shp) {
    if (e <= 0) throw std::invalid_argument("DenseArray: extents must be positive");
    n *= e;
  }
  return n;
}

// Common tape of the tracked inputs; null when all inputs are constants.
Tape* tape_of(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->defined()) throw std::invalid_argument("op on undefined tensor");
    if (!t->tracked()) continue;
    if (tape == nullptr) {
      tape = t->tape();
    } else if (tape != t->tape()) {
      throw std::invalid_argument("inputs live on different tapes");
    }
  }
  return tape;
}

Tensor emit(Tape* tape, DenseArray out, const std::vector<Tensor>& parents,
            Tape::Vjp vjp) {
  if (tape == nullptr) return Tensor(std::move(out));
  return tape->track(std::move(out), parents, std::move(vjp));
}

void accumulate(DenseArray& into, const DenseArray& g) {
  for (std::size_t i = 0; i < g.data.size(); ++i) into.data[i] += g.data[i];
}

}  // namespace

// ---- DenseArray ----------------------------------------------------------

DenseArray::DenseArray(std::vector<int> shp, std::vector<double> values)
    : shape(std::move(shp)), data(std::move(values)) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw std::invalid_argument("DenseArray: shape does not match value count");
}

DenseArray DenseArray::zeros(std::vector<int> shp) {
  DenseArray a;
  const std::int64_t n = shape_numel(shp);
  a.shape = std::move(shp);
  a.data.assign(static_cast<std::size_t>(n), 0.0);
  return a;
}

DenseArray DenseArray::full(std::vector<int> shp, double v) {
  DenseArray a = zeros(std::move(shp));
  std::fill(a.data.begin(), a.data.end(), v);
  return a;
}

DenseArray DenseArray::scalar(double v) { return DenseArray({1}, {v}); }

DenseArray DenseArray::vec(std::vector<double> values) {
  const int n = static_cast<int>(values.size());
  return DenseArray({n}, std::move(values));
}

DenseArray DenseArray::matrix(int r, int c, std::vector<double> values) {
  return DenseArray({r, c}, std::move(values));
}

DenseArray DenseArray::identity(int n) {
  DenseArray a = zeros({n, n});
  for (int i = 0; i < n; ++i) a.at(i, i) = 1.0;
  return a;
}

int DenseArray::rows() const {
  if (ndim() != 2) throw std::invalid_argument("rows(): not a matrix");
  return shape[0];
}

int DenseArray::cols() const {
  if (ndim() != 2) throw std::invalid_argument("cols(): not a matrix");
  return shape[1];
}

double& DenseArray::at(int i, int j) {
  return data[static_cast<std::size_t>(i) * shape[1] + j];
}

double DenseArray::at(int i, int j) const {
  return data[static_cast<std::size_t>(i) * shape[1] + j];
}

bool DenseArray::finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

// ---- Tensor / Tape --------------------------------------------------------

double Tensor::scalar() const {
  if (size() != 1) throw std::invalid_argument("scalar(): tensor has size != 1");
  return value_->data[0];
}

Tensor Tape::leaf(DenseArray value) {
  Tensor t(std::move(value));
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{{}, nullptr});
  values_.push_back(t.value_);
  return t;
}

Tensor Tape::track(DenseArray out, const std::vector<Tensor>& parents, Vjp vjp) {
  Tensor t(std::move(out));
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  Node node;
  node.parents.reserve(parents.size());
  for (const Tensor& p : parents) node.parents.push_back(p.tracked() ? p.node_ : -1);
  node.vjp = std::move(vjp);
  nodes_.push_back(std::move(node));
  values_.push_back(t.value_);
  return t;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape_ != this || loss.node_ < 0)
    throw std::invalid_argument("backward: loss is not on this tape");
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  grads_.assign(nodes_.size(), DenseArray{});
  grads_[loss.node_] = DenseArray::scalar(1.0);
  for (int id = loss.node_; id >= 0; --id) {
    if (grads_[id].data.empty()) continue;   // not on a path to the loss
    const Node& node = nodes_[id];
    if (!node.vjp) continue;                 // leaf
    std::vector<DenseArray> pgrads = node.vjp(grads_[id]);
    if (pgrads.size() != node.parents.size())
      throw std::runtime_error("backward: vjp arity mismatch");
    for (std::size_t i = 0; i < node.parents.size(); ++i) {
      const int pid = node.parents[i];
      if (pid < 0) continue;
      if (pgrads[i].data.empty()) continue;
      if (grads_[pid].data.empty()) {
        grads_[pid] = std::move(pgrads[i]);
      } else {
        accumulate(grads_[pid], pgrads[i]);
      }
    }
  }
}

DenseArray Tape::grad(const Tensor& t) const {
  if (t.tape_ != this || t.node_ < 0)
    throw std::invalid_argument("grad: tensor is not on this tape");
  if (t.node_ < static_cast<int>(grads_.size()) && !grads_[t.node_].data.empty())
    return grads_[t.node_];
  return DenseArray::zeros(t.shape());
}

bool Tape::has_grad(const Tensor& t) const {
  return t.tape_ == this && t.node_ >= 0 &&
         t.node_ < static_cast<int>(grads_.size()) &&
         !grads_[t.node_].data.empty();
}

void Tape::clear() {
  nodes_.clear();
  values_.clear();
  grads_.clear();
}

// ---- ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape* tape = tape_of({&a, &b});
  const DenseArray& A = a.value();
  const DenseArray& B = b.value();
  if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.rows())
    throw std::invalid_argument("matmul: shape mismatch");
  const int m = A.rows(), k = A.cols(), n = B.cols();
  DenseArray out = DenseArray::zeros({m, n});
  for (int i = 0; i < m; ++i) {
    const double* arow = &A.data[static_cast<std::size_t>(i) * k];
    double* orow = &out.data[static_cast<std::size_t>(i) * n];
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = &B.data[static_cast<std::size_t>(p) * n];
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  const bool need_a = a.tracked(), need_b = b.tracked();
  return emit(tape, std::move(out), {a, b},
              [a, b, m, k, n, need_a, need_b](const DenseArray& g) {
                std::vector<DenseArray> gs(2);
                const DenseArray& A = a.value();
                const DenseArray& B = b.value();
                if (need_a) {
                  DenseArray ga = DenseArray::zeros({m, k});
                  for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                      const double gv = g.at(i, j);
                      if (gv == 0.0) continue;
                      for (int p = 0; p < k; ++p) ga.at(i, p) += gv * B.at(p, j);
                    }
                  gs[0] = std::move(ga);
                }
                if (need_b) {
                  DenseArray gb = DenseArray::zeros({k, n});
                  for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                      const double av = A.at(i, p);
                      if (av == 0.0) continue;
                      for (int j = 0; j < n; ++j) gb.at(p, j) += av * g.at(i, j);
                    }
                  gs[1] = std::move(gb);
                }
                return gs;
              });
}

Tensor transpose(const Tensor& a) {
  Tape* tape = tape_of({&a});
  const DenseArray& A = a.value();
  if (A.ndim() != 2) throw std::invalid_argument("transpose: not a matrix");
  const int m = A.rows(), n = A.cols();
  DenseArray out = DenseArray::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
  return emit(tape, std::move(out), {a}, [m, n](const DenseArray& g) {
    DenseArray ga = DenseArray::zeros({m, n});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga.at(i, j) = g.at(j, i);
    return std::vector<DenseArray>{std::move(ga)};
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tape* tape = tape_of({&a, &b});
  const DenseArray& A = a.value();
  const DenseArray& B = b.value();
  if (!A.same_shape(B)) throw std::invalid_argument("add: shape mismatch");
  DenseArray out = A;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
  return emit(tape, std::move(out), {a, b}, [](const DenseArray& g) {
    return std::vector<DenseArray>{g, g};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tape* tape = tape_of({&a, &b});
  const DenseArray& A = a.value();
  const DenseArray& B = b.value();
  if (!A.same_shape(B)) throw std::invalid_argument("sub: shape mismatch");
  DenseArray out = A;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= B.data[i];
  return emit(tape, std::move(out), {a, b}, [](const DenseArray& g) {
    DenseArray gb = g;
    for (double& v : gb.data) v = -v;
    return std::vector<DenseArray>{g, std::move(gb)};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape* tape = tape_of({&a, &b});
  const DenseArray& A = a.value();
  const DenseArray& B = b.value();
  if (!A.same_shape(B)) throw std::invalid_argument("mul: shape mismatch");
  DenseArray out = A;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
  return emit(tape, std::move(out), {a, b}, [a, b](const DenseArray& g) {
    DenseArray ga = g, gb = g;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      ga.data[i] *= b.value().data[i];
      gb.data[i] *= a.value().data[i];
    }
    return std::vector<DenseArray>{std::move(ga), std::move(gb)};
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  Tape* tape = tape_of({&a, &row});
  const DenseArray& A = a.value();
  const DenseArray& R = row.value();
  if (A.ndim() != 2 || R.ndim() != 1 || R.shape[0] != A.cols())
    throw std::invalid_argument("add_row: shape mismatch");
  const int m = A.rows(), n = A.cols();
  DenseArray out = A;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) += R.at(j);
  return emit(tape, std::move(out), {a, row}, [m, n](const DenseArray& g) {
    DenseArray gr = DenseArray::zeros({n});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) gr.at(j) += g.at(i, j);
    return std::vector<DenseArray>{g, std::move(gr)};
  });
}

Tensor scale(const Tensor& a, double c) {
  Tape* tape = tape_of({&a});
  DenseArray out = a.value();
  for (double& v : out.data) v *= c;
  return emit(tape, std::move(out), {a}, [c](const DenseArray& g) {
    DenseArray ga = g;
    for (double& v : ga.data) v *= c;
    return std::vector<DenseArray>{std::move(ga)};
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  Tape* tape = tape_of({&a});
  DenseArray out = a.value();
  for (double& v : out.data) v += c;
  return emit(tape, std::move(out), {a}, [](const DenseArray& g) {
    return std::vector<DenseArray>{g};
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor sum(const Tensor& a) {
  Tape* tape = tape_of({&a});
  double s = 0.0;
  for (double v : a.value().data) s += v;
  std::vector<int> shape = a.shape();
  return emit(tape, DenseArray::scalar(s), {a}, [shape](const DenseArray& g) {
    return std::vector<DenseArray>{DenseArray::full(shape, g.data[0])};
  });
}

Tensor mean(const Tensor& a) {
  Tape* tape = tape_of({&a});
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  std::vector<int> shape = a.shape();
  return emit(tape, DenseArray::scalar(s * inv), {a},
              [shape, inv](const DenseArray& g) {
                return std::vector<DenseArray>{
                    DenseArray::full(shape, g.data[0] * inv)};
              });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  Tape* tape = tape_of({&a, &b});
  const DenseArray& A = a.value();
  const DenseArray& B = b.value();
  if (!A.same_shape(B)) throw std::invalid_argument("dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < A.data.size(); ++i) s += A.data[i] * B.data[i];
  return emit(tape, DenseArray::scalar(s), {a, b}, [a, b](const DenseArray& g) {
    const double gv = g.data[0];
    DenseArray ga = b.value(), gb = a.value();
    for (double& v : ga.data) v *= gv;
    for (double& v : gb.data) v *= gv;
    return std::vector<DenseArray>{std::move(ga), std::move(gb)};
  });
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
  Tape* tape = tape_of({&a});
  const DenseArray& A = a.value();
  if (axis < 0 || axis >= A.ndim()) throw std::invalid_argument("slice: axis out of range");
  if (start < 0 || len <= 0 || start + len > A.shape[axis])
    throw std::invalid_argument("slice: range out of bounds");
  std::vector<int> oshape = A.shape;
  oshape[axis] = len;
  DenseArray out = DenseArray::zeros(oshape);
  if (A.ndim() == 1) {
    for (int i = 0; i < len; ++i) out.at(i) = A.at(start + i);
  } else if (A.ndim() == 2) {
    const int m = A.rows(), n = A.cols();
    if (axis == 0) {
      for (int i = 0; i < len; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = A.at(start + i, j);
    } else {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j) out.at(i, j) = A.at(i, start + j);
    }
  } else {
    throw std::invalid_argument("slice: only 1-D/2-D supported");
  }
  std::vector<int> ishape = A.shape;
  return emit(tape, std::move(out), {a},
              [ishape, axis, start, len](const DenseArray& g) {
                DenseArray ga = DenseArray::zeros(ishape);
                if (ishape.size() == 1) {
                  for (int i = 0; i < len; ++i) ga.at(start + i) = g.at(i);
                } else if (axis == 0) {
                  const int n = ishape[1];
                  for (int i = 0; i < len; ++i)
                    for (int j = 0; j < n; ++j) ga.at(start + i, j) = g.at(i, j);
                } else {
                  const int m = ishape[0];
                  for (int i = 0; i < m; ++i)
                    for (int j = 0; j < len; ++j) ga.at(i, start + j) = g.at(i, j);
                }
                return std::vector<DenseArray>{std::move(ga)};
              });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no parts");
  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  Tape* tape = nullptr;
  for (const Tensor* p : ptrs) {
    Tape* t = tape_of({p});
    if (t != nullptr) {
      if (tape != nullptr && tape != t)
        throw std::invalid_argument("concat: inputs on different tapes");
      tape = t;
    }
  }
  const int nd = parts[0].value().ndim();
  if (axis < 0 || axis >= nd) throw std::invalid_argument("concat: axis out of range");
  std::vector<int> oshape = parts[0].shape();
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.value().ndim() != nd) throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < nd; ++d)
      if (d != axis && p.shape()[d] != oshape[d])
        throw std::invalid_argument("concat: shape mismatch");
    total += p.shape()[axis];
  }
  oshape[axis] = total;
  DenseArray out = DenseArray::zeros(oshape);
  std::vector<int> offsets(parts.size());
  int off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const DenseArray& P = parts[pi].value();
    offsets[pi] = off;
    if (nd == 1) {
      for (int i = 0; i < P.shape[0]; ++i) out.at(off + i) = P.at(i);
    } else if (axis == 0) {
      for (int i = 0; i < P.rows(); ++i)
        for (int j = 0; j < P.cols(); ++j) out.at(off + i, j) = P.at(i, j);
    } else {
      for (int i = 0; i < P.rows(); ++i)
        for (int j = 0; j < P.cols(); ++j) out.at(i, off + j) = P.at(i, j);
    }
    off += P.shape[axis];
  }
  std::vector<std::vector<int>> pshapes;
  for (const Tensor& p : parts) pshapes.push_back(p.shape());
  return emit(tape, std::move(out), parts,
              [pshapes, offsets, axis, nd](const DenseArray& g) {
                std::vector<DenseArray> gs(pshapes.size());
                for (std::size_t pi = 0; pi < pshapes.size(); ++pi) {
                  DenseArray gp = DenseArray::zeros(pshapes[pi]);
                  const int off = offsets[pi];
                  if (nd == 1) {
                    for (int i = 0; i < pshapes[pi][0]; ++i) gp.at(i) = g.at(off + i);
                  } else if (axis == 0) {
                    for (int i = 0; i < gp.rows(); ++i)
                      for (int j = 0; j < gp.cols(); ++j) gp.at(i, j) = g.at(off + i, j);
                  } else {
                    for (int i = 0; i < gp.rows(); ++i)
                      for (int j = 0; j < gp.cols(); ++j) gp.at(i, j) = g.at(i, off + j);
                  }
                  gs[pi] = std::move(gp);
                }
                return gs;
              });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  std::vector<Tensor> shaped;
  shaped.reserve(rows.size());
  for (const Tensor& r : rows) {
    if (r.value().ndim() != 1) throw std::invalid_argument("stack_rows: expects vectors");
    shaped.push_back(reshape(r, {1, r.shape()[0]}));
  }
  return concat(shaped, 0);
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  Tape* tape = tape_of({&a});
  if (shape_numel(shape) != a.size())
    throw std::invalid_argument("reshape: element count mismatch");
  DenseArray out(shape, a.value().data);
  std::vector<int> ishape = a.shape();
  return emit(tape, std::move(out), {a}, [ishape](const DenseArray& g) {
    return std::vector<DenseArray>{DenseArray(ishape, g.data)};
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  Tape* tape = tape_of({&a});
  const DenseArray& A = a.value();
  if (A.ndim() != 2) throw std::invalid_argument("gather_rows: not a matrix");
  const int m = A.rows(), n = A.cols();
  for (int i : idx)
    if (i < 0 || i >= m) throw std::invalid_argument("gather_rows: index out of range");
  DenseArray out = DenseArray::zeros({static_cast<int>(idx.size()), n});
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (int j = 0; j < n; ++j) out.at(static_cast<int>(r), j) = A.at(idx[r], j);
  return emit(tape, std::move(out), {a}, [idx, m, n](const DenseArray& g) {
    DenseArray ga = DenseArray::zeros({m, n});
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (int j = 0; j < n; ++j) ga.at(idx[r], j) += g.at(static_cast<int>(r), j);
    return std::vector<DenseArray>{std::move(ga)};
  });
}

namespace {

// Applies fn to each contiguous-or-strided line along `axis`.
template <typename Fn>
void for_each_line(const std::vector<int>& shape, int axis, Fn&& fn) {
  const int nd = static_cast<int>(shape.size());
  std::int64_t stride = 1;
  for (int d = axis + 1; d < nd; ++d) stride *= shape[d];
  std::int64_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= shape[d];
  const std::int64_t inner = stride;
  const int len = shape[axis];
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      fn(base, inner, len);
    }
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
  Tape* tape = tape_of({&a});
  const DenseArray& A = a.value();
  if (axis < 0 || axis >= A.ndim())
    throw std::invalid_argument("softmax: axis out of range");
  DenseArray out = A;
  for_each_line(A.shape, axis, [&](std::int64_t base, std::int64_t stride, int len) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < len; ++k) mx = std::max(mx, out.data[base + k * stride]);
    double denom = 0.0;
    for (int k = 0; k < len; ++k) {
      double e = std::exp(out.data[base + k * stride] - mx);
      out.data[base + k * stride] = e;
      denom += e;
    }
    for (int k = 0; k < len; ++k) out.data[base + k * stride] /= denom;
  });
  std::vector<int> shape = A.shape;
  DenseArray saved = out;
  return emit(tape, std::move(out), {a},
              [saved, shape, axis](const DenseArray& g) {
                DenseArray ga = g;
                for_each_line(shape, axis,
                              [&](std::int64_t base, std::int64_t stride, int len) {
                                double inner = 0.0;
                                for (int k = 0; k < len; ++k)
                                  inner += g.data[base + k * stride] *
                                           saved.data[base + k * stride];
                                for (int k = 0; k < len; ++k) {
                                  const std::int64_t p = base + k * stride;
                                  ga.data[p] = saved.data[p] * (g.data[p] - inner);
                                }
                              });
                return std::vector<DenseArray>{std::move(ga)};
              });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset) {
  constexpr double kEps = 1e-5;  // variance stabilizer
  Tape* tape = tape_of({&x, &gain, &offset});
  const DenseArray& X = x.value();
  const int nd = X.ndim();
  const int n = X.shape[nd - 1];
  if (gain.value().ndim() != 1 || gain.shape()[0] != n ||
      offset.value().ndim() != 1 || offset.shape()[0] != n)
    throw std::invalid_argument("layer_norm: gain/offset must match last axis");
  const std::int64_t rows = X.size() / n;
  DenseArray normed = X;      // (x - mean) / sqrt(var + eps), saved for vjp
  DenseArray inv_std({static_cast<int>(rows)},
                     std::vector<double>(static_cast<std::size_t>(rows), 0.0));
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = &normed.data[r * n];
    double m = 0.0;
    for (int j = 0; j < n; ++j) m += row[j];
    m /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      row[j] -= m;
      var += row[j] * row[j];
    }
    var /= n;
    const double is = 1.0 / std::sqrt(var + kEps);
    inv_std.data[r] = is;
    for (int j = 0; j < n; ++j) row[j] *= is;
  }
  DenseArray out = normed;
  const DenseArray& G = gain.value();
  const DenseArray& B = offset.value();
  for (std::int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < n; ++j)
      out.data[r * n + j] = out.data[r * n + j] * G.at(j) + B.at(j);
  return emit(
      tape, std::move(out), {x, gain, offset},
      [normed, inv_std, gain, rows, n](const DenseArray& g) {
        const DenseArray& G = gain.value();
        DenseArray gx = g;
        DenseArray ggain = DenseArray::zeros({n});
        DenseArray goffset = DenseArray::zeros({n});
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* grow = &g.data[r * n];
          const double* nrow = &normed.data[r * n];
          double* gxrow = &gx.data[r * n];
          double sum_gh = 0.0, sum_ghn = 0.0;
          for (int j = 0; j < n; ++j) {
            const double gh = grow[j] * G.at(j);
            sum_gh += gh;
            sum_ghn += gh * nrow[j];
            ggain.at(j) += grow[j] * nrow[j];
            goffset.at(j) += grow[j];
          }
          const double inv_n = 1.0 / n;
          for (int j = 0; j < n; ++j) {
            const double gh = grow[j] * G.at(j);
            gxrow[j] = inv_std.data[r] *
                       (gh - inv_n * sum_gh - nrow[j] * inv_n * sum_ghn);
          }
        }
        return std::vector<DenseArray>{std::move(gx), std::move(ggain),
                                       std::move(goffset)};
      });
}

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Tensor unary(const Tensor& a, double (*fwd)(double), double (*bwd)(double)) {
  Tape* tape = tape_of({&a});
  DenseArray out = a.value();
  for (double& v : out.data) v = fwd(v);
  return emit(tape, std::move(out), {a}, [a, bwd](const DenseArray& g) {
    DenseArray ga = g;
    const DenseArray& X = a.value();
    for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= bwd(X.data[i]);
    return std::vector<DenseArray>{std::move(ga)};
  });
}

}  // namespace

Tensor softplus(const Tensor& a) {
  return unary(
      a,
      [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
      [](double v) { return sigmoid(v); });
}

Tensor gelu(const Tensor& a) {
  return unary(
      a,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); },
      [](double v) {
        const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
        return cdf + v * pdf;
      });
}

Tensor exp(const Tensor& a) {
  Tape* tape = tape_of({&a});
  DenseArray out = a.value();
  for (double& v : out.data) v = std::exp(v);
  DenseArray saved = out;
  return emit(tape, std::move(out), {a}, [saved](const DenseArray& g) {
    DenseArray ga = g;
    for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= saved.data[i];
    return std::vector<DenseArray>{std::move(ga)};
  });
}

Tensor log(const Tensor& a) {
  for (double v : a.value().data)
    if (!(v > 0.0)) throw std::domain_error("log: nonpositive input");
  return unary(
      a, [](double v) { return std::log(v); },
      [](double v) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.value().data)
    if (v < 0.0) throw std::domain_error("sqrt: negative input");
  return unary(
      a, [](double v) { return std::sqrt(v); },
      [](double v) { return 0.5 / std::sqrt(v); });
}

// ---- gradient checking ------------------------------------------------

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const DenseArray& x, double step) {
  std::vector<DenseArray> xs{x};
  return grad_check_multi(
      [&f](Tape& tape, const std::vector<Tensor>& ts) { return f(tape, ts[0]); },
      xs, step);
}

double grad_check_multi(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
    const std::vector<DenseArray>& xs, double step) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(xs.size());
  for (const DenseArray& x : xs) leaves.push_back(tape.leaf(x));
  Tensor loss = f(tape, leaves);
  if (!loss.value().finite())
    throw std::runtime_error("grad_check: non-finite value");
  tape.backward(loss);

  const auto eval = [&f](const std::vector<DenseArray>& pos) {
    Tape t;
    std::vector<Tensor> ts;
    ts.reserve(pos.size());
    for (const DenseArray& p : pos) ts.emplace_back(p);
    const double v = f(t, ts).scalar();
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite value");
    return v;
  };

  double worst = 0.0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const DenseArray ad = tape.grad(leaves[t]);
    std::vector<DenseArray> probe = xs;
    for (std::size_t i = 0; i < xs[t].data.size(); ++i) {
      const double orig = probe[t].data[i];
      probe[t].data[i] = orig + step;
      const double up = eval(probe);
      probe[t].data[i] = orig - step;
      const double dn = eval(probe);
      probe[t].data[i] = orig;
      const double cd = (up - dn) / (2.0 * step);
      const double err = std::abs(ad.data[i] - cd) / (std::abs(cd) + 1e-8);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

DenseArray random_array(std::vector<int> shape, std::uint64_t key, double scl) {
  RngStream rng(key);
  DenseArray a = DenseArray::zeros(std::move(shape));
  for (double& v : a.data) v = rng.normal() * scl;
  return a;
}

}  // namespace niva
