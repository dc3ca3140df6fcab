#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace niva {

// Dense row-major array of 64-bit floats. Values are immutable once wrapped
// in a Tensor; DenseArray itself is a plain buffer.
struct DenseArray {
  std::vector<int> shape;
  std::vector<double> data;

  DenseArray() = default;
  DenseArray(std::vector<int> shp, std::vector<double> values);

  static DenseArray zeros(std::vector<int> shp);
  static DenseArray full(std::vector<int> shp, double v);
  static DenseArray scalar(double v);
  static DenseArray vec(std::vector<double> values);
  static DenseArray matrix(int r, int c, std::vector<double> values);
  static DenseArray identity(int n);

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int rows() const;
  int cols() const;

  double& at(int i) { return data[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(int i, int j);
  double at(int i, int j) const;

  bool finite() const;
  bool same_shape(const DenseArray& o) const { return shape == o.shape; }
};

class Tape;

// Value handle; optionally attached to a Tape node for reverse-mode autodiff.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(DenseArray value)
      : value_(std::make_shared<DenseArray>(std::move(value))) {}

  const DenseArray& value() const { return *value_; }
  const std::vector<int>& shape() const { return value_->shape; }
  std::int64_t size() const { return value_->size(); }
  double scalar() const;
  double operator()(int i) const { return value_->at(i); }
  double operator()(int i, int j) const { return value_->at(i, j); }

  bool defined() const { return value_ != nullptr; }
  bool tracked() const { return node_ >= 0; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

 private:
  friend class Tape;
  std::shared_ptr<const DenseArray> value_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Wengert list: ordered record of primitive ops with saved inputs. A node's
// parents always precede it, so one reverse sweep visits every node once.
class Tape {
 public:
  using Vjp = std::function<std::vector<DenseArray>(const DenseArray& grad_out)>;

  Tensor leaf(DenseArray value);
  Tensor track(DenseArray out, const std::vector<Tensor>& parents, Vjp vjp);

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node on a
  // path to the loss. Leaves off any path keep an exactly-zero gradient.
  void backward(const Tensor& loss);

  DenseArray grad(const Tensor& t) const;
  bool has_grad(const Tensor& t) const;

  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    std::vector<int> parents;
    Vjp vjp;  // null for leaves
  };
  std::vector<Node> nodes_;
  std::vector<std::shared_ptr<const DenseArray>> values_;
  std::vector<DenseArray> grads_;
};

// ---- primitive ops ----------------------------------------------------
// Every op validates shapes, computes the forward value, and registers its
// gradient rule when any input is tracked.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_row(const Tensor& a, const Tensor& row);  // broadcast row over rows
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor stack_rows(const std::vector<Tensor>& rows);  // n vectors {d} -> {n,d}
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
Tensor softmax(const Tensor& a, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset);
Tensor softplus(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);

// ---- gradient checking --------------------------------------------------
// Max over coordinates of |autodiff - central difference| / (|cd| + 1e-8).
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const DenseArray& x, double step = 1e-6);
double grad_check_multi(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
    const std::vector<DenseArray>& xs, double step = 1e-6);

DenseArray random_array(std::vector<int> shape, std::uint64_t key,
                        double scale = 1.0);

}  // namespace niva
