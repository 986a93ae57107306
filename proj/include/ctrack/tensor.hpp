#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ctrack/common.hpp"

namespace ctrack {

// Dense row-major double tensor. Value semantics; copies share immutable
// storage. raw() exists for parameter initialization and optimizer updates
// only (never while a tape referencing the tensor is live in another thread).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return st_->shape; }
  int ndim() const { return int(st_->shape.size()); }
  int dim(int i) const { return st_->shape[size_t(i)]; }
  int64_t numel() const { return int64_t(st_->data.size()); }
  int rows() const { return st_->shape[0]; }
  int cols() const { return st_->shape[1]; }
  std::string shape_str() const { return ctrack::shape_str(st_->shape); }

  bool requires_grad() const { return st_ && st_->requires_grad; }
  void set_requires_grad(bool b) { st_->requires_grad = b; }
  int64_t id() const { return st_->id; }

  std::span<const double> data() const { return {st_->data.data(), st_->data.size()}; }
  std::span<double> raw() { return {st_->data.data(), st_->data.size()}; }
  const double* ptr() const { return st_->data.data(); }

  double operator[](int64_t i) const { return st_->data[size_t(i)]; }
  double at(int i, int j) const { return st_->data[size_t(i) * cols() + j]; }
  double item() const;

  Tensor clone() const;
  bool all_finite() const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    int64_t id = 0;
  };
  std::shared_ptr<Storage> st_;
  static Tensor make(Shape shape, std::vector<double> values);
};

// Define-by-run tape. Construction makes it the current tape for this thread;
// destruction restores the previous one. One tape per logical execution
// context; independent contexts use independent tapes.
class GradTape {
 public:
  using BackwardFn = std::function<void(const std::vector<Tensor>& out_grads, GradTape& tape)>;

  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* current();

  void record(std::vector<Tensor> outputs, BackwardFn fn);
  void accumulate(const Tensor& target, const Tensor& g);

  void backward(const Tensor& loss);
  Tensor grad(const Tensor& t) const;
  bool has_grad(const Tensor& t) const;
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<int64_t> out_ids;
    std::vector<Shape> out_shapes;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  std::unordered_map<int64_t, Tensor> grads_;
  std::unordered_set<int64_t> produced_;
  GradTape* prev_ = nullptr;
};

// Suppresses recording on the current tape while alive.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

// False while a NoGradGuard is alive on this thread. Custom ops recording
// their own tape nodes must honor this alongside GradTape::current().
bool grad_enabled();

// ---- differentiable operations ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor add_rowvec(const Tensor& a, const Tensor& v);  // [n,d] + [d]

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor pow_const(const Tensor& a, double e);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias);
inline constexpr double kLayerNormEps = 1e-5;

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor gather_rows(const Tensor& a, std::vector<int> idx);
Tensor reshape(const Tensor& a, Shape shape);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// eps must lie in [1e-7, 1e-3]; f must return a scalar.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps);

}  // namespace ctrack
