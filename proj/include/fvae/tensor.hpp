#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace fvae {

/// Dense n-dimensional 64-bit float tensor, row-major. A Tensor is a shared
/// handle: copies alias the same storage, so parameters stay live across
/// training steps while tapes come and go. Gradients are owned by the tensor
/// and written by Tape::backward.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);  // shape [1]

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int size() const;
  int rows() const;  // first extent (rank >= 1)
  int cols() const;  // last extent (rank >= 1)
  int rank() const;
  bool requires_grad() const;
  void set_requires_grad(bool v);

  std::vector<double>& data();
  const std::vector<double>& data() const;

  bool has_grad() const;
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void drop_grad();

  double item() const;  // requires size() == 1
  double at(int flat_index) const;

  /// Identity of the underlying storage; used by backward to tell leaves
  /// from tape-produced intermediates.
  const void* id() const { return impl_.get(); }

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
  friend class Tape;
};

/// Append-only record of primitive applications. Node order is the forward
/// execution order, which is by construction a topological order of the
/// computation graph; backward replays it in exact reverse. A tape and the
/// tensors it produced are confined to one thread for the duration of a
/// forward/backward pass; distinct tapes are independent.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Primitive set. Shapes must conform exactly per op; violations throw
  // std::invalid_argument naming the op and both shapes.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& x, const Tensor& s);  // s has size 1, differentiable in both
  Tensor scale(const Tensor& x, double c);         // constant factor
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor tanh(const Tensor& x);
  Tensor relu(const Tensor& x);
  Tensor exp(const Tensor& x);
  Tensor log(const Tensor& x);  // rejects non-positive entries
  Tensor square(const Tensor& x);
  Tensor sum(const Tensor& x);   // all elements -> [1]
  Tensor mean(const Tensor& x);  // all elements -> [1]
  std::pair<Tensor, Tensor> split(const Tensor& x, int at);  // along last axis
  Tensor concat(const Tensor& a, const Tensor& b);           // along last axis
  Tensor add_row(const Tensor& x, const Tensor& row);        // [n,d] + [d]

  /// Reverse-mode sweep from a scalar loss. Grad buffers of every tensor
  /// referenced on the tape are (re)allocated and zero-filled first, then
  /// gradients accumulate additively across fan-out. Requires loss shape
  /// [1] or []; throws otherwise.
  void backward(const Tensor& scalar_loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op;
    std::vector<Tensor> inputs;
    std::vector<Tensor> outputs;
    std::function<void(const Node&)> pull;
  };
  std::vector<Node> nodes_;

  Tensor emit(const char* op, std::vector<Tensor> inputs, Tensor output,
              std::function<void(const Node&)> pull);
};

/// Max over coordinates of |autodiff - central difference| / max(1, |central
/// difference|) for a scalar-valued function of one tensor. The differences
/// are evaluated by forward passes only, independent of the backward path
/// they check. Non-finite values are rejected with the coordinate index.
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& fn,
                  const Tensor& point, double step);

}  // namespace fvae
