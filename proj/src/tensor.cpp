#include "fvae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fvae {

namespace {

long long shape_product(const std::vector<int>& shape) {
  long long n = 1;
  for (int e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor shape extents must be positive");
    n *= e;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

[[noreturn]] void shape_error(const char* op, const std::vector<int>& a,
                              const std::vector<int>& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) +
                              " vs " + shape_str(b));
}

}  // namespace

struct Tensor::Impl {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  bool tape_product = false;  // produced by a Tape op (not a leaf)
};

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  const auto n = shape_product(shape);
  return from_data(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                   requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  const auto n = shape_product(shape);
  return from_data(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value),
                   requires_grad);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  const auto n = shape_product(shape);
  if (static_cast<long long>(data.size()) != n) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const { return impl_->shape; }
int Tensor::size() const { return static_cast<int>(impl_->data.size()); }
int Tensor::rows() const { return impl_->shape.front(); }
int Tensor::cols() const { return impl_->shape.back(); }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool v) { impl_->requires_grad = v; }

std::vector<double>& Tensor::data() { return impl_->data; }
const std::vector<double>& Tensor::data() const { return impl_->data; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::vector<double>& Tensor::grad() {
  if (!has_grad()) throw std::logic_error("tensor has no gradient buffer");
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient buffer");
  return impl_->grad;
}

void Tensor::drop_grad() { impl_->grad.clear(); }

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("item() requires a single-element tensor");
  return impl_->data[0];
}

double Tensor::at(int flat_index) const { return impl_->data[static_cast<std::size_t>(flat_index)]; }

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tensor Tape::emit(const char* op, std::vector<Tensor> inputs, Tensor output,
                  std::function<void(const Node&)> pull) {
  bool rg = false;
  for (const auto& in : inputs) rg = rg || in.requires_grad() || in.impl_->tape_product;
  output.impl_->requires_grad = rg;
  output.impl_->tape_product = true;
  nodes_.push_back(Node{op, std::move(inputs), {output}, std::move(pull)});
  return output;
}

namespace {

// Accumulate into a tensor's grad buffer if backward allocated one.
void accum(const Tensor& t, const std::vector<double>& contribution) {
  if (!t.has_grad()) return;
  auto& g = const_cast<Tensor&>(t).grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

}  // namespace

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return emit("add", {a, b}, Tensor::from_data(a.shape(), std::move(out)),
              [](const Node& n) {
                const auto& g = n.outputs[0].grad();
                accum(n.inputs[0], g);
                accum(n.inputs[1], g);
              });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return emit("sub", {a, b}, Tensor::from_data(a.shape(), std::move(out)),
              [](const Node& n) {
                const auto& g = n.outputs[0].grad();
                accum(n.inputs[0], g);
                if (n.inputs[1].has_grad()) {
                  auto& gb = const_cast<Tensor&>(n.inputs[1]).grad();
                  for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                }
              });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return emit("mul", {a, b}, Tensor::from_data(a.shape(), std::move(out)),
              [](const Node& n) {
                const auto& g = n.outputs[0].grad();
                const auto& av = n.inputs[0].data();
                const auto& bv = n.inputs[1].data();
                if (n.inputs[0].has_grad()) {
                  auto& ga = const_cast<Tensor&>(n.inputs[0]).grad();
                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
                }
                if (n.inputs[1].has_grad()) {
                  auto& gb = const_cast<Tensor&>(n.inputs[1]).grad();
                  for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
                }
              });
}

Tensor Tape::scale(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) shape_error("scale", x.shape(), s.shape());
  const double sv = s.data()[0];
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * sv;
  return emit("scale", {x, s}, Tensor::from_data(x.shape(), std::move(out)),
              [](const Node& n) {
                const auto& g = n.outputs[0].grad();
                const auto& xv = n.inputs[0].data();
                const double sv = n.inputs[1].data()[0];
                if (n.inputs[0].has_grad()) {
                  auto& gx = const_cast<Tensor&>(n.inputs[0]).grad();
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * sv;
                }
                if (n.inputs[1].has_grad()) {
                  double acc = 0.0;
                  for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
                  const_cast<Tensor&>(n.inputs[1]).grad()[0] += acc;
                }
              });
}

Tensor Tape::scale(const Tensor& x, double c) {
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
  return emit("scale", {x}, Tensor::from_data(x.shape(), std::move(out)),
              [c](const Node& n) {
                if (!n.inputs[0].has_grad()) return;
                const auto& g = n.outputs[0].grad();
                auto& gx = const_cast<Tensor&>(n.inputs[0]).grad();
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * c;
              });
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    shape_error("matmul", a.shape(), b.shape());
  const int n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(static_cast<std::size_t>(n) * m, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (int i = 0; i < n; ++i) {
    double* orow = out.data() + static_cast<std::size_t>(i) * m;
    const double* arow = A + static_cast<std::size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      const double* brow = B + static_cast<std::size_t>(kk) * m;
      for (int j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
  return emit("matmul", {a, b}, Tensor::from_data({n, m}, std::move(out)),
              [n, k, m](const Node& nd) {
                const auto& g = nd.outputs[0].grad();
                const double* G = g.data();
                const double* A = nd.inputs[0].data().data();
                const double* B = nd.inputs[1].data().data();
                if (nd.inputs[0].has_grad()) {
                  // gA = g . B^T
                  auto& ga = const_cast<Tensor&>(nd.inputs[0]).grad();
                  for (int i = 0; i < n; ++i) {
                    double* garow = ga.data() + static_cast<std::size_t>(i) * k;
                    const double* grow = G + static_cast<std::size_t>(i) * m;
                    for (int kk = 0; kk < k; ++kk) {
                      const double* brow = B + static_cast<std::size_t>(kk) * m;
                      double acc = 0.0;
                      for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
                      garow[kk] += acc;
                    }
                  }
                }
                if (nd.inputs[1].has_grad()) {
                  // gB = A^T . g
                  auto& gb = const_cast<Tensor&>(nd.inputs[1]).grad();
                  for (int i = 0; i < n; ++i) {
                    const double* arow = A + static_cast<std::size_t>(i) * k;
                    const double* grow = G + static_cast<std::size_t>(i) * m;
                    for (int kk = 0; kk < k; ++kk) {
                      const double aik = arow[kk];
                      double* gbrow = gb.data() + static_cast<std::size_t>(kk) * m;
                      for (int j = 0; j < m; ++j) gbrow[j] += aik * grow[j];
                    }
                  }
                }
              });
}

Tensor Tape::tanh(const Tensor& x) {
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data()[i]);
  return emit("tanh", {x}, Tensor::from_data(x.shape(), std::move(out)),
              [](const Node& n) {
                if (!n.inputs[0].has_grad()) return;
                const auto& g = n.outputs[0].grad();
                const auto& y = n.outputs[0].data();
                auto& gx = const_cast<Tensor&>(n.inputs[0]).grad();
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
              });
}

Tensor Tape::relu(const Tensor& x) {
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  return emit("relu", {x}, Tensor::from_data(x.shape(), std::move(out)),
              [](const Node& n) {
                if (!n.inputs[0].has_grad()) return;
                const auto& g = n.outputs[0].grad();
                const auto& xv = n.inputs[0].data();
                auto& gx = const_cast<Tensor&>(n.inputs[0]).grad();
                for (std::size_t i = 0; i < gx.size(); ++i)
                  if (xv[i] > 0.0) gx[i] += g[i];
              });
}

Tensor Tape::exp(const Tensor& x) {
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.data()[i]);
  return emit("exp", {x}, Tensor::from_data(x.shape(), std::move(out)),
              [](const Node& n) {
                if (!n.inputs[0].has_grad()) return;
                const auto& g = n.outputs[0].grad();
                const auto& y = n.outputs[0].data();
                auto& gx = const_cast<Tensor&>(n.inputs[0]).grad();
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * y[i];
              });
}

Tensor Tape::log(const Tensor& x) {
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(x.data()[i] > 0.0))
      throw std::invalid_argument("log: non-positive value " + std::to_string(x.data()[i]) +
                                  " at index " + std::to_string(i));
    out[i] = std::log(x.data()[i]);
  }
  return emit("log", {x}, Tensor::from_data(x.shape(), std::move(out)),
              [](const Node& n) {
                if (!n.inputs[0].has_grad()) return;
                const auto& g = n.outputs[0].grad();
                const auto& xv = n.inputs[0].data();
                auto& gx = const_cast<Tensor&>(n.inputs[0]).grad();
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] / xv[i];
              });
}

Tensor Tape::square(const Tensor& x) {
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * x.data()[i];
  return emit("square", {x}, Tensor::from_data(x.shape(), std::move(out)),
              [](const Node& n) {
                if (!n.inputs[0].has_grad()) return;
                const auto& g = n.outputs[0].grad();
                const auto& xv = n.inputs[0].data();
                auto& gx = const_cast<Tensor&>(n.inputs[0]).grad();
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * g[i] * xv[i];
              });
}

Tensor Tape::sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return emit("sum", {x}, Tensor::scalar(acc), [](const Node& n) {
    if (!n.inputs[0].has_grad()) return;
    const double g = n.outputs[0].grad()[0];
    auto& gx = const_cast<Tensor&>(n.inputs[0]).grad();
    for (double& v : gx) v += g;
  });
}

Tensor Tape::mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double inv_n = 1.0 / static_cast<double>(x.size());
  return emit("mean", {x}, Tensor::scalar(acc * inv_n), [inv_n](const Node& n) {
    if (!n.inputs[0].has_grad()) return;
    const double g = n.outputs[0].grad()[0] * inv_n;
    auto& gx = const_cast<Tensor&>(n.inputs[0]).grad();
    for (double& v : gx) v += g;
  });
}

std::pair<Tensor, Tensor> Tape::split(const Tensor& x, int at) {
  const int d = x.cols();
  if (at < 1 || at > d - 1)
    throw std::invalid_argument("split: index " + std::to_string(at) +
                                " out of range for width " + std::to_string(d));
  const int n = (x.rank() == 2) ? x.rows() : 1;
  const int d1 = at, d2 = d - at;
  std::vector<double> lo(static_cast<std::size_t>(n) * d1), hi(static_cast<std::size_t>(n) * d2);
  for (int i = 0; i < n; ++i) {
    const double* row = x.data().data() + static_cast<std::size_t>(i) * d;
    std::copy(row, row + d1, lo.data() + static_cast<std::size_t>(i) * d1);
    std::copy(row + d1, row + d, hi.data() + static_cast<std::size_t>(i) * d2);
  }
  Tensor tlo = (x.rank() == 2) ? Tensor::from_data({n, d1}, std::move(lo))
                               : Tensor::from_data({d1}, std::move(lo));
  Tensor thi = (x.rank() == 2) ? Tensor::from_data({n, d2}, std::move(hi))
                               : Tensor::from_data({d2}, std::move(hi));
  bool rg = x.requires_grad() || x.impl_->tape_product;
  tlo.impl_->requires_grad = rg;
  thi.impl_->requires_grad = rg;
  tlo.impl_->tape_product = true;
  thi.impl_->tape_product = true;
  nodes_.push_back(Node{"split", {x}, {tlo, thi}, [n, d, d1, d2](const Node& nd) {
                          if (!nd.inputs[0].has_grad()) return;
                          auto& gx = const_cast<Tensor&>(nd.inputs[0]).grad();
                          const auto& glo = nd.outputs[0].grad();
                          const auto& ghi = nd.outputs[1].grad();
                          for (int i = 0; i < n; ++i) {
                            double* grow = gx.data() + static_cast<std::size_t>(i) * d;
                            for (int j = 0; j < d1; ++j)
                              grow[j] += glo[static_cast<std::size_t>(i) * d1 + j];
                            for (int j = 0; j < d2; ++j)
                              grow[d1 + j] += ghi[static_cast<std::size_t>(i) * d2 + j];
                          }
                        }});
  return {tlo, thi};
}

Tensor Tape::concat(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || (a.rank() == 2 && a.rows() != b.rows()))
    shape_error("concat", a.shape(), b.shape());
  const int n = (a.rank() == 2) ? a.rows() : 1;
  const int da = a.cols(), db = b.cols(), d = da + db;
  std::vector<double> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    double* row = out.data() + static_cast<std::size_t>(i) * d;
    std::copy(a.data().data() + static_cast<std::size_t>(i) * da,
              a.data().data() + static_cast<std::size_t>(i + 1) * da, row);
    std::copy(b.data().data() + static_cast<std::size_t>(i) * db,
              b.data().data() + static_cast<std::size_t>(i + 1) * db, row + da);
  }
  Tensor t = (a.rank() == 2) ? Tensor::from_data({n, d}, std::move(out))
                             : Tensor::from_data({d}, std::move(out));
  return emit("concat", {a, b}, std::move(t), [n, da, db, d](const Node& nd) {
    const auto& g = nd.outputs[0].grad();
    if (nd.inputs[0].has_grad()) {
      auto& ga = const_cast<Tensor&>(nd.inputs[0]).grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < da; ++j)
          ga[static_cast<std::size_t>(i) * da + j] += g[static_cast<std::size_t>(i) * d + j];
    }
    if (nd.inputs[1].has_grad()) {
      auto& gb = const_cast<Tensor&>(nd.inputs[1]).grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < db; ++j)
          gb[static_cast<std::size_t>(i) * db + j] += g[static_cast<std::size_t>(i) * d + da + j];
    }
  });
}

Tensor Tape::add_row(const Tensor& x, const Tensor& row) {
  if (x.rank() != 2 || row.rank() != 1 || x.cols() != row.cols())
    shape_error("broadcast-add-row", x.shape(), row.shape());
  const int n = x.rows(), d = x.cols();
  std::vector<double> out(x.data().size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out[static_cast<std::size_t>(i) * d + j] =
          x.data()[static_cast<std::size_t>(i) * d + j] + row.data()[j];
  return emit("broadcast-add-row", {x, row}, Tensor::from_data({n, d}, std::move(out)),
              [n, d](const Node& nd) {
                const auto& g = nd.outputs[0].grad();
                accum(nd.inputs[0], g);
                if (nd.inputs[1].has_grad()) {
                  auto& gr = const_cast<Tensor&>(nd.inputs[1]).grad();
                  for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) gr[j] += g[static_cast<std::size_t>(i) * d + j];
                }
              });
}

void Tape::backward(const Tensor& scalar_loss) {
  if (!scalar_loss.defined() || scalar_loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");

  // Allocate zero-filled grad buffers for every tensor the tape references
  // that either requires grad or is an intermediate the sweep flows through.
  auto ensure = [](const Tensor& t) {
    if (t.requires_grad() || t.impl_->tape_product) {
      t.impl_->grad.assign(t.impl_->data.size(), 0.0);
    }
  };
  for (auto& node : nodes_) {
    for (auto& in : node.inputs) ensure(in);
    for (auto& out : node.outputs) ensure(out);
  }
  ensure(scalar_loss);
  if (!scalar_loss.has_grad()) scalar_loss.impl_->grad.assign(1, 0.0);
  scalar_loss.impl_->grad[0] = 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->pull(*it);
}

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& fn,
                  const Tensor& point, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  Tensor p = Tensor::from_data(point.shape(), point.data(), true);
  Tape tape;
  Tensor loss = fn(tape, p);
  if (loss.size() != 1) throw std::invalid_argument("grad_check: fn must return a scalar");
  tape.backward(loss);
  const std::vector<double> autodiff = p.grad();

  double max_err = 0.0;
  for (int i = 0; i < point.size(); ++i) {
    auto eval_at = [&](double v) {
      std::vector<double> d = point.data();
      d[static_cast<std::size_t>(i)] = v;
      Tensor q = Tensor::from_data(point.shape(), std::move(d), false);
      Tape t;
      const double r = fn(t, q).item();
      if (!std::isfinite(r))
        throw std::runtime_error("grad_check: non-finite value at coordinate " +
                                 std::to_string(i));
      return r;
    };
    const double x0 = point.data()[static_cast<std::size_t>(i)];
    const double fd = (eval_at(x0 + step) - eval_at(x0 - step)) / (2.0 * step);
    const double ad = autodiff[static_cast<std::size_t>(i)];
    if (!std::isfinite(ad))
      throw std::runtime_error("grad_check: non-finite gradient at coordinate " +
                               std::to_string(i));
    const double err = std::abs(ad - fd) / std::max(1.0, std::abs(fd));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace fvae
