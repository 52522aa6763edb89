#include "fvae/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace fvae {

DenseLayer::DenseLayer(int in, int out)
    : weight(Tensor::zeros({in, out}, true)), bias(Tensor::zeros({out}, true)) {}

Tensor DenseLayer::forward(Tape& tape, const Tensor& x) const {
  return tape.add_row(tape.matmul(x, weight), bias);
}

void DenseLayer::init(SplitMix64& rng, double scale) {
  const int in = weight.shape()[0], out = weight.shape()[1];
  const double sd = scale * std::sqrt(2.0 / static_cast<double>(in + out));
  for (double& w : weight.data()) w = sd * rng.next_gaussian();
  for (double& b : bias.data()) b = 0.0;
}

void DenseLayer::zero() {
  for (double& w : weight.data()) w = 0.0;
  for (double& b : bias.data()) b = 0.0;
}

ResidualMLP::ResidualMLP(int in_dim, int hidden, int blocks, int out_dim)
    : in_dim_(in_dim), hidden_(hidden), blocks_(blocks), out_dim_(out_dim) {
  if (in_dim <= 0 || hidden <= 0 || blocks < 0 || out_dim <= 0)
    throw std::invalid_argument("ResidualMLP: dims must be positive, blocks >= 0");
  input_ = DenseLayer(in_dim, hidden);
  output_ = DenseLayer(hidden, out_dim);
  for (int b = 0; b < blocks; ++b)
    residual_.emplace_back(DenseLayer(hidden, hidden), DenseLayer(hidden, hidden));
}

Tensor ResidualMLP::forward(Tape& tape, const Tensor& x) const {
  Tensor h = input_.forward(tape, x);
  for (const auto& [first, second] : residual_) {
    Tensor inner = second.forward(tape, tape.relu(first.forward(tape, h)));
    h = tape.add(h, inner);
  }
  return output_.forward(tape, h);
}

void ResidualMLP::init(SplitMix64& rng, double scale, bool zero_output) {
  input_.init(rng, scale);
  for (auto& [first, second] : residual_) {
    first.init(rng, scale);
    second.init(rng, scale);
  }
  if (zero_output)
    output_.zero();
  else
    output_.init(rng, scale);
}

std::vector<Tensor> ResidualMLP::parameters() const {
  std::vector<Tensor> out{input_.weight, input_.bias};
  for (const auto& [first, second] : residual_) {
    out.push_back(first.weight);
    out.push_back(first.bias);
    out.push_back(second.weight);
    out.push_back(second.bias);
  }
  out.push_back(output_.weight);
  out.push_back(output_.bias);
  return out;
}

Tensor softplus(Tape& tape, const Tensor& x) {
  Tensor neg_abs = tape.sub(x, tape.scale(tape.relu(x), 2.0));  // -|x|
  Tensor one = Tensor::full(x.shape(), 1.0);
  return tape.add(tape.relu(x), tape.log(tape.add(tape.exp(neg_abs), one)));
}

}  // namespace fvae
