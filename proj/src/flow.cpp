#include "fvae/flow.hpp"

#include <stdexcept>
#include <string>

namespace fvae {

CouplingLayer::CouplingLayer(int dim, int split_index, int hidden, int blocks,
                             CouplingMode mode, double log_scale_clamp)
    : dim_(dim), split_index_(split_index), mode_(mode), clamp_(log_scale_clamp) {
  if (dim < 2) throw std::invalid_argument("coupling: dim must be >= 2");
  if (split_index < 1 || split_index > dim - 1)
    throw std::invalid_argument("coupling: split_index " + std::to_string(split_index) +
                                " out of range for dim " + std::to_string(dim));
  if (!(log_scale_clamp > 0.0))
    throw std::invalid_argument("coupling: log_scale_clamp must be positive");
  const int d1 = split_index, d2 = dim - split_index;
  scale_net_ = ResidualMLP(d1, hidden, blocks, d2);
  shift_net_ = ResidualMLP(d1, hidden, blocks, d2);
}

Tensor CouplingLayer::log_scales(Tape& tape, const Tensor& passthrough) const {
  return tape.scale(tape.tanh(scale_net_.forward(tape, passthrough)), clamp_);
}

std::pair<Tensor, Tensor> CouplingLayer::forward(Tape& tape, const Tensor& x) const {
  if (x.cols() != dim_)
    throw std::invalid_argument("coupling forward: input width " + std::to_string(x.cols()) +
                                " != dim " + std::to_string(dim_));
  auto [x1, x2] = tape.split(x, split_index_);
  Tensor shift = shift_net_.forward(tape, x1);
  const int n = x.rows();
  if (mode_ == CouplingMode::additive) {
    Tensor y2 = tape.add(x2, shift);
    return {tape.concat(x1, y2), Tensor::zeros({n, 1})};
  }
  Tensor log_s = log_scales(tape, x1);
  Tensor y2 = tape.add(tape.mul(tape.exp(log_s), x2), shift);
  // per-sample sum of log-scales via matmul with a ones column
  Tensor ones = Tensor::full({dim_ - split_index_, 1}, 1.0);
  Tensor logdet = tape.matmul(log_s, ones);
  return {tape.concat(x1, y2), logdet};
}

Tensor CouplingLayer::inverse(Tape& tape, const Tensor& y) const {
  if (y.cols() != dim_)
    throw std::invalid_argument("coupling inverse: input width " + std::to_string(y.cols()) +
                                " != dim " + std::to_string(dim_));
  auto [y1, y2] = tape.split(y, split_index_);
  Tensor shift = shift_net_.forward(tape, y1);
  Tensor x2;
  if (mode_ == CouplingMode::additive) {
    x2 = tape.sub(y2, shift);
  } else {
    Tensor inv_s = tape.exp(tape.scale(log_scales(tape, y1), -1.0));
    x2 = tape.mul(tape.sub(y2, shift), inv_s);
  }
  return tape.concat(y1, x2);
}

void CouplingLayer::init(SplitMix64& rng, double scale, bool zero_output) {
  scale_net_.init(rng, scale, zero_output);
  shift_net_.init(rng, scale, zero_output);
}

std::vector<Tensor> CouplingLayer::parameters() const {
  std::vector<Tensor> out = scale_net_.parameters();
  auto shift = shift_net_.parameters();
  out.insert(out.end(), shift.begin(), shift.end());
  return out;
}

Reversal::Reversal(int dim) : dim_(dim) {
  std::vector<double> j(static_cast<std::size_t>(dim) * dim, 0.0);
  for (int i = 0; i < dim; ++i) j[static_cast<std::size_t>(i) * dim + (dim - 1 - i)] = 1.0;
  exchange_ = Tensor::from_data({dim, dim}, std::move(j));
}

Tensor Reversal::apply(Tape& tape, const Tensor& x) const {
  return tape.matmul(x, exchange_);
}

FlowStack::FlowStack(int dim) : dim_(dim) {
  if (dim < 1) throw std::invalid_argument("flow: dim must be >= 1");
}

FlowStack FlowStack::alternating(int dim, int n_couplings, int hidden, int blocks,
                                 CouplingMode mode, int split_index, double log_scale_clamp) {
  FlowStack stack(dim);
  if (n_couplings == 0) return stack;
  const int at = split_index > 0 ? split_index : dim / 2;
  for (int i = 0; i < n_couplings; ++i) {
    if (i > 0) stack.push_reversal();
    stack.push_coupling(CouplingLayer(dim, at, hidden, blocks, mode, log_scale_clamp));
  }
  return stack;
}

void FlowStack::push_coupling(CouplingLayer layer) {
  if (layer.dim() != dim_)
    throw std::invalid_argument("flow: layer dim " + std::to_string(layer.dim()) +
                                " != stack dim " + std::to_string(dim_));
  layers_.emplace_back(std::move(layer));
}

void FlowStack::push_reversal() { layers_.emplace_back(Reversal(dim_)); }

void FlowStack::check_width(const Tensor& x, const char* op) const {
  if (x.cols() != dim_)
    throw std::invalid_argument(std::string(op) + ": input width " + std::to_string(x.cols()) +
                                " != flow dim " + std::to_string(dim_));
}

std::pair<Tensor, Tensor> FlowStack::forward(Tape& tape, const Tensor& x) const {
  check_width(x, "flow forward");
  Tensor z = x;
  Tensor logdet = Tensor::zeros({x.rows(), 1});
  for (const auto& layer : layers_) {
    if (const auto* coupling = std::get_if<CouplingLayer>(&layer)) {
      auto [y, ld] = coupling->forward(tape, z);
      z = y;
      logdet = tape.add(logdet, ld);
    } else {
      z = std::get<Reversal>(layer).apply(tape, z);
    }
  }
  return {z, logdet};
}

Tensor FlowStack::inverse(Tape& tape, const Tensor& z) const {
  check_width(z, "flow inverse");
  Tensor x = z;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    if (const auto* coupling = std::get_if<CouplingLayer>(&*it))
      x = coupling->inverse(tape, x);
    else
      x = std::get<Reversal>(*it).apply(tape, x);
  }
  return x;
}

void FlowStack::init(SplitMix64& rng, double scale, bool zero_output) {
  for (auto& layer : layers_)
    if (auto* coupling = std::get_if<CouplingLayer>(&layer))
      coupling->init(rng, scale, zero_output);
}

std::vector<Tensor> FlowStack::parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : layers_)
    if (const auto* coupling = std::get_if<CouplingLayer>(&layer)) {
      auto p = coupling->parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
  return out;
}

}  // namespace fvae
