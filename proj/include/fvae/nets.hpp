#pragma once

#include <vector>

#include "fvae/rng.hpp"
#include "fvae/tensor.hpp"

namespace fvae {

struct DenseLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  DenseLayer() = default;
  DenseLayer(int in, int out);

  Tensor forward(Tape& tape, const Tensor& x) const;
  void init(SplitMix64& rng, double scale);
  void zero();
};

/// Dense residual network: an input projection, `blocks` residual steps of
/// the form h -> h + dense(relu(dense(h))), and a linear output layer.
/// blocks == 0 degenerates to an affine map (two stacked linear layers).
class ResidualMLP {
 public:
  ResidualMLP() = default;
  ResidualMLP(int in_dim, int hidden, int blocks, int out_dim);

  Tensor forward(Tape& tape, const Tensor& x) const;

  /// Random init of all layers; zero_output forces the output layer to zero
  /// so the network starts as the constant-zero map.
  void init(SplitMix64& rng, double scale, bool zero_output);

  std::vector<Tensor> parameters() const;
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }

 private:
  int in_dim_ = 0, hidden_ = 0, blocks_ = 0, out_dim_ = 0;
  DenseLayer input_, output_;
  std::vector<std::pair<DenseLayer, DenseLayer>> residual_;
};

/// Numerically stable softplus, log(1 + e^x), built from tape primitives:
/// relu(x) + log(1 + exp(x - 2*relu(x))). Strictly positive output.
Tensor softplus(Tape& tape, const Tensor& x);

}  // namespace fvae
