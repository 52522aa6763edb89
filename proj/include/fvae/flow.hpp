#pragma once

#include <variant>
#include <vector>

#include "fvae/nets.hpp"
#include "fvae/rng.hpp"
#include "fvae/tensor.hpp"

namespace fvae {

enum class CouplingMode { affine, additive };

/// Invertible coupling (affine or additive). The first split_index features
/// pass through unchanged; the rest are scaled and shifted by networks of
/// the pass-through part. Scales are parameterized s = exp(c * tanh(raw)),
/// so e^-c <= s <= e^c and the layer stays invertible for any weights.
class CouplingLayer {
 public:
  CouplingLayer(int dim, int split_index, int hidden, int blocks, CouplingMode mode,
                double log_scale_clamp = 2.0);

  /// Returns (y, per-sample logdet [n,1]); differentiable end to end.
  std::pair<Tensor, Tensor> forward(Tape& tape, const Tensor& x) const;
  Tensor inverse(Tape& tape, const Tensor& y) const;

  void init(SplitMix64& rng, double scale, bool zero_output);
  std::vector<Tensor> parameters() const;

  int dim() const { return dim_; }
  int split_index() const { return split_index_; }
  CouplingMode mode() const { return mode_; }

 private:
  int dim_, split_index_;
  CouplingMode mode_;
  double clamp_;
  ResidualMLP scale_net_, shift_net_;

  Tensor log_scales(Tape& tape, const Tensor& passthrough) const;
};

/// Feature-order reversal; an involution with unit |det|. Implemented as a
/// matmul with the constant exchange matrix so it stays inside the
/// primitive set.
class Reversal {
 public:
  explicit Reversal(int dim);
  Tensor apply(Tape& tape, const Tensor& x) const;
  int dim() const { return dim_; }

 private:
  int dim_;
  Tensor exchange_;  // [d,d] anti-diagonal ones
};

/// Ordered sequence of invertible layers sharing one feature count.
/// Empty stacks act as the identity with logdet 0.
class FlowStack {
 public:
  explicit FlowStack(int dim);

  /// n_couplings affine/additive couplings with a feature reversal between
  /// consecutive ones, so every coordinate gets transformed.
  static FlowStack alternating(int dim, int n_couplings, int hidden, int blocks,
                               CouplingMode mode, int split_index = -1,
                               double log_scale_clamp = 2.0);

  void push_coupling(CouplingLayer layer);
  void push_reversal();

  /// Returns (z, per-sample logdet [n,1]): sum of layer logdets.
  std::pair<Tensor, Tensor> forward(Tape& tape, const Tensor& x) const;
  Tensor inverse(Tape& tape, const Tensor& z) const;

  void init(SplitMix64& rng, double scale, bool zero_output);
  std::vector<Tensor> parameters() const;

  int dim() const { return dim_; }
  bool empty() const { return layers_.empty(); }
  std::size_t layer_count() const { return layers_.size(); }

 private:
  int dim_;
  std::vector<std::variant<CouplingLayer, Reversal>> layers_;

  void check_width(const Tensor& x, const char* op) const;
};

}  // namespace fvae
