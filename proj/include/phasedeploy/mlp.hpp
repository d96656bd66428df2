#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "phasedeploy/rng.hpp"

namespace phasedeploy::nn {

// Feed-forward network with tanh hidden layers and a linear output layer.
// All parameters live in one flat vector (per layer: weights row-major
// [out x in], then biases) so optimizers, fingerprints, and serialization
// can treat a network as a plain array.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> sizes);

  // Xavier-uniform weights, zero biases; the output layer is scaled by
  // `output_gain`.
  static Mlp initialized(std::vector<int> sizes, Rng& rng, double output_gain);

  const std::vector<int>& sizes() const { return sizes_; }
  std::size_t input_dim() const { return static_cast<std::size_t>(sizes_.front()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(sizes_.back()); }
  std::size_t param_count() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  // Per-sample activations kept for the backward pass.
  struct Tape {
    std::vector<std::vector<double>> layer_out;  // index 0 holds the input
  };

  void forward(std::span<const double> x, std::span<double> out, Tape* tape = nullptr) const;
  // Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
  void backward(const Tape& tape, std::span<const double> grad_out, std::span<double> grad) const;

  bool all_finite() const;
  std::uint64_t fingerprint() const;

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  std::size_t layer_offset(std::size_t layer) const { return offsets_[layer]; }

  std::vector<int> sizes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

// Adam moments for one parameter vector.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
  bool all_finite() const;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state, const AdamConfig& cfg);

// Rescales `grad` in place so its L2 norm is at most max_norm; returns the
// norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(std::span<double> grad, double max_norm);

}  // namespace phasedeploy::nn
