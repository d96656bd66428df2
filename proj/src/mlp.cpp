#include "phasedeploy/mlp.hpp"

#include <cassert>
#include <cmath>

#include "phasedeploy/error.hpp"
#include "phasedeploy/hash.hpp"

namespace phasedeploy::nn {

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw ConfigError("network needs at least an input and output layer");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] <= 0 || sizes_[l + 1] <= 0) throw ConfigError("network layer widths must be positive");
    offsets_.push_back(total);
    total += static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1] + sizes_[l + 1];
  }
  params_.assign(total, 0.0);
}

Mlp Mlp::initialized(std::vector<int> sizes, Rng& rng, double output_gain) {
  Mlp net(std::move(sizes));
  const std::size_t layers = net.sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = net.sizes_[l];
    const int out = net.sizes_[l + 1];
    double limit = std::sqrt(6.0 / (in + out));
    if (l + 1 == layers) limit *= output_gain;
    double* w = net.params_.data() + net.offsets_[l];
    for (int i = 0; i < in * out; ++i) w[i] = rng.uniform(-limit, limit);
  }
  return net;
}

void Mlp::forward(std::span<const double> x, std::span<double> out, Tape* tape) const {
  assert(x.size() == input_dim());
  assert(out.size() == output_dim());
  const std::size_t layers = sizes_.size() - 1;
  thread_local std::vector<double> cur, next;
  cur.assign(x.begin(), x.end());
  if (tape) {
    tape->layer_out.resize(layers + 1);
    tape->layer_out[0] = cur;
  }
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = sizes_[l];
    const int n_out = sizes_[l + 1];
    const double* w = params_.data() + offsets_[l];
    const double* b = w + static_cast<std::size_t>(in) * n_out;
    next.assign(static_cast<std::size_t>(n_out), 0.0);
    for (int o = 0; o < n_out; ++o) {
      double acc = b[o];
      const double* row = w + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) acc += row[i] * cur[i];
      next[o] = (l + 1 < layers) ? std::tanh(acc) : acc;
    }
    cur.swap(next);
    if (tape) tape->layer_out[l + 1] = cur;
  }
  for (std::size_t i = 0; i < cur.size(); ++i) out[i] = cur[i];
}

void Mlp::backward(const Tape& tape, std::span<const double> grad_out, std::span<double> grad) const {
  assert(grad.size() == params_.size());
  const std::size_t layers = sizes_.size() - 1;
  thread_local std::vector<double> delta, prev_delta;
  delta.assign(grad_out.begin(), grad_out.end());
  for (std::size_t l = layers; l-- > 0;) {
    const int in = sizes_[l];
    const int n_out = sizes_[l + 1];
    const double* w = params_.data() + offsets_[l];
    double* gw = grad.data() + offsets_[l];
    double* gb = gw + static_cast<std::size_t>(in) * n_out;
    const std::vector<double>& input = tape.layer_out[l];
    if (l + 1 < layers) {
      // Output of this layer went through tanh.
      const std::vector<double>& act = tape.layer_out[l + 1];
      for (int o = 0; o < n_out; ++o) delta[o] *= 1.0 - act[o] * act[o];
    }
    const double* __restrict in_ptr = input.data();
    for (int o = 0; o < n_out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      double* __restrict grow = gw + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) grow[i] += d * in_ptr[i];
    }
    if (l == 0) break;  // the input gradient is never consumed
    prev_delta.assign(static_cast<std::size_t>(in), 0.0);
    double* __restrict pd = prev_delta.data();
    for (int o = 0; o < n_out; ++o) {
      const double d = delta[o];
      const double* __restrict row = w + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) pd[i] += d * row[i];
    }
    delta.swap(prev_delta);
  }
}

bool Mlp::all_finite() const {
  for (double p : params_) {
    if (!std::isfinite(p)) return false;
  }
  return true;
}

std::uint64_t Mlp::fingerprint() const {
  Fnv1a h;
  for (int s : sizes_) h.i64(s);
  h.doubles(params_);
  return h.value();
}

bool AdamState::all_finite() const {
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!std::isfinite(m[i]) || !std::isfinite(v[i])) return false;
  }
  return t >= 0;
}

void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state, const AdamConfig& cfg) {
  assert(params.size() == grad.size() && state.m.size() == grad.size());
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

double clip_grad_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / (norm + 1e-12);
    for (double& g : grad) g *= scale;
  }
  return norm;
}

}  // namespace phasedeploy::nn
