#pragma once

// Minimal dense-network substrate: MLP forward with activation tracing,
// hand-written layer-local backprop, adaptive-moment optimizer, and
// parameter snapshot/diff used to build policy-update graphs.

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace pug::nn {

enum class Activation { Relu, Identity, Tanh };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct Layer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> w;  // out x in, row-major
  std::vector<double> b;  // out
  Activation act = Activation::Identity;
};

// Frozen flat copy of every weight and bias at training time T.
// Layout: per layer, weights row-major then biases.
struct ParamSnapshot {
  std::int64_t time_index = 0;
  std::vector<double> values;
};

// Per layer, the set of unit indices whose post-activation output exceeded
// zero at any traced forward call. Only ReLU layers are recorded.
struct ActivationTrace {
  std::vector<std::set<std::size_t>> active;  // one set per layer

  void merge(const ActivationTrace& other);
  bool operator==(const ActivationTrace&) const = default;
};

struct ForwardCache {
  std::vector<double> input;
  std::vector<std::vector<double>> pre;   // pre-activation per layer
  std::vector<std::vector<double>> post;  // post-activation per layer
  bool valid = false;
};

struct GradCheckEntry {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
};

struct Mlp {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.front().in; }
  std::size_t output_dim() const { return layers.back().out; }
  std::size_t param_count() const;

  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& flat);
};

// Scaled uniform fan-in init, U(-1/sqrt(in), 1/sqrt(in)), biases zero.
// Each layer draws from its own stream derived from (seed, layer index).
Mlp make_mlp(const std::vector<std::size_t>& dims,
             const std::vector<Activation>& acts, std::uint64_t seed);

// Default policy actor: 4 fully connected hidden layers of 64 units with
// ReLU after the first and third, plus an identity output head.
Mlp make_actor(std::size_t obs_dim, std::size_t n_actions, std::uint64_t seed);
Mlp make_critic(std::size_t obs_dim, std::uint64_t seed);

std::vector<double> forward(const Mlp& mlp, const std::vector<double>& input,
                            ForwardCache* cache = nullptr,
                            ActivationTrace* trace = nullptr);

// Gradient has ParamSnapshot layout. The cache must come from the matching
// forward call on the same network.
std::vector<double> backward(const Mlp& mlp,
                             const std::vector<double>& loss_grad_at_output,
                             const ForwardCache& cache,
                             std::vector<double>* input_grad = nullptr);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// In-place adaptive-moment update on a flat parameter vector.
void adam_step(std::vector<double>& params, const std::vector<double>& grad,
               AdamState& state, double lr);
void adam_step(Mlp& mlp, const std::vector<double>& grad, AdamState& state,
               double lr);

ParamSnapshot snapshot(const Mlp& mlp, std::int64_t time_index);

// Elementwise |next - prev|; layouts must match.
std::vector<double> diff(const ParamSnapshot& prev, const ParamSnapshot& next);

GradCheckReport grad_check(Mlp& mlp, const std::vector<double>& input,
                           const std::vector<double>& target,
                           double fd_step = 1e-5);

// JSON serialization with a header (layer dims, activation tags, time index).
std::string snapshot_to_json(const ParamSnapshot& snap, const Mlp& arch);
ParamSnapshot snapshot_from_json(const std::string& text, Mlp* arch_out = nullptr);

// Deterministic RNG stream derived from a master seed and a string tag.
std::uint64_t stream_seed(std::uint64_t master, const std::string& tag);

}  // namespace pug::nn
