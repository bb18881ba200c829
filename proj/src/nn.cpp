#include "pug/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

namespace pug::nn {

using json = nlohmann::json;

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
  }
  throw std::logic_error("unknown activation");
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "identity") return Activation::Identity;
  if (name == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation tag: " + name);
}

void ActivationTrace::merge(const ActivationTrace& other) {
  if (active.size() < other.active.size()) active.resize(other.active.size());
  for (std::size_t l = 0; l < other.active.size(); ++l) {
    active[l].insert(other.active[l].begin(), other.active[l].end());
  }
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.out * l.in + l.out;
  return n;
}

std::vector<double> Mlp::flatten() const {
  std::vector<double> flat;
  flat.reserve(param_count());
  for (const auto& l : layers) {
    flat.insert(flat.end(), l.w.begin(), l.w.end());
    flat.insert(flat.end(), l.b.begin(), l.b.end());
  }
  return flat;
}

void Mlp::unflatten(const std::vector<double>& flat) {
  if (flat.size() != param_count()) {
    throw std::invalid_argument("unflatten: parameter count mismatch");
  }
  std::size_t p = 0;
  for (auto& l : layers) {
    std::copy_n(flat.begin() + p, l.w.size(), l.w.begin());
    p += l.w.size();
    std::copy_n(flat.begin() + p, l.b.size(), l.b.begin());
    p += l.b.size();
  }
}

std::uint64_t stream_seed(std::uint64_t master, const std::string& tag) {
  // FNV-1a over the tag, folded into the master seed.
  std::uint64_t h = 1469598103934665603ull ^ master;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ull;
  }
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

Mlp make_mlp(const std::vector<std::size_t>& dims,
             const std::vector<Activation>& acts, std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need >= 2 dims");
  if (acts.size() != dims.size() - 1) {
    throw std::invalid_argument("make_mlp: one activation per layer required");
  }
  Mlp mlp;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer;
    layer.in = dims[l];
    layer.out = dims[l + 1];
    layer.act = acts[l];
    layer.w.resize(layer.out * layer.in);
    layer.b.assign(layer.out, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer.in));
    std::mt19937_64 rng(stream_seed(seed, "layer" + std::to_string(l)));
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (auto& w : layer.w) w = dist(rng);
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

Mlp make_actor(std::size_t obs_dim, std::size_t n_actions, std::uint64_t seed) {
  return make_mlp({obs_dim, 64, 64, 64, 64, n_actions},
                  {Activation::Relu, Activation::Identity, Activation::Relu,
                   Activation::Identity, Activation::Identity},
                  seed);
}

Mlp make_critic(std::size_t obs_dim, std::uint64_t seed) {
  return make_mlp({obs_dim, 64, 64, 64, 64, 1},
                  {Activation::Relu, Activation::Identity, Activation::Relu,
                   Activation::Identity, Activation::Identity},
                  seed);
}

static double apply_act(Activation a, double x) {
  switch (a) {
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Identity: return x;
    case Activation::Tanh: return std::tanh(x);
  }
  return x;
}

static double act_deriv(Activation a, double pre, double post) {
  switch (a) {
    case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::Identity: return 1.0;
    case Activation::Tanh: return 1.0 - post * post;
  }
  return 1.0;
}

std::vector<double> forward(const Mlp& mlp, const std::vector<double>& input,
                            ForwardCache* cache, ActivationTrace* trace) {
  if (input.size() != mlp.input_dim()) {
    throw std::invalid_argument("forward: input dimension mismatch");
  }
  if (trace && trace->active.size() < mlp.layers.size()) {
    trace->active.resize(mlp.layers.size());
  }
  std::vector<double> cur = input;
  if (cache) {
    cache->input = input;
    cache->pre.assign(mlp.layers.size(), {});
    cache->post.assign(mlp.layers.size(), {});
  }
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    const Layer& layer = mlp.layers[l];
    std::vector<double> pre(layer.out);
    for (std::size_t i = 0; i < layer.out; ++i) {
      double s = layer.b[i];
      const double* row = layer.w.data() + i * layer.in;
      for (std::size_t j = 0; j < layer.in; ++j) s += row[j] * cur[j];
      pre[i] = s;
    }
    std::vector<double> post(layer.out);
    for (std::size_t i = 0; i < layer.out; ++i) {
      post[i] = apply_act(layer.act, pre[i]);
      if (trace && layer.act == Activation::Relu && post[i] > 0.0) {
        trace->active[l].insert(i);
      }
    }
    if (cache) {
      cache->pre[l] = pre;
      cache->post[l] = post;
    }
    cur = std::move(post);
  }
  if (cache) cache->valid = true;
  return cur;
}

std::vector<double> backward(const Mlp& mlp,
                             const std::vector<double>& loss_grad_at_output,
                             const ForwardCache& cache,
                             std::vector<double>* input_grad) {
  if (!cache.valid || cache.pre.size() != mlp.layers.size()) {
    throw std::logic_error("backward: stale or missing forward cache");
  }
  if (loss_grad_at_output.size() != mlp.output_dim()) {
    throw std::invalid_argument("backward: output gradient dimension mismatch");
  }
  std::vector<double> grad(mlp.param_count(), 0.0);
  std::vector<std::size_t> offsets(mlp.layers.size());
  std::size_t p = 0;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    offsets[l] = p;
    p += mlp.layers[l].w.size() + mlp.layers[l].b.size();
  }

  std::vector<double> delta = loss_grad_at_output;
  for (std::size_t li = mlp.layers.size(); li-- > 0;) {
    const Layer& layer = mlp.layers[li];
    for (std::size_t i = 0; i < layer.out; ++i) {
      delta[i] *= act_deriv(layer.act, cache.pre[li][i], cache.post[li][i]);
    }
    const std::vector<double>& below =
        li == 0 ? cache.input : cache.post[li - 1];
    double* gw = grad.data() + offsets[li];
    double* gb = gw + layer.w.size();
    for (std::size_t i = 0; i < layer.out; ++i) {
      for (std::size_t j = 0; j < layer.in; ++j) {
        gw[i * layer.in + j] = delta[i] * below[j];
      }
      gb[i] = delta[i];
    }
    std::vector<double> next_delta(layer.in, 0.0);
    for (std::size_t i = 0; i < layer.out; ++i) {
      const double* row = layer.w.data() + i * layer.in;
      for (std::size_t j = 0; j < layer.in; ++j) {
        next_delta[j] += delta[i] * row[j];
      }
    }
    delta = std::move(next_delta);
  }
  if (input_grad) *input_grad = delta;
  return grad;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grad,
               AdamState& state, double lr) {
  if (grad.size() != params.size()) {
    throw std::invalid_argument("adam_step: gradient layout mismatch");
  }
  if (lr <= 0.0) throw std::invalid_argument("adam_step: lr must be positive");
  for (double g : grad) {
    if (!std::isfinite(g)) {
      throw std::runtime_error("adam_step: non-finite gradient entry");
    }
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

void adam_step(Mlp& mlp, const std::vector<double>& grad, AdamState& state,
               double lr) {
  std::vector<double> flat = mlp.flatten();
  adam_step(flat, grad, state, lr);
  mlp.unflatten(flat);
}

ParamSnapshot snapshot(const Mlp& mlp, std::int64_t time_index) {
  return ParamSnapshot{time_index, mlp.flatten()};
}

std::vector<double> diff(const ParamSnapshot& prev, const ParamSnapshot& next) {
  if (prev.values.size() != next.values.size()) {
    throw std::invalid_argument("diff: snapshot layout mismatch");
  }
  std::vector<double> d(prev.values.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = std::fabs(next.values[i] - prev.values[i]);
  }
  return d;
}

GradCheckReport grad_check(Mlp& mlp, const std::vector<double>& input,
                           const std::vector<double>& target, double fd_step) {
  // Loss: sum of squared errors against the target vector.
  auto loss_at = [&]() {
    std::vector<double> out = forward(mlp, input);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double e = out[i] - target[i];
      s += e * e;
    }
    return s;
  };
  ForwardCache cache;
  std::vector<double> out = forward(mlp, input, &cache);
  std::vector<double> dloss(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    dloss[i] = 2.0 * (out[i] - target[i]);
  }
  std::vector<double> analytic = backward(mlp, dloss, cache);

  GradCheckReport report;
  std::vector<double> flat = mlp.flatten();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double orig = flat[i];
    flat[i] = orig + fd_step;
    mlp.unflatten(flat);
    const double lp = loss_at();
    flat[i] = orig - fd_step;
    mlp.unflatten(flat);
    const double lm = loss_at();
    flat[i] = orig;
    mlp.unflatten(flat);
    const double numeric = (lp - lm) / (2.0 * fd_step);
    const double denom =
        std::max(1e-8, std::fabs(analytic[i]) + std::fabs(numeric));
    GradCheckEntry e{i, analytic[i], numeric,
                     std::fabs(analytic[i] - numeric) / denom};
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(e);
  }
  return report;
}

std::string snapshot_to_json(const ParamSnapshot& snap, const Mlp& arch) {
  if (snap.values.size() != arch.param_count()) {
    throw std::invalid_argument("snapshot_to_json: layout mismatch with arch");
  }
  json j;
  j["time_index"] = snap.time_index;
  json dims = json::array();
  json acts = json::array();
  dims.push_back(arch.layers.front().in);
  for (const auto& l : arch.layers) {
    dims.push_back(l.out);
    acts.push_back(activation_name(l.act));
  }
  j["dims"] = dims;
  j["activations"] = acts;
  j["values"] = snap.values;
  return j.dump();
}

ParamSnapshot snapshot_from_json(const std::string& text, Mlp* arch_out) {
  json j = json::parse(text);
  ParamSnapshot snap;
  snap.time_index = j.at("time_index").get<std::int64_t>();
  snap.values = j.at("values").get<std::vector<double>>();
  std::vector<std::size_t> dims = j.at("dims").get<std::vector<std::size_t>>();
  std::vector<Activation> acts;
  for (const auto& a : j.at("activations")) {
    acts.push_back(activation_from_name(a.get<std::string>()));
  }
  Mlp shell = make_mlp(dims, acts, 0);
  if (snap.values.size() != shell.param_count()) {
    throw std::invalid_argument("snapshot_from_json: values do not match header");
  }
  if (arch_out) {
    shell.unflatten(snap.values);
    *arch_out = std::move(shell);
  }
  return snap;
}

}  // namespace pug::nn
