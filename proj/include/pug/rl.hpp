#pragma once

// PPO on the actor-critic policy: rollout collection with GAE, clipped
// surrogate updates, and greedy evaluation with activation tracing.

#include <cstdint>
#include <vector>

#include "pug/env.hpp"
#include "pug/nn.hpp"

namespace pug::rl {

struct Transition {
  env::Observation obs;
  int action = 0;
  double log_prob = 0.0;  // under the behavior policy, <= 0
  double reward = 0.0;
  bool done = false;
  double value = 0.0;
};

struct RolloutBuffer {
  std::vector<Transition> transitions;
  std::vector<double> advantages;  // normalized within the batch
  std::vector<double> returns;     // GAE return targets
  double last_value = 0.0;         // bootstrap for a truncated final episode
  bool last_done = true;

  std::size_t size() const { return transitions.size(); }
};

struct PpoConfig {
  double clip_ratio = 0.2;
  int epochs = 4;
  int minibatch = 64;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  int rollout_steps = 512;
  double lr = 3e-4;
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
};

struct EvalResult {
  double mean_return = 0.0;
  std::vector<double> episode_returns;
  nn::ActivationTrace trace;
  double success_rate = 0.0;
};

// Softmax action distribution from actor logits.
std::vector<double> action_probs(const nn::Mlp& actor,
                                 const env::Observation& obs);

RolloutBuffer collect_rollouts(const nn::Mlp& actor, const nn::Mlp& critic,
                               const env::Task& task, int n_steps,
                               std::uint64_t seed);

// Fills advantages (normalized; skipped when variance < 1e-8) and returns.
void compute_gae(RolloutBuffer& buffer, double gamma, double lambda);

PpoStats ppo_update(nn::Mlp& actor, nn::Mlp& critic, nn::AdamState& actor_opt,
                    nn::AdamState& critic_opt, const RolloutBuffer& buffer,
                    const PpoConfig& cfg, std::uint64_t seed);

// Greedy (argmax) rollout over `episodes` episodes; traces are merged.
EvalResult evaluate(const nn::Mlp& actor, const env::Task& task, int episodes,
                    std::uint64_t seed);

// Success rate of the scripted expert, for oracle tests.
EvalResult evaluate_expert(const env::Task& task, int episodes,
                           std::uint64_t seed);

inline double learning_progress(double r_now, double r_prev) {
  return r_now - r_prev;
}

}  // namespace pug::rl
