#include "pug/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace pug::rl {

std::vector<double> action_probs(const nn::Mlp& actor,
                                 const env::Observation& obs) {
  std::vector<double> logits = nn::forward(actor, obs);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (auto& p : probs) p /= sum;
  return probs;
}

static int sample_from(const std::vector<double>& probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (r < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

RolloutBuffer collect_rollouts(const nn::Mlp& actor, const nn::Mlp& critic,
                               const env::Task& task, int n_steps,
                               std::uint64_t seed) {
  RolloutBuffer buf;
  buf.transitions.reserve(n_steps);
  std::mt19937_64 rng(nn::stream_seed(seed, "rollout:" + task.id));
  std::uint64_t episode = 0;
  auto [state, obs] = env::reset(task, nn::stream_seed(seed, "ep0:" + task.id));
  for (int t = 0; t < n_steps; ++t) {
    std::vector<double> probs = action_probs(actor, obs);
    const int action = sample_from(probs, rng);
    Transition tr;
    tr.obs = obs;
    tr.action = action;
    tr.log_prob = std::log(std::max(probs[action], 1e-300));
    tr.value = nn::forward(critic, obs)[0];
    env::StepResult sr = env::step(task, state, action);
    tr.reward = sr.reward;
    tr.done = sr.done;
    buf.transitions.push_back(std::move(tr));
    if (sr.done) {
      ++episode;
      std::tie(state, obs) = env::reset(
          task, nn::stream_seed(seed, "ep" + std::to_string(episode) + ":" +
                                          task.id));
    } else {
      state = sr.state;
      obs = sr.obs;
    }
  }
  buf.last_done = buf.transitions.back().done;
  buf.last_value = buf.last_done ? 0.0 : nn::forward(critic, obs)[0];
  return buf;
}

void compute_gae(RolloutBuffer& buf, double gamma, double lambda) {
  const std::size_t n = buf.transitions.size();
  buf.advantages.assign(n, 0.0);
  buf.returns.assign(n, 0.0);
  double gae = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const Transition& tr = buf.transitions[i];
    const double next_value =
        i + 1 < n ? (tr.done ? 0.0 : buf.transitions[i + 1].value)
                  : (tr.done ? 0.0 : buf.last_value);
    const double not_done = tr.done ? 0.0 : 1.0;
    const double delta = tr.reward + gamma * next_value - tr.value;
    gae = delta + gamma * lambda * not_done * gae;
    buf.advantages[i] = gae;
    buf.returns[i] = gae + tr.value;
  }
  double mean = std::accumulate(buf.advantages.begin(), buf.advantages.end(),
                                0.0) /
                static_cast<double>(n);
  double var = 0.0;
  for (double a : buf.advantages) var += (a - mean) * (a - mean);
  var /= static_cast<double>(n);
  if (var >= 1e-8) {
    const double sd = std::sqrt(var);
    for (auto& a : buf.advantages) a = (a - mean) / sd;
  }
}

PpoStats ppo_update(nn::Mlp& actor, nn::Mlp& critic, nn::AdamState& actor_opt,
                    nn::AdamState& critic_opt, const RolloutBuffer& buf,
                    const PpoConfig& cfg, std::uint64_t seed) {
  if (buf.advantages.size() != buf.size()) {
    throw std::logic_error("ppo_update: advantages not computed");
  }
  std::mt19937_64 rng(nn::stream_seed(seed, "ppo"));
  std::vector<std::size_t> order(buf.size());
  std::iota(order.begin(), order.end(), 0);

  PpoStats stats;
  std::size_t stat_count = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.minibatch)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.minibatch));
      const double inv_n = 1.0 / static_cast<double>(end - start);
      std::vector<double> actor_grad(actor.param_count(), 0.0);
      std::vector<double> critic_grad(critic.param_count(), 0.0);
      double mb_policy_loss = 0.0, mb_value_loss = 0.0, mb_entropy = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const Transition& tr = buf.transitions[order[k]];
        const double adv = buf.advantages[order[k]];
        const double ret = buf.returns[order[k]];

        nn::ForwardCache cache;
        std::vector<double> logits = nn::forward(actor, tr.obs, &cache);
        const double mx = *std::max_element(logits.begin(), logits.end());
        std::vector<double> probs(logits.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
          probs[i] = std::exp(logits[i] - mx);
          sum += probs[i];
        }
        for (auto& p : probs) p /= sum;
        const double logp = std::log(std::max(probs[tr.action], 1e-300));
        const double ratio = std::exp(logp - tr.log_prob);
        const double clipped =
            std::clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
        mb_policy_loss += -std::min(ratio * adv, clipped * adv);

        // d(-surrogate)/dlogp: zero when the clip is binding.
        const bool active = adv >= 0.0 ? ratio <= 1.0 + cfg.clip_ratio
                                       : ratio >= 1.0 - cfg.clip_ratio;
        const double dlogp = active ? -adv * ratio : 0.0;

        double entropy = 0.0;
        for (double p : probs) {
          if (p > 0.0) entropy -= p * std::log(p);
        }
        mb_entropy += entropy;

        std::vector<double> dlogits(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i) {
          const double ind = static_cast<std::size_t>(tr.action) == i ? 1.0 : 0.0;
          const double dH = -probs[i] * (std::log(std::max(probs[i], 1e-300)) +
                                         entropy);
          dlogits[i] = (dlogp * (ind - probs[i]) - cfg.entropy_coef * dH) * inv_n;
        }
        std::vector<double> g = nn::backward(actor, dlogits, cache);
        for (std::size_t i = 0; i < g.size(); ++i) actor_grad[i] += g[i];

        nn::ForwardCache vcache;
        const double value = nn::forward(critic, tr.obs, &vcache)[0];
        const double verr = value - ret;
        mb_value_loss += verr * verr;
        std::vector<double> dv = {2.0 * cfg.value_coef * verr * inv_n};
        std::vector<double> vg = nn::backward(critic, dv, vcache);
        for (std::size_t i = 0; i < vg.size(); ++i) critic_grad[i] += vg[i];
      }
      const double total_loss =
          (mb_policy_loss + cfg.value_coef * mb_value_loss) * inv_n;
      if (!std::isfinite(total_loss)) {
        throw std::runtime_error("ppo_update: non-finite loss");
      }
      nn::adam_step(actor, actor_grad, actor_opt, cfg.lr);
      nn::adam_step(critic, critic_grad, critic_opt, cfg.lr);
      stats.policy_loss += mb_policy_loss * inv_n;
      stats.value_loss += mb_value_loss * inv_n;
      stats.entropy += mb_entropy * inv_n;
      ++stat_count;
    }
  }
  if (stat_count > 0) {
    stats.policy_loss /= static_cast<double>(stat_count);
    stats.value_loss /= static_cast<double>(stat_count);
    stats.entropy /= static_cast<double>(stat_count);
  }
  return stats;
}

static int argmax_action(const std::vector<double>& probs) {
  return static_cast<int>(
      std::max_element(probs.begin(), probs.end()) - probs.begin());
}

EvalResult evaluate(const nn::Mlp& actor, const env::Task& task, int episodes,
                    std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes >= 1");
  EvalResult res;
  int successes = 0;
  for (int e = 0; e < episodes; ++e) {
    auto [state, obs] = env::reset(
        task, nn::stream_seed(seed, "eval" + std::to_string(e) + ":" + task.id));
    double ret = 0.0;
    bool success = false;
    while (!state.done) {
      nn::ActivationTrace step_trace;
      std::vector<double> logits =
          nn::forward(actor, obs, nullptr, &step_trace);
      res.trace.merge(step_trace);
      const int action = argmax_action(logits);
      env::StepResult sr = env::step(task, state, action);
      ret += sr.reward;
      success = success || sr.success;
      state = sr.state;
      obs = sr.obs;
    }
    res.episode_returns.push_back(ret);
    if (success) ++successes;
  }
  res.mean_return =
      std::accumulate(res.episode_returns.begin(), res.episode_returns.end(),
                      0.0) /
      static_cast<double>(episodes);
  res.success_rate = static_cast<double>(successes) / episodes;
  return res;
}

EvalResult evaluate_expert(const env::Task& task, int episodes,
                           std::uint64_t seed) {
  EvalResult res;
  int successes = 0;
  for (int e = 0; e < episodes; ++e) {
    auto [state, obs] = env::reset(
        task,
        nn::stream_seed(seed, "xeval" + std::to_string(e) + ":" + task.id));
    double ret = 0.0;
    bool success = false;
    while (!state.done) {
      env::StepResult sr =
          env::step(task, state, env::expert_action(task, state));
      ret += sr.reward;
      success = success || sr.success;
      state = sr.state;
      obs = sr.obs;
    }
    res.episode_returns.push_back(ret);
    if (success) ++successes;
  }
  res.mean_return =
      std::accumulate(res.episode_returns.begin(), res.episode_returns.end(),
                      0.0) /
      static_cast<double>(episodes);
  res.success_rate = static_cast<double>(successes) / episodes;
  return res;
}

}  // namespace pug::rl
