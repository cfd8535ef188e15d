// Copyright 2026 The xdistill Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "xdistill/env.hpp"
#include "xdistill/mitigation.hpp"
#include "xdistill/net.hpp"
#include "xdistill/replay.hpp"

namespace xdistill {

struct XAppSpec {
  std::string name;
  HeadLayout layout;
};

namespace detail {

inline void add_handover_heads(HeadLayout& l, const EnvParams& p) {
  for (int i = 0; i < p.num_users; ++i) {
    l.heads.push_back({"ho_u" + std::to_string(i), HeadRole::kHandover, i, p.handover_width()});
  }
}
inline void add_rb_heads(HeadLayout& l, const EnvParams& p) {
  for (int i = 0; i < p.num_users; ++i) {
    l.heads.push_back({"rb_u" + std::to_string(i), HeadRole::kRbAlloc, i, p.rb_width()});
  }
}
inline void add_power_heads(HeadLayout& l, const EnvParams& p) {
  for (int j = 0; j < p.num_bs; ++j) {
    l.heads.push_back({"pw_b" + std::to_string(j), HeadRole::kPower, j, p.power_width()});
  }
}

}  // namespace detail

// xApp 1: handover + RB allocation.
inline XAppSpec make_xapp1_spec(const EnvParams& p) {
  XAppSpec s{"xapp1", {}};
  detail::add_handover_heads(s.layout, p);
  detail::add_rb_heads(s.layout, p);
  return s;
}

// xApp 2: handover + cell power level control.
inline XAppSpec make_xapp2_spec(const EnvParams& p) {
  XAppSpec s{"xapp2", {}};
  detail::add_handover_heads(s.layout, p);
  detail::add_power_heads(s.layout, p);
  return s;
}

// Distilled xApp: all three operations.
inline XAppSpec make_student_spec(const EnvParams& p) {
  XAppSpec s{"distilled", {}};
  detail::add_handover_heads(s.layout, p);
  detail::add_rb_heads(s.layout, p);
  detail::add_power_heads(s.layout, p);
  return s;
}

// Fixed feature scaling between the env observation and the network input.
// One-hot slots pass through, linear SINR is compressed to log10(1+x), and
// utilities are brought to [-1, 1]. Width is preserved.
inline std::vector<double> scale_observation(const std::vector<double>& obs, const EnvParams& p) {
  const int K = p.num_users, B = p.num_bs;
  if (static_cast<int>(obs.size()) != p.obs_width()) {
    throw std::invalid_argument("observation width does not match env parameters");
  }
  std::vector<double> out(obs);
  int sinr_at = K * (B + 1);
  for (int k = 0; k < K * B; ++k) out[sinr_at + k] = std::log10(1.0 + obs[sinr_at + k]);
  int util_at = sinr_at + K * B;
  double scale = p.utility_scale > 0 ? p.utility_scale : 1.0;
  for (int k = 0; k < K; ++k) out[util_at + k] = obs[util_at + k] / scale;
  return out;
}

// Epsilon-greedy over every head independently; argmax ties break to the
// lowest index.
inline std::vector<int> select_action(const QNet& net, const std::vector<double>& input,
                                      double epsilon, Rng& rng) {
  if (epsilon < 0.0 || epsilon > 1.0) throw std::invalid_argument("epsilon outside [0, 1]");
  std::vector<std::vector<double>> q = forward(net, input);
  std::vector<int> idx(q.size());
  for (std::size_t h = 0; h < q.size(); ++h) {
    if (rng.bernoulli(epsilon)) {
      idx[h] = rng.index(static_cast<int>(q[h].size()));
    } else {
      int best = 0;
      for (std::size_t a = 1; a < q[h].size(); ++a) {
        if (q[h][a] > q[h][best]) best = static_cast<int>(a);
      }
      idx[h] = best;
    }
  }
  return idx;
}

inline std::vector<int> greedy_action(const QNet& net, const std::vector<double>& input) {
  Rng unused(0);
  return select_action(net, input, 0.0, unused);
}

// Stage-1 defaults for the slots an xApp does not control: every BS at the
// level closest to 30 dBm, RBs split evenly (floor(total/K) each).
inline ControlSettings stage1_default_controls(const EnvParams& p) {
  ControlSettings c;
  c.serving.assign(p.num_users, -1);  // overwritten by the handover heads
  c.rb_request.assign(p.num_users, p.total_rbs / p.num_users);
  c.power_idx.assign(p.num_bs, CellularEnv::default_power_index(p));
  return c;
}

// Expands an xApp's per-head action indices into full control settings,
// filling unowned slots from `defaults`.
inline ControlSettings compose_controls(const XAppSpec& spec, const std::vector<int>& action_idx,
                                        const EnvParams& p, const ControlSettings& defaults) {
  if (action_idx.size() != spec.layout.heads.size()) {
    throw std::invalid_argument("action vector length does not match head layout");
  }
  ControlSettings c = defaults;
  for (std::size_t h = 0; h < spec.layout.heads.size(); ++h) {
    const Head& head = spec.layout.heads[h];
    int a = action_idx[h];
    if (a < 0 || a >= head.width) throw std::invalid_argument("action index out of head range");
    switch (head.role) {
      case HeadRole::kHandover: c.serving.at(head.slot) = a - 1; break;
      case HeadRole::kRbAlloc: c.rb_request.at(head.slot) = p.rb_options.at(a); break;
      case HeadRole::kPower: c.power_idx.at(head.slot) = a; break;
    }
  }
  return c;
}

// An xApp's slot-level proposal (only the slots it owns).
inline ActionProposal make_proposal(const XAppSpec& spec, const std::vector<int>& action_idx,
                                    const EnvParams& p, long step) {
  if (action_idx.size() != spec.layout.heads.size()) {
    throw std::invalid_argument("action vector length does not match head layout");
  }
  ActionProposal prop;
  prop.xapp = spec.name;
  prop.step = step;
  for (std::size_t h = 0; h < spec.layout.heads.size(); ++h) {
    const Head& head = spec.layout.heads[h];
    int a = action_idx[h];
    if (a < 0 || a >= head.width) throw std::invalid_argument("action index out of head range");
    switch (head.role) {
      case HeadRole::kHandover:
        prop.values[{SlotKind::kHandover, head.slot}] = a - 1;
        break;
      case HeadRole::kRbAlloc:
        prop.values[{SlotKind::kRb, head.slot}] = p.rb_options.at(a);
        break;
      case HeadRole::kPower:
        prop.values[{SlotKind::kPower, head.slot}] = a;
        break;
    }
  }
  return prop;
}

struct Hyperparams {
  int episodes = 2000;
  double gamma = 0.95;
  double learning_rate = 0.01;
  int batch_size = 32;
  std::size_t buffer_capacity = 50000;
  int target_sync_steps = 500;
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_anneal_frac = 0.5;  // fraction of episodes spent annealing
  double grad_clip_norm = 10.0;  // <= 0 disables clipping
};

inline Hyperparams load_hyperparams(const ConfigFile& cfg) {
  Hyperparams h;
  h.episodes = cfg.get_int("training", "episodes", h.episodes);
  h.gamma = cfg.get_double("training", "gamma", h.gamma);
  h.learning_rate = cfg.get_double("training", "learning_rate", h.learning_rate);
  h.batch_size = cfg.get_int("training", "batch_size", h.batch_size);
  h.buffer_capacity =
      static_cast<std::size_t>(cfg.get_long("training", "buffer_capacity",
                                            static_cast<long>(h.buffer_capacity)));
  h.target_sync_steps = cfg.get_int("training", "target_sync_steps", h.target_sync_steps);
  h.eps_start = cfg.get_double("training", "eps_start", h.eps_start);
  h.eps_end = cfg.get_double("training", "eps_end", h.eps_end);
  h.eps_anneal_frac = cfg.get_double("training", "eps_anneal_frac", h.eps_anneal_frac);
  h.grad_clip_norm = cfg.get_double("training", "grad_clip_norm", h.grad_clip_norm);
  if (h.gamma < 0.0 || h.gamma >= 1.0) throw ConfigError("training: gamma must be in [0, 1)");
  if (h.batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  return h;
}

inline double epsilon_at(const Hyperparams& hp, int episode) {
  double anneal_eps = hp.eps_anneal_frac * hp.episodes;
  if (anneal_eps <= 0) return hp.eps_end;
  double t = std::min(1.0, episode / anneal_eps);
  return hp.eps_start + t * (hp.eps_end - hp.eps_start);
}

// TD loss over a batch: squared TD error summed over heads, averaged over
// the batch. The per-head target is r + gamma * max_a Q_target(s', a) (no
// bootstrap on terminal transitions). Returns the loss and dLoss/dtheta.
inline double td_loss_and_gradients(const QNet& net, const QNet& target,
                                    const std::vector<const Transition*>& batch, double gamma,
                                    Gradients& grads) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma outside [0, 1)");
  double loss = 0.0;
  ForwardTrace trace;
  const std::size_t n_heads = net.heads.size();
  for (const Transition* t : batch) {
    if (t->action_idx.size() != n_heads) {
      throw std::invalid_argument("transition layout does not match network heads");
    }
    std::vector<std::vector<double>> q = forward(net, t->observation, &trace);
    std::vector<std::vector<double>> q_next = forward(target, t->next_observation);
    std::vector<std::vector<double>> head_grads(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
      double y = t->reward;
      if (!t->done) {
        double best = q_next[h][0];
        for (double v : q_next[h]) best = std::max(best, v);
        y += gamma * best;
      }
      int a = t->action_idx[h];
      if (a < 0 || a >= static_cast<int>(q[h].size())) {
        throw std::invalid_argument("transition action index out of head range");
      }
      double err = q[h][a] - y;
      loss += err * err;
      head_grads[h].assign(q[h].size(), 0.0);
      head_grads[h][a] = 2.0 * err;
    }
    accumulate_backward(net, trace, head_grads, grads);
  }
  double inv = 1.0 / static_cast<double>(batch.size());
  scale_gradients(grads, inv);
  return loss * inv;
}

// One DQN update: gradients from td_loss_and_gradients, optional norm clip,
// one SGD step.
inline double td_train_step(QNet& net, const QNet& target,
                            const std::vector<const Transition*>& batch, double gamma, double lr,
                            double grad_clip_norm = 0.0) {
  Gradients grads = zero_gradients(net);
  double loss = td_loss_and_gradients(net, target, batch, gamma, grads);
  clip_gradients(grads, grad_clip_norm);
  sgd_step(net, grads, lr);
  return loss;
}

struct TrainCurveRow {
  int episode = 0;
  double mean_reward = 0.0;
  double epsilon = 0.0;
};

inline void write_curve_csv(std::ostream& os, const std::vector<TrainCurveRow>& curve) {
  os << "episode,mean_reward,epsilon\n";
  for (const TrainCurveRow& r : curve) {
    os << r.episode << ',' << csv_num(r.mean_reward) << ',' << csv_num(r.epsilon) << '\n';
  }
}

struct TrainResult {
  QNet net;
  std::vector<TrainCurveRow> curve;
};

// Stage 1: individual DQN training of one xApp. Slots outside the xApp's
// layout are driven by the stage-1 defaults. Episodes re-randomize user
// positions unless the env pins them.
inline TrainResult train_teacher(CellularEnv& env, const XAppSpec& spec, const Hyperparams& hp,
                                 Rng& rng) {
  const EnvParams& p = env.params();
  LayerSpec layer_spec{p.obs_width(), {50, 100}};
  QNet net = make_qnet(layer_spec, spec.layout, rng);
  QNet target = net;
  ReplayBuffer buffer(hp.buffer_capacity);
  ControlSettings defaults = stage1_default_controls(p);
  TrainResult out;
  long steps = 0;
  for (int ep = 0; ep < hp.episodes; ++ep) {
    double eps = epsilon_at(hp, ep);
    env.reset(rng);
    std::vector<double> obs = scale_observation(env.observation(), p);
    double reward_sum = 0.0;
    for (int t = 0; t < p.episode_len; ++t) {
      std::vector<int> action = select_action(net, obs, eps, rng);
      CellularEnv::StepResult res =
          env.step_controls(compose_controls(spec, action, p, defaults), rng);
      std::vector<double> next_obs = scale_observation(res.observation, p);
      reward_sum += res.reward;
      buffer.push({obs, action, res.reward, next_obs, false, {}, 0});
      obs = std::move(next_obs);
      if (buffer.size() >= static_cast<std::size_t>(hp.batch_size)) {
        td_train_step(net, target, buffer.sample(hp.batch_size, rng), hp.gamma,
                      hp.learning_rate, hp.grad_clip_norm);
      }
      if (++steps % hp.target_sync_steps == 0) {
        check_finite(net);
        target = net;
      }
    }
    out.curve.push_back({ep, reward_sum / p.episode_len, eps});
  }
  check_finite(net);
  out.net = std::move(net);
  return out;
}

struct TeamTrainOptions {
  bool mitigate = true;  // indirect rollback during training
  bool freeze_first = false;
  bool freeze_second = false;
  MitigationPolicy policy;
};

struct TeamTrainResult {
  TrainResult first;
  TrainResult second;
};

// Normalized action features appended to a team xApp's observation: each
// chosen index scaled by its head width.
inline void append_action_features(std::vector<double>& obs, const std::vector<int>& action,
                                   const HeadLayout& layout) {
  for (std::size_t h = 0; h < layout.heads.size(); ++h) {
    int w = layout.heads[h].width;
    obs.push_back(w > 1 ? static_cast<double>(action[h]) / (w - 1) : 0.0);
  }
}

// Team-learning baseline: both xApps train simultaneously in one
// environment, each observing the other's most recent action, with the
// O-RAN arbiter applied to their joint proposals. A minimal action-sharing
// variant; full team-learning protocols differ in detail.
inline TeamTrainResult train_team(CellularEnv& env, const XAppSpec& spec1, const XAppSpec& spec2,
                                  const Hyperparams& hp, const TeamTrainOptions& opt, Rng& rng) {
  if (spec1.name == spec2.name) throw std::invalid_argument("team xApps must be distinct");
  const EnvParams& p = env.params();
  int base = p.obs_width();
  LayerSpec ls1{base + spec2.layout.size(), {50, 100}};
  LayerSpec ls2{base + spec1.layout.size(), {50, 100}};
  QNet net1 = make_qnet(ls1, spec1.layout, rng);
  QNet net2 = make_qnet(ls2, spec2.layout, rng);
  QNet target1 = net1, target2 = net2;
  ReplayBuffer buf1(hp.buffer_capacity), buf2(hp.buffer_capacity);
  TeamTrainResult out;
  long steps = 0;
  for (int ep = 0; ep < hp.episodes; ++ep) {
    double eps = epsilon_at(hp, ep);
    env.reset(rng);
    Arbiter arbiter(opt.policy.priority.empty()
                        ? MitigationPolicy{{spec1.name, spec2.name}, opt.policy.delta,
                                           opt.mitigate}
                        : MitigationPolicy{opt.policy.priority, opt.policy.delta, opt.mitigate});
    std::vector<int> last1(spec1.layout.size(), 0), last2(spec2.layout.size(), 0);
    std::vector<double> base_obs = scale_observation(env.observation(), p);
    double r_sum1 = 0.0, r_sum2 = 0.0;
    for (int t = 0; t < p.episode_len; ++t) {
      std::vector<double> obs1 = base_obs, obs2 = base_obs;
      append_action_features(obs1, last2, spec2.layout);
      append_action_features(obs2, last1, spec1.layout);
      std::vector<int> a1 = opt.freeze_first ? greedy_action(net1, obs1)
                                             : select_action(net1, obs1, eps, rng);
      std::vector<int> a2 = opt.freeze_second ? greedy_action(net2, obs2)
                                              : select_action(net2, obs2, eps, rng);
      std::vector<ActionProposal> proposals = {make_proposal(spec1, a1, p, env.state().step_index),
                                               make_proposal(spec2, a2, p, env.state().step_index)};
      MitigationVerdict verdict = arbiter.arbitrate(proposals, env, rng);
      std::vector<double> next_base = scale_observation(verdict.observation, p);
      std::vector<double> nobs1 = next_base, nobs2 = next_base;
      append_action_features(nobs1, a2, spec2.layout);
      append_action_features(nobs2, a1, spec1.layout);
      buf1.push({obs1, a1, verdict.reward, nobs1, false, {}, 0});
      buf2.push({obs2, a2, verdict.reward, nobs2, false, {}, 0});
      r_sum1 += verdict.reward;
      r_sum2 += verdict.reward;
      last1 = std::move(a1);
      last2 = std::move(a2);
      base_obs = std::move(next_base);
      if (!opt.freeze_first && buf1.size() >= static_cast<std::size_t>(hp.batch_size)) {
        td_train_step(net1, target1, buf1.sample(hp.batch_size, rng), hp.gamma, hp.learning_rate,
                      hp.grad_clip_norm);
      }
      if (!opt.freeze_second && buf2.size() >= static_cast<std::size_t>(hp.batch_size)) {
        td_train_step(net2, target2, buf2.sample(hp.batch_size, rng), hp.gamma, hp.learning_rate,
                      hp.grad_clip_norm);
      }
      if (++steps % hp.target_sync_steps == 0) {
        check_finite(net1);
        check_finite(net2);
        target1 = net1;
        target2 = net2;
      }
    }
    out.first.curve.push_back({ep, r_sum1 / p.episode_len, eps});
    out.second.curve.push_back({ep, r_sum2 / p.episode_len, eps});
  }
  check_finite(net1);
  check_finite(net2);
  out.first.net = std::move(net1);
  out.second.net = std::move(net2);
  return out;
}

}  // namespace xdistill
