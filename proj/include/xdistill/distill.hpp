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

#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "xdistill/agents.hpp"
#include "xdistill/env.hpp"
#include "xdistill/metrics.hpp"
#include "xdistill/mitigation.hpp"
#include "xdistill/net.hpp"
#include "xdistill/replay.hpp"

namespace xdistill {

struct TeacherXApp {
  XAppSpec spec;
  QNet net;
};

// Stage 2: deploy each pre-trained teacher individually (greedy) in the
// target environment for steps/num_teachers steps and record every
// interaction together with the teacher's full per-head Q-vectors. The
// record is captured before anything downstream could alter the action.
inline ExperienceFile collect_experience(const std::vector<TeacherXApp>& teachers,
                                         CellularEnv& env, long steps, Rng& rng) {
  if (teachers.empty()) throw std::invalid_argument("no teachers to collect from");
  const EnvParams& p = env.params();
  ExperienceFile file;
  file.obs_width = p.obs_width();
  for (const TeacherXApp& t : teachers) {
    if (t.net.spec.input_width != p.obs_width()) {
      throw std::invalid_argument("teacher input width does not match env observation width");
    }
    file.sources.push_back({t.spec.name, t.spec.layout});
  }
  long per_teacher = steps / static_cast<long>(teachers.size());
  ControlSettings defaults = stage1_default_controls(p);
  for (std::size_t ti = 0; ti < teachers.size(); ++ti) {
    const TeacherXApp& teacher = teachers[ti];
    env.reset(rng);
    std::vector<double> obs = scale_observation(env.observation(), p);
    for (long s = 0; s < per_teacher; ++s) {
      std::vector<std::vector<double>> q = forward(teacher.net, obs);
      std::vector<int> action(q.size());
      for (std::size_t h = 0; h < q.size(); ++h) {
        int best = 0;
        for (std::size_t a = 1; a < q[h].size(); ++a) {
          if (q[h][a] > q[h][best]) best = static_cast<int>(a);
        }
        action[h] = best;
      }
      CellularEnv::StepResult res =
          env.step_controls(compose_controls(teacher.spec, action, p, defaults), rng);
      std::vector<double> next_obs = scale_observation(res.observation, p);
      file.records.push_back({obs, action, res.reward, next_obs, false, q,
                              static_cast<int>(ti)});
      obs = std::move(next_obs);
    }
  }
  return file;
}

struct DistillOptions {
  double tau = 20.0;
  int epochs = 50;
  double learning_rate = 0.01;
  int batch_size = 32;
  double holdout_frac = 0.1;  // held out of training, used for agreement
};

inline DistillOptions load_distill_options(const ConfigFile& cfg) {
  DistillOptions o;
  o.tau = cfg.get_double("distill", "tau", o.tau);
  o.epochs = cfg.get_int("distill", "epochs", o.epochs);
  o.learning_rate = cfg.get_double("distill", "learning_rate", o.learning_rate);
  o.batch_size = cfg.get_int("distill", "batch_size", o.batch_size);
  o.holdout_frac = cfg.get_double("distill", "holdout_frac", o.holdout_frac);
  if (o.tau <= 0) throw ConfigError("distill: tau must be positive");
  if (o.batch_size < 1) throw ConfigError("distill: batch_size must be >= 1");
  return o;
}

struct DistillCurveRow {
  int epoch = 0;
  double mean_kl = 0.0;
};

inline void write_distill_curve_csv(std::ostream& os, const std::vector<DistillCurveRow>& curve) {
  os << "epoch,mean_kl\n";
  for (const DistillCurveRow& r : curve) {
    os << r.epoch << ',' << csv_num(r.mean_kl) << '\n';
  }
}

struct DistillResult {
  QNet student;
  std::vector<DistillCurveRow> curve;
  double holdout_agreement = 0.0;  // per-head argmax agreement on held-out records
  std::size_t holdout_records = 0;
};

namespace detail {

// Deterministic split: every k-th record is held out.
inline bool is_holdout(std::size_t index, double frac) {
  if (frac <= 0.0) return false;
  std::size_t k = static_cast<std::size_t>(1.0 / frac);
  return k > 0 && index % k == 0;
}

// Maps each head of each source layout to the student's head index.
inline std::vector<std::vector<int>> head_routing(const ExperienceFile& file, const QNet& student) {
  std::vector<std::vector<int>> route(file.sources.size());
  for (std::size_t s = 0; s < file.sources.size(); ++s) {
    for (const Head& h : file.sources[s].layout.heads) {
      int at = student.layout.find(h.name);
      if (at < 0 || !(student.layout.heads[at] == h)) {
        throw std::invalid_argument("student layout missing teacher head: " + h.name);
      }
      route[s].push_back(at);
    }
  }
  return route;
}

}  // namespace detail

// Per-head argmax agreement between the student and the stored teacher
// Q-vectors over the given record indices.
inline double argmax_agreement(const QNet& student, const ExperienceFile& file,
                               const std::vector<std::size_t>& indices) {
  std::vector<std::vector<int>> route = detail::head_routing(file, student);
  std::size_t hits = 0, total = 0;
  for (std::size_t i : indices) {
    const Transition& t = file.records[i];
    std::vector<std::vector<double>> q = forward(student, t.observation);
    for (std::size_t h = 0; h < t.teacher_q.size(); ++h) {
      const std::vector<double>& tq = t.teacher_q[h];
      const std::vector<double>& sq = q[route[t.source_xapp][h]];
      std::size_t ta = 0, sa = 0;
      for (std::size_t a = 1; a < tq.size(); ++a) {
        if (tq[a] > tq[ta]) ta = a;
      }
      for (std::size_t a = 1; a < sq.size(); ++a) {
        if (sq[a] > sq[sa]) sa = a;
      }
      hits += (ta == sa);
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

// Stage 3: supervised distillation. For every sampled transition the KL
// loss couples the stored teacher Q-vectors (temperature-softened) with the
// student's matching heads only; heads the transition's teacher does not
// own receive no gradient from it.
inline DistillResult distill(const ExperienceFile& file, QNet student, const DistillOptions& opt,
                             Rng& rng) {
  if (file.records.empty()) throw std::invalid_argument("empty distillation buffer");
  if (student.spec.input_width != file.obs_width) {
    throw std::invalid_argument("student input width does not match buffer observations");
  }
  std::vector<std::vector<int>> route = detail::head_routing(file, student);

  std::vector<std::size_t> train_idx, holdout_idx;
  for (std::size_t i = 0; i < file.records.size(); ++i) {
    (detail::is_holdout(i, opt.holdout_frac) ? holdout_idx : train_idx).push_back(i);
  }
  if (train_idx.empty()) throw std::invalid_argument("holdout fraction leaves no training data");

  DistillResult out;
  ForwardTrace trace;
  const std::size_t n_heads = student.heads.size();
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    // in-place Fisher-Yates
    for (std::size_t i = train_idx.size(); i > 1; --i) {
      std::swap(train_idx[i - 1], train_idx[rng.next_below(i)]);
    }
    double epoch_loss = 0.0;
    std::size_t at = 0;
    while (at < train_idx.size()) {
      std::size_t take = std::min<std::size_t>(opt.batch_size, train_idx.size() - at);
      Gradients grads = zero_gradients(student);
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < take; ++k) {
        const Transition& t = file.records[train_idx[at + k]];
        std::vector<std::vector<double>> q = forward(student, t.observation, &trace);
        std::vector<std::vector<double>> head_grads(n_heads);
        for (std::size_t h = 0; h < t.teacher_q.size(); ++h) {
          int target_head = route[t.source_xapp][h];
          KlResult kl = kl_loss(t.teacher_q[h], q[target_head], opt.tau);
          batch_loss += kl.loss;
          head_grads[target_head] = std::move(kl.grad);
        }
        accumulate_backward(student, trace, head_grads, grads);
      }
      epoch_loss += batch_loss;
      scale_gradients(grads, 1.0 / static_cast<double>(take));
      sgd_step(student, grads, opt.learning_rate);
      at += take;
    }
    out.curve.push_back({epoch, epoch_loss / static_cast<double>(train_idx.size())});
  }
  check_finite(student);
  out.holdout_agreement = argmax_agreement(student, file, holdout_idx);
  out.holdout_records = holdout_idx.size();
  out.student = std::move(student);
  return out;
}

// --- stage 4: evaluation -------------------------------------------------

// A deployable greedy policy. Team-trained xApps observe the other xApp's
// most recent action as extra input features.
struct DeployedXApp {
  XAppSpec spec;
  QNet net;
  bool team_extended = false;
};

struct EvalOptions {
  long steps = 50000;
  std::vector<double> thresholds_mbps;  // outage sweep
  double hist_lo_mbps = 0.0;
  double hist_hi_mbps = 100.0;
  double hist_bin_mbps = 2.0;
  bool mitigation = true;
  MitigationPolicy policy;
  bool outage_any_user = false;  // per-step "any user below" variant
  std::ostream* rate_log = nullptr;
  std::ostream* arb_log = nullptr;
};

inline std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (double v = 5.0; v <= 100.0; v += 5.0) t.push_back(v);
  return t;
}

inline std::vector<double> histogram_edges(const EvalOptions& opt) {
  std::vector<double> edges;
  for (double e = opt.hist_lo_mbps; e < opt.hist_hi_mbps + 0.5 * opt.hist_bin_mbps;
       e += opt.hist_bin_mbps) {
    edges.push_back(e);
  }
  if (edges.size() < 2) throw ConfigError("eval: histogram needs at least one bin");
  return edges;
}

inline int other_head_count(const std::vector<DeployedXApp>& xapps, const DeployedXApp& self) {
  int n = 0;
  for (const DeployedXApp& x : xapps) {
    if (&x != &self) n += x.spec.layout.size();
  }
  return n;
}

// Runs the xApps greedily for `steps` environment steps through the O-RAN
// arbiter (or directly when mitigation is disabled and a single xApp is
// deployed) and aggregates rate, outage, interrupt and PF statistics.
inline EvalMetrics evaluate(const std::vector<DeployedXApp>& xapps, CellularEnv& env,
                            const EvalOptions& opt, Rng& rng) {
  if (xapps.empty()) throw std::invalid_argument("evaluate with no xApps");
  if (opt.thresholds_mbps.empty()) throw std::invalid_argument("evaluate with no thresholds");
  const EnvParams& p = env.params();
  for (const DeployedXApp& x : xapps) {
    int expected = p.obs_width() + (x.team_extended ? other_head_count(xapps, x) : 0);
    if (x.net.spec.input_width != expected) {
      throw std::invalid_argument("deployed xApp input width mismatch: " + x.spec.name);
    }
  }
  MitigationPolicy policy = opt.policy;
  if (policy.priority.empty()) {
    for (const DeployedXApp& x : xapps) policy.priority.push_back(x.spec.name);
  }
  policy.rollback_enabled = opt.mitigation;
  Arbiter arbiter(policy);

  env.reset(rng);
  if (opt.rate_log) write_rate_log_header(*opt.rate_log);
  if (opt.arb_log) write_arb_log_header(*opt.arb_log);

  std::vector<std::vector<int>> last_action(xapps.size());
  for (std::size_t i = 0; i < xapps.size(); ++i) {
    last_action[i].assign(xapps[i].spec.layout.size(), 0);
  }
  std::vector<double> rate_samples;
  rate_samples.reserve(static_cast<std::size_t>(opt.steps) *
                       (opt.outage_any_user ? 1 : p.num_users));
  std::vector<double> pf_series;
  pf_series.reserve(opt.steps);

  ControlSettings defaults = stage1_default_controls(p);
  for (long s = 0; s < opt.steps; ++s) {
    std::vector<double> base_obs = scale_observation(env.observation(), p);
    std::vector<ActionProposal> proposals;
    std::vector<std::vector<int>> actions(xapps.size());
    for (std::size_t i = 0; i < xapps.size(); ++i) {
      std::vector<double> input = base_obs;
      if (xapps[i].team_extended) {
        for (std::size_t o = 0; o < xapps.size(); ++o) {
          if (o != i) append_action_features(input, last_action[o], xapps[o].spec.layout);
        }
      }
      actions[i] = greedy_action(xapps[i].net, input);
      proposals.push_back(make_proposal(xapps[i].spec, actions[i], p, env.state().step_index));
    }
    StepMetrics metrics;
    double pf = 0.0;
    if (xapps.size() == 1 && !opt.mitigation) {
      CellularEnv::StepResult res =
          env.step_controls(compose_controls(xapps[0].spec, actions[0], p, defaults), rng);
      metrics = std::move(res.metrics);
      pf = res.reward;
    } else {
      MitigationVerdict verdict = arbiter.arbitrate(proposals, env, rng);
      metrics = std::move(verdict.metrics);
      pf = verdict.pf_final;
      if (opt.arb_log) append_arb_log(*opt.arb_log, s, verdict);
    }
    last_action = std::move(actions);
    pf_series.push_back(pf);
    if (opt.rate_log) append_rate_log(*opt.rate_log, s, metrics);
    if (opt.outage_any_user) {
      double worst = metrics.rates_mbps.empty() ? 0.0 : metrics.rates_mbps[0];
      for (double r : metrics.rates_mbps) worst = std::min(worst, r);
      rate_samples.push_back(worst);
    } else {
      for (double r : metrics.rates_mbps) rate_samples.push_back(r);
    }
  }

  EvalMetrics m;
  m.histogram = throughput_histogram(rate_samples, histogram_edges(opt));
  for (double thr : opt.thresholds_mbps) m.outage.emplace_back(thr, compute_outage(rate_samples, thr));
  m.direct_conflict_interrupts = arbiter.total_losers_discarded();
  m.rollback_interrupts = arbiter.total_rollbacks();
  m.total_interrupts = arbiter.total_interrupts();
  m.pf = summarize(pf_series);
  m.rate_samples = rate_samples.size();
  return m;
}

}  // namespace xdistill
