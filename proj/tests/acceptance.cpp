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

// End-to-end acceptance suite. Runs every criterion at its stated tolerance
// and prints one pass/fail line per criterion; the exit code is the number
// of failed criteria.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "test_fd.hpp"
#include "test_oracles.hpp"
#include "xdistill/pipeline.hpp"

using namespace xdistill;
namespace fs = std::filesystem;

namespace {

struct Criterion {
  int number = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<Criterion> g_results;
bool g_pipeline_monotone = false;
double g_pipeline_hist_err = 1e9;

void record(int number, const std::string& name, bool pass, const std::string& detail) {
  g_results.push_back({number, name, pass, detail});
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
  return buf;
}

// ---- criterion 1: formula oracle -----------------------------------------

void criterion1() {
  auto t0 = std::chrono::steady_clock::now();
  EnvParams p;
  CellularEnv env(p);
  Rng rng(20260809);
  env.reset(rng);
  double worst = 0.0;
  long checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    oracle::Configuration cfg = oracle::random_configuration(p, env.bs_positions(), rng);
    env.set_configuration(cfg.positions, cfg.controls);
    for (int i = 0; i < p.num_users; ++i) {
      double expected = oracle::user_rate_mbps(p, env.bs_positions(), cfg, i);
      double actual = env.state().rates_mbps[i];
      double rel = expected == 0.0 ? std::abs(actual)
                                   : std::abs(actual - expected) / std::abs(expected);
      worst = std::max(worst, rel);
      ++checked;
    }
  }
  double secs = seconds_since(t0);
  bool pass = worst < 1e-9 && secs < 10.0;
  record(1, "formula oracle (1000 random configurations vs direct evaluation)", pass,
         std::to_string(checked) + " rates, worst rel err " + fmt(worst, 3) + ", " +
             fmt(secs, 3) + " s");
}

// ---- criterion 2: gradient correctness ------------------------------------

void criterion2() {
  auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  int nets = 0;
  for (std::uint64_t seed = 501; seed <= 505; ++seed) {
    Rng rng(seed);
    HeadLayout layout;
    layout.heads.push_back({"a", HeadRole::kHandover, 0, 3});
    layout.heads.push_back({"b", HeadRole::kRbAlloc, 0, 4});
    layout.heads.push_back({"c", HeadRole::kPower, 0, 2});
    QNet net = make_qnet({5, {6, 5}}, layout, rng);
    ++nets;

    // KL loss at both temperatures
    std::vector<double> x(5);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    std::vector<std::vector<double>> teacher = {{2.0, -1.0, 0.5}, {0.3, 1.7, -0.8, 0.0}, {5.0, -5.0}};
    for (double tau : {1.0, 20.0}) {
      ForwardTrace trace;
      auto q = forward(net, x, &trace);
      std::vector<std::vector<double>> head_grads(q.size());
      for (std::size_t h = 0; h < q.size(); ++h) {
        head_grads[h] = kl_loss(teacher[h], q[h], tau).grad;
      }
      Gradients g = zero_gradients(net);
      accumulate_backward(net, trace, head_grads, g);
      auto loss_of = [&]() {
        auto qq = forward(net, x);
        double total = 0.0;
        for (std::size_t h = 0; h < qq.size(); ++h) total += kl_loss(teacher[h], qq[h], tau).loss;
        return total;
      };
      worst = std::max(worst, fd::check_gradients(net, g, loss_of, 1e-4, 1e-7).worst_rel);
    }

    // TD loss on a random batch against a fixed target net
    QNet target = make_qnet({5, {6, 5}}, layout, rng);
    std::vector<Transition> storage;
    for (int i = 0; i < 5; ++i) {
      Transition t;
      t.observation.resize(5);
      t.next_observation.resize(5);
      for (double& v : t.observation) v = rng.uniform(-1.0, 1.0);
      for (double& v : t.next_observation) v = rng.uniform(-1.0, 1.0);
      t.action_idx = {rng.index(3), rng.index(4), rng.index(2)};
      t.reward = rng.uniform(-2.0, 2.0);
      storage.push_back(std::move(t));
    }
    std::vector<const Transition*> batch;
    for (const Transition& t : storage) batch.push_back(&t);
    Gradients g = zero_gradients(net);
    td_loss_and_gradients(net, target, batch, 0.95, g);
    auto loss_of = [&]() {
      Gradients scratch = zero_gradients(net);
      return td_loss_and_gradients(net, target, batch, 0.95, scratch);
    };
    worst = std::max(worst, fd::check_gradients(net, g, loss_of, 1e-4, 1e-7).worst_rel);
  }
  double secs = seconds_since(t0);
  bool pass = worst < 1e-4 && secs < 30.0;
  record(2, "gradient correctness (TD + KL, tau in {1, 20}, finite differences)", pass,
         std::to_string(nets) + " nets, worst rel err " + fmt(worst, 3) + ", " + fmt(secs, 3) +
             " s");
}

// ---- criterion 3: brute-force policy oracle --------------------------------

EnvParams probe_params() {
  EnvParams p;
  p.num_bs = 2;
  p.num_users = 2;
  p.ue_speed_min = 0.0;
  p.ue_speed_max = 0.0;
  p.episode_len = 100;
  p.bs_positions = {{62.5, 125.0}, {187.5, 125.0}};
  p.fixed_user_positions = {{55.0, 120.0}, {195.0, 130.0}};
  p.validate();
  return p;
}

void criterion3() {
  auto t0 = std::chrono::steady_clock::now();
  EnvParams p = probe_params();
  XAppSpec spec = make_xapp1_spec(p);
  ControlSettings defaults = stage1_default_controls(p);

  // exhaustive search over the 3*3*5*5 joint actions of xApp 1
  double optimal = -1e300;
  {
    CellularEnv env(p);
    Rng rng(1);
    for (int ho0 = 0; ho0 <= p.num_bs; ++ho0) {
      for (int ho1 = 0; ho1 <= p.num_bs; ++ho1) {
        for (int rb0 = 0; rb0 < p.rb_width(); ++rb0) {
          for (int rb1 = 0; rb1 < p.rb_width(); ++rb1) {
            env.reset(rng);
            double pf =
                env.step_controls(compose_controls(spec, {ho0, ho1, rb0, rb1}, p, defaults), rng)
                    .reward;
            optimal = std::max(optimal, pf);
          }
        }
      }
    }
  }

  Hyperparams hp;
  hp.episodes = 2500;
  CellularEnv env(p);
  Rng rng(42);
  TrainResult res = train_teacher(env, spec, hp, rng);

  CellularEnv eval_env(p);
  Rng eval_rng(43);
  eval_env.reset(eval_rng);
  double total = 0.0;
  for (int t = 0; t < p.episode_len; ++t) {
    std::vector<int> action = greedy_action(res.net, scale_observation(eval_env.observation(), p));
    total += eval_env.step_controls(compose_controls(spec, action, p, defaults), eval_rng).reward;
  }
  double mean_pf = total / p.episode_len;
  double secs = seconds_since(t0);
  bool pass = mean_pf >= 0.9 * optimal && secs < 300.0;
  record(3, "brute-force policy oracle (frozen 2-BS/2-user probe)", pass,
         "greedy mean PF " + fmt(mean_pf) + " vs optimal " + fmt(optimal) + " (" +
             fmt(100.0 * mean_pf / optimal, 4) + "%), " + std::to_string(hp.episodes) +
             " episodes, " + fmt(secs, 3) + " s");
}

// ---- criterion 5: mitigation unit suite ------------------------------------

void criterion5() {
  std::vector<std::string> problems;

  // direct-conflict winner follows priority under both orderings
  {
    ControlSettings current{{0, 0}, {10, 10}, {2, 2}};
    std::vector<ActionProposal> props = {{"xapp1", 0, {{{SlotKind::kHandover, 0}, 1}}},
                                         {"xapp2", 0, {{{SlotKind::kHandover, 0}, -1}}}};
    auto conflicts = detect_direct(props);
    if (conflicts.size() != 1) problems.push_back("conflict detection");
    MergeResult a = resolve_direct(props, conflicts, {"xapp1", "xapp2"}, current);
    MergeResult b = resolve_direct(props, conflicts, {"xapp2", "xapp1"}, current);
    if (a.controls.serving[0] != 1 || a.conflicts[0].winner != "xapp1") {
      problems.push_back("priority order xapp1-first");
    }
    if (b.controls.serving[0] != -1 || b.conflicts[0].winner != "xapp2") {
      problems.push_back("priority order xapp2-first");
    }
  }

  // indirect rollback fires iff the PF drop exceeds delta
  for (double delta : {0.0, 0.1}) {
    KpiHistory h;
    h.record_pf(10.0);
    bool fire_below = monitor_indirect(h, 10.0 - delta - 1e-9, delta) == KpiVerdict::kRollback;
    bool hold_at = monitor_indirect(h, 10.0 - delta, delta) == KpiVerdict::kKeep;
    bool hold_above = monitor_indirect(h, 10.0, delta) == KpiVerdict::kKeep;
    if (!fire_below || !hold_at || !hold_above) {
      problems.push_back("rollback boundary at delta=" + fmt(delta, 2));
    }
  }

  // rollback restores RB/power settings bit-exactly
  {
    EnvParams p = probe_params();
    CellularEnv env(p);
    Rng rng(3);
    env.reset(rng);
    env.step_controls({{0, 1}, {136, 91}, {3, 1}}, rng);
    ControlSnapshot snap = env.snapshot_controls();
    env.step_controls({{0, 1}, {1, 16}, {0, 4}}, rng);
    apply_rollback(env, snap);
    if (!(env.snapshot_controls() == snap)) problems.push_back("bit-exact restore");
    apply_rollback(env, snap);
    if (!(env.snapshot_controls() == snap)) problems.push_back("rollback idempotence");
  }

  // single-proposer trajectories log zero direct conflicts
  {
    EnvParams p = probe_params();
    CellularEnv env(p);
    Rng rng(5);
    env.reset(rng);
    Arbiter arbiter({{"solo"}, 0.0, true});
    for (int step = 0; step < 300; ++step) {
      std::map<Slot, int> values;
      for (int u = 0; u < p.num_users; ++u) {
        values[{SlotKind::kHandover, u}] = rng.index(p.num_bs + 1) - 1;
        values[{SlotKind::kRb, u}] = p.rb_options[rng.index(p.rb_width())];
      }
      for (int b = 0; b < p.num_bs; ++b) values[{SlotKind::kPower, b}] = rng.index(p.power_width());
      arbiter.arbitrate({{"solo", step, values}}, env, rng);
    }
    if (arbiter.total_direct_conflicts() != 0) problems.push_back("single-proposer conflicts");
    if (arbiter.total_interrupts() != arbiter.total_rollbacks()) {
      problems.push_back("interrupt accounting");
    }
  }

  std::string detail = problems.empty() ? "priority x2, delta boundaries {0, 0.1}, bit-exact "
                                          "restore, single-proposer zero conflicts"
                                        : "failed: " + problems.front();
  record(5, "mitigation unit suite", problems.empty(), detail);
}

// ---- pipeline-backed criteria (4, 6, 7) ------------------------------------

std::vector<DistillCurveRow> read_loss_curve(const std::string& path) {
  std::vector<DistillCurveRow> curve;
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::size_t comma = line.find(',');
    curve.push_back({std::stoi(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
  }
  return curve;
}

bool moving_average_non_increasing(const std::vector<DistillCurveRow>& curve, double tol,
                                   std::size_t window = 5) {
  std::vector<double> ma;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
    double sum = 0.0;
    for (std::size_t k = lo; k <= i; ++k) sum += curve[k].mean_kl;
    ma.push_back(sum / static_cast<double>(i - lo + 1));
  }
  for (std::size_t i = 1; i < ma.size(); ++i) {
    if (ma[i] > ma[i - 1] + tol) return false;
  }
  return true;
}

struct ReportMedians {
  std::map<std::string, double> outage_at_10;
  bool have_team_column = false;
};

ReportMedians read_report(const std::string& out_dir) {
  ReportMedians r;
  std::map<std::string, std::vector<double>> at10;
  std::istringstream in(read_file(out_dir + "/report.csv"));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string scheme, seed, thr, pct;
    std::getline(row, scheme, ',');
    std::getline(row, seed, ',');
    std::getline(row, thr, ',');
    std::getline(row, pct, ',');
    if (std::stod(thr) == 10.0) at10[scheme].push_back(std::stod(pct));
  }
  for (auto& [scheme, values] : at10) r.outage_at_10[scheme] = median_of(values);
  r.have_team_column =
      read_file(out_dir + "/outage_median.csv").find("team_median_outage_pct") != std::string::npos;
  return r;
}

void pipeline_criteria(const std::string& config_path) {
  auto t0 = std::chrono::steady_clock::now();
  std::string out_dir = (fs::temp_directory_path() / "xdistill_acceptance_out").string();
  fs::remove_all(out_dir);
  RunConfig rc = load_run_config(config_path, {}, out_dir);

  try {
    run_stage(rc, Stage::kTrainTeachers);
    run_stage(rc, Stage::kCollect);
    run_stage(rc, Stage::kDistill);
    run_stage(rc, Stage::kEvaluate);
    run_stage(rc, Stage::kBaselineIndividual);
    run_stage(rc, Stage::kBaselineTeam);
    run_stage(rc, Stage::kReport);
  } catch (const std::exception& e) {
    std::string why = std::string("pipeline failed: ") + e.what();
    record(4, "distillation fidelity", false, why);
    record(6, "directional end-to-end comparison", false, why);
    record(7, "stage determinism", false, why);
    return;
  }
  double pipeline_secs = seconds_since(t0);

  // criterion 4: held-out agreement >= 90% and non-increasing loss curve
  {
    std::istringstream in(read_file(out_dir + "/distill_agreement.csv"));
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    std::size_t comma = row.find(',');
    long holdout_records = std::stol(row.substr(0, comma));
    double agreement = std::stod(row.substr(comma + 1));
    std::vector<DistillCurveRow> curve = read_loss_curve(out_dir + "/distill_loss.csv");
    bool decays = moving_average_non_increasing(curve, 1e-3);
    bool pass = agreement >= 0.90 && decays;
    record(4, "distillation fidelity (held-out argmax agreement, loss decay)", pass,
           "agreement " + fmt(100.0 * agreement, 4) + "% over " +
               std::to_string(holdout_records) + " held-out records, loss curve " +
               (decays ? "non-increasing" : "INCREASING") + " (tol 1e-3)");
  }

  // criterion 6: median outage at 10 Mbps, distilled <= individual
  {
    ReportMedians medians = read_report(out_dir);
    bool have_all = medians.outage_at_10.count("distilled") &&
                    medians.outage_at_10.count("individual") &&
                    medians.outage_at_10.count("team");
    double d = have_all ? medians.outage_at_10["distilled"] : 1e9;
    double i = have_all ? medians.outage_at_10["individual"] : -1e9;
    double t = have_all ? medians.outage_at_10["team"] : -1e9;
    bool pass = have_all && medians.have_team_column && d <= i && pipeline_secs < 3600.0;
    record(6, "directional end-to-end (median outage at 10 Mbps over 5 seeds)", pass,
           "distilled " + fmt(d, 4) + "% <= individual " + fmt(i, 4) + "% (team " + fmt(t, 4) +
               "%), pipeline " + fmt(pipeline_secs, 4) + " s");
  }

  // criterion 7: rerunning stages with the same config + seed is byte-identical
  {
    std::vector<std::string> tracked = {"buffer.xbuf",          "student.qnet",
                                        "distill_loss.csv",     "distill_agreement.csv",
                                        "manifest_collect.json", "manifest_distill.json",
                                        "report.csv",           "outage_median.csv",
                                        "manifest_report.json"};
    std::map<std::string, std::string> before;
    for (const std::string& f : tracked) before[f] = read_file(out_dir + "/" + f);
    run_stage(rc, Stage::kCollect);
    run_stage(rc, Stage::kDistill);
    run_stage(rc, Stage::kReport);
    std::vector<std::string> changed;
    for (const std::string& f : tracked) {
      if (read_file(out_dir + "/" + f) != before[f]) changed.push_back(f);
    }
    bool pass = changed.empty();
    record(7, "stage determinism (rerun is byte-identical)", pass,
           pass ? "collect + distill + report reruns identical across " +
                      std::to_string(tracked.size()) + " artifacts"
                : "changed: " + changed.front());
  }

  // criterion 8 part 2: metrics integrity on real evaluation outputs
  {
    bool monotone = true;
    double worst_integral = 0.0;
    for (const std::string& scheme : {"distilled", "individual", "team"}) {
      for (int k = 0; k < rc.eval.num_seeds; ++k) {
        std::string prefix = out_dir + "/eval_" + scheme + "_s" + std::to_string(k) + "_";
        auto sweep = parse_outage_csv(read_file(prefix + "outage.csv"));
        for (std::size_t i = 1; i < sweep.size(); ++i) {
          monotone &= sweep[i].second >= sweep[i - 1].second - 1e-12;
        }
        // histogram integral from the CSV
        std::istringstream in(read_file(prefix + "hist.csv"));
        std::string line;
        double integral = 0.0;
        while (std::getline(in, line)) {
          if (line.empty() || line[0] == '#' || line[0] == 'b') continue;
          std::istringstream row(line);
          std::string lo, hi, density;
          std::getline(row, lo, ',');
          std::getline(row, hi, ',');
          std::getline(row, density, ',');
          integral += (std::stod(hi) - std::stod(lo)) * std::stod(density);
        }
        worst_integral = std::max(worst_integral, std::abs(integral - 1.0));
      }
    }
    g_pipeline_monotone = monotone;
    g_pipeline_hist_err = worst_integral;
  }
}

// ---- criterion 8: metrics integrity + Table 1 constants --------------------

void criterion8(const std::string& config_path) {
  std::string raw = read_file(config_path);
  ConfigFile cfg = ConfigFile::load(config_path);
  bool constants = cfg.get_int("env", "total_rbs", 0) == 273 &&
                   cfg.get_double("env", "rb_bandwidth_khz", 0) == 360.0 &&
                   cfg.get_double("env", "guard_khz", 0) == 845.0 &&
                   cfg.get_double("env", "channel_mhz", 0) == 100.0;
  bool verbatim = raw.find("total_rbs = 273") != std::string::npos &&
                  raw.find("rb_bandwidth_khz = 360") != std::string::npos &&
                  raw.find("guard_khz = 845") != std::string::npos &&
                  raw.find("channel_mhz = 100") != std::string::npos;
  bool pass = constants && verbatim && g_pipeline_monotone && g_pipeline_hist_err < 1e-9;
  record(8, "metrics integrity + 5G NR resource constants in default config", pass,
         std::string("outage ") + (g_pipeline_monotone ? "monotone" : "NON-MONOTONE") +
             ", worst |histogram integral - 1| " + fmt(g_pipeline_hist_err, 3) +
             ", Table constants " + (constants && verbatim ? "verbatim" : "MISSING"));
}

}  // namespace

int main() {
  std::string source_dir = XDISTILL_SOURCE_DIR;
  std::string config_path = source_dir + "/configs/default.ini";

  criterion1();
  criterion2();
  criterion3();
  criterion5();
  pipeline_criteria(config_path);
  criterion8(config_path);

  std::sort(g_results.begin(), g_results.end(),
            [](const Criterion& a, const Criterion& b) { return a.number < b.number; });
  int failures = 0;
  for (const Criterion& c : g_results) {
    failures += !c.pass;
    std::cout << (c.pass ? "[PASS]" : "[FAIL]") << " criterion " << c.number << ": " << c.name
              << " — " << c.detail << "\n";
  }
  std::cout << (failures == 0 ? "ACCEPTANCE: all criteria passed"
                              : "ACCEPTANCE: " + std::to_string(failures) + " criteria FAILED")
            << std::endl;
  return failures;
}
