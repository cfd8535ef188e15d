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

#include "xdistill/mitigation.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace xdistill;

namespace {

EnvParams frozen_params() {
  EnvParams p;
  p.num_bs = 2;
  p.num_users = 2;
  p.ue_speed_min = 0.0;
  p.ue_speed_max = 0.0;
  p.bs_positions = {{62.5, 125.0}, {187.5, 125.0}};
  p.fixed_user_positions = {{55.0, 120.0}, {195.0, 130.0}};
  p.validate();
  return p;
}

ActionProposal proposal(const std::string& xapp, std::map<Slot, int> values) {
  return {xapp, 0, std::move(values)};
}

TEST(DetectDirect, DifferingHandoverTargetsConflict) {
  auto conflicts = detect_direct({proposal("xapp1", {{{SlotKind::kHandover, 1}, 1}}),
                                  proposal("xapp2", {{{SlotKind::kHandover, 1}, 0}})});
  ASSERT_EQ(conflicts.size(), 1u);
  EXPECT_EQ(conflicts[0].kind, SlotKind::kHandover);
  EXPECT_EQ(conflicts[0].index, 1);
}

TEST(DetectDirect, AgreementIsNotAConflict) {
  auto conflicts = detect_direct({proposal("xapp1", {{{SlotKind::kHandover, 0}, 1}}),
                                  proposal("xapp2", {{{SlotKind::kHandover, 0}, 1}})});
  EXPECT_TRUE(conflicts.empty());
}

TEST(DetectDirect, DisjointSlotsNeverConflict) {
  auto conflicts = detect_direct({proposal("xapp1", {{{SlotKind::kRb, 0}, 45}, {{SlotKind::kRb, 1}, 91}}),
                                  proposal("xapp2", {{{SlotKind::kPower, 0}, 3}})});
  EXPECT_TRUE(conflicts.empty());
}

TEST(ResolveDirect, PriorityDecidesWinner) {
  ControlSettings current{{0, 0}, {10, 10}, {2, 2}};
  std::vector<ActionProposal> props = {proposal("xapp1", {{{SlotKind::kHandover, 0}, 1}}),
                                       proposal("xapp2", {{{SlotKind::kHandover, 0}, -1}})};
  auto conflicts = detect_direct(props);
  MergeResult a = resolve_direct(props, conflicts, {"xapp1", "xapp2"}, current);
  EXPECT_EQ(a.controls.serving[0], 1);
  ASSERT_EQ(a.conflicts.size(), 1u);
  EXPECT_EQ(a.conflicts[0].winner, "xapp1");
  EXPECT_EQ(a.conflicts[0].losers, std::vector<std::string>{"xapp2"});
  EXPECT_EQ(a.losers_discarded, 1);

  MergeResult b = resolve_direct(props, conflicts, {"xapp2", "xapp1"}, current);
  EXPECT_EQ(b.controls.serving[0], -1);
  EXPECT_EQ(b.conflicts[0].winner, "xapp2");
}

TEST(ResolveDirect, NoConflictsMergesUnion) {
  ControlSettings current{{0, 0}, {10, 10}, {2, 2}};
  std::vector<ActionProposal> props = {
      proposal("xapp1", {{{SlotKind::kRb, 0}, 136}, {{SlotKind::kRb, 1}, 45}}),
      proposal("xapp2", {{{SlotKind::kPower, 1}, 4}})};
  MergeResult r = resolve_direct(props, {}, {"xapp1", "xapp2"}, current);
  EXPECT_EQ(r.controls.rb_request[0], 136);
  EXPECT_EQ(r.controls.rb_request[1], 45);
  EXPECT_EQ(r.controls.power_idx[1], 4);
  // unproposed slots keep current settings
  EXPECT_EQ(r.controls.power_idx[0], 2);
  EXPECT_EQ(r.controls.serving[0], 0);
  EXPECT_TRUE(r.conflicts.empty());
}

TEST(ResolveDirect, FaultsWithoutFallbackOrPriority) {
  std::vector<ActionProposal> props = {proposal("xapp1", {{{SlotKind::kRb, 0}, 1}})};
  EXPECT_THROW(resolve_direct(props, {}, {"xapp1"}, std::nullopt), std::invalid_argument);
  ControlSettings current{{0}, {1}, {0}};
  EXPECT_THROW(resolve_direct(props, {}, {"other"}, current), std::invalid_argument);
}

TEST(MonitorIndirect, RollbackRuleBoundaries) {
  KpiHistory h;
  EXPECT_EQ(monitor_indirect(h, -100.0, 0.0), KpiVerdict::kKeep);  // no history
  h.record_pf(10.0);
  EXPECT_EQ(monitor_indirect(h, 5.0, 0.1), KpiVerdict::kRollback);
  EXPECT_EQ(monitor_indirect(h, 12.0, 0.1), KpiVerdict::kKeep);
  EXPECT_EQ(monitor_indirect(h, 9.95, 0.1), KpiVerdict::kKeep);  // within tolerance
  EXPECT_EQ(monitor_indirect(h, 10.0, 0.0), KpiVerdict::kKeep);  // strict decrease only
  EXPECT_EQ(monitor_indirect(h, 9.9999, 0.0), KpiVerdict::kRollback);
}

TEST(Rollback, RestoresControlsExactly) {
  EnvParams p = frozen_params();
  CellularEnv env(p);
  Rng rng(3);
  env.reset(rng);
  env.step_controls({{0, 1}, {136, 91}, {2, 2}}, rng);
  ControlSnapshot snap = env.snapshot_controls();
  EXPECT_EQ(snap.rb_alloc, (std::vector<int>{136, 91}));
  EXPECT_EQ(snap.power_idx, (std::vector<int>{2, 2}));

  env.step_controls({{0, 1}, {1, 16}, {4, 0}}, rng);
  EXPECT_NE(env.snapshot_controls(), snap);
  apply_rollback(env, snap);
  EXPECT_EQ(env.snapshot_controls(), snap);  // bit-identical restore
  // idempotent
  apply_rollback(env, snap);
  EXPECT_EQ(env.snapshot_controls(), snap);
  EXPECT_THROW(apply_rollback(env, std::nullopt), std::invalid_argument);
}

TEST(Arbiter, RollbackCounterIncrementsOncePerRollback) {
  EnvParams p = frozen_params();
  CellularEnv env(p);
  Rng rng(5);
  env.reset(rng);
  Arbiter arbiter({{"xapp1"}, 0.0, true});

  auto good = proposal("xapp1", {{{SlotKind::kHandover, 0}, 0},
                                 {{SlotKind::kHandover, 1}, 1},
                                 {{SlotKind::kRb, 0}, 136},
                                 {{SlotKind::kRb, 1}, 136},
                                 {{SlotKind::kPower, 0}, 4},
                                 {{SlotKind::kPower, 1}, 4}});
  MitigationVerdict v1 = arbiter.arbitrate({good}, env, rng);
  EXPECT_FALSE(v1.rollback_applied);
  EXPECT_EQ(arbiter.total_rollbacks(), 0);

  auto bad = good;
  bad.values[{SlotKind::kRb, 0}] = 1;  // tanks user 0's rate
  MitigationVerdict v2 = arbiter.arbitrate({bad}, env, rng);
  EXPECT_TRUE(v2.rollback_applied);
  EXPECT_EQ(arbiter.total_rollbacks(), 1);
  EXPECT_EQ(env.snapshot_controls().rb_alloc, (std::vector<int>{136, 136}));
  EXPECT_GT(v2.pf_final, v2.pf_stepped);
  EXPECT_EQ(arbiter.total_interrupts(), 1);  // one rollback, no losers
}

TEST(Arbiter, HandoversAreNotRolledBack) {
  EnvParams p = frozen_params();
  CellularEnv env(p);
  Rng rng(7);
  env.reset(rng);
  Arbiter arbiter({{"xapp1"}, 0.0, true});
  auto good = proposal("xapp1", {{{SlotKind::kHandover, 0}, 0},
                                 {{SlotKind::kHandover, 1}, 1},
                                 {{SlotKind::kRb, 0}, 136},
                                 {{SlotKind::kRb, 1}, 136},
                                 {{SlotKind::kPower, 0}, 4},
                                 {{SlotKind::kPower, 1}, 4}});
  arbiter.arbitrate({good}, env, rng);
  auto bad = good;
  bad.values[{SlotKind::kHandover, 0}] = 1;  // far BS
  bad.values[{SlotKind::kRb, 0}] = 1;
  MitigationVerdict v = arbiter.arbitrate({bad}, env, rng);
  ASSERT_TRUE(v.rollback_applied);
  EXPECT_EQ(env.state().serving[0], 1);  // handover kept
  EXPECT_EQ(env.state().rb_alloc, (std::vector<int>{136, 136}));
  EXPECT_EQ(env.state().power_idx, (std::vector<int>{4, 4}));
}

TEST(Arbiter, SingleProposerNeverLogsDirectConflicts) {
  EnvParams p = frozen_params();
  CellularEnv env(p);
  Rng rng(11);
  env.reset(rng);
  Arbiter arbiter({{"solo"}, 0.0, true});
  for (int step = 0; step < 200; ++step) {
    std::map<Slot, int> values;
    for (int u = 0; u < p.num_users; ++u) {
      values[{SlotKind::kHandover, u}] = rng.index(p.num_bs + 1) - 1;
      values[{SlotKind::kRb, u}] = p.rb_options[rng.index(p.rb_width())];
    }
    for (int b = 0; b < p.num_bs; ++b) values[{SlotKind::kPower, b}] = rng.index(p.power_width());
    MitigationVerdict v = arbiter.arbitrate({proposal("solo", values)}, env, rng);
    ASSERT_TRUE(v.direct_conflicts.empty());
  }
  EXPECT_EQ(arbiter.total_direct_conflicts(), 0);
  EXPECT_EQ(arbiter.total_interrupts(), arbiter.total_rollbacks());
}

TEST(Arbiter, ConflictCountInvariantUnderSubmissionOrder) {
  EnvParams p = frozen_params();
  auto run = [&p](bool swapped) {
    CellularEnv env(p);
    Rng rng(13);
    env.reset(rng);
    Arbiter arbiter({{"xapp1", "xapp2"}, 0.0, true});
    long conflicts = 0;
    std::string first_winner;
    for (int step = 0; step < 100; ++step) {
      auto p1 = proposal("xapp1", {{{SlotKind::kHandover, 0}, rng.index(p.num_bs + 1) - 1},
                                   {{SlotKind::kRb, 0}, p.rb_options[rng.index(p.rb_width())]}});
      auto p2 = proposal("xapp2", {{{SlotKind::kHandover, 0}, rng.index(p.num_bs + 1) - 1},
                                   {{SlotKind::kPower, 0}, rng.index(p.power_width())}});
      std::vector<ActionProposal> props = swapped ? std::vector<ActionProposal>{p2, p1}
                                                  : std::vector<ActionProposal>{p1, p2};
      MitigationVerdict v = arbiter.arbitrate(props, env, rng);
      conflicts += static_cast<long>(v.direct_conflicts.size());
      if (!v.direct_conflicts.empty() && first_winner.empty()) {
        first_winner = v.direct_conflicts[0].winner;
      }
    }
    return std::pair<long, std::string>{conflicts, first_winner};
  };
  auto [count_a, winner_a] = run(false);
  auto [count_b, winner_b] = run(true);
  EXPECT_EQ(count_a, count_b);
  EXPECT_GT(count_a, 0);
  EXPECT_EQ(winner_a, "xapp1");
  EXPECT_EQ(winner_b, "xapp1");  // priority, not submission order, decides
}

// The logged PF series must satisfy: rollback fired at a row iff that row's
// pf_after dropped more than delta below its pf_before.
TEST(Arbiter, LogSeriesIsConsistentWithRollbackRule) {
  EnvParams p = frozen_params();
  for (double delta : {0.0, 0.1}) {
    CellularEnv env(p);
    Rng rng(17);
    env.reset(rng);
    Arbiter arbiter({{"xapp1", "xapp2"}, delta, true});
    std::ostringstream log;
    write_arb_log_header(log);
    long rollbacks = 0;
    for (int step = 0; step < 300; ++step) {
      auto p1 = proposal("xapp1", {{{SlotKind::kHandover, 0}, rng.index(p.num_bs + 1) - 1},
                                   {{SlotKind::kHandover, 1}, rng.index(p.num_bs + 1) - 1},
                                   {{SlotKind::kRb, 0}, p.rb_options[rng.index(p.rb_width())]},
                                   {{SlotKind::kRb, 1}, p.rb_options[rng.index(p.rb_width())]}});
      auto p2 = proposal("xapp2", {{{SlotKind::kHandover, 0}, rng.index(p.num_bs + 1) - 1},
                                   {{SlotKind::kHandover, 1}, rng.index(p.num_bs + 1) - 1},
                                   {{SlotKind::kPower, 0}, rng.index(p.power_width())},
                                   {{SlotKind::kPower, 1}, rng.index(p.power_width())}});
      MitigationVerdict v = arbiter.arbitrate({p1, p2}, env, rng);
      append_arb_log(log, step, v);
      rollbacks += v.rollback_applied;
    }
    EXPECT_EQ(arbiter.total_rollbacks(), rollbacks);
    EXPECT_GT(rollbacks, 0);

    std::istringstream in(log.str());
    std::string line;
    std::getline(in, line);  // header
    long parsed_rollbacks = 0;
    while (std::getline(in, line)) {
      std::istringstream row(line);
      std::string step_s, conflicts_s, winner, flag_s, before_s, after_s;
      std::getline(row, step_s, ',');
      std::getline(row, conflicts_s, ',');
      std::getline(row, winner, ',');
      std::getline(row, flag_s, ',');
      std::getline(row, before_s, ',');
      std::getline(row, after_s, ',');
      bool fired = flag_s == "1";
      bool should_fire = std::stod(after_s) < std::stod(before_s) - delta;
      ASSERT_EQ(fired, should_fire) << line;
      parsed_rollbacks += fired;
    }
    EXPECT_EQ(parsed_rollbacks, rollbacks);
  }
}

TEST(Arbiter, MergedValuesComeFromProposalsOrCurrentSettings) {
  EnvParams p = frozen_params();
  CellularEnv env(p);
  Rng rng(19);
  env.reset(rng);
  Arbiter arbiter({{"xapp1", "xapp2"}, 0.0, true});
  for (int step = 0; step < 100; ++step) {
    ControlSettings current = env.current_controls();
    auto p1 = proposal("xapp1", {{{SlotKind::kHandover, 0}, rng.index(p.num_bs + 1) - 1},
                                 {{SlotKind::kRb, 0}, p.rb_options[rng.index(p.rb_width())]}});
    auto p2 = proposal("xapp2", {{{SlotKind::kHandover, 0}, rng.index(p.num_bs + 1) - 1},
                                 {{SlotKind::kPower, 1}, rng.index(p.power_width())}});
    MitigationVerdict v = arbiter.arbitrate({p1, p2}, env, rng);
    // every merged slot value traces back to a proposal or the prior setting
    int ho_a = p1.values[{SlotKind::kHandover, 0}];
    int ho_b = p2.values[{SlotKind::kHandover, 0}];
    int rb_a = p1.values[{SlotKind::kRb, 0}];
    int pw_b = p2.values[{SlotKind::kPower, 1}];
    EXPECT_TRUE(v.merged.serving[0] == ho_a || v.merged.serving[0] == ho_b);
    EXPECT_EQ(v.merged.serving[1], current.serving[1]);
    EXPECT_EQ(v.merged.rb_request[0], rb_a);
    EXPECT_EQ(v.merged.rb_request[1], current.rb_request[1]);
    EXPECT_EQ(v.merged.power_idx[0], current.power_idx[0]);
    EXPECT_EQ(v.merged.power_idx[1], pw_b);
  }
}

}  // namespace
