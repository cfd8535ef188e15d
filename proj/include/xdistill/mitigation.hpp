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
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "xdistill/env.hpp"
#include "xdistill/errors.hpp"

namespace xdistill {

enum class SlotKind : std::uint8_t { kHandover = 0, kRb = 1, kPower = 2 };

// One controllable network parameter: a user's serving cell, a user's RB
// allocation, or a BS transmit power level.
struct Slot {
  SlotKind kind = SlotKind::kHandover;
  int index = 0;  // user index for handover/RB, BS index for power

  auto operator<=>(const Slot&) const = default;
};

inline std::string slot_name(const Slot& s) {
  switch (s.kind) {
    case SlotKind::kHandover: return "ho(u" + std::to_string(s.index) + ")";
    case SlotKind::kRb: return "rb(u" + std::to_string(s.index) + ")";
    case SlotKind::kPower: return "pw(b" + std::to_string(s.index) + ")";
  }
  return "?";
}

// Slot values use the env's concrete representation: serving BS (-1 = DC),
// requested RB count, or power level index.
struct ActionProposal {
  std::string xapp;
  long step = 0;
  std::map<Slot, int> values;
};

struct DirectConflict {
  Slot slot;
  std::string winner;
  std::vector<std::string> losers;
};

struct MitigationPolicy {
  std::vector<std::string> priority;  // first entry wins direct conflicts
  double delta = 0.0;                 // rollback when PF drops by more than this
  bool rollback_enabled = true;
};

// A slot is in direct conflict iff at least two xApps propose differing
// values for it; agreement on a shared slot is not a conflict.
inline std::vector<Slot> detect_direct(const std::vector<ActionProposal>& proposals) {
  std::map<Slot, std::vector<int>> seen;
  for (const ActionProposal& p : proposals) {
    for (const auto& [slot, value] : p.values) seen[slot].push_back(value);
  }
  std::vector<Slot> out;
  for (const auto& [slot, values] : seen) {
    for (std::size_t i = 1; i < values.size(); ++i) {
      if (values[i] != values[0]) {
        out.push_back(slot);
        break;
      }
    }
  }
  return out;
}

struct MergeResult {
  ControlSettings controls;
  std::vector<DirectConflict> conflicts;
  int losers_discarded = 0;
};

namespace detail {

inline int priority_rank(const std::vector<std::string>& priority, const std::string& xapp) {
  for (std::size_t i = 0; i < priority.size(); ++i) {
    if (priority[i] == xapp) return static_cast<int>(i);
  }
  throw std::invalid_argument("priority order does not cover xApp: " + xapp);
}

}  // namespace detail

// Merges proposals into one concrete action. Conflicting slots take the
// highest-priority proposer's value; unproposed slots keep the current
// setting. Losing values are discarded, never blended.
inline MergeResult resolve_direct(const std::vector<ActionProposal>& proposals,
                                  const std::vector<Slot>& conflicts,
                                  const std::vector<std::string>& priority,
                                  const std::optional<ControlSettings>& current) {
  MergeResult r;
  std::map<Slot, std::pair<int, int>> chosen;  // slot -> (rank, value)
  std::map<Slot, std::vector<std::pair<int, std::string>>> contenders;
  for (const ActionProposal& p : proposals) {
    int rank = detail::priority_rank(priority, p.xapp);
    for (const auto& [slot, value] : p.values) {
      contenders[slot].emplace_back(rank, p.xapp);
      auto it = chosen.find(slot);
      if (it == chosen.end() || rank < it->second.first) chosen[slot] = {rank, value};
    }
  }
  for (const Slot& slot : conflicts) {
    DirectConflict c;
    c.slot = slot;
    auto& who = contenders.at(slot);
    std::sort(who.begin(), who.end());
    c.winner = who.front().second;
    for (std::size_t i = 1; i < who.size(); ++i) {
      c.losers.push_back(who[i].second);
      ++r.losers_discarded;
    }
    r.conflicts.push_back(std::move(c));
  }
  if (!current) {
    // every slot must then come from some proposal
    throw std::invalid_argument("no current settings to fall back on");
  }
  r.controls = *current;
  for (const auto& [slot, rv] : chosen) {
    switch (slot.kind) {
      case SlotKind::kHandover: r.controls.serving.at(slot.index) = rv.second; break;
      case SlotKind::kRb: r.controls.rb_request.at(slot.index) = rv.second; break;
      case SlotKind::kPower: r.controls.power_idx.at(slot.index) = rv.second; break;
    }
  }
  return r;
}

enum class KpiVerdict { kKeep, kRollback };

// Ring of recent PF values plus the control snapshot needed to restore the
// previously applied settings exactly.
class KpiHistory {
 public:
  explicit KpiHistory(std::size_t window = 8) : window_(window) {}

  void record_pf(double pf) {
    pf_.push_back(pf);
    if (pf_.size() > window_) pf_.erase(pf_.begin());
  }

  std::optional<double> last_pf() const {
    if (pf_.empty()) return std::nullopt;
    return pf_.back();
  }

  void store_snapshot(const ControlSnapshot& snap) { snap_ = snap; }
  const std::optional<ControlSnapshot>& snapshot() const { return snap_; }

 private:
  std::vector<double> pf_;
  std::optional<ControlSnapshot> snap_;
  std::size_t window_;
};

// Rollback fires iff the new PF fell below the previous one by more than
// delta. With no history the action is kept.
inline KpiVerdict monitor_indirect(const KpiHistory& history, double new_pf, double delta) {
  auto prev = history.last_pf();
  if (!prev) return KpiVerdict::kKeep;
  return new_pf < *prev - delta ? KpiVerdict::kRollback : KpiVerdict::kKeep;
}

// Restores RB/power controls from the snapshot. Handover decisions stand.
inline double apply_rollback(CellularEnv& env, const std::optional<ControlSnapshot>& snap) {
  if (!snap) throw std::invalid_argument("rollback without a snapshot");
  return env.restore_controls(*snap);
}

struct MitigationVerdict {
  ControlSettings merged;
  std::vector<DirectConflict> direct_conflicts;
  int losers_discarded = 0;
  bool rollback_applied = false;
  double pf_before = 0.0;  // PF of the state the proposals acted on
  double pf_stepped = 0.0; // PF right after the merged action (pre-rollback)
  double pf_final = 0.0;   // PF in force after optional rollback
  double reward = 0.0;     // == pf_final
  std::vector<double> observation;
  StepMetrics metrics;
};

// Sequential O-RAN-style arbiter: merge -> apply -> monitor -> maybe roll
// back. Exactly one arbitration per environment step.
class Arbiter {
 public:
  explicit Arbiter(MitigationPolicy policy) : policy_(std::move(policy)) {}

  const MitigationPolicy& policy() const { return policy_; }
  long total_direct_conflicts() const { return total_conflicts_; }
  long total_losers_discarded() const { return total_losers_; }
  long total_rollbacks() const { return total_rollbacks_; }
  long total_interrupts() const { return total_losers_ + total_rollbacks_; }
  const KpiHistory& history() const { return history_; }

  MitigationVerdict arbitrate(const std::vector<ActionProposal>& proposals, CellularEnv& env,
                              Rng& rng) {
    if (proposals.empty()) throw std::invalid_argument("arbitrate with no proposals");
    MitigationVerdict v;
    v.pf_before = env.current_pf();
    std::vector<Slot> conflict_slots = detect_direct(proposals);
    MergeResult merge =
        resolve_direct(proposals, conflict_slots, policy_.priority, env.current_controls());
    v.merged = merge.controls;
    v.direct_conflicts = std::move(merge.conflicts);
    v.losers_discarded = merge.losers_discarded;

    // Seed the KPI reference with the pre-step PF so the rollback rule is
    // well-defined from the first arbitration onwards.
    if (!history_.last_pf()) history_.record_pf(v.pf_before);
    history_.store_snapshot(env.snapshot_controls());
    CellularEnv::StepResult res = env.step_controls(v.merged, rng);
    v.pf_stepped = res.reward;
    v.pf_final = res.reward;
    v.observation = std::move(res.observation);
    v.metrics = std::move(res.metrics);

    if (policy_.rollback_enabled &&
        monitor_indirect(history_, v.pf_stepped, policy_.delta) == KpiVerdict::kRollback) {
      v.pf_final = apply_rollback(env, history_.snapshot());
      v.rollback_applied = true;
      v.observation = env.observation();
      v.metrics = {env.state().rates_mbps, env.state().serving, v.pf_final};
      ++total_rollbacks_;
    }
    v.reward = v.pf_final;
    history_.record_pf(v.pf_final);
    total_conflicts_ += static_cast<long>(v.direct_conflicts.size());
    total_losers_ += v.losers_discarded;
    return v;
  }

 private:
  MitigationPolicy policy_;
  KpiHistory history_;
  long total_conflicts_ = 0;
  long total_losers_ = 0;
  long total_rollbacks_ = 0;
};

// Arbitration log rows. pf_after is the PF produced by the merged action
// itself, so `rollback_flag == (pf_after < pf_before - delta)` holds row by
// row; the restored PF shows up as the next row's pf_before.
inline void write_arb_log_header(std::ostream& os) {
  os << "step,direct_conflicts,winner,rollback_flag,pf_before,pf_after\n";
}

inline void append_arb_log(std::ostream& os, long step, const MitigationVerdict& v) {
  os << step << ',' << v.direct_conflicts.size() << ','
     << (v.direct_conflicts.empty() ? "-" : v.direct_conflicts.front().winner) << ','
     << (v.rollback_applied ? 1 : 0) << ',' << csv_num(v.pf_before) << ','
     << csv_num(v.pf_stepped) << '\n';
}

}  // namespace xdistill
