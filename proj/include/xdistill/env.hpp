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
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "xdistill/config.hpp"
#include "xdistill/errors.hpp"
#include "xdistill/rng.hpp"

namespace xdistill {

inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

// Physical and discretization constants of the simulated network.
//
// Defaults follow the 5G NR 100 MHz profile (273 RBs of 360 kHz, 845 kHz
// guard) with a thermal noise floor of -174 dBm/Hz over the full channel.
struct EnvParams {
  int num_bs = 3;
  int num_users = 5;
  double area_w_m = 250.0;
  double area_h_m = 250.0;

  double rb_bandwidth_hz = 360e3;
  int total_rbs = 273;
  double channel_mhz = 100.0;
  double guard_khz = 845.0;
  double noise_w = 3.9810717055349725e-13;  // -94 dBm

  std::vector<double> power_levels_dbm = {25.0, 27.5, 30.0, 32.5, 35.0};
  std::vector<int> rb_options = {1, 16, 45, 91, 136};

  // Utility U = scale * clip(ln(r)/ln(base), lo, hi), r in Mbps.
  double utility_base = 10.0;
  double utility_lo = -1.0;
  double utility_hi = 1.0;
  double utility_scale = 10.0;

  // Propagation (urban Hata).
  double carrier_mhz = 900.0;
  double bs_height_m = 50.0;
  double ue_height_m = 1.5;

  double ue_speed_min = 1.0;  // m/s, one simulation step = 1 s
  double ue_speed_max = 2.0;

  int episode_len = 100;
  double rate_floor_mbps = 1e-3;  // applied before every logarithm

  // Optional overrides; empty means deterministic ring layout / random reset.
  std::vector<std::pair<double, double>> bs_positions;
  std::vector<std::pair<double, double>> fixed_user_positions;

  int handover_width() const { return num_bs + 1; }  // slot 0 = disconnect
  int rb_width() const { return static_cast<int>(rb_options.size()); }
  int power_width() const { return static_cast<int>(power_levels_dbm.size()); }
  int obs_width() const {
    return num_users * (num_bs + 1) + num_users * num_bs + num_users;
  }

  void validate() const {
    if (num_bs < 1 || num_users < 1) throw ConfigError("env: need >= 1 BS and user");
    if (rb_bandwidth_hz <= 0 || total_rbs < 1) throw ConfigError("env: bad RB scheme");
    if (noise_w <= 0) throw ConfigError("env: noise power must be positive");
    if (power_levels_dbm.empty() || rb_options.empty()) {
      throw ConfigError("env: empty action discretization");
    }
    for (std::size_t i = 0; i < power_levels_dbm.size(); ++i) {
      if (power_levels_dbm[i] < 25.0 || power_levels_dbm[i] > 35.0) {
        throw ConfigError("env: power levels must lie in [25, 35] dBm");
      }
      if (i > 0 && power_levels_dbm[i] <= power_levels_dbm[i - 1]) {
        throw ConfigError("env: power levels must be strictly increasing");
      }
    }
    for (std::size_t i = 0; i < rb_options.size(); ++i) {
      if (rb_options[i] < 0) throw ConfigError("env: negative RB option");
      if (i > 0 && rb_options[i] <= rb_options[i - 1]) {
        throw ConfigError("env: rb_options must be strictly increasing");
      }
    }
    if (rb_options.back() > total_rbs) throw ConfigError("env: rb option exceeds total RBs");
    if (utility_lo >= utility_hi) throw ConfigError("env: utility clip must satisfy L < U");
    if (utility_base <= 1.0) throw ConfigError("env: utility base must exceed 1");
    if (rate_floor_mbps <= 0) throw ConfigError("env: rate floor must be positive");
    if (ue_speed_min < 0 || ue_speed_max < ue_speed_min) {
      throw ConfigError("env: bad UE speed range");
    }
    if (!bs_positions.empty() && static_cast<int>(bs_positions.size()) != num_bs) {
      throw ConfigError("env: bs_positions count != num_bs");
    }
    if (!fixed_user_positions.empty() &&
        static_cast<int>(fixed_user_positions.size()) != num_users) {
      throw ConfigError("env: fixed_user_positions count != num_users");
    }
  }
};

inline EnvParams load_env_params(const ConfigFile& cfg) {
  EnvParams p;
  p.num_bs = cfg.get_int("env", "num_bs", p.num_bs);
  p.num_users = cfg.get_int("env", "num_users", p.num_users);
  p.area_w_m = cfg.get_double("env", "area_w_m", p.area_w_m);
  p.area_h_m = cfg.get_double("env", "area_h_m", p.area_h_m);
  p.rb_bandwidth_hz = cfg.get_double("env", "rb_bandwidth_khz", p.rb_bandwidth_hz / 1e3) * 1e3;
  p.total_rbs = cfg.get_int("env", "total_rbs", p.total_rbs);
  p.channel_mhz = cfg.get_double("env", "channel_mhz", p.channel_mhz);
  p.guard_khz = cfg.get_double("env", "guard_khz", p.guard_khz);
  p.noise_w = dbm_to_watts(cfg.get_double("env", "noise_dbm", -94.0));
  p.power_levels_dbm = cfg.get_double_list("env", "power_levels_dbm", p.power_levels_dbm);
  p.rb_options = cfg.get_int_list("env", "rb_options", p.rb_options);
  p.utility_base = cfg.get_double("env", "utility_base", p.utility_base);
  p.utility_lo = cfg.get_double("env", "utility_lo", p.utility_lo);
  p.utility_hi = cfg.get_double("env", "utility_hi", p.utility_hi);
  p.carrier_mhz = cfg.get_double("env", "carrier_mhz", p.carrier_mhz);
  p.bs_height_m = cfg.get_double("env", "bs_height_m", p.bs_height_m);
  p.ue_height_m = cfg.get_double("env", "ue_height_m", p.ue_height_m);
  p.ue_speed_min = cfg.get_double("env", "ue_speed_min", p.ue_speed_min);
  p.ue_speed_max = cfg.get_double("env", "ue_speed_max", p.ue_speed_max);
  p.episode_len = cfg.get_int("env", "episode_len", p.episode_len);
  p.rate_floor_mbps = cfg.get_double("env", "rate_floor_mbps", p.rate_floor_mbps);
  p.bs_positions = cfg.get_point_list("env", "bs_positions");
  p.fixed_user_positions = cfg.get_point_list("env", "fixed_user_positions");
  p.validate();
  return p;
}

// Urban Okumura-Hata path loss in dB. Distances below 1 m are clamped.
inline double path_loss_db(double distance_m, const EnvParams& p) {
  double d_km = std::max(distance_m, 1.0) / 1000.0;
  double lf = std::log10(p.carrier_mhz);
  double correction = (1.1 * lf - 0.7) * p.ue_height_m - (1.56 * lf - 0.8);
  return 69.55 + 26.16 * lf - 13.82 * std::log10(p.bs_height_m) - correction +
         (44.9 - 6.55 * std::log10(p.bs_height_m)) * std::log10(d_km);
}

// Linear large-scale gain; no fast fading. Capped at 1 (0 dB loss).
inline double channel_gain(double loss_db) {
  return std::min(1.0, std::pow(10.0, -loss_db / 10.0));
}

// SINR of user i towards BS j: P_j h_ij / (N0 + sum_{k != j} h_ik P_k).
// `gains` is the user's row of h (length num_bs), `powers_w` the per-BS
// transmit powers. Interference counts every other BS at its configured
// power, regardless of load.
inline double sinr_linear(int bs, const std::vector<double>& gains,
                          const std::vector<double>& powers_w, double noise_w) {
  double interference = 0.0;
  for (std::size_t k = 0; k < gains.size(); ++k) {
    if (static_cast<int>(k) != bs) interference += gains[k] * powers_w[k];
  }
  return powers_w[bs] * gains[bs] / (noise_w + interference);
}

// Shannon rate over `rbs` resource blocks, bits/s. Base-2 logarithm.
inline double data_rate_bps(int rbs, double sinr, double rb_bandwidth_hz) {
  if (rbs <= 0 || sinr <= 0.0) return 0.0;
  return rb_bandwidth_hz * rbs * std::log2(1.0 + sinr);
}

// U = scale * clip(ln(r)/ln(base), lo, hi), rate floored before the log.
inline double utility(double rate_mbps, const EnvParams& p) {
  double r = std::max(rate_mbps, p.rate_floor_mbps);
  double v = std::log(r) / std::log(p.utility_base);
  return p.utility_scale * std::clamp(v, p.utility_lo, p.utility_hi);
}

// Proportional fairness: sum of natural-log rates, floored at rate_floor.
inline double proportional_fairness(const std::vector<double>& rates_mbps,
                                    double rate_floor_mbps) {
  double pf = 0.0;
  for (double r : rates_mbps) pf += std::log(std::max(r, rate_floor_mbps));
  return pf;
}

// Concrete per-slot control settings: the arbiter and trainers speak this
// language so that "keep current setting" is expressible even when the
// current RB allocation is not one of the discrete options.
struct ControlSettings {
  std::vector<int> serving;     // per user, -1 = disconnected, else BS index
  std::vector<int> rb_request;  // per user, requested RB count
  std::vector<int> power_idx;   // per BS, index into power_levels_dbm
};

// Per-head action indices as produced by a Q-network over the full layout.
struct JointAction {
  std::vector<int> handover;      // per user, 0 = DC, j+1 = BS j
  std::vector<int> rb_choice;     // per user, index into rb_options
  std::vector<int> power_choice;  // per BS, index into power_levels_dbm
};

inline ControlSettings to_controls(const JointAction& a, const EnvParams& p) {
  if (static_cast<int>(a.handover.size()) != p.num_users ||
      static_cast<int>(a.rb_choice.size()) != p.num_users ||
      static_cast<int>(a.power_choice.size()) != p.num_bs) {
    throw std::invalid_argument("joint action does not match head layout");
  }
  ControlSettings c;
  c.serving.resize(p.num_users);
  c.rb_request.resize(p.num_users);
  c.power_idx.resize(p.num_bs);
  for (int i = 0; i < p.num_users; ++i) {
    if (a.handover[i] < 0 || a.handover[i] > p.num_bs) {
      throw std::invalid_argument("handover index out of range");
    }
    if (a.rb_choice[i] < 0 || a.rb_choice[i] >= p.rb_width()) {
      throw std::invalid_argument("rb choice index out of range");
    }
    c.serving[i] = a.handover[i] - 1;
    c.rb_request[i] = p.rb_options[a.rb_choice[i]];
  }
  for (int j = 0; j < p.num_bs; ++j) {
    if (a.power_choice[j] < 0 || a.power_choice[j] >= p.power_width()) {
      throw std::invalid_argument("power choice index out of range");
    }
    c.power_idx[j] = a.power_choice[j];
  }
  return c;
}

// Snapshot of rollback-able controls (handover decisions are never reverted).
struct ControlSnapshot {
  std::vector<int> rb_alloc;
  std::vector<int> power_idx;

  bool operator==(const ControlSnapshot&) const = default;
};

struct NetworkState {
  std::vector<std::array<double, 2>> positions;  // K x (x, y) meters
  std::vector<int> serving;                      // -1 = disconnected
  std::vector<double> gains;                     // K x B row-major, linear
  std::vector<int> power_idx;                    // per BS
  std::vector<int> rb_alloc;                     // per user, post-enforcement
  std::vector<double> rates_mbps;                // per user
  std::vector<double> utilities;                 // per user
  long step_index = 0;
};

struct StepMetrics {
  std::vector<double> rates_mbps;
  std::vector<int> serving;
  double pf = 0.0;
};

// Rate log rows: (step, user, serving_bs, rate_mbps). serving_bs -1 = DC.
inline void write_rate_log_header(std::ostream& os) {
  os << "step,user,serving_bs,rate_mbps\n";
}
inline void append_rate_log(std::ostream& os, long step, const StepMetrics& m) {
  for (std::size_t i = 0; i < m.rates_mbps.size(); ++i) {
    os << step << ',' << i << ',' << m.serving[i] << ',' << csv_num(m.rates_mbps[i]) << '\n';
  }
}

// Discrete-time downlink simulation of B base stations and K mobile users.
//
// A step applies the requested controls (with per-BS RB capacity
// enforcement), advances random-waypoint mobility by one second, then
// recomputes gains, SINR, rates, utilities and the proportional-fairness
// reward. All randomness flows through the caller's Rng.
class CellularEnv {
 public:
  explicit CellularEnv(EnvParams params) : p_(std::move(params)) {
    p_.validate();
    bs_pos_ = p_.bs_positions.empty() ? ring_layout(p_) : p_.bs_positions;
  }

  const EnvParams& params() const { return p_; }
  const NetworkState& state() const { return s_; }
  const std::vector<std::pair<double, double>>& bs_positions() const { return bs_pos_; }

  void reset(Rng& rng) {
    const int K = p_.num_users, B = p_.num_bs;
    s_ = NetworkState{};
    s_.positions.resize(K);
    if (p_.fixed_user_positions.empty()) {
      for (auto& pos : s_.positions) {
        pos = {rng.uniform(0.0, p_.area_w_m), rng.uniform(0.0, p_.area_h_m)};
      }
    } else {
      for (int i = 0; i < K; ++i) {
        s_.positions[i] = {p_.fixed_user_positions[i].first, p_.fixed_user_positions[i].second};
      }
    }
    waypoints_.assign(K, {0.0, 0.0});
    speeds_.assign(K, 0.0);
    has_waypoint_.assign(K, false);

    s_.power_idx.assign(B, default_power_index(p_));
    s_.rb_alloc.assign(K, 0);
    recompute_gains();
    s_.serving.resize(K);
    for (int i = 0; i < K; ++i) s_.serving[i] = best_gain_bs(i);
    recompute_kpis();
  }

  struct StepResult {
    std::vector<double> observation;
    double reward = 0.0;
    StepMetrics metrics;
  };

  StepResult step(const JointAction& action, Rng& rng) {
    return step_controls(to_controls(action, p_), rng);
  }

  StepResult step_controls(const ControlSettings& c, Rng& rng) {
    apply_controls(c);
    move_users(rng);
    recompute_gains();
    recompute_kpis();
    ++s_.step_index;
    return result();
  }

  // Re-evaluates an externally provided configuration without advancing
  // time; used by tests and trace replay.
  StepResult set_configuration(const std::vector<std::array<double, 2>>& positions,
                               const ControlSettings& c) {
    if (static_cast<int>(positions.size()) != p_.num_users) {
      throw std::invalid_argument("positions count != num_users");
    }
    s_.positions = positions;
    apply_controls(c);
    recompute_gains();
    recompute_kpis();
    return result();
  }

  ControlSnapshot snapshot_controls() const { return {s_.rb_alloc, s_.power_idx}; }

  // Restores RB/power controls from a snapshot and recomputes KPIs at the
  // current positions. Handovers stand, so the restored requests run through
  // capacity enforcement again; it only binds if intervening handovers
  // overloaded a cell. Returns the recomputed PF.
  double restore_controls(const ControlSnapshot& snap) {
    ControlSettings c{s_.serving, snap.rb_alloc, snap.power_idx};
    apply_controls(c);
    recompute_kpis();
    return proportional_fairness(s_.rates_mbps, p_.rate_floor_mbps);
  }

  double current_pf() const {
    return proportional_fairness(s_.rates_mbps, p_.rate_floor_mbps);
  }

  ControlSettings current_controls() const {
    return {s_.serving, s_.rb_alloc, s_.power_idx};
  }

  // State vector: [one-hot serving over K*(B+1) | SINR K*B linear | U_i].
  std::vector<double> observation() const {
    const int K = p_.num_users, B = p_.num_bs;
    std::vector<double> obs;
    obs.reserve(p_.obs_width());
    for (int i = 0; i < K; ++i) {
      for (int slot = 0; slot < B + 1; ++slot) {
        obs.push_back(slot == s_.serving[i] + 1 ? 1.0 : 0.0);
      }
    }
    std::vector<double> powers = powers_w();
    for (int i = 0; i < K; ++i) {
      std::vector<double> row(s_.gains.begin() + i * B, s_.gains.begin() + (i + 1) * B);
      for (int j = 0; j < B; ++j) obs.push_back(sinr_linear(j, row, powers, p_.noise_w));
    }
    for (int i = 0; i < K; ++i) obs.push_back(s_.utilities[i]);
    return obs;
  }

  std::vector<double> powers_w() const {
    std::vector<double> w(p_.num_bs);
    for (int j = 0; j < p_.num_bs; ++j) w[j] = dbm_to_watts(p_.power_levels_dbm[s_.power_idx[j]]);
    return w;
  }

  static int default_power_index(const EnvParams& p) {
    // closest level to 30 dBm; stage-1 default and reset value
    int best = 0;
    for (int j = 1; j < p.power_width(); ++j) {
      if (std::abs(p.power_levels_dbm[j] - 30.0) < std::abs(p.power_levels_dbm[best] - 30.0)) {
        best = j;
      }
    }
    return best;
  }

  static std::vector<std::pair<double, double>> ring_layout(const EnvParams& p) {
    std::vector<std::pair<double, double>> pos;
    double cx = p.area_w_m / 2.0, cy = p.area_h_m / 2.0;
    if (p.num_bs == 1) return {{cx, cy}};
    double r = 0.33 * std::min(p.area_w_m, p.area_h_m);
    for (int j = 0; j < p.num_bs; ++j) {
      double th = 2.0 * std::numbers::pi * j / p.num_bs;
      pos.emplace_back(cx + r * std::cos(th), cy + r * std::sin(th));
    }
    return pos;
  }

 private:
  StepResult result() const {
    StepResult r;
    r.observation = observation();
    r.metrics = {s_.rates_mbps, s_.serving, current_pf()};
    r.reward = r.metrics.pf;
    return r;
  }

  void apply_controls(const ControlSettings& c) {
    const int K = p_.num_users, B = p_.num_bs;
    if (static_cast<int>(c.serving.size()) != K ||
        static_cast<int>(c.rb_request.size()) != K ||
        static_cast<int>(c.power_idx.size()) != B) {
      throw std::invalid_argument("control settings do not match env dimensions");
    }
    for (int i = 0; i < K; ++i) {
      if (c.serving[i] < -1 || c.serving[i] >= B) throw std::invalid_argument("bad serving BS");
      if (c.rb_request[i] < 0) throw std::invalid_argument("negative RB request");
    }
    for (int j = 0; j < B; ++j) {
      if (c.power_idx[j] < 0 || c.power_idx[j] >= p_.power_width()) {
        throw std::invalid_argument("bad power level index");
      }
    }
    s_.serving = c.serving;
    s_.power_idx = c.power_idx;
    s_.rb_alloc = enforce_capacity(c.serving, c.rb_request);
  }

  // Per-BS oversubscription scales every connected user's request to
  // floor(req * total_rbs / total_requested). Disconnected users keep their
  // request as an idle allocation.
  std::vector<int> enforce_capacity(const std::vector<int>& serving,
                                    const std::vector<int>& request) const {
    std::vector<int> alloc = request;
    for (int j = 0; j < p_.num_bs; ++j) {
      long total = 0;
      for (int i = 0; i < p_.num_users; ++i) {
        if (serving[i] == j) total += request[i];
      }
      if (total > p_.total_rbs) {
        for (int i = 0; i < p_.num_users; ++i) {
          if (serving[i] == j) {
            alloc[i] = static_cast<int>(static_cast<long>(request[i]) * p_.total_rbs / total);
          }
        }
      }
    }
    return alloc;
  }

  void move_users(Rng& rng) {
    for (int i = 0; i < p_.num_users; ++i) {
      auto& pos = s_.positions[i];
      if (!has_waypoint_[i]) {
        waypoints_[i] = {rng.uniform(0.0, p_.area_w_m), rng.uniform(0.0, p_.area_h_m)};
        speeds_[i] = rng.uniform(p_.ue_speed_min, p_.ue_speed_max);
        has_waypoint_[i] = true;
      }
      double dx = waypoints_[i][0] - pos[0];
      double dy = waypoints_[i][1] - pos[1];
      double dist = std::hypot(dx, dy);
      double step = speeds_[i];  // 1 s per step
      if (step <= 0.0) continue;
      if (dist <= step) {
        pos = {waypoints_[i][0], waypoints_[i][1]};
        has_waypoint_[i] = false;  // re-target next step
      } else {
        pos[0] += dx / dist * step;
        pos[1] += dy / dist * step;
      }
    }
  }

  void recompute_gains() {
    const int K = p_.num_users, B = p_.num_bs;
    s_.gains.resize(static_cast<std::size_t>(K) * B);
    for (int i = 0; i < K; ++i) {
      for (int j = 0; j < B; ++j) {
        double d = std::hypot(s_.positions[i][0] - bs_pos_[j].first,
                              s_.positions[i][1] - bs_pos_[j].second);
        s_.gains[i * B + j] = channel_gain(path_loss_db(d, p_));
      }
    }
  }

  void recompute_kpis() {
    const int K = p_.num_users, B = p_.num_bs;
    std::vector<double> powers = powers_w();
    s_.rates_mbps.assign(K, 0.0);
    s_.utilities.resize(K);
    for (int i = 0; i < K; ++i) {
      int j = s_.serving[i];
      if (j >= 0 && s_.rb_alloc[i] > 0) {
        std::vector<double> row(s_.gains.begin() + i * B, s_.gains.begin() + (i + 1) * B);
        double sinr = sinr_linear(j, row, powers, p_.noise_w);
        s_.rates_mbps[i] = data_rate_bps(s_.rb_alloc[i], sinr, p_.rb_bandwidth_hz) / 1e6;
      }
      s_.utilities[i] = utility(s_.rates_mbps[i], p_);
    }
  }

  int best_gain_bs(int user) const {
    int best = 0;
    for (int j = 1; j < p_.num_bs; ++j) {
      if (s_.gains[user * p_.num_bs + j] > s_.gains[user * p_.num_bs + best]) best = j;
    }
    return best;
  }

  EnvParams p_;
  NetworkState s_;
  std::vector<std::pair<double, double>> bs_pos_;
  std::vector<std::array<double, 2>> waypoints_;
  std::vector<double> speeds_;
  std::vector<bool> has_waypoint_;
};

}  // namespace xdistill
