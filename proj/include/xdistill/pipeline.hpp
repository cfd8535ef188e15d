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

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xdistill/agents.hpp"
#include "xdistill/config.hpp"
#include "xdistill/distill.hpp"
#include "xdistill/env.hpp"
#include "xdistill/errors.hpp"
#include "xdistill/metrics.hpp"
#include "xdistill/mitigation.hpp"

namespace xdistill {

struct EvalSettings {
  long steps = 50000;
  std::vector<double> thresholds;
  int num_seeds = 5;
  double hist_lo_mbps = 0.0;
  double hist_hi_mbps = 100.0;
  double hist_bin_mbps = 2.0;
  bool rate_log = false;
  bool arb_log = false;
  bool outage_any_user = false;
};

// Everything a pipeline invocation needs: parsed config sections, output
// directory and the master seed every stage seed derives from.
struct RunConfig {
  ConfigFile cfg;
  EnvParams env;
  Hyperparams training;
  DistillOptions distill_opt;
  long collect_steps = 10000;
  MitigationPolicy mitigation;
  EvalSettings eval;
  std::string out_dir = "out";
  std::uint64_t master_seed = 1;
  bool strict = false;
};

inline RunConfig load_run_config(const std::string& config_path,
                                 std::optional<std::uint64_t> seed_override = {},
                                 std::optional<std::string> out_override = {},
                                 bool strict = false) {
  RunConfig rc;
  rc.cfg = ConfigFile::load(config_path);
  rc.env = load_env_params(rc.cfg);
  rc.training = load_hyperparams(rc.cfg);
  rc.distill_opt = load_distill_options(rc.cfg);
  rc.collect_steps = rc.cfg.get_long("distill", "collect_steps", 10000);
  rc.mitigation.priority =
      rc.cfg.get_string_list("mitigation", "priority", std::vector<std::string>{"xapp1", "xapp2"});
  rc.mitigation.delta = rc.cfg.get_double("mitigation", "delta", 0.0);
  rc.eval.steps = rc.cfg.get_long("eval", "steps", rc.eval.steps);
  rc.eval.thresholds = rc.cfg.get_double_list("eval", "thresholds_mbps", default_thresholds());
  rc.eval.num_seeds = rc.cfg.get_int("eval", "num_seeds", rc.eval.num_seeds);
  rc.eval.hist_lo_mbps = rc.cfg.get_double("eval", "hist_lo_mbps", rc.eval.hist_lo_mbps);
  rc.eval.hist_hi_mbps = rc.cfg.get_double("eval", "hist_hi_mbps", rc.eval.hist_hi_mbps);
  rc.eval.hist_bin_mbps = rc.cfg.get_double("eval", "hist_bin_mbps", rc.eval.hist_bin_mbps);
  rc.eval.rate_log = rc.cfg.get_bool("eval", "rate_log", false);
  rc.eval.arb_log = rc.cfg.get_bool("eval", "arb_log", false);
  rc.eval.outage_any_user = rc.cfg.get_bool("eval", "outage_any_user", false);
  rc.master_seed = static_cast<std::uint64_t>(rc.cfg.get_long("run", "master_seed", 1));
  rc.out_dir = rc.cfg.get_string("output", "dir", std::string("out"));
  if (const char* env_out = std::getenv("XDISTILL_OUT")) rc.out_dir = env_out;
  if (out_override) rc.out_dir = *out_override;
  if (seed_override) rc.master_seed = *seed_override;
  rc.strict = strict;
  if (rc.eval.num_seeds < 1) throw ConfigError("eval: num_seeds must be >= 1");
  if (rc.eval.thresholds.empty()) throw ConfigError("eval: empty threshold sweep");
  return rc;
}

enum class Stage {
  kTrainTeachers,
  kCollect,
  kDistill,
  kEvaluate,
  kBaselineIndividual,
  kBaselineTeam,
  kReport,
};

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kTrainTeachers: return "train-teachers";
    case Stage::kCollect: return "collect";
    case Stage::kDistill: return "distill";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kBaselineIndividual: return "baseline-individual";
    case Stage::kBaselineTeam: return "baseline-team";
    case Stage::kReport: return "report";
  }
  return "?";
}

inline Stage parse_stage(const std::string& name) {
  for (Stage s : {Stage::kTrainTeachers, Stage::kCollect, Stage::kDistill, Stage::kEvaluate,
                  Stage::kBaselineIndividual, Stage::kBaselineTeam, Stage::kReport}) {
    if (stage_name(s) == name) return s;
  }
  throw ConfigError("unknown stage: " + name);
}

namespace detail {

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline void require_file(const std::string& path, const std::string& hint) {
  if (!std::filesystem::exists(path)) {
    throw MissingPrerequisite("missing prerequisite: " + path + " (" + hint + ")");
  }
}

// Upstream manifests must exist and match the current config; a mismatch is
// a warning, or a hard error under --strict.
inline void verify_chain(const RunConfig& rc, const std::string& upstream_stage) {
  std::string path = join_path(rc.out_dir, "manifest_" + upstream_stage + ".json");
  require_file(path, "run the " + upstream_stage + " stage first");
  nlohmann::json m = nlohmann::json::parse(read_file(path));
  std::string recorded = m.value("config_hash", "");
  std::string current = hex64(rc.cfg.hash());
  if (recorded != current) {
    if (rc.strict) {
      throw ConfigError("config hash mismatch with " + upstream_stage + " manifest (" + recorded +
                        " vs " + current + ")");
    }
    std::cerr << "warning: config changed since " << upstream_stage << " ran (" << recorded
              << " vs " << current << ")\n";
  }
}

inline void write_manifest(const RunConfig& rc, const std::string& stage,
                           std::uint64_t stage_seed, const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs) {
  nlohmann::json j;
  j["stage"] = stage;
  j["config_hash"] = hex64(rc.cfg.hash());
  j["master_seed"] = rc.master_seed;
  j["stage_seed"] = stage_seed;
  j["inputs"] = nlohmann::json::array();
  for (const std::string& p : inputs) {
    j["inputs"].push_back({{"path", p}, {"hash", hex64(hash_file(p))}});
  }
  j["outputs"] = nlohmann::json::array();
  for (const std::string& p : outputs) {
    j["outputs"].push_back({{"path", p}, {"hash", hex64(hash_file(p))}});
  }
  atomic_write(join_path(rc.out_dir, "manifest_" + stage + ".json"), j.dump(2) + "\n");
}

inline LayerSpec base_layer_spec(const EnvParams& p) { return {p.obs_width(), {50, 100}}; }

inline void write_eval_outputs(const RunConfig& rc, const std::string& scheme, int seed_index,
                               const EvalMetrics& m, std::vector<std::string>& outputs,
                               const std::string& rate_log, const std::string& arb_log) {
  std::string prefix = "eval_" + scheme + "_s" + std::to_string(seed_index) + "_";
  std::string outage_path = join_path(rc.out_dir, prefix + "outage.csv");
  std::string hist_path = join_path(rc.out_dir, prefix + "hist.csv");
  std::string summary_path = join_path(rc.out_dir, prefix + "summary.csv");
  atomic_write(outage_path, outage_csv(m));
  atomic_write(hist_path, histogram_csv(m));
  atomic_write(summary_path, summary_csv(m));
  outputs.push_back(outage_path);
  outputs.push_back(hist_path);
  outputs.push_back(summary_path);
  if (rc.eval.rate_log) {
    std::string p = join_path(rc.out_dir, prefix + "rates.csv");
    atomic_write(p, rate_log);
    outputs.push_back(p);
  }
  if (rc.eval.arb_log) {
    std::string p = join_path(rc.out_dir, prefix + "arb.csv");
    atomic_write(p, arb_log);
    outputs.push_back(p);
  }
}

// Evaluates one scheme over the configured seed fan-out. Seeds are shared
// across schemes so comparisons see the same mobility draws.
inline void run_scheme_eval(const RunConfig& rc, const std::string& scheme,
                            const std::vector<DeployedXApp>& xapps, bool use_config_priority,
                            std::vector<std::string>& outputs) {
  for (int k = 0; k < rc.eval.num_seeds; ++k) {
    std::uint64_t seed = derive_seed(rc.master_seed, "eval", static_cast<std::uint64_t>(k));
    CellularEnv env(rc.env);
    Rng rng(seed);
    EvalOptions opt;
    opt.steps = rc.eval.steps;
    opt.thresholds_mbps = rc.eval.thresholds;
    opt.hist_lo_mbps = rc.eval.hist_lo_mbps;
    opt.hist_hi_mbps = rc.eval.hist_hi_mbps;
    opt.hist_bin_mbps = rc.eval.hist_bin_mbps;
    opt.mitigation = true;
    opt.outage_any_user = rc.eval.outage_any_user;
    opt.policy.delta = rc.mitigation.delta;
    if (use_config_priority) opt.policy.priority = rc.mitigation.priority;
    std::ostringstream rate_log, arb_log;
    if (rc.eval.rate_log) opt.rate_log = &rate_log;
    if (rc.eval.arb_log) opt.arb_log = &arb_log;
    EvalMetrics m = evaluate(xapps, env, opt, rng);
    m.scheme = scheme;
    m.seed = seed;
    write_eval_outputs(rc, scheme, k, m, outputs, rate_log.str(), arb_log.str());
  }
}

}  // namespace detail

// Stage entry point: computes the stage's artifacts under rc.out_dir and
// records a manifest tying them to the config hash and seed.
inline void run_stage(const RunConfig& rc, Stage stage) {
  using detail::join_path;
  std::filesystem::create_directories(rc.out_dir);
  const std::string name = stage_name(stage);
  std::uint64_t stage_seed = derive_seed(rc.master_seed, name);
  std::vector<std::string> inputs, outputs;

  switch (stage) {
    case Stage::kTrainTeachers: {
      for (int t = 0; t < 2; ++t) {
        XAppSpec spec = t == 0 ? make_xapp1_spec(rc.env) : make_xapp2_spec(rc.env);
        CellularEnv env(rc.env);
        Rng rng(derive_seed(rc.master_seed, name, static_cast<std::uint64_t>(t)));
        TrainResult res = train_teacher(env, spec, rc.training, rng);
        std::string ckpt = join_path(rc.out_dir, "teacher_" + spec.name + ".qnet");
        save_qnet(res.net, ckpt);
        std::ostringstream curve;
        write_curve_csv(curve, res.curve);
        std::string curve_path = join_path(rc.out_dir, "train_" + spec.name + ".csv");
        atomic_write(curve_path, curve.str());
        outputs.push_back(ckpt);
        outputs.push_back(curve_path);
      }
      break;
    }

    case Stage::kCollect: {
      detail::verify_chain(rc, "train-teachers");
      std::string t1 = join_path(rc.out_dir, "teacher_xapp1.qnet");
      std::string t2 = join_path(rc.out_dir, "teacher_xapp2.qnet");
      detail::require_file(t1, "run the train-teachers stage first");
      detail::require_file(t2, "run the train-teachers stage first");
      inputs = {t1, t2};
      XAppSpec s1 = make_xapp1_spec(rc.env), s2 = make_xapp2_spec(rc.env);
      LayerSpec ls = detail::base_layer_spec(rc.env);
      std::vector<TeacherXApp> teachers;
      teachers.push_back({s1, load_qnet_checked(t1, ls, s1.layout)});
      teachers.push_back({s2, load_qnet_checked(t2, ls, s2.layout)});
      CellularEnv env(rc.env);
      Rng rng(stage_seed);
      ExperienceFile file = collect_experience(teachers, env, rc.collect_steps, rng);
      std::string buf_path = join_path(rc.out_dir, "buffer.xbuf");
      save_buffer(file, buf_path);
      outputs.push_back(buf_path);
      break;
    }

    case Stage::kDistill: {
      detail::verify_chain(rc, "collect");
      std::string buf_path = join_path(rc.out_dir, "buffer.xbuf");
      detail::require_file(buf_path, "run the collect stage first");
      inputs = {buf_path};
      ExperienceFile file = load_buffer(buf_path);
      Rng rng(stage_seed);
      XAppSpec student_spec = make_student_spec(rc.env);
      QNet student = make_qnet(detail::base_layer_spec(rc.env), student_spec.layout, rng);
      DistillResult res = distill(file, std::move(student), rc.distill_opt, rng);
      std::string ckpt = join_path(rc.out_dir, "student.qnet");
      save_qnet(res.student, ckpt);
      std::ostringstream curve;
      write_distill_curve_csv(curve, res.curve);
      std::string curve_path = join_path(rc.out_dir, "distill_loss.csv");
      atomic_write(curve_path, curve.str());
      std::ostringstream agreement;
      agreement << "holdout_records,holdout_agreement\n"
                << res.holdout_records << ',' << csv_num(res.holdout_agreement) << '\n';
      std::string agree_path = join_path(rc.out_dir, "distill_agreement.csv");
      atomic_write(agree_path, agreement.str());
      outputs = {ckpt, curve_path, agree_path};
      break;
    }

    case Stage::kEvaluate: {
      detail::verify_chain(rc, "distill");
      std::string ckpt = join_path(rc.out_dir, "student.qnet");
      detail::require_file(ckpt, "run the distill stage first");
      inputs = {ckpt};
      XAppSpec spec = make_student_spec(rc.env);
      DeployedXApp student{spec, load_qnet_checked(ckpt, detail::base_layer_spec(rc.env),
                                                   spec.layout)};
      detail::run_scheme_eval(rc, "distilled", {student}, /*use_config_priority=*/false, outputs);
      break;
    }

    case Stage::kBaselineIndividual: {
      detail::verify_chain(rc, "train-teachers");
      std::string t1 = join_path(rc.out_dir, "teacher_xapp1.qnet");
      std::string t2 = join_path(rc.out_dir, "teacher_xapp2.qnet");
      detail::require_file(t1, "run the train-teachers stage first");
      detail::require_file(t2, "run the train-teachers stage first");
      inputs = {t1, t2};
      XAppSpec s1 = make_xapp1_spec(rc.env), s2 = make_xapp2_spec(rc.env);
      LayerSpec ls = detail::base_layer_spec(rc.env);
      std::vector<DeployedXApp> xapps;
      xapps.push_back({s1, load_qnet_checked(t1, ls, s1.layout)});
      xapps.push_back({s2, load_qnet_checked(t2, ls, s2.layout)});
      detail::run_scheme_eval(rc, "individual", xapps, /*use_config_priority=*/true, outputs);
      break;
    }

    case Stage::kBaselineTeam: {
      XAppSpec s1 = make_xapp1_spec(rc.env), s2 = make_xapp2_spec(rc.env);
      CellularEnv env(rc.env);
      Rng rng(stage_seed);
      TeamTrainOptions opt;
      opt.policy = rc.mitigation;
      TeamTrainResult res = train_team(env, s1, s2, rc.training, opt, rng);
      std::string c1 = join_path(rc.out_dir, "team_xapp1.qnet");
      std::string c2 = join_path(rc.out_dir, "team_xapp2.qnet");
      save_qnet(res.first.net, c1);
      save_qnet(res.second.net, c2);
      outputs = {c1, c2};
      for (int t = 0; t < 2; ++t) {
        std::ostringstream curve;
        write_curve_csv(curve, t == 0 ? res.first.curve : res.second.curve);
        std::string p = join_path(rc.out_dir, "train_team_xapp" + std::to_string(t + 1) + ".csv");
        atomic_write(p, curve.str());
        outputs.push_back(p);
      }
      std::vector<DeployedXApp> xapps;
      xapps.push_back({s1, res.first.net, /*team_extended=*/true});
      xapps.push_back({s2, res.second.net, /*team_extended=*/true});
      detail::run_scheme_eval(rc, "team", xapps, /*use_config_priority=*/true, outputs);
      break;
    }

    case Stage::kReport: {
      std::vector<std::string> summaries;
      if (std::filesystem::exists(rc.out_dir)) {
        for (const auto& entry : std::filesystem::directory_iterator(rc.out_dir)) {
          std::string fn = entry.path().filename().string();
          if (fn.starts_with("eval_") && fn.ends_with("_summary.csv")) {
            summaries.push_back(entry.path().string());
          }
        }
      }
      std::sort(summaries.begin(), summaries.end());
      if (summaries.empty()) {
        throw MissingPrerequisite("missing prerequisite: " +
                                  join_path(rc.out_dir, "eval_*_summary.csv") +
                                  " (run an evaluation stage first)");
      }
      std::vector<OutageRow> rows;
      for (const std::string& summary_path : summaries) {
        // scheme and seed from the summary row; outage sweep from the sibling file
        std::istringstream in(read_file(summary_path));
        std::string header, row;
        std::getline(in, header);
        std::getline(in, row);
        std::istringstream fields(row);
        std::string scheme, seed_str;
        std::getline(fields, scheme, ',');
        std::getline(fields, seed_str, ',');
        std::string outage_path = summary_path;
        outage_path.replace(outage_path.rfind("_summary.csv"), 12, "_outage.csv");
        detail::require_file(outage_path, "evaluation outputs incomplete");
        inputs.push_back(summary_path);
        inputs.push_back(outage_path);
        for (const auto& [thr, pct] : parse_outage_csv(read_file(outage_path))) {
          rows.push_back({scheme, std::stoull(seed_str), thr, pct});
        }
      }
      std::string report_path = join_path(rc.out_dir, "report.csv");
      std::string median_path = join_path(rc.out_dir, "outage_median.csv");
      atomic_write(report_path, report_csv(rows));
      std::string table = median_table_csv(rows, {"individual", "team", "distilled"});
      atomic_write(median_path, table);
      std::cout << table;
      outputs = {report_path, median_path};
      break;
    }
  }

  detail::write_manifest(rc, name, stage_seed, inputs, outputs);
}

}  // namespace xdistill
