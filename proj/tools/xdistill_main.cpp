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

// Pipeline driver: xdistill <stage> --config <file> [--seed N] [--out DIR]
// [--strict]. Exit codes: 0 success, 2 config error, 3 missing
// prerequisite, 4 numeric fault.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "xdistill/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"cellular xApp training, conflict mitigation and policy distillation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  bool strict = false;

  for (xdistill::Stage stage :
       {xdistill::Stage::kTrainTeachers, xdistill::Stage::kCollect, xdistill::Stage::kDistill,
        xdistill::Stage::kEvaluate, xdistill::Stage::kBaselineIndividual,
        xdistill::Stage::kBaselineTeam, xdistill::Stage::kReport}) {
    CLI::App* sub = app.add_subcommand(xdistill::stage_name(stage), "run the " +
                                                                        xdistill::stage_name(stage) +
                                                                        " stage");
    sub->add_option("--config", config_path, "configuration file")->required();
    sub->add_option("--seed", seed, "master seed override");
    sub->add_option("--out", out_dir, "output directory override");
    sub->add_flag("--strict", strict, "treat config-hash mismatches as errors");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    xdistill::RunConfig rc = xdistill::load_run_config(config_path, seed, out_dir, strict);
    xdistill::Stage stage = xdistill::parse_stage(app.get_subcommands().front()->get_name());
    xdistill::run_stage(rc, stage);
  } catch (const xdistill::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const xdistill::MissingPrerequisite& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const xdistill::NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
