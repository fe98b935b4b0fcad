// Copyright (c) 2026 The StyleInject Lab Authors. All Rights Reserved.
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

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "styleinject/commands.hpp"

namespace si = styleinject;

int main(int argc, char** argv) {
  CLI::App app{"StyleInject toy laboratory"};
  app.require_subcommand(1);

  si::CountParamsOptions count;
  std::string method = "lora";
  auto* count_cmd = app.add_subcommand("count-params", "Trainable parameter counts for a layer manifest");
  count_cmd->add_option("--manifest", count.manifest, "Layer manifest file")->required();
  count_cmd->add_option("--method", method, "styleinject|dma|sta|lora")->capture_default_str();
  count_cmd->add_option("--rank", count.rank, "Adapter rank r")->capture_default_str();
  count_cmd->add_option("--styles", count.styles, "Style count n")->capture_default_str();
  count_cmd->add_option("--out", count.out, "Write the breakdown as JSON");

  std::string train_config;
  si::CommandOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Fine-tune (adapters or full) from a run config");
  train_cmd->add_option("config", train_config, "Run config (JSON)")->required();
  train_cmd->add_option("--output-dir", train_opts.output_dir, "Override output_dir");
  train_cmd->add_flag("--force", train_opts.force, "Accept checkpoint config-hash mismatches");

  std::string distill_config;
  si::CommandOptions distill_opts;
  auto* distill_cmd = app.add_subcommand("distill", "Teacher to student adapter distillation");
  distill_cmd->add_option("config", distill_config, "Run config (JSON)")->required();
  distill_cmd->add_option("--output-dir", distill_opts.output_dir, "Override output_dir");
  distill_cmd->add_flag("--force", distill_opts.force, "Accept checkpoint config-hash mismatches");

  si::ExportRouterOptions exp;
  auto* export_cmd = app.add_subcommand("export-router", "Dump router outputs along a sampling run");
  export_cmd->add_option("--checkpoint", exp.checkpoint, "Adapter checkpoint")->required();
  export_cmd->add_option("--out", exp.out, "Trace file (JSON lines)")->required();
  export_cmd->add_option("--instances", exp.instances, "Probe instances")->capture_default_str();
  export_cmd->add_option("--steps", exp.steps, "Sampler steps")->capture_default_str();
  export_cmd->add_option("--seed", exp.seed, "Sampler seed")->capture_default_str();
  export_cmd->add_option("--config", exp.config, "Verify against this run config");
  export_cmd->add_flag("--force", exp.force, "Accept a config-hash mismatch");

  si::InspectOptions inspect;
  auto* inspect_cmd = app.add_subcommand("inspect-checkpoint", "Print a checkpoint's header and tensor table");
  inspect_cmd->add_option("checkpoint", inspect.checkpoint, "Checkpoint file")->required();
  inspect_cmd->add_option("--config", inspect.config, "Verify against this run config");
  inspect_cmd->add_flag("--force", inspect.force, "Accept a config-hash mismatch");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? si::kExitOk : si::kExitConfig;
  }

  try {
    if (*count_cmd) {
      count.method = si::parse_method(method);
      si::cmd_count_params(count);
    } else if (*train_cmd) {
      si::cmd_train(train_config, train_opts);
    } else if (*distill_cmd) {
      si::cmd_distill(distill_config, distill_opts);
    } else if (*export_cmd) {
      si::cmd_export_router(exp);
    } else if (*inspect_cmd) {
      si::cmd_inspect_checkpoint(inspect);
    }
  } catch (const si::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return si::kExitConfig;
  } catch (const si::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return si::kExitNumeric;
  } catch (const si::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return si::kExitData;
  } catch (const si::UnsupportedError& e) {
    std::cerr << "unsupported: " << e.what() << '\n';
    return si::kExitData;
  } catch (const si::DegenerateInputError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return si::kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return si::kExitFailure;
  }
  return si::kExitOk;
}
