#include "mmadv/runner.hpp"

#include <CLI11.hpp>

#include <optional>
#include <string>
#include <vector>

int main(int argc, char** argv) {
  CLI::App app{"mmadv: multimodal adversarial training lab"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, axis, out_prefix = "report";
  std::optional<std::string> out_override;
  std::optional<uint64_t> seed_override;
  std::vector<std::string> values, run_dirs;
  bool force = false;

  auto add_common = [&](CLI::App* sub, bool with_seed = true) {
    sub->add_option("--config", config_path, "experiment config file")
        ->required();
    sub->add_option("--out", out_override, "output directory override");
    if (with_seed)
      sub->add_option("--seed", seed_override, "seed override");
  };

  CLI::App* run = app.add_subcommand("run", "execute one experiment pipeline");
  add_common(run);

  CLI::App* gen = app.add_subcommand("gen-data",
                                     "generate (and augment) datasets only");
  add_common(gen);

  CLI::App* ae = app.add_subcommand("attack-eval",
                                    "evaluate a checkpoint under attacks");
  add_common(ae, false);
  ae->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

  CLI::App* sweep = app.add_subcommand("sweep",
                                       "run the config once per axis value");
  add_common(sweep, false);
  sweep->add_option("--axis", axis, "dotted config field, e.g. train.order")
      ->required();
  sweep->add_option("--values", values, "one run per value")->required();

  CLI::App* report = app.add_subcommand("report", "merge run metric tables");
  report->add_option("dirs", run_dirs, "run directories")->required();
  report->add_option("--out", out_prefix, "output table prefix");
  report->add_flag("--force", force, "merge despite world config mismatches");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed())
    return mmadv::cmd_run(config_path, out_override, seed_override);
  if (gen->parsed())
    return mmadv::cmd_gen_data(config_path, out_override, seed_override);
  if (ae->parsed())
    return mmadv::cmd_attack_eval(config_path, checkpoint, out_override);
  if (sweep->parsed())
    return mmadv::cmd_sweep(config_path, axis, values, out_override);
  if (report->parsed())
    return mmadv::cmd_report(run_dirs, out_prefix, force);
  return 1;
}
