#pragma once

#include "mmadv/config.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mmadv {

// Resolves a run directory: relative paths live under $MMADV_OUT_ROOT
// when that is set.
std::string resolve_outdir(const std::string& out);

struct RunOutcome {
  MetricsReport report;
  std::string outdir;
  ModelParams params;
};

// Executes the full pipeline (gen -> augment -> train -> eval -> report)
// for one config; every artifact lands in the run directory and embeds
// the config hash. Deterministic in (config, seed).
RunOutcome run_experiment(const ExperimentConfig& config);

// CLI entry points; return a process exit status.
int cmd_run(const std::string& config_path,
            const std::optional<std::string>& out_override,
            const std::optional<uint64_t>& seed_override);
int cmd_gen_data(const std::string& config_path,
                 const std::optional<std::string>& out_override,
                 const std::optional<uint64_t>& seed_override);
int cmd_attack_eval(const std::string& config_path,
                    const std::string& checkpoint,
                    const std::optional<std::string>& out_override);
int cmd_sweep(const std::string& config_path, const std::string& axis,
              const std::vector<std::string>& values,
              const std::optional<std::string>& out_override);
int cmd_report(const std::vector<std::string>& run_dirs,
               const std::string& out_prefix, bool force);

}  // namespace mmadv
