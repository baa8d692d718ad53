#pragma once

#include <cstdint>
#include <string>

#include "sam/config.hpp"

namespace sam::run {

// Command implementations behind the CLI. Each is a pure function of
// (config, dataset manifests): re-running writes byte-identical outputs.
void cmd_meta_train(const cfg::ExperimentConfig& c);
void cmd_cl_run(const cfg::ExperimentConfig& c);
void cmd_ablate(const cfg::ExperimentConfig& c);
void cmd_fwt(const cfg::ExperimentConfig& c);
void cmd_visualize(const cfg::ExperimentConfig& c);
void cmd_report(const cfg::ExperimentConfig& c);

// Writes the procedurally generated stand-in corpora under `root`.
void cmd_generate_data(const std::string& root, std::uint64_t seed, bool reduced);

}  // namespace sam::run
