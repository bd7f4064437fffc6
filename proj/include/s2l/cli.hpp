#pragma once

#include <cstdint>
#include <string>

#include "s2l/config.hpp"

namespace s2l::cli {

struct RunContext {
  ExperimentConfig cfg;
  std::string out_dir;
  std::uint64_t master_seed = 1;
  int threads = 1;
};

// Subcommand entry points; each writes JSON results (and CSV summaries)
// under the output directory and returns a process exit status.
int cmd_gen_corpus(const RunContext& ctx);
int cmd_pretrain(const RunContext& ctx);
int cmd_finetune(const RunContext& ctx);
int cmd_attack_mia(const RunContext& ctx);
int cmd_attack_extract(const RunContext& ctx);
int cmd_attack_shake(const RunContext& ctx);
int cmd_attack_transfer(const RunContext& ctx);
int cmd_report(const RunContext& ctx);

}  // namespace s2l::cli
