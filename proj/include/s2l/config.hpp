#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2l/attacks.hpp"
#include "s2l/datagen.hpp"
#include "s2l/diffusion.hpp"
#include "s2l/finetune.hpp"

namespace s2l::cli {

struct ShakeConfig {
  std::vector<double> eps_grid = {2e-4, 8e-4, 3.2e-3};
  int trials = 200;
  bool include_autoencoder = false;  // excluded by default; tuning the image
                                     // coder degrades leakage
  std::vector<int> domains;          // default: first private domain
};

struct TransferConfig {
  int ab_members = 400;
  int ab_nonmembers = 1600;
  int ti_epochs = 100;
  std::vector<std::string> modes = {"plain_suffix", "plain_s2l", "mia_set",
                                    "ground_truth_set"};
  std::vector<int> domains;  // default: first private domain
};

/// Everything an experiment needs, resolved and validated before any compute
/// starts. Unknown keys in the config file are hard errors.
struct ExperimentConfig {
  datagen::CorpusConfig corpus;
  diffusion::ModelConfig model;
  diffusion::PretrainOptions pretrain;
  std::vector<std::string> methods = {"dreambooth", "textual_inversion", "lora",
                                      "dreambooth+lora"};
  std::vector<std::string> finetune_sets = {"sp"};
  finetune::FinetuneMethod method_defaults;  // epochs/batch/grid shared by methods
  attacks::AttackConfig attack;
  std::vector<int> attack_domains;       // default: all private domains
  std::vector<std::uint64_t> seeds = {1};  // attack replicates
  ShakeConfig shake;
  TransferConfig transfer;

  void validate() const;
  /// Canonical key=value text; hashing it ties results to configurations.
  std::string canonical() const;
  std::uint32_t hash() const;
};

/// Parses the key/value-with-sections format. Unknown sections or keys and
/// malformed values are rejected with the line number and field name.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

}  // namespace s2l::cli
