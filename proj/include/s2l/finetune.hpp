#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "s2l/datagen.hpp"
#include "s2l/diffusion.hpp"

namespace s2l::finetune {

enum class Variant {
  EndToEnd,
  DreamBooth,
  TextualInversion,
  Hypernetwork,
  LoRA,
  DreamBoothHypernetwork,
  DreamBoothLoRA,
  PartMask,
};

struct FinetuneMethod {
  Variant variant = Variant::DreamBoothLoRA;
  int lora_rank = 8;
  int ti_extra_tokens = 0;  // negative drops leading prompt tokens, positive
                            // prepends fresh placeholder tokens
  int epochs = 100;
  int batch = 4;
  std::vector<double> lr_grid = {1e-3, 1e-4, 1e-5, 1e-6};
  int probe_epochs = 10;
  GroupSet part_groups;  // only for PartMask

  std::string name() const;
  /// Parses "lora", "lora:rank=4", "textual_inversion:extra=-2",
  /// "partmask:denoiser+embedding", "dreambooth+lora", ...
  static FinetuneMethod parse(const std::string& text);
};

struct TIConfig {
  std::vector<int> tunable_tokens;
  std::vector<int> prompt;  // modified attack prompt (unpadded)
};

/// Applies the extra-token rule of the parameter-count ablation to a base
/// prompt. Placeholder ids are taken from first_free_token upward; their
/// embeddings already exist (randomly initialised) in the model table.
TIConfig make_ti_config(const std::vector<int>& base_prompt, int extra_tokens,
                        int first_free_token, int vocab_size);

/// Registers LoRA adapters (A random, B zero) for the selected dense layers;
/// the adapted forward is bit-identical to the base model at init.
void attach_lora(diffusion::DiffusionModel& model,
                 const std::vector<std::string>& layers, int rank, std::uint64_t seed);

/// Default selection: every dense layer in the text encoder and denoiser.
void attach_lora(diffusion::DiffusionModel& model, int rank, std::uint64_t seed);

/// Residual two-layer key/value transforms per cross-attention layer,
/// zero-initialised at the output so attention is bit-identical at init.
void attach_hypernetwork(diffusion::DiffusionModel& model, std::uint64_t seed);

/// Copy of the model without any adapter parameters.
diffusion::DiffusionModel without_adapters(const diffusion::DiffusionModel& model);

/// Trainable-parameter mask for a method. Adapters must already be attached
/// for the adapter-based methods. An empty resulting mask is rejected.
ParamStore build_mask(const diffusion::DiffusionModel& model, const FinetuneMethod& method,
                      const TIConfig* ti = nullptr);

/// 0/1 mask selecting whole embedding rows (textual inversion and the
/// membership-token training in the domain-transfer attack).
ParamStore embedding_row_mask(const diffusion::DiffusionModel& model,
                              const std::vector<int>& token_ids);

struct FinetuneLog {
  std::vector<double> epoch_loss;
  double chosen_lr = 0.0;
  std::int64_t trainable_params = 0;
  bool diverged = false;
};

/// Short probes over the grid on cloned models; picks the lr with the lowest
/// final loss (ties to the smaller lr). Throws if every probe diverges.
double lr_grid_search(const diffusion::DiffusionModel& model,
                      const std::vector<datagen::Sample>& dataset,
                      const FinetuneMethod& method, const ParamStore& mask,
                      const std::vector<int>* prompt_override, std::uint64_t seed);

/// Fine-tunes a clone of the model on the dataset: grid-searched lr, Adam,
/// only masked parameters change. TI variants rewrite the dataset prompts to
/// the modified prompt. Aborts (with partial log) when the loss diverges.
diffusion::DiffusionModel finetune(const diffusion::DiffusionModel& model,
                                   const std::vector<datagen::Sample>& dataset,
                                   const FinetuneMethod& method, std::uint64_t seed,
                                   FinetuneLog* log = nullptr,
                                   const TIConfig* ti = nullptr);

/// Analytic trainable-parameter count for reporting (the Params column).
std::int64_t analytic_param_count(const diffusion::ModelConfig& cfg,
                                  const FinetuneMethod& method, const TIConfig* ti);

}  // namespace s2l::finetune
