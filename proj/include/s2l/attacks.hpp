#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "s2l/datagen.hpp"
#include "s2l/diffusion.hpp"
#include "s2l/finetune.hpp"
#include "s2l/metrics.hpp"

namespace s2l::attacks {

struct AttackConfig {
  // Rank thresholds against the SP-set calibration pool.
  double delta_m = 0.5;  // MIA member threshold
  double delta_d = 0.3;  // extraction acceptance threshold
  double delta_n = 0.7;  // non-member threshold (domain transfer)
  // Toy-scale sizes (the reference protocol divides the full-scale
  // 1000/5000/2000 by ten).
  int n_p = 100;  // synthetic private set size
  int n_d = 500;  // extraction candidates
  int n_m = 200;  // balanced membership set for domain transfer
  int eidetic_k = 10;
  double eidetic_delta = 0.1;  // Def.-1 neighbourhood radius
  double match_delta = 0.1;    // extraction match radius (0.15 reported too)
  int t_star = 25;             // MIA timestep
  int mia_steps = 1;           // reverse/forward steps in the t-error
  int gen_steps = 50;
  int utility_prompts = 64;

  void validate(int model_T) const;
};

struct MiaResult {
  std::vector<metrics::ScoredExample> scored;  // raw scores, id = A_z index
  std::vector<double> rank_scores;
  std::vector<int> member_set;  // predicted members (A_z indices)
  double auc = 0.5;
  double tpr_at_1fpr = 0.0;
  bool balanced = true;
  bool tpr_interpolated = false;
};

struct ExtractionEval {
  int num = 0;          // distinct eidetic training examples matched
  double precision = 0.0;  // matched accepted candidates / |E|
  int matched_candidates = 0;
  std::vector<int> matched_member_ids;
};

struct ExtractionResult {
  int candidates = 0;
  std::vector<int> accepted;  // candidate indices in E
  std::vector<Tensor> accepted_images;
  ExtractionEval eval;            // at match_delta
  ExtractionEval eval_at_015;     // secondary report at 0.15
};

struct ExtractionGridReport {
  std::vector<int> ks;
  std::vector<double> deltas;
  std::vector<std::vector<int>> num;
};

struct AttackReport {
  int domain_id = 0;
  std::string method;
  std::string finetune_set;
  std::uint64_t seed = 0;
  double pre_auc = 0.0;
  double auc = 0.0;
  double tpr_at_1fpr = 0.0;
  int extraction_num = 0;
  double extraction_precision = 0.0;
  int extraction_num_015 = 0;
  int accepted = 0;
  double utility = 0.0;
  double chosen_lr = 0.0;
  std::int64_t trainable_params = 0;
  MiaResult mia;               // raw per-example scores for CSV emission
  ExtractionGridReport grid;  // appendix-style (k, delta) grid
};

/// Step 1 of the fine-tuning attack: images generated from the model under
/// the target prompt, paired with that prompt.
std::vector<datagen::Sample> gen_sp_set(const diffusion::DiffusionModel& model,
                                        const std::vector<int>& p_z, int n_p,
                                        std::uint64_t seed, int gen_steps);

/// Deterministic denoise/re-noise consistency score at t_star (lower means
/// more member-like): squared l2 between the DDIM-inverted x_t and its
/// one-step reverse/forward reconstruction, divided by the dimension.
std::vector<double> mia_scores(const diffusion::DiffusionModel& model,
                               const std::vector<int>& prompt,
                               const std::vector<const Tensor*>& images,
                               const AttackConfig& cfg);

double mia_score(const diffusion::DiffusionModel& model, const std::vector<int>& prompt,
                 const Tensor& image, const AttackConfig& cfg);

/// Scores a balanced test set; predicted members are the examples whose
/// rank-normalised score falls below delta_m. AUC and TPR@1%FPR use the raw
/// scores (rank normalisation is monotone and cannot change them).
MiaResult mia_attack(const diffusion::DiffusionModel& model,
                     const std::vector<const datagen::Sample*>& test_set, int n_members,
                     const std::vector<int>& p_z, const AttackConfig& cfg,
                     const std::vector<double>* calibration_pool = nullptr);

/// Generates candidates and keeps those whose rank-normalised score is below
/// delta_d. Evaluation against the member set is done separately.
ExtractionResult extract(const diffusion::DiffusionModel& model, const std::vector<int>& p_z,
                         const AttackConfig& cfg, std::uint64_t seed,
                         const std::vector<double>& calibration_pool);

/// Counts distinct training examples matched by accepted candidates within
/// match_delta, restricted to (k, l2, eidetic_delta)-eidetic examples (at
/// most k members inside the eidetic radius).
ExtractionEval evaluate_extraction(const std::vector<Tensor>& accepted,
                                   const std::vector<const datagen::Sample*>& members,
                                   int k, double match_delta, double eidetic_delta);

/// Full appendix-style grid. The match radius varies along delta; the
/// eidetic neighbourhood stays at eidetic_delta so the count is exactly
/// monotone in both axes.
struct ExtractionGrid {
  std::vector<int> ks;
  std::vector<double> deltas;
  std::vector<std::vector<int>> num;  // num[k_index][delta_index]
};

ExtractionGrid extraction_grid(const std::vector<Tensor>& accepted,
                               const std::vector<const datagen::Sample*>& members,
                               const std::vector<int>& ks, const std::vector<double>& deltas,
                               double eidetic_delta);

struct GaussianResult {
  double baseline_auc = 0.0;
  std::vector<double> trial_aucs;  // by trial index
  double top3_mean = 0.0;
};

/// Perturbs the selected groups `trials` times with N(0, eps^2), runs the
/// MIA on each perturbed copy and reports the mean of the top-min(3, trials)
/// AUCs. Trial seeds derive from the trial index, so results are independent
/// of execution order and thread count.
GaussianResult gaussian_attack(const diffusion::DiffusionModel& model, const GroupSet& groups,
                               double eps, int trials,
                               const std::vector<const datagen::Sample*>& test_set,
                               int n_members, const std::vector<int>& p_z,
                               const AttackConfig& cfg, std::uint64_t seed, int threads = 1);

enum class TransferMode { PlainSuffix, PlainS2L, MiaSet, GroundTruthSet };

const char* transfer_mode_name(TransferMode m);

struct TransferOutcome {
  TransferMode mode;
  ExtractionResult extraction;
  int mia_set_members = 0;     // captioned "of M"
  int mia_set_nonmembers = 0;  // captioned "of not M"
  int shortfall = 0;
  double member_purity = 0.0;  // true members among "of M" entries
};

struct TransferOptions {
  int ab_members = 400;      // public-domain members in the candidate set
  int ab_nonmembers = 1600;  // fresh draws mixed in
  int ti_epochs = 100;
  finetune::FinetuneMethod sp_method;  // step-1 fine-tuning (DreamBooth form)

  TransferOptions() { sp_method = finetune::FinetuneMethod::parse("dreambooth"); }
};

/// Algorithm-2 domain transfer: SP fine-tuning, high-confidence membership
/// filtering over public domains (or ground truth), textual inversion of the
/// membership token, extraction with the "of M" suffix.
TransferOutcome domain_transfer(const diffusion::DiffusionModel& pretrained,
                                const datagen::Corpus& corpus, int target_domain,
                                const AttackConfig& cfg, TransferMode mode,
                                const TransferOptions& opts, std::uint64_t seed);

struct PipelineOptions {
  finetune::FinetuneMethod method;
  datagen::FinetuneSetKind set_kind = datagen::FinetuneSetKind::SPPlaceholder;
  bool run_extraction = true;
  bool run_utility = true;
  bool run_grid = false;
};

/// Algorithm-1 end to end on a cloned model: SP generation, fine-tuning,
/// MIA + extraction + utility. The input model is never mutated.
AttackReport s2l_pipeline(const diffusion::DiffusionModel& pretrained,
                          const datagen::Corpus& corpus, int domain_id,
                          const PipelineOptions& opts, const AttackConfig& cfg,
                          std::uint64_t seed);

/// Baseline report (no fine-tuning) for the same columns.
AttackReport pretrained_report(const diffusion::DiffusionModel& pretrained,
                               const datagen::Corpus& corpus, int domain_id,
                               const AttackConfig& cfg, std::uint64_t seed,
                               bool run_extraction = true, bool run_utility = true,
                               bool run_grid = false);

}  // namespace s2l::attacks
